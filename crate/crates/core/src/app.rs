//! Command implementations behind the `cpcasr` binary.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, RunConfig};
use crate::corpus::{self, load_manifest, load_waveforms, CorpusError, Manifest};
use crate::cpc::{self, CpcError, CpcModel, PretrainOutcome};
use crate::diff::DiffError;
use crate::eval::{self, EvalError, EvalResult, Layout, PerScore};
use crate::features::FeatureError;
use crate::gradient_suites::{self, SuiteOptions, SuiteReport};
use crate::probe::{self, FeatureKind, Frontend, ProbeError, ProbeModel, ProbeOutcome, Regime, SymbolTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Cpc(#[from] CpcError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{0}")]
    Usage(String),
    #[error("gradient check failed")]
    CheckFailed,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AppError {
    /// 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        let io = match self {
            AppError::Io { .. } | AppError::Config(ConfigError::Io { .. }) | AppError::Corpus(CorpusError::Io { .. }) => true,
            AppError::Checkpoint(CheckpointError::Io { .. }) => true,
            AppError::Eval(EvalError::Csv(e)) => e.is_io_error(),
            _ => false,
        };
        if io {
            EXIT_IO
        } else {
            EXIT_FAILURE
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), AppError> {
    fs::write(path, contents).map_err(|source| AppError::Io {
        path: path.to_owned(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, AppError> {
    fs::read_to_string(path).map_err(|source| AppError::Io {
        path: path.to_owned(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), AppError> {
    fs::create_dir_all(path).map_err(|source| AppError::Io {
        path: path.to_owned(),
        source,
    })
}

#[derive(Debug, Parser)]
#[command(name = "cpcasr", version, about = "CPC pretraining, CTC phoneme probes and PER reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (corpus directory for `synth`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic tone corpus and its train/dev/test manifests.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// CPC pretraining (or continued training with --init).
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to continue from.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Train a CTC probe and score it on the test manifest.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Backbone checkpoint (required for cpc features).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, value_parser = ["frozen", "finetune"])]
        regime: Option<String>,
        #[arg(long, value_parser = ["mfcc", "cpc"])]
        features: Option<String>,
    },
    /// Print `id<TAB>phones` for every utterance of a manifest.
    Transcribe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        probe: PathBuf,
        /// Backbone checkpoint (required for cpc probes).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Defaults to the configured test manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Score a probe on a manifest and print one results CSV row. The row
    /// labels (`report.*`) default to those the probe was trained with.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Render results CSVs as a Table 1 or Table 2 shaped grid.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, value_parser = ["table1", "table2"], default_value = "table1")]
        layout: String,
        /// Emit the grid as CSV instead of markdown.
        #[arg(long)]
        csv_output: bool,
    },
    /// Finite-difference checks of every gradient rule; exit 1 on failure.
    Gradcheck {
        /// Scale the tanh adjoint to demonstrate a failing check.
        #[arg(long, hide = true)]
        corrupt_tanh: Option<f64>,
    },
}

impl Common {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig, AppError> {
        self.resolve_over(Vec::new(), extra)
    }

    /// Like [`Common::resolve`], with `defaults` applied before every
    /// command-line override.
    fn resolve_over(&self, defaults: Vec<(String, String)>, extra: &[(&str, Option<String>)]) -> Result<RunConfig, AppError> {
        let mut overrides = defaults;
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| AppError::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
            overrides.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        if let Some(out) = &self.out {
            overrides.push(("out_dir".into(), out.display().to_string()));
        }
        for (k, v) in extra {
            if let Some(v) = v {
                overrides.push(((*k).to_owned(), v.clone()));
            }
        }
        Ok(RunConfig::resolve(self.config.as_deref(), &overrides)?)
    }
}

/// Manifests written by [`cmd_synth`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub all: Manifest,
    pub train: Manifest,
    pub dev: Manifest,
    pub test: Manifest,
}

/// Writes the corpus and `train.tsv`/`dev.tsv`/`test.tsv` into `corpus_dir`.
pub fn cmd_synth(config: &RunConfig) -> Result<SynthOutput, AppError> {
    let dir = &config.corpus_dir;
    create_dir(dir)?;
    let all = corpus::synth_corpus(&config.synth_spec(), dir)?;
    let (train, dev, test) = corpus::split(&all, config.train_frac, config.dev_frac, config.seed)?;
    for (name, m) in [("train.tsv", &train), ("dev.tsv", &dev), ("test.tsv", &test)] {
        corpus::write_manifest(&dir.join(name), m)?;
    }
    write_file(&dir.join("run.conf"), config.to_text())?;
    log::info!(
        "wrote {} utterances to {} ({} train, {} dev, {} test)",
        all.len(),
        dir.display(),
        train.len(),
        dev.len(),
        test.len()
    );
    Ok(SynthOutput { all, train, dev, test })
}

pub const BACKBONE_FILE: &str = "backbone.ckpt";
pub const PROBE_FILE: &str = "probe.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const PROBE_LOSS_FILE: &str = "probe_loss.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const CONFIG_ECHO_FILE: &str = "run.conf";

/// Results-row labels that `eval` inherits from the probe checkpoint.
pub const REPORT_LABEL_KEYS: [&str; 3] = ["report.model", "report.pretrain", "report.budget"];

/// Writes `backbone.ckpt`, `loss.csv` and `run.conf` into `out_dir`.
pub fn cmd_pretrain(config: &RunConfig) -> Result<PretrainOutcome, AppError> {
    let cpc_config = config.cpc_config();
    let manifest = load_manifest(&config.train_manifest_path())?;
    let waves = load_waveforms(&manifest, config.sample_rate_hz)?;
    let model = match &config.init {
        Some(path) => {
            let m = Checkpoint::load(path)?.to_cpc()?;
            if m.arch != cpc_config.arch() {
                return Err(AppError::Usage(format!(
                    "{} was trained with a different architecture than the configured one",
                    path.display()
                )));
            }
            m
        }
        None => CpcModel::new(&cpc_config)?,
    };
    let outcome = if config.init.is_some() {
        cpc::finetune_backbone(model, &waves, &cpc_config)?
    } else {
        cpc::pretrain(model, &waves, &cpc_config)?
    };
    create_dir(&config.out_dir)?;
    Checkpoint::from_cpc(&outcome.model, &config.snapshot(), config.seed).save(&config.out_dir.join(BACKBONE_FILE))?;
    write_file(&config.out_dir.join(LOSS_FILE), cpc::loss_curve_csv(&outcome.history))?;
    write_file(&config.out_dir.join(CONFIG_ECHO_FILE), config.to_text())?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        log::info!("cpc loss {:.4} -> {:.4} over {} epochs", first.total, last.total, outcome.history.len());
    }
    Ok(outcome)
}

fn load_backbone(path: Option<&Path>, kind: FeatureKind) -> Result<Option<CpcModel>, AppError> {
    match (kind, path) {
        (FeatureKind::Mfcc, _) => Ok(None),
        (FeatureKind::CpcContext, Some(p)) => Ok(Some(Checkpoint::load(p)?.to_cpc()?)),
        (FeatureKind::CpcContext, None) => Err(AppError::Usage(
            "cpc features need a backbone checkpoint (--init or the `init` key)".into(),
        )),
    }
}

/// The first `max(1, floor(n·frac))` utterances in manifest order.
pub fn budget_subset(manifest: &Manifest, frac: f64) -> Manifest {
    let n = (((manifest.len() as f64) * frac + 1e-9).floor() as usize).clamp(1, manifest.len());
    manifest.subset(&(0..n).collect::<Vec<_>>())
}

/// Transcribes every utterance; inputs too short for one stacked frame
/// count as empty hypotheses.
pub fn transcribe_all(frontend: &Frontend<'_>, probe: &ProbeModel, waves: &[corpus::Waveform]) -> Result<Vec<Vec<String>>, AppError> {
    waves
        .iter()
        .map(|w| match probe::transcribe(frontend, probe, w) {
            Ok(h) => Ok(h),
            Err(ProbeError::TooShort { .. })
            | Err(ProbeError::Feature(FeatureError::TooShort { .. }))
            | Err(ProbeError::Cpc(CpcError::TooShort { .. })) => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        })
        .collect()
}

pub fn score(frontend: &Frontend<'_>, probe: &ProbeModel, manifest: &Manifest, sample_rate_hz: u32) -> Result<PerScore, AppError> {
    let waves = load_waveforms(manifest, sample_rate_hz)?;
    let hyps = transcribe_all(frontend, probe, &waves)?;
    let refs: Vec<Vec<String>> = manifest.utterances.iter().map(|u| u.transcript.clone()).collect();
    Ok(eval::per(&refs, &hyps)?)
}

fn result_row(config: &RunConfig, kind: FeatureKind, regime: Regime, score: PerScore) -> EvalResult {
    let frozen = match kind {
        FeatureKind::Mfcc => None,
        FeatureKind::CpcContext => Some(regime == Regime::Frozen),
    };
    EvalResult::from_score(
        &config.model_name,
        &config.pretrain_desc,
        frozen,
        &config.budget_desc,
        &config.corpus_name,
        score,
    )
}

#[derive(Debug, Clone)]
pub struct ProbeRun {
    pub outcome: ProbeOutcome,
    pub result: EvalResult,
}

/// Writes `probe.ckpt`, `probe_loss.csv`, `results.csv`, `run.conf` and,
/// when fine-tuning, a new `backbone.ckpt` into `out_dir`.
pub fn cmd_probe(config: &RunConfig) -> Result<ProbeRun, AppError> {
    let probe_config = config.probe_config();
    let backbone = load_backbone(config.init.as_deref(), config.probe_features)?;
    let train = budget_subset(&load_manifest(&config.train_manifest_path())?, config.probe_budget_frac);
    let test = load_manifest(&config.test_manifest_path())?;
    let symbols = SymbolTable::from_inventory(&train.inventory);
    let data = probe::label_utterances(&train, load_waveforms(&train, config.sample_rate_hz)?, &symbols)?;
    let outcome = probe::train_probe(backbone.as_ref(), &symbols, &data, &probe_config)?;

    let scored_backbone = outcome.backbone.as_ref().or(backbone.as_ref());
    let frontend = Frontend::new(config.probe_features, scored_backbone, &config.mfcc, config.sample_rate_hz)?;
    let score = score(&frontend, &outcome.probe, &test, config.sample_rate_hz)?;
    let result = result_row(config, config.probe_features, config.probe_regime, score);

    let out = &config.out_dir;
    create_dir(out)?;
    let snapshot = config.snapshot();
    Checkpoint::from_probe(&outcome.probe, &config.mfcc, &snapshot, config.seed).save(&out.join(PROBE_FILE))?;
    if let Some(b) = &outcome.backbone {
        Checkpoint::from_cpc(b, &snapshot, config.seed).save(&out.join(BACKBONE_FILE))?;
    }
    let mut curve = String::from("epoch,loss\n");
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        curve.push_str(&format!("{},{l}\n", e + 1));
    }
    write_file(&out.join(PROBE_LOSS_FILE), curve)?;
    write_file(&out.join(RESULTS_FILE), eval::results_to_csv(std::slice::from_ref(&result))?)?;
    write_file(&out.join(CONFIG_ECHO_FILE), config.to_text())?;
    log::info!(
        "{} probe ({}): test PER {:.4} over {} phones",
        config.probe_features,
        config.probe_regime,
        result.per,
        result.n_ref_phones
    );
    Ok(ProbeRun { outcome, result })
}

struct LoadedProbe {
    probe: ProbeModel,
    mfcc: crate::features::MfccConfig,
    backbone: Option<CpcModel>,
    /// Regime recorded when the probe was trained, if any.
    regime: Option<Regime>,
}

fn load_probe(path: &Path, backbone: Option<&Path>) -> Result<LoadedProbe, AppError> {
    let ckpt = Checkpoint::load(path)?;
    let (probe, mfcc) = ckpt.to_probe()?;
    let regime = ckpt.config_snapshot().get("probe.regime").and_then(|r| r.parse().ok());
    let backbone = load_backbone(backbone, probe.feature_kind)?;
    Ok(LoadedProbe {
        probe,
        mfcc,
        backbone,
        regime,
    })
}

pub fn cmd_transcribe(config: &RunConfig, probe_path: &Path, manifest: &Path) -> Result<Vec<(String, Vec<String>)>, AppError> {
    let p = load_probe(probe_path, config.init.as_deref())?;
    let frontend = Frontend::new(p.probe.feature_kind, p.backbone.as_ref(), &p.mfcc, config.sample_rate_hz)?;
    let manifest = load_manifest(manifest)?;
    let hyps = transcribe_all(&frontend, &p.probe, &load_waveforms(&manifest, config.sample_rate_hz)?)?;
    Ok(manifest.utterances.iter().map(|u| u.id.clone()).zip(hyps).collect())
}

pub fn cmd_eval(config: &RunConfig, probe_path: &Path, manifest: &Path) -> Result<EvalResult, AppError> {
    let p = load_probe(probe_path, config.init.as_deref())?;
    let frontend = Frontend::new(p.probe.feature_kind, p.backbone.as_ref(), &p.mfcc, config.sample_rate_hz)?;
    let score = score(&frontend, &p.probe, &load_manifest(manifest)?, config.sample_rate_hz)?;
    Ok(result_row(config, p.probe.feature_kind, p.regime.unwrap_or(config.probe_regime), score))
}

/// Concatenates the rows of every CSV, then renders.
pub fn cmd_report(paths: &[PathBuf], layout: Layout) -> Result<eval::Report, AppError> {
    let mut rows = Vec::new();
    for p in paths {
        let text = read_file(p)?;
        rows.extend(eval::parse_results_csv(&text).map_err(|e| match e {
            EvalError::Parse { row, message } => EvalError::Parse {
                row,
                message: format!("{}: {message}", p.display()),
            },
            e => e,
        })?);
    }
    Ok(eval::render_report(&rows, layout))
}

pub fn cmd_gradcheck(options: SuiteOptions) -> Result<Vec<SuiteReport>, AppError> {
    Ok(gradient_suites::run_all(options)?)
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Synth { common } => {
            let mut config = common.resolve(&[])?;
            if let Some(out) = &common.out {
                config.corpus_dir = out.clone();
            }
            cmd_synth(&config)?;
        }
        Command::Pretrain { common, init } => {
            let config = common.resolve(&[("init", init.map(|p| p.display().to_string()))])?;
            cmd_pretrain(&config)?;
        }
        Command::Probe {
            common,
            init,
            regime,
            features,
        } => {
            let config = common.resolve(&[
                ("init", init.map(|p| p.display().to_string())),
                ("probe.regime", regime),
                ("probe.features", features),
            ])?;
            let run = cmd_probe(&config)?;
            print!("{}", eval::results_to_csv(&[run.result])?);
        }
        Command::Transcribe {
            common,
            probe,
            init,
            manifest,
        } => {
            let config = common.resolve(&[("init", init.map(|p| p.display().to_string()))])?;
            let manifest = manifest.unwrap_or_else(|| config.test_manifest_path());
            for (id, hyp) in cmd_transcribe(&config, &probe, &manifest)? {
                println!("{id}\t{}", hyp.join(" "));
            }
        }
        Command::Eval {
            common,
            probe,
            init,
            manifest,
        } => {
            let snapshot = Checkpoint::load(&probe)?.config_snapshot();
            let labels = REPORT_LABEL_KEYS
                .iter()
                .filter_map(|k| snapshot.get(*k).map(|v| ((*k).to_owned(), v.clone())))
                .collect();
            let config = common.resolve_over(labels, &[("init", init.map(|p| p.display().to_string()))])?;
            let manifest = manifest.unwrap_or_else(|| config.test_manifest_path());
            let csv = eval::results_to_csv(&[cmd_eval(&config, &probe, &manifest)?])?;
            if common.out.is_some() {
                create_dir(&config.out_dir)?;
                write_file(&config.out_dir.join(RESULTS_FILE), &csv)?;
            }
            print!("{csv}");
        }
        Command::Report { csv, layout, csv_output } => {
            let layout: Layout = layout.parse().map_err(AppError::Usage)?;
            let report = cmd_report(&csv, layout)?;
            print!("{}", if csv_output { report.csv } else { report.markdown });
        }
        Command::Gradcheck { corrupt_tanh } => {
            let reports = cmd_gradcheck(SuiteOptions { corrupt_tanh })?;
            print!("{}", gradient_suites::render(&reports));
            if !reports.iter().all(SuiteReport::passed) {
                return Err(AppError::CheckFailed);
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
