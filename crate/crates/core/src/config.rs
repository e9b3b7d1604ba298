//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a valid configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::corpus::SynthSpec;
use crate::cpc::CpcConfig;
use crate::features::MfccConfig;
use crate::probe::{FeatureKind, ProbeConfig, Regime};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub out_dir: PathBuf,
    pub corpus_dir: PathBuf,
    pub corpus_name: String,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub synth: SynthSpec,
    pub train_frac: f64,
    pub dev_frac: f64,
    pub cpc: CpcConfig,
    pub mfcc: MfccConfig,
    pub probe_features: FeatureKind,
    pub probe_regime: Regime,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_stack_width: usize,
    /// Fraction of the training manifest given to the probe, taken from
    /// the front in manifest order.
    pub probe_budget_frac: f64,
    pub model_name: String,
    pub pretrain_desc: String,
    pub budget_desc: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 42,
            sample_rate_hz: 16_000,
            out_dir: "runs/default".into(),
            corpus_dir: "data/synth".into(),
            corpus_name: "synth".into(),
            train_manifest: None,
            test_manifest: None,
            init: None,
            synth: SynthSpec::default(),
            train_frac: 0.6,
            dev_frac: 0.2,
            cpc: CpcConfig::default(),
            mfcc: MfccConfig::default(),
            probe_features: FeatureKind::CpcContext,
            probe_regime: Regime::Frozen,
            probe_epochs: 30,
            probe_lr: 1e-3,
            probe_stack_width: 8,
            probe_budget_frac: 1.0,
            model_name: "CPC".into(),
            pretrain_desc: "synth".into(),
            budget_desc: "full".into(),
        }
    }
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, String> {
    value.split(',').map(|s| parse(key, s.trim())).collect()
}

impl RunConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let c = &self.cpc;
        let m = &self.mfcc;
        let s = &self.synth;
        vec![
            ("name", self.name.clone()),
            ("seed", self.seed.to_string()),
            ("sample_rate_hz", self.sample_rate_hz.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("corpus_dir", self.corpus_dir.display().to_string()),
            ("corpus_name", self.corpus_name.clone()),
            ("train_manifest", opt_path(&self.train_manifest)),
            ("test_manifest", opt_path(&self.test_manifest)),
            ("init", opt_path(&self.init)),
            ("synth.n_phones", s.n_phones.to_string()),
            ("synth.n_utterances", s.n_utterances.to_string()),
            ("synth.phones_per_utt_min", s.phones_per_utt.0.to_string()),
            ("synth.phones_per_utt_max", s.phones_per_utt.1.to_string()),
            ("synth.phone_dur_ms_min", s.phone_dur_ms.0.to_string()),
            ("synth.phone_dur_ms_max", s.phone_dur_ms.1.to_string()),
            ("synth.noise_std", s.noise_std.to_string()),
            ("synth.n_speakers", s.n_speakers.to_string()),
            ("split.train_frac", self.train_frac.to_string()),
            ("split.dev_frac", self.dev_frac.to_string()),
            ("cpc.enc_channels", list(&c.enc_channels)),
            ("cpc.enc_kernels", list(&c.enc_kernels)),
            ("cpc.enc_strides", list(&c.enc_strides)),
            ("cpc.latent_dim", c.latent_dim.to_string()),
            ("cpc.context_dim", c.context_dim.to_string()),
            ("cpc.k_steps", c.k_steps.to_string()),
            ("cpc.n_negatives", c.n_negatives.to_string()),
            ("cpc.epochs", c.epochs.to_string()),
            ("cpc.batch_utts", c.batch_utts.to_string()),
            ("cpc.window_samples", c.window_samples.to_string()),
            ("cpc.lr", c.lr.to_string()),
            ("mfcc.frame_ms", m.frame_ms.to_string()),
            ("mfcc.hop_ms", m.hop_ms.to_string()),
            ("mfcc.n_fft", m.n_fft.to_string()),
            ("mfcc.n_mels", m.n_mels.to_string()),
            ("mfcc.n_ceps", m.n_ceps.to_string()),
            ("mfcc.fmin_hz", m.fmin_hz.to_string()),
            ("mfcc.fmax_hz", m.fmax_hz.map_or_else(|| "nyquist".into(), |f| f.to_string())),
            ("mfcc.log_floor", m.log_floor.to_string()),
            ("probe.features", self.probe_features.to_string()),
            ("probe.regime", self.probe_regime.to_string()),
            ("probe.epochs", self.probe_epochs.to_string()),
            ("probe.lr", self.probe_lr.to_string()),
            ("probe.stack_width", self.probe_stack_width.to_string()),
            ("probe.budget_frac", self.probe_budget_frac.to_string()),
            ("report.model", self.model_name.clone()),
            ("report.pretrain", self.pretrain_desc.clone()),
            ("report.budget", self.budget_desc.clone()),
        ]
    }

    /// Sets one key; the error names the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key {
            "name" => self.name = v.to_owned(),
            "seed" => self.seed = parse(key, v)?,
            "sample_rate_hz" => self.sample_rate_hz = parse(key, v)?,
            "out_dir" => self.out_dir = v.into(),
            "corpus_dir" => self.corpus_dir = v.into(),
            "corpus_name" => self.corpus_name = v.to_owned(),
            "train_manifest" => self.train_manifest = path(v),
            "test_manifest" => self.test_manifest = path(v),
            "init" => self.init = path(v),
            "synth.n_phones" => self.synth.n_phones = parse(key, v)?,
            "synth.n_utterances" => self.synth.n_utterances = parse(key, v)?,
            "synth.phones_per_utt_min" => self.synth.phones_per_utt.0 = parse(key, v)?,
            "synth.phones_per_utt_max" => self.synth.phones_per_utt.1 = parse(key, v)?,
            "synth.phone_dur_ms_min" => self.synth.phone_dur_ms.0 = parse(key, v)?,
            "synth.phone_dur_ms_max" => self.synth.phone_dur_ms.1 = parse(key, v)?,
            "synth.noise_std" => self.synth.noise_std = parse(key, v)?,
            "synth.n_speakers" => self.synth.n_speakers = parse(key, v)?,
            "split.train_frac" => self.train_frac = parse(key, v)?,
            "split.dev_frac" => self.dev_frac = parse(key, v)?,
            "cpc.enc_channels" => self.cpc.enc_channels = parse_list(key, v)?,
            "cpc.enc_kernels" => self.cpc.enc_kernels = parse_list(key, v)?,
            "cpc.enc_strides" => self.cpc.enc_strides = parse_list(key, v)?,
            "cpc.latent_dim" => self.cpc.latent_dim = parse(key, v)?,
            "cpc.context_dim" => self.cpc.context_dim = parse(key, v)?,
            "cpc.k_steps" => self.cpc.k_steps = parse(key, v)?,
            "cpc.n_negatives" => self.cpc.n_negatives = parse(key, v)?,
            "cpc.epochs" => self.cpc.epochs = parse(key, v)?,
            "cpc.batch_utts" => self.cpc.batch_utts = parse(key, v)?,
            "cpc.window_samples" => self.cpc.window_samples = parse(key, v)?,
            "cpc.lr" => self.cpc.lr = parse(key, v)?,
            "mfcc.frame_ms" => self.mfcc.frame_ms = parse(key, v)?,
            "mfcc.hop_ms" => self.mfcc.hop_ms = parse(key, v)?,
            "mfcc.n_fft" => self.mfcc.n_fft = parse(key, v)?,
            "mfcc.n_mels" => self.mfcc.n_mels = parse(key, v)?,
            "mfcc.n_ceps" => self.mfcc.n_ceps = parse(key, v)?,
            "mfcc.fmin_hz" => self.mfcc.fmin_hz = parse(key, v)?,
            "mfcc.fmax_hz" => self.mfcc.fmax_hz = if v == "nyquist" { None } else { Some(parse(key, v)?) },
            "mfcc.log_floor" => self.mfcc.log_floor = parse(key, v)?,
            "probe.features" => self.probe_features = v.parse().map_err(|e| format!("{key}: {e}"))?,
            "probe.regime" => self.probe_regime = v.parse().map_err(|e| format!("{key}: {e}"))?,
            "probe.epochs" => self.probe_epochs = parse(key, v)?,
            "probe.lr" => self.probe_lr = parse(key, v)?,
            "probe.stack_width" => self.probe_stack_width = parse(key, v)?,
            "probe.budget_frac" => self.probe_budget_frac = parse(key, v)?,
            "report.model" => self.model_name = v.to_owned(),
            "report.pretrain" => self.pretrain_desc = v.to_owned(),
            "report.budget" => self.budget_desc = v.to_owned(),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies `text` on top of `self`, collecting every bad line.
    pub fn apply_text(&mut self, text: &str) -> Vec<String> {
        let mut errors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k.trim(), v) {
                        errors.push(format!("line {}: {e}", i + 1));
                    }
                }
                None => errors.push(format!("line {}: expected key = value", i + 1)),
            }
        }
        errors
    }

    /// File values, then `overrides` in order, then validation; all problems
    /// are reported together.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        let mut errors = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.to_owned(),
                source,
            })?;
            errors.extend(config.apply_text(&text).into_iter().map(|e| format!("{}: {e}", path.display())));
        }
        for (k, v) in overrides {
            if let Err(e) = config.set(k, v) {
                errors.push(e);
            }
        }
        errors.extend(config.violations());
        if errors.is_empty() {
            Ok(config)
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = self.synth_spec().validate() {
            v.push(format!("synth: {e}"));
        }
        if !(self.train_frac > 0.0 && self.dev_frac > 0.0 && self.train_frac + self.dev_frac < 1.0) {
            v.push(format!(
                "split fractions need 0 < train_frac, dev_frac and a sum below 1 (got {}, {})",
                self.train_frac, self.dev_frac
            ));
        }
        v.extend(self.cpc.violations().into_iter().map(|e| format!("cpc: {e}")));
        if let Err(e) = self.mfcc.validate(self.sample_rate_hz) {
            v.push(format!("mfcc: {e}"));
        }
        if !(self.probe_lr > 0.0 && self.probe_lr.is_finite()) {
            v.push(format!("probe.lr must be positive, got {}", self.probe_lr));
        }
        if self.probe_stack_width == 0 {
            v.push("probe.stack_width must be positive".into());
        }
        if !(self.probe_budget_frac > 0.0 && self.probe_budget_frac <= 1.0) {
            v.push(format!("probe.budget_frac must be in (0, 1], got {}", self.probe_budget_frac));
        }
        if self.probe_features == FeatureKind::Mfcc && self.probe_regime == Regime::Finetune {
            v.push("probe.regime = finetune needs probe.features = cpc".into());
        }
        v
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            sample_rate_hz: self.sample_rate_hz,
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn cpc_config(&self) -> CpcConfig {
        CpcConfig {
            seed: self.seed,
            ..self.cpc.clone()
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            feature_kind: self.probe_features,
            regime: self.probe_regime,
            epochs: self.probe_epochs,
            lr: self.probe_lr,
            stack_width: self.probe_stack_width,
            seed: self.seed,
            mfcc: self.mfcc.clone(),
        }
    }

    pub fn train_manifest_path(&self) -> PathBuf {
        self.train_manifest.clone().unwrap_or_else(|| self.corpus_dir.join("train.tsv"))
    }

    pub fn test_manifest_path(&self) -> PathBuf {
        self.test_manifest.clone().unwrap_or_else(|| self.corpus_dir.join("test.tsv"))
    }

    /// Resolved configuration in the input format.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.entries().into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("cpc.enc_channels", "8,8").unwrap();
        c.set("mfcc.fmax_hz", "7000").unwrap();
        c.set("init", "a.ckpt").unwrap();
        let mut d = RunConfig::default();
        assert!(d.apply_text(&c.to_text()).is_empty());
        assert_eq!(c, d);
    }

    #[test]
    fn every_violation_reported() {
        let text = "bogus = 1\ncpc.k_steps = 0\nprobe.lr = -1\nnot a pair\n# comment\n\n";
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, text).unwrap();
        let Err(ConfigError::Invalid(errors)) = RunConfig::resolve(Some(&path), &[("seed".into(), "x".into())]) else {
            panic!("expected validation failure");
        };
        let joined = errors.join("\n");
        for needle in ["unknown key \"bogus\"", "line 4", "seed", "k_steps", "probe.lr"] {
            assert!(joined.contains(needle), "{needle} missing from {joined}");
        }
    }

    #[test]
    fn overrides_win() {
        let c = RunConfig::resolve(None, &[("seed".into(), "7".into()), ("probe.regime".into(), "finetune".into())]).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.cpc_config().seed, 7);
        assert_eq!(c.probe_config().regime, Regime::Finetune);
    }

    #[test]
    fn mfcc_finetune_rejected() {
        let r = RunConfig::resolve(None, &[("probe.features".into(), "mfcc".into()), ("probe.regime".into(), "finetune".into())]);
        assert!(matches!(r, Err(ConfigError::Invalid(_))));
    }
}
