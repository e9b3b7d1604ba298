//! Linear phoneme probe over stacked frame features, trained with CTC in a
//! frozen-backbone or full fine-tuning regime.

mod ctc;

pub use ctc::{
    collapse, ctc_brute_force, ctc_forward_backward, ctc_loss, ctc_loss_node, greedy_decode, min_frames, CtcInput,
    CtcResult, BLANK, BRUTE_FORCE_LIMIT,
};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::corpus::{Manifest, Waveform, BLANK_SYMBOL};
use crate::cpc::{CpcError, CpcModel, CpcNodes};
use crate::diff::{Adam, AdamConfig, DiffError, Graph, NodeId, Tensor};
use crate::features::{FeatureError, FeatureSequence, MfccConfig, MfccExtractor};
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("invalid CTC input: {0}")]
    InvalidInput(String),
    #[error("targets contain the blank label")]
    BlankInTargets,
    #[error("{frames} frames cannot emit a transcript needing {required}")]
    InfeasibleLength { frames: usize, required: usize },
    #[error("brute-force CTC over {classes}^{frames} alignments is too large")]
    TooLarge { frames: usize, classes: usize },
    #[error("{frames} frames are fewer than the stacking width {width}")]
    TooShort { frames: usize, width: usize },
    #[error("no training utterance is long enough for its transcript")]
    AllUtterancesInfeasible,
    #[error("unknown phoneme {0:?}")]
    UnknownSymbol(String),
    #[error("invalid probe setup: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Cpc(#[from] CpcError),
}

/// Output classes: blank at index 0, then the inventory in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    symbols: Vec<String>,
}

impl SymbolTable {
    pub fn from_inventory(inventory: &[String]) -> Self {
        let mut symbols = vec![BLANK_SYMBOL.to_owned()];
        symbols.extend(inventory.iter().cloned());
        Self { symbols }
    }

    /// Inverse of [`SymbolTable::symbols`]; the first entry must be the blank.
    pub fn from_symbols(symbols: Vec<String>) -> Result<Self, ProbeError> {
        if symbols.first().map(String::as_str) != Some(BLANK_SYMBOL) || symbols.len() < 2 {
            return Err(ProbeError::InvalidConfig("symbol table must start with the blank".into()));
        }
        Ok(Self { symbols })
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn encode(&self, transcript: &[String]) -> Result<Vec<usize>, ProbeError> {
        transcript
            .iter()
            .map(|s| {
                self.symbols[1..]
                    .iter()
                    .position(|x| x == s)
                    .map(|i| i + 1)
                    .ok_or_else(|| ProbeError::UnknownSymbol(s.clone()))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.symbols[i].clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Mfcc,
    CpcContext,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::CpcContext => "cpc",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mfcc" => Ok(FeatureKind::Mfcc),
            "cpc" | "cpc_context" => Ok(FeatureKind::CpcContext),
            _ => Err(format!("unknown feature kind {s:?} (expected mfcc or cpc)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Backbone excluded from the optimizer.
    Frozen,
    /// Backbone and probe trained jointly.
    Finetune,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Frozen => "frozen",
            Regime::Finetune => "finetune",
        })
    }
}

impl FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "frozen" => Ok(Regime::Frozen),
            "finetune" => Ok(Regime::Finetune),
            _ => Err(format!("unknown regime {s:?} (expected frozen or finetune)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub feature_kind: FeatureKind,
    pub regime: Regime,
    pub epochs: usize,
    pub lr: f64,
    pub stack_width: usize,
    pub seed: u64,
    pub mfcc: MfccConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            feature_kind: FeatureKind::CpcContext,
            regime: Regime::Frozen,
            epochs: 30,
            lr: 1e-3,
            stack_width: 8,
            seed: 0,
            mfcc: MfccConfig::default(),
        }
    }
}

/// Non-overlapping stacking: `floor(T / width)` rows, each the
/// concatenation of `width` consecutive frames; the remainder is dropped.
pub fn stack_frames(features: &FeatureSequence, width: usize) -> Result<FeatureSequence, ProbeError> {
    if width == 0 {
        return Err(ProbeError::InvalidConfig("stack width must be positive".into()));
    }
    let t = features.n_frames();
    if t < width {
        return Err(ProbeError::TooShort { frames: t, width });
    }
    let rows = t / width;
    let d = features.dim();
    let data = features.data()[..rows * width * d].to_vec();
    Ok(FeatureSequence::new(
        data,
        rows,
        width * d,
        features.frame_hop_ms * width as f64,
        features.origin,
    )?)
}

/// Linear classifier over stacked features.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    /// `[stack_width · feature_dim, classes]`
    pub weight: Tensor,
    pub bias: Tensor,
    pub symbols: SymbolTable,
    pub stack_width: usize,
    pub feature_kind: FeatureKind,
}

impl ProbeModel {
    /// Zero weights: every frame starts uniform over the classes.
    pub fn zeros(feature_dim: usize, stack_width: usize, symbols: SymbolTable, feature_kind: FeatureKind) -> Self {
        let v = symbols.len();
        Self {
            weight: Tensor::zeros(&[feature_dim * stack_width, v]),
            bias: Tensor::zeros(&[v]),
            symbols,
            stack_width,
            feature_kind,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.symbols.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.input_dim() / self.stack_width
    }

    /// `[T', V]` log-probabilities for `[T', width·D]` stacked input.
    fn log_probs_node(&self, g: &mut Graph, stacked: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, ProbeError> {
        let logits = g.matmul(stacked, w)?;
        let logits = g.add_bias(logits, b)?;
        Ok(g.log_softmax(logits))
    }

    /// Per-frame log-probabilities for unstacked features.
    pub fn log_probs(&self, features: &FeatureSequence) -> Result<Tensor, ProbeError> {
        if features.dim() != self.feature_dim() {
            return Err(ProbeError::InvalidConfig(format!(
                "probe expects {}-dimensional features, got {}",
                self.feature_dim(),
                features.dim()
            )));
        }
        let stacked = stack_frames(features, self.stack_width)?;
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(stacked.n_frames(), stacked.dim(), stacked.into_data())?);
        let w = g.input(self.weight.clone());
        let b = g.input(self.bias.clone());
        let lp = self.log_probs_node(&mut g, x, w, b)?;
        Ok(g.value(lp).clone())
    }
}

/// Feature front end for a probe.
#[derive(Debug, Clone)]
pub enum Frontend<'a> {
    Mfcc(MfccExtractor),
    Cpc(&'a CpcModel),
}

impl<'a> Frontend<'a> {
    pub fn new(kind: FeatureKind, backbone: Option<&'a CpcModel>, mfcc: &MfccConfig, sample_rate_hz: u32) -> Result<Self, ProbeError> {
        match (kind, backbone) {
            (FeatureKind::Mfcc, _) => Ok(Frontend::Mfcc(MfccExtractor::new(mfcc.clone(), sample_rate_hz)?)),
            (FeatureKind::CpcContext, Some(m)) => Ok(Frontend::Cpc(m)),
            (FeatureKind::CpcContext, None) => Err(ProbeError::InvalidConfig("cpc features need a backbone".into())),
        }
    }

    pub fn features(&self, wave: &Waveform) -> Result<FeatureSequence, ProbeError> {
        match self {
            Frontend::Mfcc(ex) => Ok(ex.extract(wave)?),
            Frontend::Cpc(m) => Ok(m.context_features(wave)?),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Frontend::Mfcc(ex) => ex.n_ceps(),
            Frontend::Cpc(m) => m.arch.context_dim,
        }
    }

    /// Feature frame count for an input of `len` samples, if any.
    fn frames_for(&self, wave: &Waveform) -> Result<Option<usize>, ProbeError> {
        match self {
            Frontend::Mfcc(_) => match self.features(wave) {
                Ok(f) => Ok(Some(f.n_frames())),
                Err(ProbeError::Feature(FeatureError::TooShort { .. })) => Ok(None),
                Err(e) => Err(e),
            },
            Frontend::Cpc(m) => Ok(m.arch.output_len(wave.len())),
        }
    }
}

/// Waveform plus label ids (blank excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledUtterance {
    pub waveform: Waveform,
    pub labels: Vec<usize>,
}

pub fn label_utterances(
    manifest: &Manifest,
    waveforms: Vec<Waveform>,
    symbols: &SymbolTable,
) -> Result<Vec<LabeledUtterance>, ProbeError> {
    manifest
        .utterances
        .iter()
        .zip(waveforms)
        .map(|(u, waveform)| {
            Ok(LabeledUtterance {
                waveform,
                labels: symbols.encode(&u.transcript)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub probe: ProbeModel,
    /// Present only for the fine-tuning regime.
    pub backbone: Option<CpcModel>,
    /// Mean CTC loss over trained utterances, per epoch.
    pub epoch_losses: Vec<f64>,
    /// Utterances whose stacked length cannot emit their transcript.
    pub skipped: usize,
}

/// Trains a zero-initialised probe with per-utterance Adam steps over a
/// seeded shuffle. Frozen features are extracted once; fine-tuning runs
/// the backbone inside every step.
pub fn train_probe(
    backbone: Option<&CpcModel>,
    symbols: &SymbolTable,
    data: &[LabeledUtterance],
    config: &ProbeConfig,
) -> Result<ProbeOutcome, ProbeError> {
    if config.stack_width == 0 || !(config.lr > 0.0) {
        return Err(ProbeError::InvalidConfig("stack width and lr must be positive".into()));
    }
    if config.regime == Regime::Finetune && config.feature_kind == FeatureKind::Mfcc {
        return Err(ProbeError::InvalidConfig("MFCC features have no backbone to fine-tune".into()));
    }
    let sample_rate = data.first().map_or(16_000, |u| u.waveform.sample_rate_hz());
    let frontend = Frontend::new(config.feature_kind, backbone, &config.mfcc, sample_rate)?;
    let mut probe = ProbeModel::zeros(frontend.feature_dim(), config.stack_width, symbols.clone(), config.feature_kind);

    let mut feasible = Vec::new();
    for (i, u) in data.iter().enumerate() {
        let stacked = frontend.frames_for(&u.waveform)?.map_or(0, |t| t / config.stack_width);
        if stacked > 0 && stacked >= min_frames(&u.labels) {
            feasible.push(i);
        }
    }
    let skipped = data.len() - feasible.len();
    if skipped > 0 {
        log::warn!("skipping {skipped} utterance(s) too short for their transcripts");
    }
    if feasible.is_empty() {
        return Err(ProbeError::AllUtterancesInfeasible);
    }

    let mut opt = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut order_rng = rng::derive(config.seed, 3);
    let mut order = feasible.clone();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    match config.regime {
        Regime::Frozen => {
            let mut cache: Vec<Option<Tensor>> = vec![None; data.len()];
            for &i in &feasible {
                let f = stack_frames(&frontend.features(&data[i].waveform)?, config.stack_width)?;
                cache[i] = Some(Tensor::matrix(f.n_frames(), f.dim(), f.into_data())?);
            }
            for _ in 0..config.epochs {
                order.shuffle(&mut order_rng);
                let mut total = 0.0;
                for &i in &order {
                    let mut g = Graph::new();
                    let x = g.input(cache[i].clone().expect("cached"));
                    let w = g.param(probe.weight.clone());
                    let b = g.param(probe.bias.clone());
                    let lp = probe.log_probs_node(&mut g, x, w, b)?;
                    let loss = ctc_loss_node(&mut g, lp, &data[i].labels)?;
                    total += g.value(loss).item();
                    let mut grads = g.backward(loss)?;
                    let gw = grads.take(w).expect("param");
                    let gb = grads.take(b).expect("param");
                    opt.step(&mut [&mut probe.weight, &mut probe.bias], &[gw, gb])?;
                }
                epoch_losses.push(total / order.len() as f64);
            }
            Ok(ProbeOutcome {
                probe,
                backbone: None,
                epoch_losses,
                skipped,
            })
        }
        Regime::Finetune => {
            let mut model = backbone.expect("checked by Frontend::new").clone();
            for _ in 0..config.epochs {
                order.shuffle(&mut order_rng);
                let mut total = 0.0;
                for &i in &order {
                    let mut g = Graph::new();
                    let nodes = model.register(&mut g, true);
                    let w = g.param(probe.weight.clone());
                    let b = g.param(probe.bias.clone());
                    let lp = finetune_log_probs(&model, &nodes, &mut g, &data[i].waveform, config.stack_width, &probe, w, b)?;
                    let loss = ctc_loss_node(&mut g, lp, &data[i].labels)?;
                    total += g.value(loss).item();
                    let mut grads = g.backward(loss)?;
                    let mut ids = nodes.ids();
                    ids.extend([w, b]);
                    let grads: Vec<Tensor> = ids.iter().map(|&id| grads.take(id).expect("param")).collect();
                    let mut params = model.parameters_mut();
                    params.push(&mut probe.weight);
                    params.push(&mut probe.bias);
                    opt.step(&mut params, &grads)?;
                }
                epoch_losses.push(total / order.len() as f64);
            }
            Ok(ProbeOutcome {
                probe,
                backbone: Some(model),
                epoch_losses,
                skipped,
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finetune_log_probs(
    model: &CpcModel,
    nodes: &CpcNodes,
    g: &mut Graph,
    wave: &Waveform,
    width: usize,
    probe: &ProbeModel,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, ProbeError> {
    let input = g.input(Tensor::new(vec![1, wave.len(), 1], wave.samples().to_vec())?);
    let z = model.encode_nodes(g, nodes, input)?;
    let c = model.contextualize_nodes(g, nodes, z)?;
    let (t, h) = (g.shape(c)[1], g.shape(c)[2]);
    let rows = t / width;
    let c = g.reshape(c, &[t, h])?;
    let c = if rows * width < t { g.slice(c, 0, 0, rows * width)? } else { c };
    // consecutive rows of a row-major matrix are contiguous, so stacking is a reshape
    let stacked = g.reshape(c, &[rows, width * h])?;
    probe.log_probs_node(g, stacked, w, b)
}

/// Features → stack → linear → log-softmax → greedy decode.
pub fn transcribe(frontend: &Frontend<'_>, probe: &ProbeModel, wave: &Waveform) -> Result<Vec<String>, ProbeError> {
    let lp = probe.log_probs(&frontend.features(wave)?)?;
    let ids = greedy_decode(lp.data(), probe.n_classes());
    Ok(probe.symbols.decode(&ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureOrigin;

    fn seq(t: usize, d: usize) -> FeatureSequence {
        FeatureSequence::new((0..t * d).map(|v| v as f64).collect(), t, d, 10.0, FeatureOrigin::Mfcc).unwrap()
    }

    #[test]
    fn stacking_shapes() {
        let s = stack_frames(&seq(16, 4), 8).unwrap();
        assert_eq!((s.n_frames(), s.dim()), (2, 32));
        let s = stack_frames(&seq(15, 4), 8).unwrap();
        assert_eq!((s.n_frames(), s.dim()), (1, 32));
        assert!(matches!(stack_frames(&seq(7, 4), 8), Err(ProbeError::TooShort { frames: 7, width: 8 })));
    }

    #[test]
    fn first_stacked_row_is_first_eight_frames() {
        let f = seq(20, 3);
        let s = stack_frames(&f, 8).unwrap();
        let expected: Vec<f64> = (0..8).flat_map(|t| f.frame(t).to_vec()).collect();
        assert_eq!(s.frame(0), expected.as_slice());
        // unstacking is the inverse copy of the first 8·T' rows
        let unstacked: Vec<f64> = (0..s.n_frames()).flat_map(|r| s.frame(r).to_vec()).collect();
        assert_eq!(unstacked.as_slice(), &f.data()[..16 * 3]);
    }

    #[test]
    fn symbol_table() {
        let t = SymbolTable::from_inventory(&["a".into(), "b".into()]);
        assert_eq!(t.symbols(), ["<blank>", "a", "b"]);
        assert_eq!(t.encode(&["b".into(), "a".into()]).unwrap(), vec![2, 1]);
        assert!(matches!(t.encode(&["z".into()]), Err(ProbeError::UnknownSymbol(_))));
        assert_eq!(t.decode(&[1, 2]), ["a", "b"]);
        assert!(SymbolTable::from_symbols(vec!["a".into()]).is_err());
    }

    #[test]
    fn zero_probe_transcribes_nothing() {
        let t = SymbolTable::from_inventory(&["a".into(), "b".into()]);
        let probe = ProbeModel::zeros(13, 8, t, FeatureKind::Mfcc);
        let wave = Waveform::new((0..16000).map(|i| (i as f64 * 0.1).sin() * 0.3).collect(), 16000).unwrap();
        let fe = Frontend::new(FeatureKind::Mfcc, None, &MfccConfig::default(), 16000).unwrap();
        assert!(transcribe(&fe, &probe, &wave).unwrap().is_empty());
        let lp = probe.log_probs(&fe.features(&wave).unwrap()).unwrap();
        assert!(lp.data().iter().all(|&v| (v + 3f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("mfcc".parse::<FeatureKind>().unwrap(), FeatureKind::Mfcc);
        assert_eq!("cpc".parse::<FeatureKind>().unwrap(), FeatureKind::CpcContext);
        assert_eq!("finetune".parse::<Regime>().unwrap(), Regime::Finetune);
        assert!("x".parse::<Regime>().is_err());
    }
}
