//! Browser bindings: a log-mel view of a synthetic utterance, a CTC
//! posterior lattice and a phone error rate calculator.

use rand::Rng as _;
use wasm_bindgen::prelude::*;

use cpcasr::corpus::{render_corpus, CorpusError, SynthSpec};
use cpcasr::eval::{levenshtein, per, EvalError};
use cpcasr::features::{FeatureError, MfccConfig, MfccExtractor};
use cpcasr::probe::{ctc_forward_backward, greedy_decode, ProbeError};
use cpcasr::rng;

pub const MAX_FRAMES: usize = 64;
pub const MAX_CLASSES: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Ctc(#[from] ProbeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Input(String),
}

impl From<DemoError> for JsValue {
    fn from(e: DemoError) -> Self {
        JsValue::from_str(&e.to_string())
    }
}

/// Row-major `[n_frames, n_mels]` log-mel energies plus the phone transcript.
#[wasm_bindgen]
pub struct Spectrogram {
    n_frames: usize,
    n_mels: usize,
    data: Vec<f64>,
    transcript: String,
}

#[wasm_bindgen]
impl Spectrogram {
    #[wasm_bindgen(getter)]
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }
    #[wasm_bindgen(getter)]
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }
    #[wasm_bindgen(getter)]
    pub fn data(&self) -> Vec<f64> {
        self.data.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn transcript(&self) -> String {
        self.transcript.clone()
    }
}

/// Renders one synthetic utterance and its log-mel spectrogram.
#[wasm_bindgen]
pub fn synth_log_mel(seed: u32, n_phones: usize, noise_std: f64) -> Result<Spectrogram, DemoError> {
    let spec = SynthSpec {
        n_phones,
        n_utterances: 1,
        noise_std,
        n_speakers: 1,
        seed: u64::from(seed),
        ..SynthSpec::default()
    };
    let utt = render_corpus(&spec)?.remove(0);
    let extractor = MfccExtractor::new(MfccConfig::default(), spec.sample_rate_hz)?;
    let frames = extractor.log_mel(&utt.waveform)?;
    let n_mels = frames.first().map_or(0, Vec::len);
    Ok(Spectrogram {
        n_frames: frames.len(),
        n_mels,
        data: frames.concat(),
        transcript: utt.transcript().join(" "),
    })
}

/// Per-frame label posteriors `[n_frames, n_classes]`, class 0 is blank.
#[wasm_bindgen]
pub struct Lattice {
    n_frames: usize,
    n_classes: usize,
    loss: f64,
    posteriors: Vec<f64>,
    probs: Vec<f64>,
    greedy: String,
}

#[wasm_bindgen]
impl Lattice {
    #[wasm_bindgen(getter)]
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }
    #[wasm_bindgen(getter)]
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
    #[wasm_bindgen(getter)]
    pub fn loss(&self) -> f64 {
        self.loss
    }
    #[wasm_bindgen(getter)]
    pub fn posteriors(&self) -> Vec<f64> {
        self.posteriors.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn probs(&self) -> Vec<f64> {
        self.probs.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn greedy(&self) -> String {
        self.greedy.clone()
    }
}

fn parse_targets(text: &str, n_classes: usize) -> Result<Vec<usize>, DemoError> {
    text.split_whitespace()
        .map(|tok| match tok.parse::<usize>() {
            Ok(c) if (1..n_classes).contains(&c) => Ok(c),
            _ => Err(DemoError::Input(format!("target {tok:?} must be a label in 1..{}", n_classes - 1))),
        })
        .collect()
}

/// CTC loss and posteriors for random frame distributions. `sharpness`
/// scales the logits, so larger values give peakier distributions.
#[wasm_bindgen]
pub fn ctc_lattice(n_frames: usize, n_classes: usize, targets: &str, seed: u32, sharpness: f64) -> Result<Lattice, DemoError> {
    if !(1..=MAX_FRAMES).contains(&n_frames) || !(2..=MAX_CLASSES).contains(&n_classes) {
        return Err(DemoError::Input(format!(
            "need 1..={MAX_FRAMES} frames and 2..={MAX_CLASSES} classes"
        )));
    }
    let targets = parse_targets(targets, n_classes)?;
    let mut r = rng::seeded(u64::from(seed));
    let mut log_probs = Vec::with_capacity(n_frames * n_classes);
    for _ in 0..n_frames {
        let logits: Vec<f64> = (0..n_classes).map(|_| sharpness * r.random_range(-1.0..1.0)).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        log_probs.extend(logits.iter().map(|x| x - lse));
    }
    let result = ctc_forward_backward(&log_probs, n_frames, n_classes, &targets)?;
    let greedy = greedy_decode(&log_probs, n_classes);
    Ok(Lattice {
        n_frames,
        n_classes,
        loss: result.loss,
        posteriors: result.grad.iter().map(|g| -g).collect(),
        probs: log_probs.iter().map(|lp| lp.exp()).collect(),
        greedy: greedy.iter().map(usize::to_string).collect::<Vec<_>>().join(" "),
    })
}

#[wasm_bindgen]
pub struct ErrorRate {
    per: f64,
    n_ref_phones: usize,
    n_edits: usize,
    per_line: Vec<usize>,
}

#[wasm_bindgen]
impl ErrorRate {
    #[wasm_bindgen(getter)]
    pub fn per(&self) -> f64 {
        self.per
    }
    #[wasm_bindgen(getter)]
    pub fn n_ref_phones(&self) -> usize {
        self.n_ref_phones
    }
    #[wasm_bindgen(getter)]
    pub fn n_edits(&self) -> usize {
        self.n_edits
    }
    /// Edit distance of each line pair.
    #[wasm_bindgen(getter)]
    pub fn per_line(&self) -> Vec<usize> {
        self.per_line.clone()
    }
}

/// One token list per line; a blank line is an empty transcript. A single
/// trailing newline does not start another line.
fn lines(text: &str) -> Vec<Vec<String>> {
    let text = text.strip_suffix('\n').unwrap_or(text);
    text.split('\n')
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect()
}

/// Corpus-level PER of line-aligned, space-separated transcripts.
#[wasm_bindgen]
pub fn phone_error_rate(references: &str, hypotheses: &str) -> Result<ErrorRate, DemoError> {
    let (refs, hyps) = (lines(references), lines(hypotheses));
    let score = per(&refs, &hyps)?;
    Ok(ErrorRate {
        per: score.per,
        n_ref_phones: score.n_ref_phones,
        n_edits: score.n_edits,
        per_line: refs.iter().zip(&hyps).map(|(r, h)| levenshtein(r, h)).collect(),
    })
}
