//! Audio corpora: waveforms, TSV manifests, synthetic tone corpora and
//! deterministic train/dev/test splits.

mod manifest;
mod synth;
mod wav;

use std::path::{Path, PathBuf};

pub use manifest::{load_manifest, split, write_manifest, Manifest, Utterance, BLANK_SYMBOL};
pub use synth::{render_corpus, synth_corpus, phone_frequency_hz, phone_symbol, Segment, SynthSpec, SynthUtterance};
pub use wav::{decode_wav, decode_wav_bytes, encode_wav_bytes, write_wav};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("not a RIFF/WAVE file")]
    NotWav,
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("WAV data chunk is truncated")]
    Truncated,
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("utterance {0:?} has an empty transcript")]
    EmptyTranscript(String),
    #[error("invalid split fractions ({0}, {1})")]
    InvalidFractions(f64, f64),
    #[error("split {0} would be empty")]
    EmptySplit(&'static str),
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: sample rate {found} Hz, expected {expected} Hz")]
    SampleRateMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self, CorpusError> {
        if sample_rate_hz == 0 {
            return Err(CorpusError::InvalidWaveform("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(CorpusError::InvalidWaveform("no samples".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(CorpusError::InvalidWaveform(format!("sample {bad} outside [-1, 1]")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }
}

/// Decodes every utterance of a manifest, checking the sample rate.
pub fn load_waveforms(manifest: &Manifest, expected_rate_hz: u32) -> Result<Vec<Waveform>, CorpusError> {
    manifest
        .utterances
        .iter()
        .map(|u| {
            let path = manifest.audio_path(u);
            let w = decode_wav(&path)?;
            if w.sample_rate_hz() != expected_rate_hz {
                return Err(CorpusError::SampleRateMismatch {
                    path,
                    found: w.sample_rate_hz(),
                    expected: expected_rate_hz,
                });
            }
            Ok(w)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waveform_invariants() {
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![], 16000).is_err());
        assert!(Waveform::new(vec![1.5], 16000).is_err());
        assert!(Waveform::new(vec![f64::NAN], 16000).is_err());
        assert_eq!(Waveform::new(vec![0.0; 8000], 16000).unwrap().duration_secs(), 0.5);
    }
}
