//! Synthetic corpora where every phone is an audible tone signature, so
//! transcripts are ground truth by construction.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{write_manifest, write_wav, CorpusError, Manifest, Utterance, Waveform};
use crate::rng;

const TONE_AMPLITUDE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_phones: usize,
    pub n_utterances: usize,
    pub phones_per_utt: (usize, usize),
    pub phone_dur_ms: (u32, u32),
    pub sample_rate_hz: u32,
    pub noise_std: f64,
    pub n_speakers: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_phones: 3,
            n_utterances: 200,
            phones_per_utt: (4, 8),
            phone_dur_ms: (100, 200),
            sample_rate_hz: 16_000,
            noise_std: 0.02,
            n_speakers: 4,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidSpec(m));
        if self.n_phones < 2 {
            return bad(format!("n_phones must be at least 2, got {}", self.n_phones));
        }
        if self.n_utterances == 0 {
            return bad("n_utterances must be at least 1".into());
        }
        if self.n_speakers == 0 {
            return bad("n_speakers must be at least 1".into());
        }
        let (lo, hi) = self.phones_per_utt;
        if lo == 0 || lo > hi {
            return bad(format!("phones_per_utt range ({lo}, {hi}) is invalid"));
        }
        let (lo, hi) = self.phone_dur_ms;
        if lo == 0 || lo > hi {
            return bad(format!("phone_dur_ms range ({lo}, {hi}) is invalid"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be non-negative, got {}", self.noise_std));
        }
        let top = phone_frequency_hz(self.n_phones - 1) * 1.05;
        if self.sample_rate_hz == 0 || top >= f64::from(self.sample_rate_hz) / 2.0 {
            return bad(format!(
                "sample rate {} Hz cannot represent a {top:.0} Hz tone",
                self.sample_rate_hz
            ));
        }
        Ok(())
    }
}

/// Nominal tone of phone `i`: 300·(i+1) Hz.
pub fn phone_frequency_hz(phone: usize) -> f64 {
    300.0 * (phone + 1) as f64
}

pub fn phone_symbol(phone: usize) -> String {
    format!("p{phone:02}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub phone: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub speaker: usize,
    pub waveform: Waveform,
    pub segments: Vec<Segment>,
}

impl SynthUtterance {
    pub fn transcript(&self) -> Vec<String> {
        self.segments.iter().map(|s| phone_symbol(s.phone)).collect()
    }
}

/// Renders the corpus in memory. Utterance `u` belongs to speaker
/// `u mod n_speakers`; each speaker detunes every tone by one factor drawn
/// from `[0.95, 1.05]`. A phone never repeats its predecessor.
pub fn render_corpus(spec: &SynthSpec) -> Result<Vec<SynthUtterance>, CorpusError> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let detunes: Vec<f64> = (0..spec.n_speakers).map(|_| rng.random_range(0.95..=1.05)).collect();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| CorpusError::InvalidSpec(e.to_string()))?;
    let sr = f64::from(spec.sample_rate_hz);
    let width = spec.n_utterances.saturating_sub(1).to_string().len().max(4);

    let mut out = Vec::with_capacity(spec.n_utterances);
    for u in 0..spec.n_utterances {
        let speaker = u % spec.n_speakers;
        let n = rng.random_range(spec.phones_per_utt.0..=spec.phones_per_utt.1);
        let mut samples = Vec::new();
        let mut segments = Vec::with_capacity(n);
        let mut prev: Option<usize> = None;
        for _ in 0..n {
            let phone = match prev {
                None => rng.random_range(0..spec.n_phones),
                Some(p) => {
                    let r = rng.random_range(0..spec.n_phones - 1);
                    if r >= p {
                        r + 1
                    } else {
                        r
                    }
                }
            };
            prev = Some(phone);
            let dur_ms = rng.random_range(spec.phone_dur_ms.0..=spec.phone_dur_ms.1);
            let len = (u64::from(dur_ms) * u64::from(spec.sample_rate_hz) / 1000).max(1) as usize;
            let freq = phone_frequency_hz(phone) * detunes[speaker];
            segments.push(Segment {
                phone,
                start: samples.len(),
                len,
            });
            for i in 0..len {
                let mut s = TONE_AMPLITUDE * (2.0 * PI * freq * i as f64 / sr).sin();
                if spec.noise_std > 0.0 {
                    s += noise.sample(&mut rng);
                }
                samples.push(s.clamp(-1.0, 1.0));
            }
        }
        out.push(SynthUtterance {
            id: format!("utt{u:0width$}"),
            speaker,
            waveform: Waveform::new(samples, spec.sample_rate_hz)?,
            segments,
        });
    }
    Ok(out)
}

/// Writes `wav/<id>.wav` files and `manifest.tsv` under `out_dir`.
pub fn synth_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest, CorpusError> {
    let utts = render_corpus(spec)?;
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| CorpusError::io(&wav_dir, e))?;
    let mut entries = Vec::with_capacity(utts.len());
    for u in &utts {
        let rel = format!("wav/{}.wav", u.id);
        write_wav(&out_dir.join(&rel), &u.waveform)?;
        entries.push(Utterance {
            id: u.id.clone(),
            audio_path: rel,
            transcript: u.transcript(),
        });
    }
    let manifest = Manifest::new(out_dir.to_path_buf(), entries)?;
    write_manifest(&out_dir.join("manifest.tsv"), &manifest)?;
    Ok(manifest)
}
