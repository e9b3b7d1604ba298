//! Frame-level features: the MFCC baseline and the [`FeatureSequence`]
//! container that also carries CPC latents and contexts.

use std::f64::consts::PI;

use crate::corpus::Waveform;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("signal of {len} samples is shorter than the required {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
    #[error("invalid feature sequence: {0}")]
    InvalidSequence(String),
    #[error("malformed feature dump: {0}")]
    BadDump(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureOrigin {
    Mfcc,
    CpcLatent,
    CpcContext,
}

/// Time-major `T × D` matrix of per-frame vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Vec<f64>,
    n_frames: usize,
    dim: usize,
    pub frame_hop_ms: f64,
    pub origin: FeatureOrigin,
}

impl FeatureSequence {
    pub fn new(
        data: Vec<f64>,
        n_frames: usize,
        dim: usize,
        frame_hop_ms: f64,
        origin: FeatureOrigin,
    ) -> Result<Self, FeatureError> {
        if n_frames == 0 || dim == 0 || data.len() != n_frames * dim {
            return Err(FeatureError::InvalidSequence(format!(
                "{} values for {n_frames} frames of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            n_frames,
            dim,
            frame_hop_ms,
            origin,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Debug dump: `"FEAT"`, u32 T, u32 D, then row-major little-endian f32.
    pub fn to_dump_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        out.extend_from_slice(b"FEAT");
        out.extend_from_slice(&(self.n_frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_dump_bytes(bytes: &[u8], frame_hop_ms: f64, origin: FeatureOrigin) -> Result<Self, FeatureError> {
        if bytes.len() < 12 || &bytes[..4] != b"FEAT" {
            return Err(FeatureError::BadDump("missing FEAT header".into()));
        }
        let t = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let d = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() != t * d * 4 {
            return Err(FeatureError::BadDump(format!(
                "{t}×{d} needs {} bytes, found {}",
                t * d * 4,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        Self::new(data, t, d, frame_hop_ms, origin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_ceps: usize,
    pub fmin_hz: f64,
    /// `None` means half the sample rate.
    pub fmax_hz: Option<f64>,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_ms: 25.0,
            hop_ms: 10.0,
            n_fft: 512,
            n_mels: 40,
            n_ceps: 13,
            fmin_hz: 0.0,
            fmax_hz: None,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn fmax(&self, sample_rate_hz: u32) -> f64 {
        self.fmax_hz.unwrap_or(f64::from(sample_rate_hz) / 2.0)
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidConfig(m));
        let frame = samples_for_ms(self.frame_ms, sample_rate_hz);
        let hop = samples_for_ms(self.hop_ms, sample_rate_hz);
        if frame == 0 || hop == 0 {
            return bad(format!("frame {} ms / hop {} ms round to zero samples", self.frame_ms, self.hop_ms));
        }
        if !self.n_fft.is_power_of_two() {
            return bad(format!("n_fft {} is not a power of two", self.n_fft));
        }
        if self.n_fft < frame {
            return bad(format!("n_fft {} is shorter than the {frame}-sample frame", self.n_fft));
        }
        if self.n_mels == 0 || self.n_ceps == 0 || self.n_ceps > self.n_mels {
            return bad(format!("need 0 < n_ceps ({}) ≤ n_mels ({})", self.n_ceps, self.n_mels));
        }
        let fmax = self.fmax(sample_rate_hz);
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < fmax && fmax <= f64::from(sample_rate_hz) / 2.0) {
            return bad(format!("need 0 ≤ fmin ({}) < fmax ({fmax}) ≤ Nyquist", self.fmin_hz));
        }
        if !(self.log_floor > 0.0) {
            return bad(format!("log floor must be positive, got {}", self.log_floor));
        }
        Ok(())
    }
}

pub fn samples_for_ms(ms: f64, sample_rate_hz: u32) -> usize {
    (ms * f64::from(sample_rate_hz) / 1000.0).round() as usize
}

/// Splits into full frames only: `1 + floor((len − frame) / hop)` of them.
pub fn frame_signal(wave: &Waveform, frame_ms: f64, hop_ms: f64) -> Result<Vec<Vec<f64>>, FeatureError> {
    let sr = wave.sample_rate_hz();
    let frame = samples_for_ms(frame_ms, sr);
    let hop = samples_for_ms(hop_ms, sr);
    if frame == 0 || hop == 0 {
        return Err(FeatureError::InvalidConfig("frame or hop rounds to zero samples".into()));
    }
    let x = wave.samples();
    if x.len() < frame {
        return Err(FeatureError::TooShort {
            len: x.len(),
            needed: frame,
        });
    }
    let count = 1 + (x.len() - frame) / hop;
    Ok((0..count).map(|i| x[i * hop..i * hop + frame].to_vec()).collect())
}

/// In-place iterative radix-2 FFT. Lengths must be powers of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert_eq!(n, im.len());
    assert!(n.is_power_of_two());
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) };
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (s, c) = (ang * k as f64).sin_cos();
                let (a, b) = (start + k, start + k + len / 2);
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// `|DFT|²` of the zero-padded frame, bins `0..=n_fft/2`.
pub fn power_spectrum(frame: &[f64], n_fft: usize) -> Vec<f64> {
    let mut re = vec![0.0; n_fft];
    let mut im = vec![0.0; n_fft];
    let n = frame.len().min(n_fft);
    re[..n].copy_from_slice(&frame[..n]);
    fft_in_place(&mut re, &mut im);
    (0..=n_fft / 2).map(|k| re[k] * re[k] + im[k] * im[k]).collect()
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peaks, equally spaced on the mel scale with
/// 50% overlap. Returns `n_mels` rows of `n_fft/2 + 1` weights and the
/// filter centre frequencies.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate_hz: u32, fmin: f64, fmax: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(sample_rate_hz) / n_fft as f64;
    let filters = (0..n_mels)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..=n_fft / 2)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f > l && f < c {
                        (f - l) / (c - l)
                    } else if f >= c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    (filters, edges[1..=n_mels].to_vec())
}

/// Orthonormal DCT-II, first `n_out` coefficients.
pub fn dct2_orthonormal(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Precomputed window and filterbank for one sample rate.
#[derive(Debug, Clone)]
pub struct MfccExtractor {
    config: MfccConfig,
    sample_rate_hz: u32,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
}

impl MfccExtractor {
    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    pub fn n_ceps(&self) -> usize {
        self.config.n_ceps
    }

    pub fn new(config: MfccConfig, sample_rate_hz: u32) -> Result<Self, FeatureError> {
        config.validate(sample_rate_hz)?;
        let frame = samples_for_ms(config.frame_ms, sample_rate_hz);
        let (filters, _) = mel_filterbank(
            config.n_mels,
            config.n_fft,
            sample_rate_hz,
            config.fmin_hz,
            config.fmax(sample_rate_hz),
        );
        Ok(Self {
            window: hamming(frame),
            filters,
            config,
            sample_rate_hz,
        })
    }

    /// Natural-log mel energies per frame, floored at `log_floor`.
    pub fn log_mel(&self, wave: &Waveform) -> Result<Vec<Vec<f64>>, FeatureError> {
        self.check_rate(wave)?;
        let frames = frame_signal(wave, self.config.frame_ms, self.config.hop_ms)?;
        Ok(frames
            .iter()
            .map(|frame| {
                let windowed: Vec<f64> = frame.iter().zip(&self.window).map(|(x, w)| x * w).collect();
                let power = power_spectrum(&windowed, self.config.n_fft);
                self.filters
                    .iter()
                    .map(|f| {
                        let e: f64 = f.iter().zip(&power).map(|(w, p)| w * p).sum();
                        e.max(self.config.log_floor).ln()
                    })
                    .collect()
            })
            .collect())
    }

    pub fn extract(&self, wave: &Waveform) -> Result<FeatureSequence, FeatureError> {
        let log_mel = self.log_mel(wave)?;
        let n_frames = log_mel.len();
        let data: Vec<f64> = log_mel
            .iter()
            .flat_map(|row| dct2_orthonormal(row, self.config.n_ceps))
            .collect();
        FeatureSequence::new(data, n_frames, self.config.n_ceps, self.config.hop_ms, FeatureOrigin::Mfcc)
    }

    fn check_rate(&self, wave: &Waveform) -> Result<(), FeatureError> {
        if wave.sample_rate_hz() != self.sample_rate_hz {
            return Err(FeatureError::InvalidConfig(format!(
                "extractor built for {} Hz, waveform is {} Hz",
                self.sample_rate_hz,
                wave.sample_rate_hz()
            )));
        }
        Ok(())
    }
}

/// Hamming → FFT power → mel filterbank → log → orthonormal DCT-II.
pub fn mfcc(wave: &Waveform, config: &MfccConfig) -> Result<FeatureSequence, FeatureError> {
    MfccExtractor::new(config.clone(), wave.sample_rate_hz())?.extract(wave)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, amp: f64, len: usize, sr: u32) -> Waveform {
        let s = (0..len)
            .map(|n| amp * (2.0 * PI * freq * n as f64 / f64::from(sr)).sin())
            .collect();
        Waveform::new(s, sr).unwrap()
    }

    fn naive_dft_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn frame_counts() {
        let w = |n| Waveform::new(vec![0.0; n], 16000).unwrap();
        assert_eq!(frame_signal(&w(400), 25.0, 10.0).unwrap().len(), 1);
        assert_eq!(frame_signal(&w(720), 25.0, 10.0).unwrap().len(), 3);
        assert!(matches!(
            frame_signal(&w(399), 25.0, 10.0),
            Err(FeatureError::TooShort { len: 399, needed: 400 })
        ));
    }

    #[test]
    fn fft_matches_naive_dft() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let fast = power_spectrum(&x, 64);
        for (a, b) in fast.iter().zip(naive_dft_power(&x)) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b));
        }
    }

    #[test]
    fn silence_gives_dct_of_constant_floor() {
        let w = Waveform::new(vec![0.0; 16000], 16000).unwrap();
        let feats = mfcc(&w, &MfccConfig::default()).unwrap();
        let expected = dct2_orthonormal(&[1e-10f64.ln(); 40], 13);
        assert!((expected[0] - 40f64.sqrt() * 1e-10f64.ln()).abs() < 1e-9);
        for t in 0..feats.n_frames() {
            assert_eq!(feats.frame(t), expected.as_slice());
        }
    }

    #[test]
    fn one_second_shape() {
        let w = sine(440.0, 0.3, 16000, 16000);
        let feats = mfcc(&w, &MfccConfig::default()).unwrap();
        assert_eq!((feats.n_frames(), feats.dim()), (98, 13));
    }

    #[test]
    fn kilohertz_tone_peaks_in_nearest_filter() {
        let cfg = MfccConfig::default();
        // centres from the mel formula, computed independently of the filterbank code
        let (lo, hi) = (0.0, 2595.0 * (1.0 + 8000.0f64 / 700.0).log10());
        let centres: Vec<f64> = (1..=40)
            .map(|i| {
                let m = lo + (hi - lo) * i as f64 / 41.0;
                700.0 * (10f64.powf(m / 2595.0) - 1.0)
            })
            .collect();
        let nearest = (0..40)
            .min_by(|&a, &b| (centres[a] - 1000.0).abs().total_cmp(&(centres[b] - 1000.0).abs()))
            .unwrap();
        let ex = MfccExtractor::new(cfg, 16000).unwrap();
        for row in ex.log_mel(&sine(1000.0, 0.5, 16000, 16000)).unwrap() {
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        let n = 40;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 3.0 - 1.0).collect();
        let c = dct2_orthonormal(&x, n);
        // transpose of the orthonormal DCT-II matrix
        let back: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|k| {
                        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
                        s * c[k] * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n as f64)).cos()
                    })
                    .sum()
            })
            .collect();
        for (a, b) in x.iter().zip(back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn filterbank_shape_and_coverage() {
        let (filters, _) = mel_filterbank(40, 512, 16000, 0.0, 8000.0);
        for f in &filters {
            assert!(f.iter().all(|&w| (0.0..=1.0).contains(&w)));
            // unimodal: non-decreasing then non-increasing
            let peak = (0..f.len()).max_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
            assert!(f[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(f[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
        for k in 1..256 {
            assert!(filters.iter().any(|f| f[k] > 0.0), "bin {k} uncovered");
        }
    }

    #[test]
    fn config_validation() {
        assert!(MfccConfig { n_fft: 500, ..MfccConfig::default() }.validate(16000).is_err());
        assert!(MfccConfig { n_fft: 256, ..MfccConfig::default() }.validate(16000).is_err());
        assert!(MfccConfig { n_ceps: 41, ..MfccConfig::default() }.validate(16000).is_err());
        assert!(MfccConfig { fmax_hz: Some(9000.0), ..MfccConfig::default() }.validate(16000).is_err());
        assert!(MfccConfig::default().validate(16000).is_ok());
    }

    #[test]
    fn deterministic() {
        let w = sine(700.0, 0.4, 4000, 16000);
        let a = mfcc(&w, &MfccConfig::default()).unwrap();
        let b = mfcc(&w, &MfccConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dump_round_trip() {
        let f = FeatureSequence::new(vec![0.5, -1.25, 3.0, 4.0, 5.5, 6.0], 2, 3, 10.0, FeatureOrigin::Mfcc).unwrap();
        let bytes = f.to_dump_bytes();
        assert_eq!(&bytes[..4], b"FEAT");
        assert_eq!(FeatureSequence::from_dump_bytes(&bytes, 10.0, FeatureOrigin::Mfcc).unwrap(), f);
        assert!(FeatureSequence::from_dump_bytes(&bytes[..bytes.len() - 1], 10.0, FeatureOrigin::Mfcc).is_err());
    }

    proptest! {
        #[test]
        fn scaling_shifts_c0_and_keeps_argmax_bin(a in 0.1f64..1.9, freq in 200.0f64..3000.0) {
            let base = sine(freq, 0.5, 400, 16000);
            let scaled = Waveform::new(base.samples().iter().map(|v| v * a).collect(), 16000).unwrap();
            let win = hamming(400);
            let spec = |w: &Waveform| {
                let x: Vec<f64> = w.samples().iter().zip(&win).map(|(s, h)| s * h).collect();
                power_spectrum(&x, 512)
            };
            let (p0, p1) = (spec(&base), spec(&scaled));
            let am = |p: &[f64]| (0..p.len()).max_by(|&x, &y| p[x].total_cmp(&p[y])).unwrap();
            prop_assert_eq!(am(&p0), am(&p1));

            let cfg = MfccConfig::default();
            let c0 = mfcc(&base, &cfg).unwrap();
            let c1 = mfcc(&scaled, &cfg).unwrap();
            // every unsaturated log-mel band shifts by 2 ln a
            let ex = MfccExtractor::new(cfg, 16000).unwrap();
            let l0 = &ex.log_mel(&base).unwrap()[0];
            if l0.iter().all(|&v| v > 1e-10f64.ln() + 1.0) {
                let shift = 40f64.sqrt() * 2.0 * a.ln();
                prop_assert!((c1.frame(0)[0] - c0.frame(0)[0] - shift).abs() < 1e-6);
                for k in 1..13 {
                    prop_assert!((c1.frame(0)[k] - c0.frame(0)[k]).abs() < 1e-6);
                }
            }
        }
    }
}
