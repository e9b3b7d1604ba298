//! Mono PCM16 RIFF/WAVE reading and writing.

use std::path::Path;

use super::{CorpusError, Waveform};

const PCM_FORMAT: u16 = 1;

/// Reads a mono 16-bit PCM WAV file.
pub fn decode_wav(path: &Path) -> Result<Waveform, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    decode_wav_bytes(&bytes)
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode_wav_bytes(bytes: &[u8]) -> Result<Waveform, CorpusError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(CorpusError::NotWav);
    }
    let mut pos = 12;
    let mut sample_rate = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(CorpusError::Truncated);
                }
                let format = read_u16(bytes, body);
                let channels = read_u16(bytes, body + 2);
                let rate = read_u32(bytes, body + 4);
                let bits = read_u16(bytes, body + 14);
                if format != PCM_FORMAT || channels != 1 || bits != 16 {
                    return Err(CorpusError::UnsupportedFormat(format!(
                        "format tag {format}, {channels} channel(s), {bits} bits"
                    )));
                }
                sample_rate = Some(rate);
            }
            b"data" => {
                let rate = sample_rate.ok_or_else(|| {
                    CorpusError::UnsupportedFormat("data chunk before fmt chunk".into())
                })?;
                if body + size > bytes.len() {
                    return Err(CorpusError::Truncated);
                }
                let samples: Vec<f64> = bytes[body..body + size - size % 2]
                    .chunks_exact(2)
                    .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])) / 32768.0)
                    .collect();
                return Waveform::new(samples, rate);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body + size + size % 2;
    }
    if sample_rate.is_none() {
        Err(CorpusError::UnsupportedFormat("missing fmt chunk".into()))
    } else {
        Err(CorpusError::Truncated)
    }
}

/// Quantizes to PCM16 (round to nearest, clamped to the int16 range).
pub fn encode_wav_bytes(wave: &Waveform) -> Vec<u8> {
    let n = wave.samples().len();
    let data_len = (n * 2) as u32;
    let rate = wave.sample_rate_hz();
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in wave.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, wave: &Waveform) -> Result<(), CorpusError> {
    std::fs::write(path, encode_wav_bytes(wave)).map_err(|e| CorpusError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pcm_file(values: &[i16], rate: u32) -> Vec<u8> {
        let samples = values.iter().map(|&v| f64::from(v) / 32768.0).collect();
        encode_wav_bytes(&Waveform::new(samples, rate).unwrap())
    }

    #[test]
    fn exact_scaling() {
        let w = decode_wav_bytes(&pcm_file(&[0, 16384, -32768], 16000)).unwrap();
        assert_eq!(w.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(w.sample_rate_hz(), 16000);
    }

    #[test]
    fn bad_magic() {
        let mut b = pcm_file(&[1, 2], 16000);
        b[0] = b'X';
        assert!(matches!(decode_wav_bytes(&b), Err(CorpusError::NotWav)));
    }

    #[test]
    fn one_second_file() {
        let w = decode_wav_bytes(&pcm_file(&vec![7; 16000], 16000)).unwrap();
        assert_eq!(w.len(), 16000);
        assert_eq!(w.sample_rate_hz(), 16000);
    }

    #[test]
    fn stereo_is_unsupported() {
        let mut b = pcm_file(&[1, 2], 16000);
        b[22] = 2;
        assert!(matches!(decode_wav_bytes(&b), Err(CorpusError::UnsupportedFormat(_))));
    }

    #[test]
    fn float_format_is_unsupported() {
        let mut b = pcm_file(&[1, 2], 16000);
        b[20] = 3;
        assert!(matches!(decode_wav_bytes(&b), Err(CorpusError::UnsupportedFormat(_))));
    }

    #[test]
    fn short_data_chunk_is_truncated() {
        let b = pcm_file(&[1, 2, 3, 4], 16000);
        assert!(matches!(decode_wav_bytes(&b[..b.len() - 3]), Err(CorpusError::Truncated)));
    }

    #[test]
    fn skips_unknown_chunks() {
        let b = pcm_file(&[5, -5], 8000);
        let mut with_list = b[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&b[36..]);
        let w = decode_wav_bytes(&with_list).unwrap();
        assert_eq!(w.len(), 2);
    }

    proptest! {
        #[test]
        fn round_trip_within_one_lsb(samples in proptest::collection::vec(-1.0f64..=1.0, 1..200)) {
            let w = Waveform::new(samples, 16000).unwrap();
            let back = decode_wav_bytes(&encode_wav_bytes(&w)).unwrap();
            for (a, b) in w.samples().iter().zip(back.samples()) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
