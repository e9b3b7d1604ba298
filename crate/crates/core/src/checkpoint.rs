//! Binary checkpoint format.
//!
//! Layout, all integers u32 little-endian:
//! `"CPCA"`, version, metadata length, metadata (UTF-8 JSON), tensor count,
//! then per tensor: name length, name, rank, dims, row-major f32 LE data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::cpc::{CpcArch, CpcError, CpcModel};
use crate::diff::Tensor;
use crate::features::MfccConfig;
use crate::probe::{FeatureKind, ProbeError, ProbeModel, SymbolTable};

pub const MAGIC: &[u8; 4] = b"CPCA";
pub const FORMAT_VERSION: u32 = 1;
/// Inference outputs after a save/load round trip agree within this.
pub const ROUND_TRIP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("trailing bytes after the last tensor")]
    TrailingBytes,
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("bad metadata: {0}")]
    Metadata(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongKind { found: String, expected: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Cpc(#[from] CpcError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: Value,
    pub tensors: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("checkpoint field exceeds u32").to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        Ok(self.u32()? as usize)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION as usize);
        let meta = serde_json::to_string(&self.metadata).expect("json values serialize");
        put_u32(&mut out, meta.len());
        out.extend_from_slice(meta.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let meta_len = r.len()?;
        let meta = std::str::from_utf8(r.take(meta_len)?).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let metadata: Value = serde_json::from_str(meta).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let count = r.len()?;
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        for _ in 0..count {
            let name_len = r.len()?;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
            if tensors.iter().any(|(n, _)| *n == name) {
                return Err(CheckpointError::DuplicateName(name));
            }
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
            let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(CheckpointError::Truncated)?;
            let body = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
            let data = body
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Metadata(format!("tensor {name:?}: {e}")))?;
            tensors.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes);
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn kind(&self) -> Option<&str> {
        self.metadata.get("kind").and_then(Value::as_str)
    }

    fn expect_kind(&self, expected: &'static str) -> Result<(), CheckpointError> {
        match self.kind() {
            Some(k) if k == expected => Ok(()),
            found => Err(CheckpointError::WrongKind {
                found: found.unwrap_or("unlabelled").to_owned(),
                expected,
            }),
        }
    }

    fn tensor(&self, name: &str) -> Result<Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_owned()))
    }

    fn meta<'a>(&'a self, key: &str) -> Result<&'a Value, CheckpointError> {
        self.metadata
            .get(key)
            .ok_or_else(|| CheckpointError::Metadata(format!("missing field {key:?}")))
    }

    fn meta_usize(&self, key: &str) -> Result<usize, CheckpointError> {
        self.meta(key)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| CheckpointError::Metadata(format!("{key} is not an integer")))
    }

    fn meta_usizes(&self, key: &str) -> Result<Vec<usize>, CheckpointError> {
        self.meta(key)?
            .as_array()
            .and_then(|a| a.iter().map(|v| v.as_u64().map(|v| v as usize)).collect())
            .ok_or_else(|| CheckpointError::Metadata(format!("{key} is not an integer list")))
    }

    /// Resolved run settings stored alongside the weights.
    pub fn config_snapshot(&self) -> BTreeMap<String, String> {
        self.metadata
            .get("config")
            .and_then(Value::as_object)
            .map(|o| {
                o.iter()
                    .filter_map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_owned())))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn from_cpc(model: &CpcModel, config: &BTreeMap<String, String>, seed: u64) -> Self {
        let a = &model.arch;
        let metadata = json!({
            "kind": "cpc",
            "enc_channels": a.enc_channels,
            "enc_kernels": a.enc_kernels,
            "enc_strides": a.enc_strides,
            "context_dim": a.context_dim,
            "k_steps": a.k_steps,
            "seed": seed,
            "config": config,
        });
        let tensors = model
            .parameter_names()
            .into_iter()
            .zip(model.parameters())
            .map(|(n, t)| (n, t.clone()))
            .collect();
        Self { metadata, tensors }
    }

    pub fn to_cpc(&self) -> Result<CpcModel, CheckpointError> {
        self.expect_kind("cpc")?;
        let arch = CpcArch {
            enc_channels: self.meta_usizes("enc_channels")?,
            enc_kernels: self.meta_usizes("enc_kernels")?,
            enc_strides: self.meta_usizes("enc_strides")?,
            context_dim: self.meta_usize("context_dim")?,
            k_steps: self.meta_usize("k_steps")?,
        };
        if arch.enc_channels.is_empty()
            || arch.enc_channels.len() != arch.enc_kernels.len()
            || arch.enc_channels.len() != arch.enc_strides.len()
        {
            return Err(CheckpointError::Metadata("inconsistent encoder layer lists".into()));
        }
        let names = names_for(&arch);
        let tensors = names.iter().map(|n| self.tensor(n)).collect::<Result<Vec<_>, _>>()?;
        Ok(CpcModel::from_parameters(arch, tensors)?)
    }

    pub fn from_probe(probe: &ProbeModel, mfcc: &MfccConfig, config: &BTreeMap<String, String>, seed: u64) -> Self {
        let metadata = json!({
            "kind": "probe",
            "symbols": probe.symbols.symbols(),
            "stack_width": probe.stack_width,
            "feature_kind": probe.feature_kind.to_string(),
            "mfcc": {
                "frame_ms": mfcc.frame_ms,
                "hop_ms": mfcc.hop_ms,
                "n_fft": mfcc.n_fft,
                "n_mels": mfcc.n_mels,
                "n_ceps": mfcc.n_ceps,
                "fmin_hz": mfcc.fmin_hz,
                "fmax_hz": mfcc.fmax_hz,
                "log_floor": mfcc.log_floor,
            },
            "seed": seed,
            "config": config,
        });
        Self {
            metadata,
            tensors: vec![("probe.weight".into(), probe.weight.clone()), ("probe.bias".into(), probe.bias.clone())],
        }
    }

    pub fn to_probe(&self) -> Result<(ProbeModel, MfccConfig), CheckpointError> {
        self.expect_kind("probe")?;
        let bad = |m: &str| CheckpointError::Metadata(m.to_owned());
        let symbols = self
            .meta("symbols")?
            .as_array()
            .and_then(|a| a.iter().map(|v| v.as_str().map(str::to_owned)).collect::<Option<Vec<_>>>())
            .ok_or_else(|| bad("symbols is not a string list"))?;
        let symbols = SymbolTable::from_symbols(symbols)?;
        let feature_kind: FeatureKind = self
            .meta("feature_kind")?
            .as_str()
            .ok_or_else(|| bad("feature_kind is not a string"))?
            .parse()
            .map_err(|e: String| CheckpointError::Metadata(e))?;
        let stack_width = self.meta_usize("stack_width")?;
        let m = self.meta("mfcc")?;
        let f = |k: &str| m.get(k).and_then(Value::as_f64).ok_or_else(|| bad(&format!("mfcc.{k} missing")));
        let u = |k: &str| m.get(k).and_then(Value::as_u64).map(|v| v as usize).ok_or_else(|| bad(&format!("mfcc.{k} missing")));
        let mfcc = MfccConfig {
            frame_ms: f("frame_ms")?,
            hop_ms: f("hop_ms")?,
            n_fft: u("n_fft")?,
            n_mels: u("n_mels")?,
            n_ceps: u("n_ceps")?,
            fmin_hz: f("fmin_hz")?,
            fmax_hz: m.get("fmax_hz").and_then(Value::as_f64),
            log_floor: f("log_floor")?,
        };
        let weight = self.tensor("probe.weight")?;
        let bias = self.tensor("probe.bias")?;
        let v = symbols.len();
        if stack_width == 0
            || weight.rank() != 2
            || weight.shape()[1] != v
            || weight.shape()[0] % stack_width != 0
            || bias.shape() != [v]
        {
            return Err(bad("probe tensor shapes disagree with the symbol table"));
        }
        let probe = ProbeModel {
            weight,
            bias,
            symbols,
            stack_width,
            feature_kind,
        };
        Ok((probe, mfcc))
    }
}

fn names_for(arch: &CpcArch) -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..arch.enc_channels.len() {
        names.push(format!("encoder.{i}.weight"));
        names.push(format!("encoder.{i}.bias"));
    }
    names.extend(["context.w_input", "context.w_hidden", "context.b_input", "context.b_hidden"].map(String::from));
    names.extend((1..=arch.k_steps).map(|k| format!("head.{k}")));
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpc::CpcConfig;

    fn small_model() -> CpcModel {
        CpcModel::new(&CpcConfig {
            enc_channels: vec![4, 4],
            enc_kernels: vec![4, 4],
            enc_strides: vec![2, 2],
            latent_dim: 4,
            context_dim: 3,
            k_steps: 2,
            ..CpcConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn names_match_model() {
        let m = small_model();
        assert_eq!(names_for(&m.arch), m.parameter_names());
    }

    #[test]
    fn byte_layout_prefix() {
        let ck = Checkpoint {
            metadata: json!({"kind": "x"}),
            tensors: vec![("w".into(), Tensor::vector(vec![1.5, -2.0]))],
        };
        let b = ck.to_bytes();
        assert_eq!(&b[..4], b"CPCA");
        assert_eq!(b[4..8], 1u32.to_le_bytes());
        let meta = br#"{"kind":"x"}"#;
        assert_eq!(b[8..12], (meta.len() as u32).to_le_bytes());
        let rest = &b[12 + meta.len()..];
        let mut expected = Vec::new();
        expected.extend_from_slice(&1u32.to_le_bytes()); // tensor count
        expected.extend_from_slice(&1u32.to_le_bytes()); // name length
        expected.push(b'w');
        expected.extend_from_slice(&1u32.to_le_bytes()); // rank
        expected.extend_from_slice(&2u32.to_le_bytes()); // dim
        expected.extend_from_slice(&1.5f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(rest, expected.as_slice());
        assert_eq!(Checkpoint::from_bytes(&b).unwrap(), ck);
    }

    #[test]
    fn rejects_corruption() {
        let ck = Checkpoint::from_cpc(&small_model(), &BTreeMap::new(), 0);
        let mut b = ck.to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&b[..b.len() - 1]), Err(CheckpointError::Truncated)));
        b.push(0);
        assert!(matches!(Checkpoint::from_bytes(&b), Err(CheckpointError::TrailingBytes)));
        b[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&b), Err(CheckpointError::BadMagic)));
        let mut v = ck.to_bytes();
        v[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::UnsupportedVersion(9))));
        let dup = Checkpoint {
            metadata: json!({}),
            tensors: vec![("a".into(), Tensor::scalar(1.0)), ("a".into(), Tensor::scalar(2.0))],
        };
        assert!(matches!(Checkpoint::from_bytes(&dup.to_bytes()), Err(CheckpointError::DuplicateName(_))));
        assert!(matches!(ck.to_probe(), Err(CheckpointError::WrongKind { .. })));
    }

    #[test]
    fn cpc_round_trip_is_f32_rounding() {
        let m = small_model();
        let back = Checkpoint::from_bytes(&Checkpoint::from_cpc(&m, &BTreeMap::new(), 3).to_bytes())
            .unwrap()
            .to_cpc()
            .unwrap();
        assert_eq!(back.arch, m.arch);
        for (a, b) in m.parameters().iter().zip(back.parameters()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*y, f64::from(*x as f32));
            }
        }
    }

    #[test]
    fn probe_round_trip() {
        let symbols = SymbolTable::from_inventory(&["a".into(), "b".into()]);
        let mut p = ProbeModel::zeros(3, 2, symbols, FeatureKind::Mfcc);
        p.weight.data_mut()[4] = 0.25;
        let mfcc = MfccConfig {
            fmax_hz: Some(7000.0),
            ..MfccConfig::default()
        };
        let (q, m) = Checkpoint::from_bytes(&Checkpoint::from_probe(&p, &mfcc, &BTreeMap::new(), 1).to_bytes())
            .unwrap()
            .to_probe()
            .unwrap();
        assert_eq!((q, m), (p, mfcc));
    }
}
