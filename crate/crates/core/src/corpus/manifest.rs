use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::CorpusError;
use crate::rng;

/// Reserved CTC blank label; never allowed inside a transcript.
pub const BLANK_SYMBOL: &str = "<blank>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    /// Relative to the manifest's root directory.
    pub audio_path: String,
    pub transcript: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root_dir: PathBuf,
    pub utterances: Vec<Utterance>,
    /// Sorted phoneme inventory, blank excluded.
    pub inventory: Vec<String>,
}

impl Manifest {
    /// Builds a manifest whose inventory is the union of the transcripts.
    pub fn new(root_dir: PathBuf, utterances: Vec<Utterance>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        let mut inventory = BTreeSet::new();
        for u in &utterances {
            if !seen.insert(u.id.as_str()) {
                return Err(CorpusError::DuplicateId(u.id.clone()));
            }
            if u.transcript.is_empty() {
                return Err(CorpusError::EmptyTranscript(u.id.clone()));
            }
            inventory.extend(u.transcript.iter().cloned());
        }
        Ok(Self {
            root_dir,
            utterances,
            inventory: inventory.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn audio_path(&self, utt: &Utterance) -> PathBuf {
        self.root_dir.join(&utt.audio_path)
    }

    /// Sub-manifest over the given utterance indices, keeping the full
    /// inventory.
    pub fn subset(&self, indices: &[usize]) -> Manifest {
        Manifest {
            root_dir: self.root_dir.clone(),
            utterances: indices.iter().map(|&i| self.utterances[i].clone()).collect(),
            inventory: self.inventory.clone(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            let _ = writeln!(out, "{}\t{}\t{}", u.id, u.audio_path, u.transcript.join(" "));
        }
        out
    }
}

pub fn parse_manifest(text: &str, root_dir: PathBuf) -> Result<Manifest, CorpusError> {
    let mut utterances = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let (id, path) = (fields[0].trim(), fields[1].trim());
        if id.is_empty() || path.is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "empty id or audio path".into(),
            });
        }
        let transcript: Vec<String> = fields[2].split_whitespace().map(str::to_owned).collect();
        if transcript.is_empty() {
            return Err(CorpusError::EmptyTranscript(id.to_owned()));
        }
        if transcript.iter().any(|s| s == BLANK_SYMBOL) {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("{BLANK_SYMBOL} is reserved"),
            });
        }
        utterances.push(Utterance {
            id: id.to_owned(),
            audio_path: path.to_owned(),
            transcript,
        });
    }
    Manifest::new(root_dir, utterances)
}

/// Loads a TSV manifest (`id<TAB>path<TAB>phones`). Audio paths resolve
/// relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Manifest, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, root)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), CorpusError> {
    std::fs::write(path, manifest.to_tsv()).map_err(|e| CorpusError::io(path, e))
}

/// Seeded shuffle then slice: `floor(n·train_frac)` train,
/// `floor(n·dev_frac)` dev, the remainder test. Each part keeps file order.
pub fn split(
    manifest: &Manifest,
    train_frac: f64,
    dev_frac: f64,
    seed: u64,
) -> Result<(Manifest, Manifest, Manifest), CorpusError> {
    if !(train_frac > 0.0 && dev_frac > 0.0 && train_frac + dev_frac < 1.0) {
        return Err(CorpusError::InvalidFractions(train_frac, dev_frac));
    }
    let n = manifest.len();
    let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let n_train = floor(train_frac);
    let n_dev = floor(dev_frac);
    if n_train == 0 {
        return Err(CorpusError::EmptySplit("train"));
    }
    if n_dev == 0 {
        return Err(CorpusError::EmptySplit("dev"));
    }
    if n_train + n_dev >= n {
        return Err(CorpusError::EmptySplit("test"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let part = |range: std::ops::Range<usize>| {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        manifest.subset(&idx)
    };
    Ok((part(0..n_train), part(n_train..n_train + n_dev), part(n_train + n_dev..n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest_of(n: usize) -> Manifest {
        let utts = (0..n)
            .map(|i| Utterance {
                id: format!("u{i}"),
                audio_path: format!("{i}.wav"),
                transcript: vec![format!("p{}", i % 3)],
            })
            .collect();
        Manifest::new(PathBuf::new(), utts).unwrap()
    }

    #[test]
    fn builds_inventory() {
        let m = parse_manifest("u1\ta.wav\tp1 p2\nu2\tb.wav\tp2 p3\n", PathBuf::new()).unwrap();
        assert_eq!(m.inventory, ["p1", "p2", "p3"]);
        assert_eq!(m.len(), 2);
        assert_eq!(m.utterances[1].transcript, ["p2", "p3"]);
    }

    #[test]
    fn two_fields_is_parse_error() {
        let err = parse_manifest("u1\ta.wav\tp1\nu2\tb.wav\n", PathBuf::new()).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_id() {
        let err = parse_manifest("u1\ta.wav\tp1\nu1\tb.wav\tp2\n", PathBuf::new()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "u1"));
    }

    #[test]
    fn empty_transcript() {
        let err = parse_manifest("u1\ta.wav\t  \n", PathBuf::new()).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyTranscript(_)));
    }

    #[test]
    fn blank_is_reserved() {
        let err = parse_manifest("u1\ta.wav\tp1 <blank>\n", PathBuf::new()).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }));
    }

    #[test]
    fn tsv_round_trip() {
        let m = parse_manifest("u1\ta.wav\tp1 p2\nu2\tb.wav\tp2 p3\n", PathBuf::new()).unwrap();
        assert_eq!(parse_manifest(&m.to_tsv(), PathBuf::new()).unwrap(), m);
    }

    #[test]
    fn split_sizes_floor_floor_remainder() {
        let (tr, dv, te) = split(&manifest_of(10), 0.5, 0.2, 1).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (5, 2, 3));
        assert_eq!(tr.inventory, manifest_of(10).inventory);
    }

    #[test]
    fn split_is_deterministic() {
        let m = manifest_of(10);
        assert_eq!(split(&m, 0.5, 0.2, 1).unwrap(), split(&m, 0.5, 0.2, 1).unwrap());
    }

    #[test]
    fn empty_dev_split() {
        assert!(matches!(
            split(&manifest_of(2), 0.5, 0.4, 1),
            Err(CorpusError::EmptySplit("dev"))
        ));
    }

    #[test]
    fn bad_fractions() {
        assert!(split(&manifest_of(10), 0.6, 0.4, 1).is_err());
        assert!(split(&manifest_of(10), 0.0, 0.4, 1).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 5usize..80, seed in any::<u64>(), tf in 0.2f64..0.6, df in 0.1f64..0.3) {
            let m = manifest_of(n);
            if let Ok((a, b, c)) = split(&m, tf, df, seed) {
                let mut ids: Vec<&str> = a.utterances.iter().chain(&b.utterances).chain(&c.utterances)
                    .map(|u| u.id.as_str()).collect();
                prop_assert_eq!(ids.len(), n);
                ids.sort_unstable();
                ids.dedup();
                prop_assert_eq!(ids.len(), n);
            }
        }
    }
}
