//! Phone error rate and Table-shaped experiment reports.

use std::fmt::Write as _;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{refs} references but {hyps} hypotheses")]
    LengthMismatch { refs: usize, hyps: usize },
    #[error("references contain no phones")]
    EmptyReference,
    #[error("results CSV row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Unit-cost edit distance, two-row DP.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerScore {
    pub per: f64,
    pub n_ref_phones: usize,
    pub n_edits: usize,
}

/// Corpus-level PER: summed edits over summed reference lengths.
pub fn per<T: PartialEq>(refs: &[Vec<T>], hyps: &[Vec<T>]) -> Result<PerScore, EvalError> {
    if refs.len() != hyps.len() {
        return Err(EvalError::LengthMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    let n_ref_phones: usize = refs.iter().map(Vec::len).sum();
    if n_ref_phones == 0 {
        return Err(EvalError::EmptyReference);
    }
    let n_edits: usize = refs.iter().zip(hyps).map(|(r, h)| levenshtein(r, h)).sum();
    Ok(PerScore {
        per: n_edits as f64 / n_ref_phones as f64,
        n_ref_phones,
        n_edits,
    })
}

/// One cell of an experiment grid. `frozen` is `None` for rows without a
/// backbone (rendered "N/A").
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub model_name: String,
    pub pretrain_desc: String,
    pub frozen: Option<bool>,
    pub train_budget_desc: String,
    pub corpus: String,
    pub per: f64,
    pub n_ref_phones: usize,
    pub n_edits: usize,
}

impl EvalResult {
    pub fn from_score(
        model_name: &str,
        pretrain_desc: &str,
        frozen: Option<bool>,
        train_budget_desc: &str,
        corpus: &str,
        score: PerScore,
    ) -> Self {
        Self {
            model_name: model_name.to_owned(),
            pretrain_desc: pretrain_desc.to_owned(),
            frozen,
            train_budget_desc: train_budget_desc.to_owned(),
            corpus: corpus.to_owned(),
            per: score.per,
            n_ref_phones: score.n_ref_phones,
            n_edits: score.n_edits,
        }
    }
}

pub fn frozen_label(frozen: Option<bool>) -> &'static str {
    match frozen {
        Some(true) => "Yes",
        Some(false) => "No",
        None => "N/A",
    }
}

fn parse_frozen(s: &str) -> Option<Option<bool>> {
    match s.to_ascii_lowercase().as_str() {
        "yes" | "true" => Some(Some(true)),
        "no" | "false" => Some(Some(false)),
        "n/a" | "na" | "" => Some(None),
        _ => None,
    }
}

pub const RESULTS_HEADER: [&str; 8] = ["model", "pretrain", "frozen", "budget", "corpus", "per", "n_ref_phones", "n_edits"];

pub fn results_to_csv(results: &[EvalResult]) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER)?;
    for r in results {
        w.write_record([
            r.model_name.as_str(),
            r.pretrain_desc.as_str(),
            frozen_label(r.frozen),
            r.train_budget_desc.as_str(),
            r.corpus.as_str(),
            &r.per.to_string(),
            &r.n_ref_phones.to_string(),
            &r.n_edits.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits the UTF-8 it was given"))
}

/// Parses the results schema. Row numbers in errors count the header as 1.
pub fn parse_results_csv(text: &str) -> Result<Vec<EvalResult>, EvalError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(EvalError::Parse {
            row: 1,
            message: format!("expected header {}", RESULTS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let bad = |message: String| EvalError::Parse { row, message };
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != RESULTS_HEADER.len() {
            return Err(bad(format!("expected 8 fields, found {}", record.len())));
        }
        fn num<T: FromStr>(s: &str, what: &str) -> Result<T, String> {
            s.trim().parse().map_err(|_| format!("invalid {what} {s:?}"))
        }
        let frozen = parse_frozen(&record[2]).ok_or_else(|| bad(format!("invalid frozen value {:?}", &record[2])))?;
        let per: f64 = num(&record[5], "per").map_err(bad)?;
        if !(per >= 0.0) || !per.is_finite() {
            return Err(bad(format!("per must be a non-negative number, got {per}")));
        }
        out.push(EvalResult {
            model_name: record[0].to_owned(),
            pretrain_desc: record[1].to_owned(),
            frozen,
            train_budget_desc: record[3].to_owned(),
            corpus: record[4].to_owned(),
            per,
            n_ref_phones: num(&record[6], "n_ref_phones").map_err(bad)?,
            n_edits: num(&record[7], "n_edits").map_err(bad)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Rows per (model, pre-train, frozen); one column per corpus.
    Table1,
    /// Table 1 plus a transcribed-data budget column in the row key.
    Table2,
}

impl FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "table1" => Ok(Layout::Table1),
            "table2" => Ok(Layout::Table2),
            _ => Err(format!("unknown layout {s:?} (expected table1 or table2)")),
        }
    }
}

pub const MISSING_CELL: &str = "—";

/// Pivoted grid: key columns then one PER column per corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Rows and corpus columns keep first-appearance order; a repeated cell
/// takes the last value.
pub fn build_grid(results: &[EvalResult], layout: Layout) -> Grid {
    let key_of = |r: &EvalResult| {
        let mut k = vec![r.model_name.clone(), r.pretrain_desc.clone(), frozen_label(r.frozen).to_owned()];
        if layout == Layout::Table2 {
            k.push(r.train_budget_desc.clone());
        }
        k
    };
    let mut corpora: Vec<&str> = Vec::new();
    let mut keys: Vec<Vec<String>> = Vec::new();
    for r in results {
        if !corpora.contains(&r.corpus.as_str()) {
            corpora.push(&r.corpus);
        }
        let k = key_of(r);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut cells = vec![vec![None; corpora.len()]; keys.len()];
    for r in results {
        let row = keys.iter().position(|k| *k == key_of(r)).expect("key collected above");
        let col = corpora.iter().position(|c| *c == r.corpus).expect("corpus collected above");
        cells[row][col] = Some(r.per);
    }
    let mut header: Vec<String> = ["Model", "Pre-train", "Frozen"].map(String::from).to_vec();
    if layout == Layout::Table2 {
        header.push("Transcribed data".into());
    }
    header.extend(corpora.iter().map(|c| c.to_string()));
    let rows = keys
        .into_iter()
        .zip(cells)
        .map(|(mut k, row)| {
            k.extend(row.into_iter().map(|c| c.map_or_else(|| MISSING_CELL.to_owned(), |p| format!("{p:.2}"))));
            k
        })
        .collect();
    Grid { header, rows }
}

impl Grid {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        out.push_str(&line(&self.header));
        let _ = writeln!(out, "|{}", "---|".repeat(self.header.len()));
        for row in &self.rows {
            out.push_str(&line(row));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub markdown: String,
    pub csv: String,
}

pub fn render_report(results: &[EvalResult], layout: Layout) -> Report {
    let grid = build_grid(results, layout);
    Report {
        markdown: grid.to_markdown(),
        csv: grid.to_csv(),
    }
}
