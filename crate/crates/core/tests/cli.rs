use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cpcasr::checkpoint::Checkpoint;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn cpcasr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpcasr"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Synthesizes the tiny corpus into `dir/corpus`.
fn tiny_corpus(dir: &Path) -> String {
    let conf = fixture("tiny.conf").display().to_string();
    ok(&cpcasr(dir, &["synth", "--config", &conf, "--out", "corpus"]));
    conf
}

#[test]
fn synth_writes_consistent_splits_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let conf = tiny_corpus(dir.path());
    ok(&cpcasr(dir.path(), &["synth", "--config", &conf, "--out", "again"]));
    let lines = |p: &str| std::fs::read_to_string(dir.path().join(p)).unwrap().lines().count();
    assert_eq!((lines("corpus/train.tsv"), lines("corpus/dev.tsv"), lines("corpus/test.tsv")), (10, 4, 6));
    for f in ["manifest.tsv", "train.tsv", "dev.tsv", "test.tsv", "wav/utt0003.wav"] {
        let a = std::fs::read(dir.path().join("corpus").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("again").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("blocker"), "file").unwrap();
    let out = cpcasr(dir.path(), &["synth", "--out", "blocker/corpus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("blocker"));
}

#[test]
fn config_errors_are_reported_together() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.conf"), "colour = blue\ncpc.k_steps = 0\nprobe.lr = nope\n").unwrap();
    let out = cpcasr(dir.path(), &["pretrain", "--config", "bad.conf"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["colour", "k_steps", "probe.lr"] {
        assert!(err.contains(needle), "{needle} not reported in {err}");
    }
}

#[test]
fn pretrain_probe_transcribe_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let conf = tiny_corpus(d);
    let set = ["--set", "corpus_dir=corpus"];
    let args = |extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        v.extend(["--config".to_string(), conf.clone()]);
        v.extend(set.iter().map(|s| s.to_string()));
        v
    };
    let run = |extra: &[&str]| {
        let a = args(extra);
        cpcasr(d, &a.iter().map(String::as_str).collect::<Vec<_>>())
    };

    ok(&run(&["pretrain", "--out", "cpc"]));
    let curve = std::fs::read_to_string(d.join("cpc/loss.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3, "header plus one row per epoch");
    assert!(curve.starts_with("epoch,l_1,l_2,total,acc_1,acc_2\n"));
    let backbone = Checkpoint::load(&d.join("cpc/backbone.ckpt")).unwrap().to_cpc().unwrap();
    assert_eq!(backbone.arch.k_steps, 2);
    assert!(std::fs::read_to_string(d.join("cpc/run.conf")).unwrap().contains("cpc.epochs = 2"));

    ok(&run(&["pretrain", "--out", "resumed", "--init", "cpc/backbone.ckpt"]));
    assert_ne!(
        std::fs::read(d.join("cpc/backbone.ckpt")).unwrap(),
        std::fs::read(d.join("resumed/backbone.ckpt")).unwrap()
    );

    let missing = run(&["probe", "--out", "p"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("backbone"));

    let csv = ok(&run(&["probe", "--out", "mfcc", "--features", "mfcc"]));
    assert!(csv.lines().nth(1).unwrap().contains(",N/A,"));
    assert!(!d.join("mfcc/backbone.ckpt").exists());

    let before = std::fs::read(d.join("cpc/backbone.ckpt")).unwrap();
    ok(&run(&["probe", "--out", "frozen", "--init", "cpc/backbone.ckpt", "--set", "report.budget=1x"]));
    assert_eq!(before, std::fs::read(d.join("cpc/backbone.ckpt")).unwrap());
    assert!(!d.join("frozen/backbone.ckpt").exists());

    ok(&run(&["probe", "--out", "ft", "--init", "cpc/backbone.ckpt", "--regime", "finetune"]));
    assert!(d.join("ft/backbone.ckpt").exists());
    assert_eq!(before, std::fs::read(d.join("cpc/backbone.ckpt")).unwrap());

    let lines = ok(&run(&["transcribe", "--probe", "frozen/probe.ckpt", "--init", "cpc/backbone.ckpt"]));
    assert_eq!(lines.lines().count(), 6);
    assert!(lines.lines().all(|l| l.starts_with("utt") && l.contains('\t')));

    let eval = ok(&run(&["eval", "--probe", "frozen/probe.ckpt", "--init", "cpc/backbone.ckpt"]));
    let probe_row = std::fs::read_to_string(d.join("frozen/results.csv")).unwrap();
    assert_eq!(eval, probe_row, "eval reproduces the probe's own score and labels");
    assert!(eval.contains(",1x,"));
}

#[test]
fn report_renders_golden_tables() {
    let dir = tempfile::tempdir().unwrap();
    for t in ["table1", "table2"] {
        let csv = fixture(&format!("{t}.csv")).display().to_string();
        let md = ok(&cpcasr(dir.path(), &["report", &csv, "--layout", t]));
        assert_eq!(md, std::fs::read_to_string(fixture(&format!("{t}.md"))).unwrap());
    }
}

#[test]
fn report_merges_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("table1.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    let rows: Vec<&str> = lines.collect();
    let (a, b) = rows.split_at(5);
    std::fs::write(dir.path().join("a.csv"), format!("{header}\n{}\n", a.join("\n"))).unwrap();
    std::fs::write(dir.path().join("b.csv"), format!("{header}\n{}\n", b.join("\n"))).unwrap();
    let md = ok(&cpcasr(dir.path(), &["report", "a.csv", "b.csv"]));
    assert_eq!(md, std::fs::read_to_string(fixture("table1.md")).unwrap());
}

#[test]
fn malformed_report_csv_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.csv"),
        "model,pretrain,frozen,budget,corpus,per,n_ref_phones,n_edits\nM,p,Yes,1h,wol,0.5,2,1\nM,p,maybe,1h,so,0.5,2,1\n",
    )
    .unwrap();
    let out = cpcasr(dir.path(), &["report", "bad.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));
    let out = cpcasr(dir.path(), &["report", "absent.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&cpcasr(dir.path(), &["gradcheck"]));
    for suite in ["primitives", "info_nce", "ctc"] {
        assert!(out.lines().any(|l| l.starts_with(suite) && l.contains("PASS") && l.contains("max rel err")));
    }
    let bad = cpcasr(dir.path(), &["gradcheck", "--corrupt-tanh", "1.5"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}
