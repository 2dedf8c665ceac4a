use std::path::Path;
use std::process::{Command, Output};

fn oa(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_oa"));
    cmd.args(args).current_dir(dir).env_remove("OA_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic-64.jsonl");

#[test]
fn ingest_rejects_malformed_input_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "c1\t0\t0\tHe\n").unwrap();
    let out = oa(dir.path(), &["ingest", "--format", "sem", "--in", "bad.txt", "--out", "out.jsonl"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("oa: error: "));
    assert!(!dir.path().join("out.jsonl").exists());
}

#[test]
fn ingest_writes_one_sample_per_negation() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("a.xml"),
        r#"<Doc><sentence id="S1"><xcope id="X1"><cue type="negation" ref="X1">No</cue> cells</xcope> and <xcope id="X2"><cue type="negation" ref="X2">not</cue> here</xcope> .</sentence><sentence id="S2">Fine .</sentence></Doc>"#,
    )
    .unwrap();
    let stdout = ok(&oa(dir.path(), &["ingest", "--format", "bioscope", "--in", "a.xml", "--out", "a.jsonl"], &[]));
    assert!(stdout.contains("2 sentences, 1 with negation, 2 samples"), "{stdout}");
    let lines = std::fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(oa(dir.path(), &["train", "--variant", "xx"], &[]).status.code(), Some(2));
    assert_eq!(oa(dir.path(), &["frobnicate"], &[]).status.code(), Some(2));
    assert_eq!(oa(dir.path(), &["--help"], &[]).status.code(), Some(0));
}

#[test]
fn train_eval_report_on_bundled_corpus() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "[train]\nepochs = 1\nk = 4\n").unwrap();
    let base = ["train", "--config", "run.toml", "--data", CORPUS, "--out", "runs"];
    ok(&oa(dir.path(), &base, &[("OA_SEED", "5")]));
    let run = dir.path().join("runs/synthetic-64-em-normal-s5");
    let csv = std::fs::read_to_string(run.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 + 2, "{csv}");
    // --seed beats OA_SEED
    let mut args = base.to_vec();
    args.extend(["--seed", "6", "--prep", "augment"]);
    ok(&oa(dir.path(), &args, &[("OA_SEED", "5")]));
    assert!(dir.path().join("runs/synthetic-64-em-augment-s6/summary.json").exists());

    let ckpt = run.join("fold0.ckpt");
    let stdout = ok(&oa(dir.path(), &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", CORPUS], &[]));
    assert!(stdout.to_lowercase().contains("f1"), "{stdout}");

    let stdout = ok(&oa(dir.path(), &["report", "--runs", "runs", "--out", "rep"], &[]));
    assert_eq!(stdout.lines().filter(|l| l.contains("OA-EM")).count(), 2, "{stdout}");
    assert!(dir.path().join("rep/report.csv").exists() && dir.path().join("rep/report.md").exists());
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    ok(&oa(dir.path(), &["synth", "--out", "s.jsonl"], &[]));
    assert_eq!(std::fs::read(dir.path().join("s.jsonl")).unwrap(), std::fs::read(CORPUS).unwrap());
}
