use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn simulmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simulmt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = simulmt(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a small copy corpus and trains a tiny Wait-1 model.
fn tiny_run(dir: &Path) -> std::path::PathBuf {
    for (name, count, seed) in [("train", 60, 1), ("valid", 10, 2), ("test", 8, 3)] {
        ok(&[
            "synth",
            "--task",
            "copy",
            "--count",
            &count.to_string(),
            "--seed",
            &seed.to_string(),
            "--min-len",
            "6",
            "--source",
            p(&dir.join(format!("{name}.src"))),
            "--target",
            p(&dir.join(format!("{name}.tgt"))),
        ]);
    }
    let config = format!(
        "train_source = {0}/train.src\ntrain_target = {0}/train.tgt\nvalid_source = {0}/valid.src\nvalid_target = {0}/valid.tgt\n\
         mode = waitk\nk = 1\nembed_dim = 8\nhidden_dim = 8\nlayers = 1\nmax_epochs = 1\nbatch_size = 16\n",
        dir.display()
    );
    fs::write(dir.join("run.cfg"), config).unwrap();
    let run = dir.join("run");
    let out = ok(&["train", "--config", p(&dir.join("run.cfg")), "--run-dir", p(&run)]);
    assert!(out.starts_with("best_epoch\t1\tval_loss\t"), "{out}");
    run
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "mode = waitk\nlearning_rat = 0.1\n").unwrap();
    let out = simulmt(&["train", "--config", p(&cfg), "--run-dir", p(&dir.path().join("r"))]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[config]: line 2"), "{err}");
    assert_eq!(err.lines().count(), 1);
    assert!(!dir.path().join("r").exists());
}

#[test]
fn missing_corpus_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulmt(&[
        "train",
        "--run-dir",
        p(&dir.path().join("r")),
        "--set",
        "train_source=/nonexistent/a",
        "--set",
        "train_target=/nonexistent/b",
        "--set",
        "valid_source=/nonexistent/c",
        "--set",
        "valid_target=/nonexistent/d",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("/nonexistent/a"));
}

#[test]
fn oracle_check_passes() {
    assert_eq!(ok(&["oracle-check", "--trials", "200", "--seed", "5"]).trim(), "OK 200/200");
}

#[test]
fn bpe_train_reports_merges() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("text");
    fs::write(&text, "lower lowest newer\nnewest lower\n").unwrap();
    let model = dir.path().join("bpe");
    let out = ok(&["bpe-train", "--input", p(&text), "--merges", "5", "--model", p(&model)]);
    assert_eq!(out.trim(), "merges\t5");
    assert!(model.exists());
}

#[test]
fn train_translate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny_run(dir.path());
    for f in ["config.txt", "best.ckpt", "train_log.tsv", "source.vocab", "target.vocab"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let log = fs::read_to_string(run.join("train_log.tsv")).unwrap();
    let row: Vec<&str> = log.trim_end().split('\t').collect();
    assert_eq!(row.len(), 5, "{log}");
    assert_eq!((row[0], row[4]), ("1", "-"));

    let traces = dir.path().join("traces");
    let hyps = ok(&[
        "translate",
        "--run-dir",
        p(&run),
        "--input",
        p(&dir.path().join("test.src")),
        "--emit-traces",
        p(&traces),
    ]);
    assert_eq!(hyps.lines().count(), 8);
    let traces = fs::read_to_string(traces).unwrap();
    assert_eq!(traces.lines().count(), 8);
    for line in traces.lines() {
        let mut steps = line.split(' ');
        assert_eq!(steps.next(), Some("R"), "Wait-1 reads once before writing");
        assert!(steps.all(|s| s == "R" || s.starts_with("W:")));
    }

    for (k, want) in [("3", "3.00\t0.00\t8"), ("5", "5.00\t0.00\t8")] {
        let report = dir.path().join(format!("metrics{k}"));
        let line = ok(&[
            "evaluate",
            "--run-dir",
            p(&run),
            "--source",
            p(&dir.path().join("test.src")),
            "--reference",
            p(&dir.path().join("test.tgt")),
            "--mode",
            "waitk",
            "--k",
            k,
            "--report",
            p(&report),
        ]);
        assert!(line.trim_end().ends_with(want), "{line}");
        assert_eq!(fs::read_to_string(report).unwrap(), line);
    }
}
