use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_unids");

const SMALL_MODEL: &[&str] = &[
    "--layers", "1", "--heads", "2", "--embed-dim", "16", "--ffn-dim", "32", "--max-seq-len", "512", "--epochs", "1",
];

fn unids(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("UNIDS_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{stdout}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn build_corpus(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let path = dir.join(name);
    ok(&unids(
        &["corpus", "build", "--out", path.to_str().unwrap(), "--chit-count", "4", "--tod-count", "4", "--corpus-seed", seed],
        dir,
    ));
    path
}

fn train(dir: &Path, corpus: &Path, out: &str, seed: &str) -> PathBuf {
    let path = dir.join(out);
    let mut args = vec!["train", "--corpus", corpus.to_str().unwrap(), "--out", path.to_str().unwrap(), "--seed", seed];
    args.extend_from_slice(SMALL_MODEL);
    ok(&unids(&args, dir));
    path
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = unids(&["train", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_config_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["db", "synth", "--out", "db.json"])
        .current_dir(dir.path())
        .env("UNIDS_CONFIG", dir.path().join("missing.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_corpus_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("bad.jsonl");
    std::fs::write(&corpus, "{not json}\n").unwrap();
    let out = unids(&["train", "--corpus", corpus.to_str().unwrap(), "--out", "m.ckpt"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = build_corpus(dir.path(), "c.jsonl", "3");
    let a = train(dir.path(), &corpus, "a.ckpt", "1");
    let b = train(dir.path(), &corpus, "b.ckpt", "1");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = train(dir.path(), &corpus, "c.ckpt", "2");
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["settings"]["model"]["layers"], 1);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = build_corpus(dir.path(), "c.jsonl", "3");
    let cfg = dir.path().join("unids.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.005\nepochs = 4\n").unwrap();
    let mut args = vec!["train", "--corpus", corpus.to_str().unwrap(), "--out", "m.ckpt"];
    args.extend_from_slice(SMALL_MODEL);
    let out = Command::new(BIN).args(&args).current_dir(dir.path()).env("UNIDS_CONFIG", &cfg).output().unwrap();
    ok(&out);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["settings"]["train"]["learning_rate"], 0.005);
    assert_eq!(manifest["settings"]["train"]["epochs"], 1);
}

#[test]
fn vocabulary_mismatch_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let c1 = build_corpus(dir.path(), "c1.jsonl", "3");
    let c2 = build_corpus(dir.path(), "c2.jsonl", "4");
    let m1 = train(dir.path(), &c1, "m1.ckpt", "1");
    train(dir.path(), &c2, "m2.ckpt", "1");
    let out = unids(
        &["eval", "run", "--checkpoint", m1.to_str().unwrap(), "--vocab", "m2.vocab", "--corpus", c1.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn evaluation_commands_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&unids(&["db", "synth", "--out", "db.json"], p));
    assert!(ok(&unids(&["db", "validate", "--db", "db.json"], p)).contains("ok"));
    let corpus = build_corpus(p, "c.jsonl", "3");
    let m = train(p, &corpus, "m.ckpt", "1");
    let (m, c) = (m.to_str().unwrap(), corpus.to_str().unwrap());

    let stdout = ok(&unids(&["eval", "run", "--checkpoint", m, "--db", "db.json", "--corpus", c, "--report", "r.json"], p));
    assert!(stdout.contains("inform"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("r.json")).unwrap()).unwrap();
    assert!(report["tod"]["combined"].is_number());

    let stdout = ok(&unids(&["harness", "switch", "--checkpoint", m, "--corpus", c, "--setup", "chit-first", "--count", "3"], p));
    assert!(stdout.contains("Switch-1") && stdout.contains("Switch-2"));
    let stdout = ok(&unids(&["harness", "switch", "--checkpoint", m, "--corpus", c, "--setup", "tod-first", "--count", "3"], p));
    assert!(stdout.contains("Switch-2"));

    let stdout = ok(&unids(&["harness", "robust", "--checkpoint", m, "--corpus", c, "--turns", "2"], p));
    assert!(stdout.contains("clean") && stdout.contains("2-turn noise"));
    let out = unids(&["harness", "robust", "--checkpoint", m, "--corpus", c, "--turns", "3"], p);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_w_emits_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let corpus = build_corpus(p, "c.jsonl", "3");
    let held = build_corpus(p, "h.jsonl", "5");
    let mut args = vec![
        "sweep", "w", "--values", "1,2,5", "--corpus", corpus.to_str().unwrap(), "--eval-corpus",
        held.to_str().unwrap(), "--out-dir", "sweep",
    ];
    args.extend_from_slice(SMALL_MODEL);
    let stdout = ok(&unids(&args, p));
    for w in ["w1.ckpt", "w2.ckpt", "w5.ckpt", "sweep_w.txt", "sweep_w.json"] {
        assert!(p.join("sweep").join(w).exists(), "{w} missing");
    }
    let table = std::fs::read_to_string(p.join("sweep/sweep_w.txt")).unwrap();
    assert_eq!(table.lines().filter(|l| l.trim_start().starts_with(|c: char| c.is_ascii_digit())).count(), 3);
    assert!(stdout.contains("combined score is"));
}

#[test]
fn chat_answers_each_line() {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let corpus = build_corpus(p, "c.jsonl", "3");
    let m = train(p, &corpus, "m.ckpt", "1");
    let mut child = Command::new(BIN)
        .args(["chat", "--checkpoint", m.to_str().unwrap()])
        .current_dir(p)
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"hello there\ni need a hotel\n:reset\n:quit\n").unwrap();
    let out = child.wait_with_output().unwrap();
    let stdout = ok(&out);
    assert_eq!(stdout.matches("belief:").count(), 2);
    assert!(stdout.contains("(new dialogue)"));
}
