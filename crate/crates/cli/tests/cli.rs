use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rssn"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout_lines(o: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn quick_config(dir: &Path, name: &str, data: &str) -> PathBuf {
    let text = format!(
        "{data}\ncheckpoint_dir = \"{name}\"\n\n[training]\nbatch_size = 8\nmax_epochs = 2\n\n[training.model]\n\
         embed_dim = 8\nhidden = 8\ndense = 8\nattention_units = 8\nmax_dialogue_len = 16\n"
    );
    let p = dir.join(format!("{name}.toml"));
    fs::write(&p, text).unwrap();
    p
}

fn synth_section() -> &'static str {
    "[data]\nsynth = { dialogues = 30 }\nsynth_seed = 3"
}

/// Trains a tiny model once per test and returns (dir, checkpoint path).
fn trained_checkpoint() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), "run", synth_section());
    let o = run(&["train", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = dir.path().join("run/best.ckpt");
    (dir, ckpt)
}

#[test]
fn train_quick_run_writes_checkpoint_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = quick_config(dir.path(), "a", synth_section());
    let b = quick_config(dir.path(), "b", synth_section());
    let oa = run(&["train", a.to_str().unwrap()]);
    assert_eq!(oa.status.code(), Some(0), "{}", String::from_utf8_lossy(&oa.stderr));
    let ob = run(&["train", b.to_str().unwrap()]);
    assert_eq!(ob.status.code(), Some(0));
    assert!(dir.path().join("a/best.ckpt").exists());
    let ha = fs::read_to_string(dir.path().join("a/history.jsonl")).unwrap();
    let hb = fs::read_to_string(dir.path().join("b/history.jsonl")).unwrap();
    assert_eq!(ha.lines().count(), 2);
    assert_eq!(ha, hb);
    let lines = stdout_lines(&oa);
    assert_eq!(lines.len(), 3);
    assert!(lines[0]["dev"]["mhch"]["macro_f1"].is_number());
    assert!(lines[2]["test"]["ssa"]["accuracy"].is_number());
    assert!(String::from_utf8_lossy(&oa.stderr).contains("resolved configuration") || oa.stderr.is_empty());
}

#[test]
fn train_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = quick_config(
        dir.path(),
        "m",
        "[data]\ntrain = \"nope.jsonl\"\ndev = \"nope.jsonl\"",
    );
    let o = run(&["train", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!dir.path().join("m/best.ckpt").exists());

    let unknown = dir.path().join("u.toml");
    fs::write(&unknown, "[data]\ncheckpoint_dir = \"u\"\nsynth = {}\n[training]\nbogus = 1\n").unwrap();
    let o = run(&["train", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    let o = run(&["train", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_sections_and_aggregation() {
    let (dir, ckpt) = trained_checkpoint();
    let corpus = dir.path().join("c.jsonl");
    assert!(run(&["synth", "--out", corpus.to_str().unwrap(), "--seed", "5"]).status.success());
    let c = corpus.to_str().unwrap();
    let k = ckpt.to_str().unwrap();

    let only = run(&["eval", "--checkpoint", k, "--corpus", c, "--sections", "mhch"]);
    assert!(only.status.success());
    let report = &stdout_lines(&only)[0];
    assert!(report.get("mhch").is_some());
    assert!(report.get("ssa").is_none() && report.get("sentiment").is_none());

    let att = &stdout_lines(&run(&["eval", "--checkpoint", k, "--corpus", c, "--aggregate", "attention"]))[0];
    let last = &stdout_lines(&run(&["eval", "--checkpoint", k, "--corpus", c, "--aggregate", "last"]))[0];
    assert_eq!(att["mhch"], last["mhch"]);

    let breakdown = dir.path().join("per.jsonl");
    let o = run(&[
        "eval", "--checkpoint", k, "--corpus", c, "--sections", "mhch,ssa,sentiment", "--breakdown",
        breakdown.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(stdout_lines(&o)[0]["sentiment"]["macro_f1"].is_number());
    assert_eq!(fs::read_to_string(&breakdown).unwrap().lines().count(), 250);

    // strip sentiment labels
    let stripped = dir.path().join("plain.jsonl");
    let text: String = fs::read_to_string(&corpus)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            for u in v["utterances"].as_array_mut().unwrap() {
                u.as_object_mut().unwrap().remove("sentiment");
            }
            v.to_string() + "\n"
        })
        .collect();
    fs::write(&stripped, text).unwrap();
    let o = run(&["eval", "--checkpoint", k, "--corpus", stripped.to_str().unwrap(), "--sections", "sentiment"]);
    assert_eq!(o.status.code(), Some(3));
}

fn predict(ckpt: &Path, input: &str) -> Output {
    let mut child = bin()
        .args(["predict", "--checkpoint", ckpt.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn predict_streams_prefix_stable_rows() {
    let (_dir, ckpt) = trained_checkpoint();
    let stream = concat!(
        r#"{"role":"customer","tokens":["hello","terrible"]}"#,
        "\n",
        r#"{"role":"agent","tokens":["cannot_help"]}"#,
        "\n",
        r#"{"role":"customer","tokens":["thanks"]}"#,
        "\n"
    );
    let o = predict(&ckpt, stream);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = stdout_lines(&o);
    assert_eq!(lines.len(), 4);
    let batch = &lines[3]["trace"]["handoff"];
    for t in 0..3 {
        assert_eq!(lines[t]["utterance"], t + 1);
        assert_eq!(lines[t]["handoff"], batch[t]);
    }
    assert_eq!(lines[3]["final"], true);
    assert_eq!(lines[3]["satisfaction"], lines[2]["satisfaction"]);

    let empty = predict(&ckpt, "");
    assert!(empty.status.success());
    assert!(empty.stdout.is_empty());

    let agents = predict(&ckpt, "{\"role\":\"agent\",\"tokens\":[\"hi\"]}\n");
    assert_eq!(agents.status.code(), Some(3));
    assert_eq!(stdout_lines(&agents).len(), 1);

    let malformed = predict(&ckpt, "{\"role\":\"customer\",\"tokens\":[\"a\"]}\n{\"role\":\"robot\",\"tokens\":[\"a\"]}\n");
    assert_eq!(malformed.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&malformed.stderr).contains("<stdin>:2:"));
}

#[test]
fn synth_stats_and_gradcheck() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, "dialogues = 10\ncomplaint_rate = 0.3\n").unwrap();
    for p in [&a, &b] {
        let o = run(&["synth", "--spec", spec.to_str().unwrap(), "--out", p.to_str().unwrap(), "--seed", "9"]);
        assert!(o.status.success());
        assert_eq!(stdout_lines(&o)[0]["dialogues"], 10);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let o = run(&["stats", a.to_str().unwrap(), "--bins", "5"]);
    assert!(o.status.success());
    let v = &stdout_lines(&o)[0];
    assert_eq!(v["stats"]["dialogues"], 10);
    assert_eq!(v["handoff_positions"]["bins"], 5);

    let o = run(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = &stdout_lines(&o)[0];
    assert_eq!(v["passed"], true);
    assert!(v["report"]["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("PASS"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "dialogues = 0\n").unwrap();
    let o = run(&["synth", "--spec", bad.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
}
