use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const DIALOGUES: &str = "\
1 your persona: i like to ski.
2 your persona: i hate mexican food.
3 hi , how are you doing ?\tgood , you ?\t\tnope|good , you ?|cool
4 fine thanks .\tgreat to hear .\t\tgreat to hear .|no
1 your persona: i have two dogs.
2 do you ski ?\tno , i walk my dogs .\t\tyes|no , i walk my dogs .
";

fn personachat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_personachat"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn ingest_reports_counts_per_split() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("valid_self_original.txt"), DIALOGUES).unwrap();
    let out = personachat(&["ingest", "--in", ".", "--out", "c.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = json(&out);
    assert_eq!(stats["episodes"], 2);
    assert_eq!(stats["diagnostics"], 0);
    let orig = &stats["variants"]["original"];
    assert_eq!(orig["n_utterances"], 6);
    assert_eq!(orig["per_split"]["valid"]["n_episodes"], 2);
    let lines = std::fs::read_to_string(dir.path().join("c.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
    assert!(lines.contains("\"valid-0\""));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = personachat(&["synth", "--seed", "7", "--n-episodes", "30", "--out", name], dir.path());
        assert!(out.status.success());
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    personachat(&["synth", "--seed", "8", "--n-episodes", "30", "--out", "c.jsonl"], dir.path());
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
}

#[test]
fn missing_model_leaves_an_empty_cell() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(personachat(&["synth", "--n-episodes", "40", "--out", "c.jsonl"], p).status.success());
    assert!(personachat(&["train", "--in", "c.jsonl", "--model-type", "ir", "--out", "ir.vocab"], p)
        .status
        .success());
    let out = personachat(
        &["eval", "--in", "c.jsonl", "--model", "ir=ir:ir.vocab", "--model", "pm=profile-mem:absent.bin", "--out", "r.jsonl"],
        p,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.bin"));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("ir") && table.contains("pm"), "{table}");
    assert!(!std::fs::read_to_string(p.join("r.jsonl")).unwrap().is_empty());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for sub in ["ingest", "synth", "train", "eval", "profile-pred", "chat", "serve"] {
        assert_eq!(personachat(&[sub, "--help"], p).status.code(), Some(0), "{sub} --help");
    }
    assert_eq!(personachat(&["--version"], p).status.code(), Some(0));
    assert_eq!(personachat(&["bogus"], p).status.code(), Some(1));
    assert_eq!(personachat(&["synth", "--n-episodes", "many"], p).status.code(), Some(1));
    assert_eq!(personachat(&["train", "--in", "nope.jsonl", "--model-type", "ir", "--out", "m"], p).status.code(), Some(1));
    std::fs::write(p.join("bad.json"), r#"{"sed": 1}"#).unwrap();
    assert_eq!(personachat(&["synth", "--config", "bad.json", "--out", "x.jsonl"], p).status.code(), Some(1));
    assert_eq!(personachat(&["serve", "--config", "bad.json"], p).status.code(), Some(1));
}
