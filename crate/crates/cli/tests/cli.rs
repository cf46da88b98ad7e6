use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn its(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_its")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = its(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("stderr has a line")).expect("last stderr line is JSON")
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn write(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string(value).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = its(&["gen-data", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));
    let e = error_line(&out);
    assert_eq!(e["kind"], "usage");
    assert_eq!(e["code"], 1);
    assert_eq!(its(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write(dir.path(), "typo.json", &serde_json::json!({ "samples_per_wrod": 3 }));
    let out = its(&["gen-data", "--config", s(&typo), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["kind"], "config");

    let out = its(&["train-its", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let enc = repo_config("encoder.json");
    assert_eq!(its(&["train-baseline", "--config", s(&enc)]).status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = its(&["eval", "--manifest", s(&dir.path().join("none")), "--ckpt", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    let e = error_line(&out);
    assert_eq!(e["kind"], "runtime");
    assert!(!e["reason"].as_str().unwrap().contains('\n'));
}

#[test]
fn repo_configs_match_printed_defaults() {
    let cases: [(&str, &[&str]); 5] = [
        ("corpus.json", &["gen-data"]),
        ("encoder.json", &["train-encoder"]),
        ("its.json", &["train-its", "--init", "runs/encoder"]),
        ("baseline.json", &["train-baseline"]),
        ("ablation.json", &["ablate-distribution", "--full", "a", "--few", "b", "--eval", "c"]),
    ];
    for (file, args) in cases {
        let mut argv = args.to_vec();
        argv.push("--print-config");
        let printed: Value = serde_json::from_slice(&ok(&argv).stdout).unwrap();
        let stored: Value = serde_json::from_str(&fs::read_to_string(repo_config(file)).unwrap()).unwrap();
        assert_eq!(printed, stored, "{file}");
        let p = repo_config(file);
        let mut argv = args.to_vec();
        argv.extend(["--config", s(&p), "--print-config"]);
        let reread: Value = serde_json::from_slice(&ok(&argv).stdout).unwrap();
        assert_eq!(reread, stored, "{file} round trip");
    }
    for file in ["ablation_full.json", "ablation_few.json", "ablation_eval.json"] {
        let p = repo_config(file);
        ok(&["gen-data", "--config", s(&p), "--print-config"]);
    }
}

#[test]
fn seed_override_shows_in_printed_config() {
    let out = ok(&["train-encoder", "--seed", "99", "--print-config"]);
    let cfg: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["seed"], 99);
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &serde_json::json!({ "words": ["cat", "dog", "a"], "samples_per_word": 3 }));
    for d in ["a", "b"] {
        let out = ok(&["gen-data", "--config", s(&cfg), "--out", s(&dir.path().join(d))]);
        let line: Value = serde_json::from_str(String::from_utf8_lossy(&out.stdout).lines().next().unwrap()).unwrap();
        assert_eq!(line["event"], "corpus");
        assert_eq!(line["entries"], 3 * 3 * 3, "all three words are short and boosted");
    }
    let read = |d: &str| fs::read_to_string(dir.path().join(d).join("manifest.json")).unwrap();
    let (a, b) = (read("a"), read("b"));
    let strip = |m: &str, d: &str| m.replace(s(&dir.path().join(d)), "");
    assert_eq!(strip(&a, "a"), strip(&b, "b"));
    for f in ["images/000004.tsr1", "mels/000004.tsr1"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
}

/// Every subcommand on a tiny corpus with a handful of training steps.
#[test]
fn subcommands_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let p = |x: &str| root.join(x);
    let corpus = write(root, "corpus.json", &serde_json::json!({ "samples_per_word": 3, "short_word_boost": 1 }));
    ok(&["gen-data", "--config", s(&corpus), "--out", s(&p("data"))]);
    let manifest = p("data/manifest.json");

    let out = ok(&["train-encoder", "--manifest", s(&manifest), "--steps", "3", "--out", s(&p("enc"))]);
    let lines: Vec<Value> = String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines.iter().any(|l| l["stage"] == "encoder"));
    assert_eq!(lines.last().unwrap()["event"], "trained");
    for f in ["params.tsr1c", "optimizer.tsr1c", "meta.json", "train_log.jsonl"] {
        assert!(p("enc").join(f).exists(), "{f}");
    }
    ok(&["train-its", "--manifest", s(&manifest), "--init", s(&p("enc")), "--steps", "3", "--out", s(&p("its")), "-q"]);
    ok(&["train-baseline", "--manifest", s(&manifest), "--steps", "3", "--out", s(&p("tts")), "-q"]);

    let out = its(&["train-its", "--manifest", s(&manifest), "--init", s(&p("tts")), "--steps", "3", "--out", s(&p("bad"))]);
    assert_eq!(out.status.code(), Some(2), "a baseline checkpoint is not an encoder");

    let image = p("data/images/000000.tsr1");
    let out = ok(&["synth", "--image", s(&image), "--ckpt", s(&p("its")), "--out", s(&p("syn")), "--wav", s(&p("syn/a.wav")), "--gl-iters", "2"]);
    let line: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(line["system"], "e2e");
    assert!(p("syn/mel.tsr1").exists());
    let wav = hound_len(&p("syn/a.wav"));
    assert_eq!(wav, line["frames"].as_u64().unwrap() as usize * 64);
    ok(&["synth", "--image", s(&image), "--ckpt", s(&p("enc")), "--tts", s(&p("tts")), "--mel", s(&p("pipe.tsr1"))]);
    assert_eq!(its(&["synth", "--image", s(&image), "--ckpt", s(&p("enc"))]).status.code(), Some(1));

    for (ckpt, extra, system) in [("its", None, "e2e"), ("enc", Some("tts"), "pipeline"), ("tts", None, "tts")] {
        let report = p(&format!("{ckpt}.json"));
        let mut argv: Vec<String> = ["eval", "--manifest", s(&manifest), "--ckpt", s(&p(ckpt)), "--report", s(&report)].map(String::from).to_vec();
        if let Some(t) = extra {
            argv.extend(["--tts".to_string(), s(&p(t)).to_string()]);
        }
        ok(&argv.iter().map(String::as_str).collect::<Vec<_>>());
        let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(r["system"], system);
        for key in ["per", "word_accuracy", "per_by_length", "items_by_length", "n_items", "config_hash", "threads"] {
            assert!(r.get(key).is_some(), "{key}");
        }
    }

    let out = ok(&[
        "bench", "--manifest", s(&manifest), "--its", s(&p("its")), "--itt", s(&p("enc")), "--tts", s(&p("tts")), "--runs", "1", "--report",
        s(&p("bench.json")),
    ]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
    let b: Value = serde_json::from_str(&fs::read_to_string(p("bench.json")).unwrap()).unwrap();
    assert_eq!(b["e2e"]["n_images"], 50);
    assert!(b["e2e"]["param_count"].as_u64() < b["pipeline"]["param_count"].as_u64());
}

#[test]
fn ablation_runs_on_tiny_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for (name, boost, seed) in [("full", 2, 1), ("few", 1, 1), ("eval", 1, 5)] {
        let c = write(root, &format!("{name}.json"), &serde_json::json!({ "samples_per_word": 2, "short_word_boost": boost, "seed": seed, "splits": { "train": 0.5, "val": 0.5, "test": 0.0 } }));
        ok(&["gen-data", "--config", s(&c), "--out", s(&root.join(name)), "-q"]);
    }
    let stage = |stage: &str| serde_json::json!({ "stage": stage, "steps": 2, "batch_size": 2 });
    let cfg = write(root, "abl.json", &serde_json::json!({ "encoder": stage("encoder"), "its": stage("its"), "tts": stage("tts_baseline") }));
    let work = root.join("work");
    let out = ok(&[
        "ablate-distribution", "--config", s(&cfg), "--full", s(&root.join("full")), "--few", s(&root.join("few")), "--eval",
        s(&root.join("eval")), "--out", s(&work),
    ]);
    let line: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(line["claims"]["its_short_gap"].is_number());
    let csv = fs::read_to_string(work.join("per_by_length.csv")).unwrap();
    assert!(csv.starts_with("length,model,per,n_items\n"));
    assert_eq!(csv.lines().count(), 1 + 7 * 4);
    assert!(work.join("ablation.json").exists());

    let out = its(&["ablate-distribution", "--full", s(&root.join("few")), "--few", s(&root.join("full")), "--eval", s(&root.join("eval")), "--out", s(&work)]);
    assert_eq!(out.status.code(), Some(2), "swapped corpora are rejected");
}

fn hound_len(path: &Path) -> usize {
    let bytes = fs::read(path).unwrap();
    assert_eq!(&bytes[..4], b"RIFF");
    (bytes.len() - 44) / 2
}
