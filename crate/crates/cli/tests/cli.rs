use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chat-capsule"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn predict(ckpt: &Path, input: &str) -> Output {
    let mut child = bin()
        .args(["predict", "--checkpoint", p(ckpt)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

/// Generates data and trains a toy model for two epochs.
fn trained(dir: &Path) -> std::path::PathBuf {
    let train = dir.join("train.jsonl");
    let valid = dir.join("valid.jsonl");
    assert_eq!(code(&run(&["gen-data", "--n", "24", "--seed", "1", "--out", p(&train)])), 0);
    assert_eq!(code(&run(&["gen-data", "--n", "8", "--seed", "2", "--out", p(&valid)])), 0);
    let config = dir.join("run.conf");
    std::fs::write(&config, "# toy widths\nd-word = 8\nd_model = 8\nd-h = 8\nd-a = 8\nbatch-size = 8\n").unwrap();
    let out = dir.join("run");
    let o = run(&[
        "train",
        "--config",
        p(&config),
        "--train",
        p(&train),
        "--valid",
        p(&valid),
        "--out",
        p(&out),
        "--max-epochs",
        "2",
        "--checkpoint-every",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    for f in ["best.ckpt", "last.ckpt", "metrics.log", "report.txt", "report.kv", "step-000003.ckpt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let kv = std::fs::read_to_string(out.join("report.kv")).unwrap();
    // Config file values reach the run.
    assert!(kv.contains("\"d_model\":8"), "{kv}");

    let last = out.join("last.ckpt");
    let reports = dir.path().join("eval");
    let o = run(&[
        "eval",
        "--checkpoint",
        p(&last),
        "--data",
        p(&dir.path().join("valid.jsonl")),
        "--report-dir",
        p(&reports),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("loss "));
    assert!(reports.join("report.txt").exists());

    let input = concat!(
        r#"{"text":"my order is late again","speaker":"User","intent":"Complain"}"#,
        "\n",
        r#"{"text":"sorry , let me check","speaker":"Staff","intent":"Apologize"}"#,
        "\n\n",
        r#"{"text":"thanks","speaker":"User","intent":"Thank"}"#,
        "\n",
    );
    let o = predict(&last, input);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["utterance"], 1);
    assert_eq!(lines[1]["utterance"], 2);
    assert_eq!(lines[2]["reset"], true);
    assert_eq!(lines[3]["utterance"], 1);
    for l in [&lines[0], &lines[1], &lines[3]] {
        let probs = l["probs"].as_object().unwrap();
        assert_eq!(probs.len(), 6);
        let total: f64 = probs.values().map(|v| v.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(probs.contains_key(l["emotion"].as_str().unwrap()));
        assert_eq!(l["satisfaction"].as_object().unwrap().len(), 3);
        assert_eq!(l["curve"].as_object().unwrap().len(), 5);
    }
}

#[test]
fn predict_reports_bad_lines_and_keeps_going() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path()).join("last.ckpt");
    let input = concat!(
        r#"{"text":"hello","speaker":"User","intent":"Inform"}"#,
        "\n",
        "not json\n",
        r#"{"text":"hello","speaker":"Robot","intent":"Inform"}"#,
        "\n",
        r#"{"text":"hello","speaker":"Staff","intent":"Inform"}"#,
        "\n",
    );
    let o = predict(&ckpt, input);
    assert_eq!(code(&o), 2);
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[1]["line"], 2);
    assert_eq!(lines[2]["line"], 3);
    assert!(lines[2]["error"].as_str().unwrap().contains("Robot"));
    // The session survived the errors.
    assert_eq!(lines[3]["utterance"], 2);
}

#[test]
fn resume_continues_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    let more = dir.path().join("more");
    let o = run(&[
        "train",
        "--resume",
        p(&out.join("last.ckpt")),
        "--train",
        p(&dir.path().join("train.jsonl")),
        "--out",
        p(&more),
        "--max-epochs",
        "3",
        "--batch-size",
        "8",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // Two epochs of three batches were done; one more epoch adds steps 7 to 9.
    let log = std::fs::read_to_string(more.join("metrics.log")).unwrap();
    assert!(log.lines().last().unwrap().starts_with("9, "), "{log}");
}

#[test]
fn dailydialog_against_a_customer_service_checkpoint_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path());
    let dd = dir.path().join("dd");
    std::fs::create_dir(&dd).unwrap();
    for split in ["train", "validation", "test"] {
        std::fs::write(dd.join(format!("dialogues_{split}.txt")), "Hi . __eou__ Hello ! __eou__\n").unwrap();
        std::fs::write(dd.join(format!("dialogues_emotion_{split}.txt")), "0 4\n").unwrap();
        std::fs::write(dd.join(format!("dialogues_act_{split}.txt")), "1 1\n").unwrap();
    }
    let ckpt = out.join("last.ckpt");
    let o = run(&["eval", "--checkpoint", p(&ckpt), "--dailydialog", p(&dd)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema"));

    let o = run(&["train", "--resume", p(&ckpt), "--dailydialog", p(&dd), "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&["eval", "--checkpoint", "/nonexistent/model.ckpt", "--data", "x"])), 2);
    let o = run(&["train", "--train", "/nonexistent/train.jsonl", "--out", "/tmp/unused"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/train.jsonl"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    std::fs::write(&config, "learning-rate = 0.1\n").unwrap();
    let train = dir.path().join("t.jsonl");
    run(&["gen-data", "--n", "4", "--out", p(&train)]);
    let o = run(&["train", "--config", p(&config), "--train", p(&train), "--out", p(&dir.path().join("o"))]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning-rate"));
}

#[test]
fn gradcheck_passes_and_flags_corruption() {
    let o = run(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));
    let o = run(&["gradcheck", "--corrupt", "dialog_attn.score"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("FAIL dialog_attn.score"), "{}", stdout(&o));
}

#[test]
fn gen_data_is_seeded_and_streams_to_stdout() {
    let a = run(&["gen-data", "--n", "5", "--seed", "3"]);
    let b = run(&["gen-data", "--n", "5", "--seed", "3"]);
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).lines().count(), 5);
}
