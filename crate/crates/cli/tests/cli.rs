use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use vqbe_core::synth::default_executor;
use vqbe_core::{emit_sql, parse, DatasetFormat, SegmentStore};

fn vqbe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqbe")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn dataset(dir: &Path, n: usize) -> String {
    let path = dir.join("data.jsonl");
    let o = vqbe(&["generate", "--pairs", "--segments", &n.to_string(), "--seed", "5", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    path.to_str().unwrap().to_string()
}

#[test]
fn generate_is_seeded() {
    let a = vqbe(&["generate", "--segments", "7", "--seed", "9"]);
    let b = vqbe(&["generate", "--segments", "7", "--seed", "9"]);
    let c = vqbe(&["generate", "--segments", "7", "--seed", "10"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a).lines().count(), 7);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let store = SegmentStore::read_jsonl(a.stdout.as_slice()).unwrap();
    assert_eq!(store.len(), 7);
}

#[test]
fn generate_csv_dir_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("csv");
    let o = vqbe(&["generate", "--segments", "4", "--format", "csv-dir", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let store = SegmentStore::load(&out, DatasetFormat::CsvDir).unwrap();
    assert_eq!(store.len(), 4);
    let o = vqbe(&["execute", "Near(o1, o2)", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn execute_prints_matching_vids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dataset(dir.path(), 60);
    let text = "Near(o1,o2); Far(o1,o2)";
    let o = vqbe(&["execute", text, &path, "--workers", "2"]);
    assert!(o.status.success());
    let store = SegmentStore::load(&path, DatasetFormat::Jsonl).unwrap();
    let ex = default_executor();
    let q = parse(text, ex.registry()).unwrap();
    let vids: Vec<&str> = store.vids().collect();
    let expected: Vec<String> = ex.execute(&q, &store, &vids).unwrap().into_iter().collect();
    let got: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert!(!expected.is_empty());
    assert_eq!(got, expected);
}

#[test]
fn emit_sql_prints_sql() {
    let text = "Duration(Near(o1,o2),5)";
    let o = vqbe(&["emit-sql", text]);
    assert!(o.status.success());
    let ex = default_executor();
    let expected = emit_sql(&parse(text, ex.registry()).unwrap(), ex.registry()).unwrap();
    assert_eq!(stdout(&o).trim_end(), expected.trim_end());
}

#[test]
fn user_errors_exit_one() {
    for args in [
        vec!["frobnicate"],
        vec!["execute"],
        vec!["emit-sql", "Near(o1)"],
        vec!["emit-sql", "Near(o1, o2)", "--bogus"],
        vec!["execute", "Near(o1, o2)", "/nonexistent/data.jsonl"],
        vec!["synthesize", "--segments", "30"],
        vec!["synthesize", "--segments", "30", "--target", "TQ1", "--budget", "3"],
        vec!["synthesize", "--segments", "30", "--oracle", "interactive"],
        vec!["bench", "/nonexistent/experiment.json"],
        vec!["serve", "--dataset", "nameonly"],
    ] {
        let o = vqbe(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(o.stdout.is_empty(), "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
    let o = vqbe(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

fn synth_json(args: &[&str]) -> Value {
    let o = vqbe(args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn strip_timing(mut v: Value) -> Value {
    v["telemetry"]["wall_time_secs"] = Value::Null;
    v
}

#[test]
fn synthesize_with_ground_truth() {
    let args = ["synthesize", "--segments", "300", "--target", "TQ1", "--budget", "20", "--oracle", "ground-truth", "--seed", "1"];
    let r = synth_json(&args);
    assert_eq!(r["labels_used"], 20);
    let top = r["top_k"].as_array().unwrap();
    assert!(!top.is_empty() && top.len() <= 100);
    assert_eq!(top[0]["f1"], 1.0);
    assert_eq!(r["labels"].as_array().unwrap().len(), 20);
    assert_eq!(r["schedule"]["total_budget"], 20);
    // same seed, same result
    assert_eq!(strip_timing(synth_json(&args)), strip_timing(r.clone()));
    let mut workers = args.to_vec();
    workers.extend(["--workers", "3"]);
    assert_eq!(strip_timing(synth_json(&workers))["top_k"], r["top_k"]);
}

#[test]
fn synthesize_with_noisy_oracle_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("hyper.json");
    std::fs::write(&config, r#"{"bw": 4, "k": 7}"#).unwrap();
    let r = synth_json(&[
        "synthesize", "--segments", "200", "--target", "Near(o1, o2)", "--budget", "16", "--oracle", "noisy", "--fn-rate", "0.3",
        "--config", config.to_str().unwrap(),
    ]);
    assert_eq!(r["labels_used"], 16);
    assert!(r["top_k"].as_array().unwrap().len() <= 7);
}

#[test]
fn synthesize_interactively_from_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let path = dataset(dir.path(), 40);
    let store = SegmentStore::load(&path, DatasetFormat::Jsonl).unwrap();
    let ex = default_executor();
    let q = parse("Near(o1, o2)", ex.registry()).unwrap();
    let vids: Vec<&str> = store.vids().collect();
    let truth = ex.execute(&q, &store, &vids).unwrap();
    let pos = vids.iter().find(|v| truth.contains(**v)).unwrap();
    let neg = vids.iter().find(|v| !truth.contains(**v)).unwrap();
    let labels = dir.path().join("labels.json");
    std::fs::write(&labels, format!(r#"[{{"vid": "{pos}", "label": "pos"}}, {{"vid": "{neg}", "label": "neg"}}]"#)).unwrap();

    let mut child = Command::new(env!("CARGO_BIN_EXE_vqbe"))
        .args(["synthesize", "--dataset", &path, "--oracle", "interactive", "--budget", "6", "--labels", labels.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // answer every prompt with the truth
    let mut stdin = child.stdin.take().unwrap();
    let mut stderr = child.stderr.take().unwrap();
    let mut asked = 0;
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    while stderr.read(&mut byte).unwrap() == 1 {
        buf.push(byte[0]);
        let text = String::from_utf8_lossy(&buf).to_string();
        if text.ends_with("[y/n] ") {
            let vid = text.rsplit("does ").next().unwrap().split(' ').next().unwrap().to_string();
            let answer = if truth.contains(&vid) { "y\n" } else { "n\n" };
            stdin.write_all(answer.as_bytes()).unwrap();
            stdin.flush().unwrap();
            asked += 1;
            buf.clear();
        }
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(asked, 4);
    assert_eq!(r["labels_used"], 6);
}

#[test]
fn bench_runs_an_experiment_file() {
    let dir = tempfile::tempdir().unwrap();
    let exp = dir.path().join("exp.json");
    std::fs::write(
        &exp,
        r#"{"name": "tiny", "targets": ["TQ6"], "budgets": [12, 14], "repetitions": 2, "train_size": 80, "test_size": 80}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = vqbe(&["bench", exp.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 4);
    assert_eq!(report["summary"].as_array().unwrap().len(), 2);
    for f in ["report.json", "runs.csv", "summary.csv", "f1_vs_budget.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    std::fs::write(&exp, r#"{"targets": ["TQ6"], "budget": 12}"#).unwrap();
    assert_eq!(vqbe(&["bench", exp.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn serve_answers_http() {
    let dir = tempfile::tempdir().unwrap();
    let path = dataset(dir.path(), 10);
    let mut child = Command::new(env!("CARGO_BIN_EXE_vqbe"))
        .args(["serve", "--dataset", &format!("demo={path}"), "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(a) = line.strip_prefix("listening on ") {
            break a.to_string();
        }
    };
    let mut s = TcpStream::connect(&addr).unwrap();
    write!(s, "GET /datasets HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    let body: Value = serde_json::from_str(resp.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body[0]["id"], "demo");
    assert_eq!(body[0]["segments"], 10);
}
