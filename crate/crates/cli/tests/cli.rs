use std::path::Path;
use std::process::{Command, Output};

use dgcnn::io::{load_checkpoint, parse_metrics_csv, read_dataset, read_f64_dump, METRICS_HEADER};

fn dgcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgcnn")).args(args).output().expect("spawn dgcnn")
}

fn ok(args: &[&str]) -> String {
    let out = dgcnn(args);
    assert!(
        out.status.success(),
        "dgcnn {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (train, test) = (d.join("train.bin"), d.join("test.bin"));
    ok(&["gen-data", "--n", "8", "--count", "8", "--seed", "1", "--out", s(&train)]);
    ok(&["gen-data", "--n", "8", "--count", "3", "--bank", "test", "--seed", "2", "--out", s(&test)]);
    let data = read_dataset(&train).unwrap();
    assert_eq!((data.n, data.samples.len()), (8, 8));

    let model = d.join("model.ckpt");
    ok(&[
        "train-sup", "--data", s(&train), "--epochs", "2", "--channels", "2", "--kernel", "3", "--out", s(&model),
        "--history", s(&d.join("hist.csv")),
    ]);
    let (net, opt) = load_checkpoint(&model).unwrap();
    assert_eq!(net.config.input_side, 16);
    assert!(opt.is_none());
    let hist = std::fs::read_to_string(d.join("hist.csv")).unwrap();
    assert_eq!(hist.lines().count(), 3);

    let metrics = d.join("metrics.csv");
    ok(&["eval", "--data", s(&test), "--model", s(&model), "--out", s(&metrics)]);
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert!(text.starts_with(METRICS_HEADER));
    let table = parse_metrics_csv(&text).unwrap();
    assert_eq!((table.n, table.rows.len()), (8, 3));

    // the labels scored against themselves
    let labels = d.join("labels.csv");
    ok(&["eval", "--data", s(&test), "--out", s(&labels)]);
    let table = parse_metrics_csv(&std::fs::read_to_string(&labels).unwrap()).unwrap();
    assert!(table.rows.iter().all(|r| r.l2_dg == 0.0 && r.h1_dg == 0.0));
}

#[test]
fn solve_and_warmstart() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let dump = d.join("u.bin");
    ok(&["solve", "--n", "8", "--scenario", "sinsin", "--dump", s(&dump), "--report", s(&d.join("elems.csv"))]);
    let u = read_f64_dump(&dump).unwrap();
    assert_eq!(u.len(), 256);

    // the DG solution itself is a perfect warm start
    let out = d.join("ws.csv");
    ok(&[
        "warmstart", "--n", "8", "--scenario", "sinsin", "--guess", &format!("exact={}", s(&dump)), "--tol", "1e-6",
        "--out", s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.lines().next().unwrap().contains("exact"));
}

#[test]
fn unsupervised_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let dump = d.join("pred.bin");
    let stdout = ok(&[
        "train-unsup", "--n", "4", "--steps", "5", "--channels", "2", "--kernel", "3", "--dump", s(&dump),
        "--history", s(&d.join("loss.csv")), "--checkpoint", s(&d.join("net.ckpt")),
    ]);
    assert!(stdout.contains("L2_vs_exact"));
    assert_eq!(read_f64_dump(&dump).unwrap().len(), 64);
    let (net, _) = load_checkpoint(d.join("net.ckpt")).unwrap();
    assert_eq!(net.config.channels, 2);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("gen.cfg");
    std::fs::write(&cfg, "# small bank\nn = 4\ncount = 2\nseed = 3\n").unwrap();
    let out = d.join("data.bin");
    ok(&["--config", s(&cfg), "gen-data", "--out", s(&out)]);
    let data = read_dataset(&out).unwrap();
    assert_eq!((data.n, data.samples.len()), (4, 2));
}

#[test]
fn exit_codes() {
    assert_eq!(dgcnn(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(dgcnn(&["gen-data", "--n", "4"]).status.code(), Some(2));
    assert_eq!(dgcnn(&["eval", "--data", "/definitely/missing.bin"]).status.code(), Some(2));
    assert_eq!(dgcnn(&["--help"]).status.code(), Some(0));

    // a file that exists but is not a dataset is a runtime failure
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a dataset").unwrap();
    let out = dgcnn(&["eval", "--data", s(&junk)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}
