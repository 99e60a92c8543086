use std::io::Write;
use std::process::{Command, Output, Stdio};

fn dynvox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynvox")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL_CONFIG: &str = "resolutions = [0.4, 0.8]\nchannels = [4, 8]\nproposal_hidden = [8]\nrefine_conv = [4, 4]\nrefine_hidden = [4]\nrefine_top_k = 4\n";

#[test]
fn iou_reads_pairs_from_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_dynvox"))
        .args(["iou", "--grad"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"# p then g\n0,0,0,2,2,2,0, 1,0,0,2,2,2,0\n\n0 0 0 1 1 1 0 0 0 0 1 1 1 0\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("iou,loss,smooth,d_x_p"));
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first.len(), 17);
    assert!((first[0].parse::<f64>().unwrap() - 1.0 / 3.0).abs() < 1e-9);
    assert!(lines[2].starts_with("1,0,"));
}

#[test]
fn iou_rejects_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.csv");
    std::fs::write(&path, "1,2,3\n").unwrap();
    let out = dynvox(&["iou", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn forward_on_synthetic_scene_with_saved_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let blob = dir.path().join("w.bin");
    let out = dynvox(&[
        "init-weights",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        blob.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let run = |threads: &str| {
        let out = dynvox(&[
            "forward",
            "--input",
            "synthetic:4000:3",
            "--config",
            cfg.to_str().unwrap(),
            "--weights",
            blob.to_str().unwrap(),
            "--threads",
            threads,
            "--seed",
            "5",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        (v["proposals"].clone(), v["refined"].clone(), v["report"].clone())
    };
    let (p1, r1, report) = run("1");
    let (p4, r4, _) = run("4");
    assert_eq!(p1, p4);
    assert_eq!(r1, r4);
    assert!(!p1.as_array().unwrap().is_empty());
    assert_eq!(report["input_points"], 4000);
}

#[test]
fn forward_reads_kitti_and_writes_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let scan = dir.path().join("scan.bin");
    let mut bytes = Vec::new();
    for i in 0..200 {
        for v in [10.0 + (i % 20) as f32 * 0.3, (i / 20) as f32 * 0.3, -1.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(&scan, &bytes).unwrap();
    let report = dir.path().join("report.json");
    let out = dynvox(&[
        "forward",
        "--input",
        scan.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--report-only",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["input_points"], 200);
    assert!(v["stages"].as_array().unwrap().len() >= 7);

    std::fs::write(&scan, &bytes[..17]).unwrap();
    let bad = dynvox(&["forward", "--input", scan.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("byte offset 16"));
}

#[test]
fn eval_losses_reports_both_stages() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("assign.json");
    std::fs::write(
        &path,
        r#"{"stage1": [{"logit": 3.0, "pred": [0,0,0,1,1,1,0], "gt": [0,0,0,1,1,1,0]}],
            "stage2": [{"conf_logit": 0.0, "flip_logit": 0.0, "pred": [0,0,0,2,2,2,0], "gt": [1,0,0,2,2,2,0]}]}"#,
    )
    .unwrap();
    let out = dynvox(&["eval-losses", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["foreground"], 1);
    assert!((v["stage2"]["iou"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-9);
}

#[test]
fn bench_and_verify_run() {
    let out = dynvox(&["bench", "--sizes", "2000,4000", "--repeats", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert!(v["slopes"]["downsample_sort"].is_number());

    let out = dynvox(&["verify"]);
    let text = stdout(&out);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6);
}
