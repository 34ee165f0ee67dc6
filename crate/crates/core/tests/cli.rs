use std::path::Path;
use std::process::{Command, Output};

use accelsched::compat::CompatReport;
use accelsched::metrics::{encode_pgm, GrayImage, MetricsReport};
use accelsched::report::RunReport;
use accelsched::simulator::SimResult;

fn accelsched(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_accelsched"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();

    let summary = ok(&accelsched(
        d,
        &["build-model", "--variant", "original", "--out", "p2p.json"],
    ));
    assert!(summary.contains("54425859"), "{summary}");
    ok(&accelsched(
        d,
        &["build-model", "--chain", "32", "--name", "yolo", "--out", "yolo.json"],
    ));

    let check = ok(&accelsched(d, &["check", "--model", "p2p.json", "--limit", "16"]));
    let report: CompatReport = serde_json::from_str(&check).unwrap();
    assert_eq!(report.violations_of("R4"), 8);
    let fail = accelsched(d, &["check", "--model", "p2p.json", "--limit", "8"]);
    assert_eq!(fail.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&fail.stderr).contains("error"));

    ok(&accelsched(
        d,
        &[
            "rewrite",
            "--model",
            "p2p.json",
            "--strategy",
            "crop",
            "--out",
            "p2p-crop.json",
            "--report",
            "rw.json",
            "--verify-input",
            "3x256x256",
        ],
    ));
    assert!(read(d, "rw.json").contains("\"param_delta\": 0"));

    for (model, out) in [
        ("p2p.json", "pa.json"),
        ("p2p-crop.json", "pc.json"),
        ("yolo.json", "pb.json"),
    ] {
        ok(&accelsched(
            d,
            &["--seed", "5", "synth-profile", "--model", model, "--out", out],
        ));
    }
    ok(&accelsched(
        d,
        &[
            "schedule",
            "--mode",
            "naive",
            "--model-a",
            "p2p.json",
            "--profile-a",
            "pa.json",
            "--profile-b",
            "pb.json",
            "--out",
            "naive.json",
        ],
    ));
    ok(&accelsched(
        d,
        &[
            "schedule",
            "--mode",
            "swap",
            "--profile-a",
            "pc.json",
            "--profile-b",
            "pb.json",
            "--out",
            "swap.json",
        ],
    ));
    // A profile synthesized for a different graph is rejected.
    let mismatch = accelsched(
        d,
        &[
            "schedule",
            "--mode",
            "naive",
            "--model-a",
            "p2p.json",
            "--profile-a",
            "pc.json",
            "--profile-b",
            "pb.json",
            "--out",
            "x.json",
        ],
    );
    assert_eq!(mismatch.status.code(), Some(1));

    ok(&accelsched(
        d,
        &[
            "simulate",
            "--schedule",
            "swap.json",
            "--profiles",
            "pc.json",
            "pb.json",
            "--frames",
            "30",
            "--out",
            "sim.json",
            "--gantt",
            "gantt.svg",
        ],
    ));
    let sim = SimResult::from_json(&read(d, "sim.json")).unwrap();
    assert_eq!(sim.frames_completed.len(), 2);
    assert!(read(d, "gantt.svg").starts_with("<svg"));

    let rep = ok(&accelsched(
        d,
        &["report", "--schedule", "swap.json", "--sim", "sim.json"],
    ));
    let rep: RunReport = serde_json::from_str(&rep).unwrap();
    assert_eq!(rep.inputs.len(), 2);
    assert_eq!(rep.invocation[0], "report");
    let fps: Vec<f64> = rep.scenarios[0].engines.iter().map(|e| e.fps).collect();
    assert_eq!(fps[0], fps[1]);
}

#[test]
fn metrics_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let a = GrayImage::from_rows(&[&[0, 10], &[20, 30]], 256).unwrap();
    let b = GrayImage::from_rows(&[&[1, 12], &[23, 34]], 256).unwrap();
    std::fs::write(d.join("a.pgm"), encode_pgm(&a)).unwrap();
    std::fs::write(d.join("b.pgm"), encode_pgm(&b)).unwrap();
    let out = ok(&accelsched(d, &["metrics", "--ref", "a.pgm", "--test", "b.pgm"]));
    let m: MetricsReport = serde_json::from_str(&out).unwrap();
    assert_eq!(m.mse, 7.5);
    let same: MetricsReport =
        serde_json::from_str(&ok(&accelsched(d, &["metrics", "--ref", "a.pgm", "--test", "a.pgm"]))).unwrap();
    assert_eq!((same.psnr_db, same.ssim), (None, 1.0));

    std::fs::write(d.join("bad.pgm"), b"P5\n2 2\n255\n\x01").unwrap();
    assert_eq!(
        accelsched(d, &["metrics", "--ref", "a.pgm", "--test", "bad.pgm"])
            .status
            .code(),
        Some(1)
    );

    // Config supplies the seed; an explicit flag overrides it.
    ok(&accelsched(d, &["build-model", "--chain", "8", "--out", "c.json"]));
    std::fs::write(d.join("cfg.json"), r#"{"seed": 11, "gpu_mean_ms": 0.25}"#).unwrap();
    ok(&accelsched(
        d,
        &[
            "--config",
            "cfg.json",
            "synth-profile",
            "--model",
            "c.json",
            "--out",
            "p1.json",
        ],
    ));
    ok(&accelsched(
        d,
        &[
            "--seed",
            "11",
            "synth-profile",
            "--model",
            "c.json",
            "--gpu-mean-ms",
            "0.25",
            "--out",
            "p2.json",
        ],
    ));
    ok(&accelsched(
        d,
        &[
            "--config",
            "cfg.json",
            "--seed",
            "12",
            "synth-profile",
            "--model",
            "c.json",
            "--out",
            "p3.json",
        ],
    ));
    assert_eq!(read(d, "p1.json"), read(d, "p2.json"));
    assert_ne!(read(d, "p1.json"), read(d, "p3.json"));

    std::fs::write(d.join("typo.json"), r#"{"sed": 1}"#).unwrap();
    let bad = accelsched(
        d,
        &[
            "--config",
            "typo.json",
            "synth-profile",
            "--model",
            "c.json",
            "--out",
            "p4.json",
        ],
    );
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn usage_errors_and_demo() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = accelsched(d, &["check", "--model", "x.json", "--unknown-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(accelsched(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        accelsched(d, &["check", "--model", "missing.json"]).status.code(),
        Some(1)
    );

    ok(&accelsched(
        d,
        &["--seed", "3", "demo", "--out-dir", "run1", "--frames", "20"],
    ));
    ok(&accelsched(
        d,
        &["--seed", "3", "demo", "--out-dir", "run2", "--frames", "20"],
    ));
    assert_eq!(read(d, "run1/report.json"), read(d, "run2/report.json"));
    assert_eq!(read(d, "run1/swap.sim.json"), read(d, "run2/swap.sim.json"));
}
