use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cbtnet_core::checkpoint::{Checkpoint, TrainingMetadata};
use cbtnet_core::model::{CbtNet, CbtNetConfig};
use cbtnet_core::mvcodec::quantize_fields;
use cbtnet_core::synthetic::smooth_texture;
use cbtnet_core::video::encode_y4m;
use cbtnet_core::MvFieldSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cbtnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbtnet"))
        .args(args)
        .output()
        .expect("spawn cbtnet")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Three 128x128 frames of a texture panning by (3, -2) per frame.
fn write_video(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let canvas = smooth_texture(160, 160, 3.0, &mut rng);
    let frames: Vec<_> = (0..3)
        .map(|t| canvas.crop(16 + 3 * t, 16 - 2 * t as usize + 4, 128, 128).unwrap())
        .collect();
    let path = dir.join("clip.y4m");
    std::fs::write(&path, encode_y4m(&frames, 25)).unwrap();
    path
}

fn write_checkpoint(dir: &Path) -> PathBuf {
    let ck = Checkpoint {
        model: CbtNet::new(CbtNetConfig::toy(), 3).unwrap(),
        adam: None,
        metadata: TrainingMetadata::default(),
    };
    let path = dir.join("toy.cbtn");
    ck.save(&path).unwrap();
    path
}

fn sad_column(csv: &str) -> Vec<(String, f64)> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let (key, sad) = l.rsplit_once(',').unwrap();
            let key: Vec<&str> = key.split(',').take(4).collect();
            (key.join(","), sad.parse().unwrap())
        })
        .collect()
}

#[test]
fn selftest_passes() {
    let out = cbtnet(&["selftest"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.contains("FAIL"), "{text}");
    assert!(text.contains("aperture"));
}

#[test]
fn exhaustive_search_never_loses_to_diamond() {
    let dir = tempfile::tempdir().unwrap();
    let video = write_video(dir.path());
    let mut reports = Vec::new();
    for algo in ["es", "ds"] {
        let out_dir = dir.path().join(algo);
        ok(&cbtnet(&[
            "match",
            "--input",
            s(&video),
            "--algo",
            algo,
            "--range",
            "8",
            "--out",
            s(&out_dir),
        ]));
        reports.push(sad_column(
            &std::fs::read_to_string(out_dir.join("blocks.csv")).unwrap(),
        ));
        assert!(out_dir.join("run.json").exists());
    }
    let (es, ds) = (&reports[0], &reports[1]);
    assert_eq!(es.len(), 2 * (4 + 16 + 64 + 256));
    for (a, b) in es.iter().zip(ds) {
        assert_eq!(a.0, b.0);
        assert!(a.1 <= b.1, "block {}: ES {} > DS {}", a.0, a.1, b.1);
    }
}

#[test]
fn predict_export_read_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let video = write_video(dir.path());
    let ck = write_checkpoint(dir.path());
    let pred = dir.path().join("pred");
    ok(&cbtnet(&[
        "predict",
        "--input",
        s(&video),
        "--checkpoint",
        s(&ck),
        "--out",
        s(&pred),
    ]));
    assert!(pred.join("predicted.y4m").exists());
    let mvs: MvFieldSet = serde_json::from_slice(&std::fs::read(pred.join("mvs.json")).unwrap()).unwrap();

    let exp = dir.path().join("exp");
    ok(&cbtnet(&[
        "export",
        "--mvs",
        s(&pred.join("mvs.json")),
        "--out",
        s(&exp),
    ]));
    let back = dir.path().join("back");
    ok(&cbtnet(&[
        "read",
        "--input",
        s(&exp.join("mvs.cbmv")),
        "--out",
        s(&back),
    ]));
    let read: MvFieldSet = serde_json::from_slice(&std::fs::read(back.join("mvs_0.json")).unwrap()).unwrap();
    assert_eq!(read, quantize_fields(&mvs).unwrap());
}

#[test]
fn identical_runs_give_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let video = write_video(dir.path());
    let out_dir = dir.path().join("m");
    let mut seen = Vec::new();
    for _ in 0..2 {
        ok(&cbtnet(&[
            "match",
            "--input",
            s(&video),
            "--algo",
            "arps",
            "--out",
            s(&out_dir),
        ]));
        seen.push(["blocks.csv", "mvs.json", "run.json"].map(|f| std::fs::read(out_dir.join(f)).unwrap()));
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn failures_exit_nonzero_and_leave_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");
    let missing = dir.path().join("missing.y4m");
    let out = cbtnet(&["match", "--input", s(&missing), "--algo", "es", "--out", s(&out_dir)]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!out_dir.exists());

    // The output directory is created before the command runs and removed on failure.
    let video = write_video(dir.path());
    let out = cbtnet(&["match", "--input", s(&video), "--algo", "cbt", "--out", s(&out_dir)]);
    assert!(!out.status.success());
    assert!(!out_dir.exists());

    let out = cbtnet(&["match", "--no-such-flag"]);
    assert!(!out.status.success());
    let out = cbtnet(&[
        "predict",
        "--input",
        s(&video),
        "--layer",
        "7",
        "--checkpoint",
        "x",
        "--out",
        s(&out_dir),
    ]);
    assert!(!out.status.success());
}

#[test]
fn bdrate_of_identical_curves_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("a.csv");
    std::fs::write(&curve, "bitrate,quality\n100,30\n200,33\n400,36\n800,39\n").unwrap();
    let out = cbtnet(&["bdrate", "--anchor", s(&curve), "--test", s(&curve)]);
    ok(&out);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "0.000");
}

#[test]
fn viz_and_metrics_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let video = write_video(dir.path());
    let m = dir.path().join("m");
    ok(&cbtnet(&[
        "match",
        "--input",
        s(&video),
        "--algo",
        "ds",
        "--out",
        s(&m),
    ]));
    let v = dir.path().join("v");
    ok(&cbtnet(&[
        "viz",
        "--mvs",
        s(&m.join("mvs.json")),
        "--block-size",
        "8",
        "--reference",
        "p",
        "--scale",
        "2",
        "--out",
        s(&v),
    ]));
    let ppm = std::fs::read(v.join("mv_8_p.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));

    let q = dir.path().join("q");
    ok(&cbtnet(&[
        "metrics",
        "--input",
        s(&video),
        "--reference",
        s(&video),
        "--out",
        s(&q),
    ]));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(q.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["mean_mad"], 0.0);
    assert!((json["mean_ms_ssim"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(json["temporal_information"].as_f64().unwrap() > 0.0);
}
