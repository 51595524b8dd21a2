mod support;

use std::path::Path;
use std::process::{Command, Output};

use featflow::io::{read_ftz, write_ftz};
use featflow::seqnms::RescoredDetection;
use featflow::{FlowMap, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn featflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featflow")).args(args).current_dir(dir).output().unwrap()
}

fn random_ftz(dir: &Path, name: &str, shape: Shape, seed: u64) -> Tensor {
    let t = Tensor::random(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    write_ftz(dir.join(name), &t).unwrap();
    t
}

#[test]
fn zero_flow_warp_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    random_ftz(dir.path(), "f.ftz", Shape::new(3, 7, 5), 1);
    write_ftz(dir.path().join("zero.ftz"), FlowMap::zeros(7, 5).as_tensor()).unwrap();
    let out = featflow(dir.path(), &["warp", "--feature", "f.ftz", "--flow", "zero.ftz", "--out", "w.ftz"]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(dir.path().join("w.ftz")).unwrap(), std::fs::read(dir.path().join("f.ftz")).unwrap());
}

#[test]
fn seqnms_toy_track() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("in.json"), serde_json::to_string(&support::toy_track()).unwrap()).unwrap();
    let out = featflow(dir.path(), &["seqnms", "--input", "in.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rescored: Vec<RescoredDetection> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rescored.len(), 4);
    let expected = 0.5 * (1.9 / 3.0) + 0.5 * 0.9;
    for r in &rescored {
        let want = if r.detection.bbox.x1 == 50.0 { 0.6 } else { expected };
        assert!((r.detection.score - want).abs() < 1e-12, "{r:?}");
    }
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["\"frame\"", "\"class\"", "\"score\"", "\"box\"", "\"sequence_id\""] {
        assert!(text.contains(key), "missing {key}");
    }
}

#[test]
fn corr_and_forward_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    random_ftz(p, "a.ftz", Shape::new(8, 12, 12), 2);
    random_ftz(p, "b.ftz", Shape::new(8, 12, 12), 3);
    assert!(featflow(p, &["corr", "--current", "a.ftz", "--neighbor", "b.ftz", "--out", "c.ftz"]).status.success());
    assert_eq!(read_ftz(p.join("c.ftz")).unwrap().shape(), Shape::new(121, 12, 12));
    assert!(featflow(p, &["iff-init", "--variant", "basic", "--out", "m.ckpt"]).status.success());
    let fwd = featflow(p, &["iff-forward", "--checkpoint", "m.ckpt", "--current", "a.ftz", "--neighbor", "b.ftz", "--out", "flow.ftz"]);
    assert!(fwd.status.success());
    assert_eq!(read_ftz(p.join("flow.ftz")).unwrap().shape(), Shape::new(2, 12, 12));
}

#[test]
fn trl_prints_scalar_and_respects_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    random_ftz(p, "a.ftz", Shape::new(2, 6, 6), 4);
    random_ftz(p, "b.ftz", Shape::new(2, 6, 6), 5);
    write_ftz(p.join("flow.ftz"), FlowMap::constant(6, 6, 0.5, 0.0).as_tensor()).unwrap();
    let run = |lambda: &str| {
        let out = featflow(p, &["trl", "--current", "a.ftz", "--neighbor", "b.ftz", "--flow", "flow.ftz", "--trl-lambda", lambda]);
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap().trim().parse::<f64>().unwrap()
    };
    assert_eq!(run("1.3"), 2.0 * run("0.65"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(featflow(p, &["--help"]).status.code(), Some(0));
    assert_eq!(featflow(p, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(featflow(p, &["warp", "--feature", "x.ftz"]).status.code(), Some(1));
    let missing = featflow(p, &["warp", "--feature", "x.ftz", "--flow", "y.ftz", "--out", "z.ftz"]);
    assert_eq!(missing.status.code(), Some(1));

    random_ftz(p, "f.ftz", Shape::new(3, 4, 4), 6);
    let bad_flow = featflow(p, &["warp", "--feature", "f.ftz", "--flow", "f.ftz", "--out", "w.ftz"]);
    assert_eq!(bad_flow.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&bad_flow.stderr).unwrap();
    assert_eq!(err["error"], "channel_count");

    let bad_corr = featflow(p, &["corr", "--current", "f.ftz", "--neighbor", "f.ftz", "--max-displacement", "3", "--stride", "2", "--out", "c.ftz"]);
    assert_eq!(bad_corr.status.code(), Some(2));

    std::fs::write(p.join("dets.json"), r#"[{"frame":0,"class":0,"score":0.5,"box":[2,2,1,1]}]"#).unwrap();
    assert_eq!(featflow(p, &["seqnms", "--input", "dets.json"]).status.code(), Some(2));
    std::fs::write(p.join("ok.json"), "[]").unwrap();
    assert_eq!(featflow(p, &["seqnms", "--input", "ok.json", "--link-iou", "1.5"]).status.code(), Some(2));
    assert_eq!(featflow(p, &["seqnms", "--input", "ok.json", "--variant", "sideways"]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes_at_graph_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = featflow(dir.path(), &["gradcheck", "--tol", "1e-4", "--seeds", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = String::from_utf8(out.stdout).unwrap();
    assert_eq!(lines.lines().count(), featflow::gradcheck::check_names().count());
    // an impossible tolerance is a validation failure
    let strict = featflow(dir.path(), &["gradcheck", "--tol", "1e-30", "--seeds", "1"]);
    assert_eq!(strict.status.code(), Some(2));
}

#[test]
fn synth_train_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("spec.kv"), "channels=8\nheight=12\nwidth=12\nnum_frames=4\nmotion=constant-shift\ndx=1\ndy=0\n").unwrap();
    assert!(featflow(p, &["synth", "--spec", "spec.kv", "--out-dir", "s"]).status.success());
    let f0 = read_ftz(p.join("s/frame_000.ftz")).unwrap();
    let f1 = read_ftz(p.join("s/frame_001.ftz")).unwrap();
    let gt = FlowMap::from_tensor(read_ftz(p.join("s/flow_000.ftz")).unwrap()).unwrap();
    let warped = featflow::flow::bilinear_warp(&f0, &gt).unwrap();
    for c in 0..8 {
        for y in 2..10 {
            for x in 2..10 {
                assert_eq!(warped.get(c, y, x), f1.get(c, y, x));
            }
        }
    }
    assert!(!p.join("s/flow_003.ftz").exists());

    assert!(featflow(p, &["iff-init", "--out", "m.ckpt"]).status.success());
    let train = featflow(p, &["iff-train", "--checkpoint", "m.ckpt", "--spec", "spec.kv", "--steps", "20", "--temporal-radius", "1", "--out", "t.ckpt", "--log", "log.json"]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(featflow(p, &["report", "--log", "log.json", "--out-dir", "r"]).status.success());
    let curve = std::fs::read_to_string(p.join("r/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 21);
    assert!(std::fs::read_to_string(p.join("r/curve.svg")).unwrap().contains("<polyline"));
    assert!(std::fs::read_to_string(p.join("r/summary.csv")).unwrap().starts_with("stage,epe"));

    let zero_steps = featflow(p, &["iff-train", "--checkpoint", "m.ckpt", "--spec", "spec.kv", "--steps", "0", "--out", "z.ckpt", "--log", "z.json"]);
    assert!(zero_steps.status.success());
    assert_eq!(std::fs::read(p.join("z.ckpt")).unwrap(), std::fs::read(p.join("m.ckpt")).unwrap());
}
