use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::Vector3;
use parereg::commands::{evaluate, init_weights, load_model, GroundTruthEntry, PredictionEntry};
use parereg::config::AppConfig;
use parereg::scene::{gen_scene, SceneSpec};
use parereg_core::metrics::MetricThresholds;
use parereg_core::params::export;
use parereg_core::{RigidTransform, Rotation};
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_parereg");

fn parereg(out: &Path, config: Option<&Value>, args: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(["--seed", "5", "--out", out.to_str().unwrap()]);
    if let Some(c) = config {
        let path = out.with_extension("config.json");
        fs::write(&path, c.to_string()).unwrap();
        cmd.args(["--config", path.to_str().unwrap()]);
    }
    cmd.args(args).output().unwrap()
}

fn small_model() -> Value {
    json!({
        "backbone": {"voxel": 0.08, "k": 12, "widths": [8, 12, 16], "point_channels": 6, "corr_dim": 4, "corr_hidden": 8},
        "matching": {"context": {"width": 8, "out_width": 8, "heads": 2}, "coarse_matches": 16, "fine_matches": 64}
    })
}

fn entry<T: serde::de::DeserializeOwned>(t: &RigidTransform) -> T {
    serde_json::from_value(serde_json::to_value(t).unwrap()).unwrap()
}

#[test]
fn overlap_target_is_reached() {
    let spec = SceneSpec {
        points: 800,
        overlap: Some(0.3),
        ..SceneSpec::indoor()
    };
    let mut sum = 0.0;
    for seed in 0..50 {
        let s = gen_scene(&spec, seed).unwrap();
        assert!((0.25..=0.35).contains(&s.overlap), "seed {seed}: overlap {}", s.overlap);
        sum += s.overlap;
    }
    assert!((sum / 50.0 - 0.3).abs() < 0.02);
}

#[test]
fn eval_hand_fixture() {
    let th = MetricThresholds::indoor();
    let truth_t = RigidTransform::new(
        Rotation::from_axis_angle(&Vector3::z(), 10f64.to_radians()),
        Vector3::new(0.3, 0.4, 0.0),
    );
    let mut pred = BTreeMap::new();
    let mut truth = BTreeMap::new();
    truth.insert("a".to_string(), entry::<GroundTruthEntry>(&truth_t));
    truth.insert("b".to_string(), entry::<GroundTruthEntry>(&truth_t));
    pred.insert("a".to_string(), entry::<PredictionEntry>(&truth_t));
    pred.insert("b".to_string(), entry::<PredictionEntry>(&RigidTransform::identity()));
    let r = evaluate(&pred, &truth, &th).unwrap();
    assert!(r.pairs["a"].re_deg.abs() < 1e-9 && r.pairs["a"].te_m.abs() < 1e-12);
    assert!((r.pairs["b"].re_deg - 10.0).abs() < 1e-9);
    assert!((r.pairs["b"].te_m - 0.5).abs() < 1e-12);
    // Pair b: RE 10 deg is within 15 deg, but TE 0.5 m exceeds 0.3 m.
    assert_eq!(r.aggregate.tr, Some(0.5));
    assert_eq!(r.aggregate.rr, None);
    assert_eq!(r.aggregate.mean_re, Some(r.pairs["a"].re_deg));
}

#[test]
fn eval_perfect_predictions_and_relabelled_ids() {
    let th = MetricThresholds::indoor();
    let transforms: Vec<RigidTransform> = (0..6)
        .map(|i| {
            RigidTransform::new(
                parereg_core::geom::random_rotation(i),
                Vector3::new(i as f64, 0.5, -1.0),
            )
        })
        .collect();
    let truth: BTreeMap<String, GroundTruthEntry> = transforms
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut e: GroundTruthEntry = entry(t);
            let src = [
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.5),
            ];
            e.pairs = Some(
                src.iter()
                    .map(|p| {
                        let q = t.apply(p);
                        [p.x, p.y, p.z, q.x, q.y, q.z]
                    })
                    .collect(),
            );
            (format!("p{i}"), e)
        })
        .collect();
    let pred: BTreeMap<String, PredictionEntry> = transforms
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("p{i}"), entry(t)))
        .collect();
    let r = evaluate(&pred, &truth, &th).unwrap();
    assert_eq!(r.aggregate.rr, Some(1.0));
    assert_eq!(r.aggregate.tr, Some(1.0));

    // A worse prediction on half the pairs, then the same data under permuted ids.
    let mut pred = pred;
    for i in [1, 4, 5] {
        pred.insert(format!("p{i}"), entry(&RigidTransform::identity()));
    }
    let base = evaluate(&pred, &truth, &th).unwrap();
    let rename = |k: &String| format!("z{}", 5 - k[1..].parse::<usize>().unwrap());
    let pred2 = pred.iter().map(|(k, v)| (rename(k), v.clone())).collect();
    let truth2 = truth.iter().map(|(k, v)| (rename(k), v.clone())).collect();
    let moved = evaluate(&pred2, &truth2, &th).unwrap();
    assert_eq!(base.aggregate, moved.aggregate);
}

#[test]
fn eval_rejects_missing_predictions() {
    let t = RigidTransform::identity();
    let truth = BTreeMap::from([("x".to_string(), entry::<GroundTruthEntry>(&t))]);
    assert!(evaluate(&BTreeMap::new(), &truth, &MetricThresholds::indoor()).is_err());
}

#[test]
fn weights_round_trip_and_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = AppConfig {
        model: serde_json::from_value(small_model()).unwrap(),
        ..AppConfig::default()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let la = init_weights(&cfg, 1, &a).unwrap();
    let lb = init_weights(&cfg, 2, &b).unwrap();
    assert_eq!(la, lb);
    let (wa, wb) = (
        fs::read(a.join("weights.bin")).unwrap(),
        fs::read(b.join("weights.bin")).unwrap(),
    );
    assert_eq!(wa.len(), wb.len());
    assert_ne!(wa, wb);
    let model = load_model(&cfg, &a.join("weights.bin")).unwrap();
    let again = tmp.path().join("again");
    fs::create_dir_all(&again).unwrap();
    fs::write(
        again.join("weights.bin"),
        parereg_core::io::encode_weights(&export(&model)).unwrap(),
    )
    .unwrap();
    assert_eq!(fs::read(again.join("weights.bin")).unwrap(), wa);

    fs::write(tmp.path().join("cut.bin"), &wa[..wa.len() / 2]).unwrap();
    assert!(load_model(&cfg, &tmp.path().join("cut.bin")).is_err());
}

#[test]
fn truncated_weights_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = json!({"model": small_model()});
    let out = tmp.path().join("w");
    assert!(parereg(&out, Some(&config), &["weights", "init"]).status.success());
    let bytes = fs::read(out.join("weights.bin")).unwrap();
    let cut = tmp.path().join("cut.bin");
    fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    let o = parereg(
        &tmp.path().join("i"),
        Some(&config),
        &["weights", "inspect", "--weights", cut.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_estimator_list_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = parereg(
        &tmp.path().join("b"),
        Some(&json!({"benchmark": {"estimators": []}})),
        &["benchmark"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn noiseless_oracle_registration_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let config = json!({"scene": {"points": 800, "noise": 0.0}, "oracle": {"feature_noise": 0.0}});
    let o = parereg(&out, Some(&config), &["register", "--oracle"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let re = report["pairs"]["scene"]["metrics"]["re_deg"].as_f64().unwrap();
    let te = report["pairs"]["scene"]["metrics"]["te_m"].as_f64().unwrap();
    assert!(re < 1e-6 && te < 1e-6, "RE {re} TE {te}");
}

#[test]
fn network_registration_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("n");
    let config = json!({"model": small_model(), "scene": {"points": 600}});
    let o = parereg(&out, Some(&config), &["register", "--estimator", "lgr", "--aligned"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "aligned.ply", "timing.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let missing = root.join("nope.xyz");
    let o = parereg(
        &root.join("a"),
        None,
        &[
            "register",
            "--source",
            missing.to_str().unwrap(),
            "--target",
            missing.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(2));

    let bad = root.join("bad.json");
    fs::write(&bad, "{\"scene\": {\"points\": \"many\"}}").unwrap();
    let o = Command::new(BIN)
        .args(["--config", bad.to_str().unwrap(), "gen"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(BIN)
        .args(["register", "--estimator", "magic"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));

    let flat = root.join("flat.xyz");
    fs::write(&flat, "0 0 0\n0 0 0\n0 0 0\n0 0 0\n").unwrap();
    let o = parereg(
        &root.join("c"),
        None,
        &[
            "register",
            "--source",
            flat.to_str().unwrap(),
            "--target",
            flat.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_writes_scene_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    let o = parereg(&out, Some(&json!({"scene": {"points": 500}})), &["gen"]);
    assert!(o.status.success());
    let names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(!names.is_empty());
}
