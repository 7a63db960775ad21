mod common;

use stair::eval::config::ExperimentConfig;
use stair::eval::experiment::{reevaluate, report_from_manifests, run_experiment, Manifest, CHECKPOINT_FILES, MANIFEST_FILE};
use stair::eval::report::{parse_json, Format, CSV_HEADER};

#[test]
fn writes_layout_and_reproduces_bytes() {
    let cfg = common::synthetic_config(1).resolve().unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&cfg, Some(a.path())).unwrap();
    let rb = run_experiment(&cfg, Some(b.path())).unwrap();
    assert_eq!(ra, rb);

    let hdir = a.path().join("synthetic").join("8");
    for f in CHECKPOINT_FILES.iter().chain([&MANIFEST_FILE, &"report.json", &"report.csv", &"report.txt", &"timings.json"]) {
        assert!(hdir.join(f).is_file(), "missing {f}");
    }
    for s in 1..=3 {
        assert!(hdir.join(format!("predictions_stage{s}.bin")).is_file());
    }
    let ta = common::tree_bytes(a.path());
    let tb = common::tree_bytes(b.path());
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{k} differs");
    }

    let json = std::fs::read_to_string(a.path().join("synthetic").join(Format::Json.file_name())).unwrap();
    assert_eq!(parse_json(&json).unwrap(), ra);
    let csv = std::fs::read_to_string(hdir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn manifest_records_resolved_config_and_reevaluates() {
    let cfg = common::synthetic_config(2).resolve().unwrap();
    let out = tempfile::tempdir().unwrap();
    let report = run_experiment(&cfg, Some(out.path())).unwrap();
    let mpath = out.path().join("synthetic").join("8").join(MANIFEST_FILE);
    let manifest = Manifest::load(&mpath).unwrap();
    assert_eq!(manifest.config, cfg);
    assert_eq!(manifest.config_hash, cfg.hash().unwrap());
    assert_eq!(manifest.horizon_seed, stair::seed::horizon_seed(cfg.seed, 8));

    let again = reevaluate(&mpath).unwrap();
    for (r, s) in again.iter().zip(&manifest.stages) {
        assert_eq!(r.stage, s.stage);
        assert_eq!(r.test, s.test);
        assert_eq!(r.val, s.best_val);
    }
    assert_eq!(report_from_manifests(&out.path().join("synthetic")).unwrap(), report);
    assert_eq!(report_from_manifests(&mpath).unwrap(), report);
}

#[test]
fn failing_horizon_is_recorded_and_others_run() {
    let mut cfg = common::synthetic_config(3);
    // 1200 rows with a 7/1/2 split leave a 120-row validation segment
    cfg.horizons = Some(vec![8, 500]);
    let cfg = cfg.resolve().unwrap();
    let report = run_experiment(&cfg, None).unwrap();
    assert!(report.horizon(8).unwrap().is_ok());
    let bad = report.horizon(500).unwrap();
    assert!(bad.error.is_some());
    assert!(bad.stages.is_empty());
    assert!(report.averages.is_none());
}

#[test]
fn f64_precision_runs() {
    let mut cfg = common::synthetic_config(4);
    cfg.precision = Some(stair::eval::config::Precision::F64);
    let report = run_experiment(&cfg.resolve().unwrap(), None).unwrap();
    assert!(report.horizons[0].is_ok());
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    let cfg = common::synthetic_config(5);
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(ExperimentConfig::from_file(&path).unwrap().resolve().unwrap(), cfg.resolve().unwrap());
}

#[test]
fn norm_sweep_has_four_columns() {
    use stair::eval::ablation::{ablate_norm, norm_sweep};
    let labels: Vec<String> = norm_sweep().into_iter().map(|(l, _)| l).collect();
    assert_eq!(labels, ["none", "alpha=0.95", "alpha=0.99", "revin"]);
    assert_eq!(norm_sweep()[3].1.alpha, 1.0);
    let out = tempfile::tempdir().unwrap();
    let cfg = common::synthetic_config(6).resolve().unwrap();
    let cols = ablate_norm(&cfg, Some(out.path())).unwrap();
    assert_eq!(cols.len(), 4);
    assert_eq!(cols[0].1.norm, "none");
    assert!(out.path().join("revin").join("synthetic").join("8").join(MANIFEST_FILE).is_file());
}

#[test]
fn capacity_compares_linear_with_mlp() {
    use stair::eval::ablation::{capacity, capacity_grid};
    let mut cfg = common::synthetic_config(7);
    cfg.stage1 = Some(stair::eval::config::StageOverride { epochs: Some(1), ..stair::eval::config::StageOverride::lr(1e-3) });
    cfg.stage2 = cfg.stage1;
    cfg.stage3 = cfg.stage1;
    let cfg = cfg.resolve().unwrap();
    let cols = capacity(&cfg, None).unwrap();
    assert_eq!(cols[0].0, "linear");
    assert_eq!(cols[1].0, "mlp-2x512");
    let (points, best) = capacity_grid(&cfg).unwrap();
    assert_eq!(points.len(), 1 + 3 * 5);
    assert_eq!(best.len(), 1);
    assert!(points.iter().all(|p| p.val_mse >= best[0].val_mse));
}

fn shipped(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn shipped_configs_resolve_to_presets() {
    use stair::dataio::SplitProtocol;
    use stair::eval::config::BackboneSpec;
    let cases = [
        ("etth1.json", BackboneSpec::linear(), SplitProtocol::EttHourly),
        ("etth2.json", BackboneSpec::linear(), SplitProtocol::EttHourly),
        ("ettm1.json", BackboneSpec::mlp(2, 512), SplitProtocol::EttMinutely),
        ("ettm2.json", BackboneSpec::mlp(2, 512), SplitProtocol::EttMinutely),
        ("weather.json", BackboneSpec::mlp(2, 512), SplitProtocol::Ratio712),
        ("exchange.json", BackboneSpec::linear(), SplitProtocol::Ratio712),
        ("traffic.json", BackboneSpec::mlp(4, 512), SplitProtocol::Ratio712),
        ("solar.json", BackboneSpec::mlp(4, 512), SplitProtocol::Ratio712),
        ("electricity.json", BackboneSpec::mlp(4, 1024), SplitProtocol::Ratio712),
    ];
    for (file, backbone, split) in cases {
        let r = ExperimentConfig::from_file(shipped(file)).unwrap().resolve().unwrap();
        assert_eq!(r.backbone, backbone, "{file}");
        assert_eq!(r.split, split, "{file}");
        assert_eq!(r.horizons, [96, 192, 336, 720]);
        assert_eq!(r.norm.alpha, 0.99);
        assert_eq!(r.seed, 2026);
    }
}

#[test]
fn shipped_synthetic_config_selects_residual_stage() {
    let cfg = ExperimentConfig::from_file(shipped("synthetic_coupled.json")).unwrap().resolve().unwrap();
    let report = run_experiment(&cfg, None).unwrap();
    let h = &report.horizons[0];
    assert_eq!(h.selected_stage, Some(3));
    assert!(h.stage(3).unwrap().val_mse < 0.9 * h.stage(2).unwrap().val_mse);
}
