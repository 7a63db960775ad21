//! Normalization sweep, capacity comparison and the capacity grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::config::{BackboneSpec, Precision, ResolvedConfig};
use crate::eval::experiment::{run_experiment, ExperimentReport};
use crate::norm::{NormConfig, NormMode};
use crate::seed::horizon_seed;
use crate::train::{run_stage1, PreparedData};

pub const GRID_LAYERS: [usize; 4] = [1, 2, 3, 4];
pub const GRID_HIDDEN: [usize; 5] = [64, 128, 256, 512, 1024];

/// The four normalization columns: none, α=0.95, α=0.99, RevIN (α=1).
pub fn norm_sweep() -> Vec<(String, NormConfig)> {
    let full = |alpha| NormConfig { mode: NormMode::Full, alpha };
    vec![
        ("none".into(), NormConfig::none()),
        ("alpha=0.95".into(), full(0.95)),
        ("alpha=0.99".into(), full(0.99)),
        ("revin".into(), full(1.0)),
    ]
}

fn sub_out(out: Option<&Path>, label: &str) -> Option<std::path::PathBuf> {
    out.map(|o| o.join(label))
}

pub fn ablate_norm(cfg: &ResolvedConfig, out: Option<&Path>) -> Result<Vec<(String, ExperimentReport)>> {
    norm_sweep()
        .into_iter()
        .map(|(label, norm)| {
            let c = ResolvedConfig { norm, ..cfg.clone() };
            let report = run_experiment(&c, sub_out(out, &label).as_deref())?;
            Ok((label, report))
        })
        .collect()
}

/// MLP capacity compared against the linear mapping: the configured
/// backbone when it is an MLP, else two hidden layers of 512.
pub fn mlp_counterpart(cfg: &ResolvedConfig) -> BackboneSpec {
    if cfg.backbone.layers > 1 {
        cfg.backbone
    } else {
        BackboneSpec::mlp(2, 512)
    }
}

pub fn capacity(cfg: &ResolvedConfig, out: Option<&Path>) -> Result<Vec<(String, ExperimentReport)>> {
    [BackboneSpec::linear(), mlp_counterpart(cfg)]
        .into_iter()
        .map(|backbone| {
            let label = backbone.label();
            let c = ResolvedConfig { backbone, ..cfg.clone() };
            let report = run_experiment(&c, sub_out(out, &label).as_deref())?;
            Ok((label, report))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub horizon: usize,
    pub layers: usize,
    pub hidden: usize,
    pub val_mse: f64,
}

/// Stage-1 validation MSE for every grid candidate (one linear candidate
/// stands in for `layers = 1`). Returns all points and the best per horizon.
pub fn capacity_grid(cfg: &ResolvedConfig) -> Result<(Vec<GridPoint>, Vec<GridPoint>)> {
    let series = cfg.load_series()?;
    let mut candidates = vec![BackboneSpec::linear()];
    for &layers in &GRID_LAYERS[1..] {
        for &hidden in &GRID_HIDDEN {
            candidates.push(BackboneSpec { dropout: cfg.backbone.dropout, ..BackboneSpec::mlp(layers, hidden) });
        }
    }
    let mut points = Vec::new();
    let mut best = Vec::new();
    for &h in &cfg.horizons {
        let data = PreparedData::new(&series, cfg.split, cfg.lookback, h)?;
        let seed = horizon_seed(cfg.seed, h);
        let mut best_h: Option<GridPoint> = None;
        for spec in &candidates {
            let c = ResolvedConfig { backbone: *spec, ..cfg.clone() };
            let settings = c.train_settings(h);
            let report = match cfg.precision {
                Precision::F32 => run_stage1::<f32>(&data, &settings, seed)?.report,
                Precision::F64 => run_stage1::<f64>(&data, &settings, seed)?.report,
            };
            let p = GridPoint {
                horizon: h,
                layers: spec.layers,
                hidden: spec.hidden,
                val_mse: report.best_val.mse,
            };
            log::info!("grid H={h} {}: val mse {:.5}", spec.label(), p.val_mse);
            if best_h.is_none_or(|b| p.val_mse < b.val_mse) {
                best_h = Some(p);
            }
            points.push(p);
        }
        best.extend(best_h);
    }
    Ok((points, best))
}
