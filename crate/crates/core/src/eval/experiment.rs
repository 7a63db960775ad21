//! Runs the three stages for every configured horizon and records metrics,
//! checkpoints and manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::ParamBank;
use crate::checkpoint::{save_predictions, Checkpoint};
use crate::dataio::RawSeries;
use crate::error::{Result, StairError};
use crate::eval::config::{Precision, ResolvedConfig, STANDARD_HORIZONS};
use crate::eval::metrics::Metrics;
use crate::real::Real;
use crate::residual::ResidualParams;
use crate::seed::horizon_seed;
use crate::train::{
    evaluate, predict_all, run_stage1, run_stage2, run_stage3, select_stage, PreparedData, StageModel,
    StageReport,
};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILES: [&str; 3] = ["stage1.ckpt", "stage2.ckpt", "stage3.ckpt"];

/// One row of the stage table: test metrics of the stage's best checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: u8,
    pub mse: f64,
    pub mae: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub best_epoch: usize,
}

impl From<&StageReport> for StageSummary {
    fn from(r: &StageReport) -> Self {
        Self {
            stage: r.stage,
            mse: r.test.mse,
            mae: r.test.mae,
            val_mse: r.best_val.mse,
            val_mae: r.best_val.mae,
            best_epoch: r.best_epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonResult {
    pub horizon: usize,
    pub seed: u64,
    pub stages: Vec<StageSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_stage: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl HorizonResult {
    pub fn stage(&self, stage: u8) -> Option<&StageSummary> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn selected(&self) -> Option<&StageSummary> {
        self.selected_stage.and_then(|s| self.stage(s))
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageAverage {
    pub stage: u8,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub stages: Vec<StageAverage>,
    pub selected: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub backbone: String,
    pub norm: String,
    pub horizons: Vec<HorizonResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub averages: Option<Averages>,
}

impl ExperimentReport {
    pub fn new(dataset: String, backbone: String, norm: String, mut horizons: Vec<HorizonResult>) -> Self {
        horizons.sort_by_key(|h| h.horizon);
        let averages = averages(&horizons);
        Self {
            dataset,
            backbone,
            norm,
            horizons,
            averages,
        }
    }

    pub fn horizon(&self, h: usize) -> Option<&HorizonResult> {
        self.horizons.iter().find(|r| r.horizon == h)
    }
}

/// Means over the four standard horizons, only when all four succeeded.
fn averages(horizons: &[HorizonResult]) -> Option<Averages> {
    let rows: Vec<&HorizonResult> = STANDARD_HORIZONS
        .iter()
        .map(|h| horizons.iter().find(|r| r.horizon == *h && r.is_ok()))
        .collect::<Option<_>>()?;
    let n = rows.len() as f64;
    let stages = (1..=3u8)
        .map(|s| {
            let picked: Option<Vec<&StageSummary>> = rows.iter().map(|r| r.stage(s)).collect();
            picked.map(|p| StageAverage {
                stage: s,
                mse: p.iter().map(|x| x.mse).sum::<f64>() / n,
                mae: p.iter().map(|x| x.mae).sum::<f64>() / n,
            })
        })
        .collect::<Option<Vec<_>>>()?;
    let selected: Vec<&StageSummary> = rows.iter().map(|r| r.selected()).collect::<Option<_>>()?;
    Some(Averages {
        stages,
        selected: Metrics {
            mse: selected.iter().map(|x| x.mse).sum::<f64>() / n,
            mae: selected.iter().map(|x| x.mae).sum::<f64>() / n,
        },
    })
}

/// Per-horizon run record written next to the checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ResolvedConfig,
    pub config_hash: String,
    pub seed: u64,
    pub horizon: usize,
    pub horizon_seed: u64,
    pub stages: Vec<StageReport>,
    pub selected_stage: u8,
    pub checkpoints: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<String>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| StairError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn horizon_result(&self) -> HorizonResult {
        HorizonResult {
            horizon: self.horizon,
            seed: self.horizon_seed,
            stages: self.stages.iter().map(StageSummary::from).collect(),
            selected_stage: Some(self.selected_stage),
            error: None,
        }
    }
}

/// Trained models and reports of one horizon.
#[derive(Debug, Clone)]
pub struct HorizonRun<T> {
    pub horizon: usize,
    pub seed: u64,
    pub data: PreparedData,
    pub stage1: ParamBank<T>,
    pub stage2: ParamBank<T>,
    pub stage3: ResidualParams<T>,
    pub reports: Vec<StageReport>,
    pub seconds: [f64; 3],
}

impl<T: Real> HorizonRun<T> {
    pub fn selected_stage(&self) -> u8 {
        select_stage(&self.reports).map(|r| r.stage).unwrap_or(1)
    }

    pub fn model(&self, stage: u8) -> StageModel<'_, T> {
        match stage {
            1 => StageModel::Backbone(&self.stage1),
            2 => StageModel::Backbone(&self.stage2),
            _ => StageModel::Composite(&self.stage2, &self.stage3),
        }
    }

    pub fn checkpoint(&self, stage: u8) -> Checkpoint<T> {
        match stage {
            1 => Checkpoint { backbone: self.stage1.clone(), residual: None },
            2 => Checkpoint { backbone: self.stage2.clone(), residual: None },
            _ => Checkpoint { backbone: self.stage2.clone(), residual: Some(self.stage3.clone()) },
        }
    }

    pub fn result(&self) -> HorizonResult {
        HorizonResult {
            horizon: self.horizon,
            seed: self.seed,
            stages: self.reports.iter().map(StageSummary::from).collect(),
            selected_stage: Some(self.selected_stage()),
            error: None,
        }
    }
}

/// Stage 1 → 2 → 3 for one horizon.
pub fn run_horizon<T: Real>(cfg: &ResolvedConfig, series: &RawSeries, horizon: usize) -> Result<HorizonRun<T>> {
    let seed = horizon_seed(cfg.seed, horizon);
    let data = PreparedData::new(series, cfg.split, cfg.lookback, horizon)?;
    let settings = cfg.train_settings(horizon);
    let s1 = run_stage1::<T>(&data, &settings, seed)?;
    let s2 = run_stage2(&s1.model, &data, &settings, seed)?;
    let s3 = run_stage3(&s2.model, &data, &settings, seed)?;
    log::info!(
        "{} H={horizon}: test mse stage1 {:.4} stage2 {:.4} stage3 {:.4}",
        cfg.name,
        s1.report.test.mse,
        s2.report.test.mse,
        s3.report.test.mse
    );
    Ok(HorizonRun {
        horizon,
        seed,
        reports: vec![s1.report, s2.report, s3.report],
        seconds: [s1.seconds, s2.seconds, s3.seconds],
        stage1: s1.model,
        stage2: s2.model,
        stage3: s3.model,
        data,
    })
}

pub fn horizon_dir(out: &Path, cfg: &ResolvedConfig, horizon: usize) -> PathBuf {
    out.join(&cfg.name).join(horizon.to_string())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| StairError::io(path, e))
}

fn write_horizon<T: Real>(run: &HorizonRun<T>, cfg: &ResolvedConfig, out: &Path) -> Result<()> {
    let dir = horizon_dir(out, cfg, run.horizon);
    fs::create_dir_all(&dir).map_err(|e| StairError::io(&dir, e))?;
    for stage in 1..=3u8 {
        run.checkpoint(stage).save(dir.join(CHECKPOINT_FILES[stage as usize - 1]))?;
    }
    let mut predictions = Vec::new();
    if cfg.save_predictions {
        for stage in 1..=3u8 {
            let name = format!("predictions_stage{stage}.bin");
            let (preds, _) = predict_all(run.model(stage), &run.data.test, cfg.norm, cfg.batch_size)?;
            save_predictions(dir.join(&name), &preds)?;
            predictions.push(name);
        }
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        config: cfg.clone(),
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        horizon: run.horizon,
        horizon_seed: run.seed,
        stages: run.reports.clone(),
        selected_stage: run.selected_stage(),
        checkpoints: CHECKPOINT_FILES.iter().map(|s| s.to_string()).collect(),
        predictions,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    let timings = serde_json::json!({
        "stage1_seconds": run.seconds[0],
        "stage2_seconds": run.seconds[1],
        "stage3_seconds": run.seconds[2],
    });
    write_json(&dir.join("timings.json"), &timings)
}

fn run_horizon_in<T: Real>(cfg: &ResolvedConfig, series: &RawSeries, h: usize, out: Option<&Path>) -> Result<HorizonResult> {
    let run = run_horizon::<T>(cfg, series, h)?;
    if let Some(out) = out {
        write_horizon(&run, cfg, out)?;
    }
    Ok(run.result())
}

/// Every configured horizon; a failing horizon is recorded and the rest
/// still run. With `out` set, checkpoints, manifests and reports are
/// written under `<out>/<dataset>/<horizon>/`.
pub fn run_experiment(cfg: &ResolvedConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    let series = cfg.load_series()?;
    let mut results = Vec::new();
    for &h in &cfg.horizons {
        let outcome = match cfg.precision {
            Precision::F32 => run_horizon_in::<f32>(cfg, &series, h, out),
            Precision::F64 => run_horizon_in::<f64>(cfg, &series, h, out),
        };
        results.push(outcome.unwrap_or_else(|e| {
            log::error!("{} H={h} failed: {e}", cfg.name);
            HorizonResult {
                horizon: h,
                seed: horizon_seed(cfg.seed, h),
                stages: vec![],
                selected_stage: None,
                error: Some(e.to_string()),
            }
        }));
    }
    let report = ExperimentReport::new(cfg.name.clone(), cfg.backbone.label(), cfg.norm.label(), results);
    if let Some(out) = out {
        let dir = out.join(&cfg.name);
        fs::create_dir_all(&dir).map_err(|e| StairError::io(&dir, e))?;
        crate::eval::report::emit_all(&report, &dir)?;
        for h in &report.horizons {
            if h.is_ok() {
                let single = ExperimentReport::new(report.dataset.clone(), report.backbone.clone(), report.norm.clone(), vec![h.clone()]);
                crate::eval::report::emit_all(&single, &dir.join(h.horizon.to_string()))?;
            }
        }
    }
    Ok(report)
}

/// Metrics of each stage recomputed from a manifest's checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reevaluation {
    pub stage: u8,
    pub val: Metrics,
    pub test: Metrics,
}

pub fn reevaluate(manifest_path: &Path) -> Result<Vec<Reevaluation>> {
    let manifest = Manifest::load(manifest_path)?;
    match manifest.config.precision {
        Precision::F32 => reevaluate_as::<f32>(&manifest, manifest_path),
        Precision::F64 => reevaluate_as::<f64>(&manifest, manifest_path),
    }
}

fn reevaluate_as<T: Real>(manifest: &Manifest, manifest_path: &Path) -> Result<Vec<Reevaluation>> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let cfg = &manifest.config;
    let series = cfg.load_series()?;
    let data = PreparedData::new(&series, cfg.split, cfg.lookback, manifest.horizon)?;
    let mut out = Vec::new();
    for (i, file) in manifest.checkpoints.iter().enumerate() {
        let ck = Checkpoint::<T>::load(dir.join(file))?;
        let model = match &ck.residual {
            Some(r) => StageModel::Composite(&ck.backbone, r),
            None => StageModel::Backbone(&ck.backbone),
        };
        out.push(Reevaluation {
            stage: i as u8 + 1,
            val: evaluate(model, &data.val, cfg.norm, cfg.batch_size)?,
            test: evaluate(model, &data.test, cfg.norm, cfg.batch_size)?,
        });
    }
    Ok(out)
}

/// Rebuilds an experiment report from one manifest or from every
/// `<horizon>/manifest.json` under a dataset directory.
pub fn report_from_manifests(path: &Path) -> Result<ExperimentReport> {
    let mut manifests = Vec::new();
    if path.is_dir() {
        let entries = fs::read_dir(path).map_err(|e| StairError::io(path, e))?;
        let mut dirs: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        dirs.sort();
        for d in dirs {
            let m = d.join(MANIFEST_FILE);
            if m.is_file() {
                manifests.push(Manifest::load(&m)?);
            }
        }
    } else {
        manifests.push(Manifest::load(path)?);
    }
    let first = manifests
        .first()
        .ok_or_else(|| StairError::Config(format!("no manifests found under {}", path.display())))?;
    let (name, backbone, norm) = (
        first.config.name.clone(),
        first.config.backbone.label(),
        first.config.norm.label(),
    );
    let horizons = manifests.iter().map(Manifest::horizon_result).collect();
    Ok(ExperimentReport::new(name, backbone, norm, horizons))
}
