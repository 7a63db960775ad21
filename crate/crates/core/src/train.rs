//! Three-stage training: shared mapping, per-channel fine-tuning from the
//! shared solution, then a cross-variable residual over the frozen backbone.
//!
//! Every stage evaluates its starting point as epoch 0, trains with early
//! stopping on validation MSE, and returns its best-validation state.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, ParamBank};
use crate::dataio::{batch_iter, split, RawSeries, Scaler, SplitProtocol, SplitSpec, WindowSet};
use crate::error::{Result, StairError};
use crate::eval::metrics::{MetricAccumulator, Metrics};
use crate::norm::{NormConfig, NormState};
use crate::optim::{adam_step, anchor_penalty, clip_global_norm, mse_loss, OptimConfig};
use crate::param::{Param, ParamSet};
use crate::real::Real;
use crate::residual::{ResidualConfig, ResidualParams};
use crate::seed::mix;
use crate::tensor::Tensor3;

/// Standardized windows for one (series, protocol, L, H) combination.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub scaler: Scaler,
}

impl PreparedData {
    pub fn new(series: &RawSeries, protocol: SplitProtocol, lookback: usize, horizon: usize) -> Result<Self> {
        let splits = split(series, SplitSpec { protocol, lookback })?;
        let scaler = Scaler::fit(&splits.train)?;
        Ok(Self {
            train: WindowSet::new(scaler.apply(&splits.train)?, lookback, horizon)?,
            val: WindowSet::new(scaler.apply(&splits.val)?, lookback, horizon)?,
            test: WindowSet::new(scaler.apply(&splits.test)?, lookback, horizon)?,
            scaler,
        })
    }

    pub fn channels(&self) -> usize {
        self.train.channels()
    }
}

fn default_epochs() -> usize {
    20
}

fn default_patience() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSettings {
    #[serde(flatten)]
    pub optim: OptimConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

impl StageSettings {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            optim: OptimConfig { lr, ..OptimConfig::default() },
            epochs: default_epochs(),
            patience: default_patience(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if self.patience == 0 {
            return Err(StairError::Config("patience must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Everything the stage trainers need besides data and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub backbone: BackboneConfig,
    pub norm: NormConfig,
    pub batch_size: usize,
    pub stage1: StageSettings,
    pub stage2: StageSettings,
    pub anchor: f64,
    pub stage3: StageSettings,
    pub residual: ResidualConfig,
}

impl TrainSettings {
    /// Default hyperparameters for a given backbone.
    pub fn defaults(backbone: BackboneConfig) -> Self {
        Self {
            backbone,
            norm: NormConfig::default(),
            batch_size: 64,
            stage1: StageSettings::with_lr(1e-3),
            stage2: StageSettings::with_lr(1e-5),
            anchor: 1e-4,
            stage3: StageSettings::with_lr(1e-5),
            residual: ResidualConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.norm.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.stage3.validate()?;
        if self.batch_size == 0 {
            return Err(StairError::Config("batch_size must be ≥ 1".into()));
        }
        if self.anchor.is_nan() || self.anchor < 0.0 {
            return Err(StairError::Config("anchor coefficient must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    /// Mean training loss of each epoch, starting at epoch 1.
    pub train_loss: Vec<f64>,
    /// Validation metrics; entry 0 is the stage's starting point.
    pub val: Vec<Metrics>,
    pub best_epoch: usize,
    pub best_val: Metrics,
    pub test: Metrics,
}

impl StageReport {
    pub fn initial_val(&self) -> Metrics {
        self.val[0]
    }
}

/// Trained state of one stage plus its wall-clock time.
#[derive(Debug, Clone)]
pub struct StageOutcome<M> {
    pub model: M,
    pub report: StageReport,
    pub seconds: f64,
}

/// A forecasting model as seen by evaluation.
#[derive(Debug, Clone, Copy)]
pub enum StageModel<'a, T> {
    Backbone(&'a ParamBank<T>),
    Composite(&'a ParamBank<T>, &'a ResidualParams<T>),
}

impl<T: Real> StageModel<'_, T> {
    /// Normalized-space forecast (backbone output plus residual, if any).
    pub fn predict_normalized(&self, normalized: &Tensor3<T>) -> Result<Tensor3<T>> {
        match self {
            StageModel::Backbone(bank) => bank.predict(normalized),
            StageModel::Composite(bank, residual) => {
                let mut y = bank.predict(normalized)?;
                let (r, _) = residual.forward(normalized)?;
                for (a, b) in y.data.iter_mut().zip(&r.data) {
                    *a += *b;
                }
                Ok(y)
            }
        }
    }

    /// Forecast restored to the evaluation space.
    pub fn predict(&self, inputs: &Tensor3<T>, norm: NormConfig) -> Result<Tensor3<T>> {
        let state = NormState::fit(inputs, norm);
        let y = self.predict_normalized(&state.normalize(inputs)?)?;
        state.denormalize(&y)
    }
}

/// Scores a model on every window of a split.
pub fn evaluate<T: Real>(model: StageModel<'_, T>, windows: &WindowSet, norm: NormConfig, batch_size: usize) -> Result<Metrics> {
    let mut acc = MetricAccumulator::new();
    for batch in batch_iter::<T>(windows, batch_size, false, 0) {
        let preds = model.predict(&batch.inputs, norm)?;
        acc.add(&preds, &batch.targets, &batch.indices)?;
    }
    acc.finish()
}

/// All denormalized predictions of a split, in window order.
pub fn predict_all<T: Real>(model: StageModel<'_, T>, windows: &WindowSet, norm: NormConfig, batch_size: usize) -> Result<(Tensor3<T>, Tensor3<T>)> {
    let (h, c) = (windows.horizon, windows.channels());
    let mut preds = Vec::with_capacity(windows.len() * h * c);
    let mut targets = Vec::with_capacity(windows.len() * h * c);
    for batch in batch_iter::<T>(windows, batch_size, false, 0) {
        preds.extend(model.predict(&batch.inputs, norm)?.data);
        targets.extend(batch.targets.data);
    }
    Ok((
        Tensor3::from_vec(windows.len(), h, c, preds)?,
        Tensor3::from_vec(windows.len(), h, c, targets)?,
    ))
}

/// Early-stopping bookkeeping shared by the three stages.
struct Tracker<M> {
    best: M,
    best_epoch: usize,
    best_val: Metrics,
    stale: usize,
    patience: usize,
    val: Vec<Metrics>,
    train_loss: Vec<f64>,
}

impl<M: Clone> Tracker<M> {
    fn new(initial: &M, val0: Metrics, patience: usize) -> Self {
        Self {
            best: initial.clone(),
            best_epoch: 0,
            best_val: val0,
            stale: 0,
            patience,
            val: vec![val0],
            train_loss: Vec::new(),
        }
    }

    /// Records an epoch; returns true when training should stop.
    fn record(&mut self, model: &M, train_loss: f64, val: Metrics) -> bool {
        let epoch = self.val.len();
        self.val.push(val);
        self.train_loss.push(train_loss);
        if val.mse < self.best_val.mse {
            self.best = model.clone();
            self.best_epoch = epoch;
            self.best_val = val;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    fn into_report(self, stage: u8, test: Metrics) -> (M, StageReport) {
        (
            self.best,
            StageReport {
                stage,
                train_loss: self.train_loss,
                val: self.val,
                best_epoch: self.best_epoch,
                best_val: self.best_val,
                test,
            },
        )
    }
}

fn step_params<T: Real>(mut params: Vec<&mut Param<T>>, optim: &OptimConfig, step: u64) -> Result<()> {
    if optim.clip_norm.is_finite() {
        clip_global_norm(&mut params, optim.clip_norm);
    }
    adam_step(&mut params, optim, step)
}

/// Trains a backbone bank (shared in stage 1, individual in stage 2).
fn train_bank<T: Real>(
    stage: u8,
    mut bank: ParamBank<T>,
    anchor: Option<(&crate::backbone::Mlp<T>, f64)>,
    data: &PreparedData,
    settings: &TrainSettings,
    stage_settings: &StageSettings,
    seed: u64,
) -> Result<StageOutcome<ParamBank<T>>> {
    let start = Instant::now();
    let norm = settings.norm;
    let bs = settings.batch_size;
    let val0 = evaluate(StageModel::Backbone(&bank), &data.val, norm, bs)?;
    let mut tracker = Tracker::new(&bank, val0, stage_settings.patience);
    let mut step = 0u64;
    for epoch in 1..=stage_settings.epochs {
        let epoch_seed = mix(seed, epoch as u64);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, batch) in batch_iter::<T>(&data.train, bs, true, epoch_seed).enumerate() {
            let state = NormState::fit(&batch.inputs, norm);
            let xn = state.normalize(&batch.inputs)?;
            let (yn, cache) = bank.forward(&xn, true, mix(epoch_seed, bi as u64))?;
            let pred = state.denormalize(&yn)?;
            let (mut loss, grad) = mse_loss(&pred, &batch.targets)?;
            let grad = state.denormalize_backward(&grad)?;
            bank.zero_grad();
            bank.backward(&cache, &grad)?;
            if let Some((anchor, lambda)) = anchor {
                loss += anchor_penalty(&mut bank, anchor, lambda)?;
            }
            step += 1;
            step_params(bank.params_mut(), &stage_settings.optim, step)?;
            bank.mark_updated();
            loss_sum += loss;
            batches += 1;
        }
        let val = evaluate(StageModel::Backbone(&bank), &data.val, norm, bs)?;
        log::debug!("stage {stage} epoch {epoch}: train {:.6} val mse {:.6}", loss_sum / batches as f64, val.mse);
        if tracker.record(&bank, loss_sum / batches.max(1) as f64, val) {
            break;
        }
    }
    let test = evaluate(StageModel::Backbone(&tracker.best), &data.test, norm, bs)?;
    let (model, report) = tracker.into_report(stage, test);
    Ok(StageOutcome {
        model,
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Stage 1: one temporal mapping shared by every channel.
pub fn run_stage1<T: Real>(data: &PreparedData, settings: &TrainSettings, seed: u64) -> Result<StageOutcome<ParamBank<T>>> {
    settings.validate()?;
    let bank = ParamBank::init_shared(settings.backbone, mix(seed, 0x51))?;
    train_bank(1, bank, None, data, settings, &settings.stage1, mix(seed, 1))
}

/// Stage 2: per-channel copies of the stage-1 mapping, fine-tuned jointly
/// with the anchor penalty towards the stage-1 parameters.
pub fn run_stage2<T: Real>(
    stage1: &ParamBank<T>,
    data: &PreparedData,
    settings: &TrainSettings,
    seed: u64,
) -> Result<StageOutcome<ParamBank<T>>> {
    settings.validate()?;
    let bank = stage1.clone_to_individual(data.channels())?;
    let anchor = stage1.sets[0].clone();
    train_bank(2, bank, Some((&anchor, settings.anchor)), data, settings, &settings.stage2, mix(seed, 2))
}

/// Stage 3: low-rank cross-variable residual over the frozen stage-2 bank.
pub fn run_stage3<T: Real>(
    stage2: &ParamBank<T>,
    data: &PreparedData,
    settings: &TrainSettings,
    seed: u64,
) -> Result<StageOutcome<ResidualParams<T>>> {
    settings.validate()?;
    let start = Instant::now();
    let norm = settings.norm;
    let bs = settings.batch_size;
    let cfg = &settings.backbone;
    let mut residual = ResidualParams::init(data.channels(), cfg.lookback, cfg.horizon, settings.residual, mix(seed, 0x53))?;
    let val0 = evaluate(StageModel::Composite(stage2, &residual), &data.val, norm, bs)?;
    let mut tracker = Tracker::new(&residual, val0, settings.stage3.patience);
    let stage_seed = mix(seed, 3);
    let mut step = 0u64;
    for epoch in 1..=settings.stage3.epochs {
        let epoch_seed = mix(stage_seed, epoch as u64);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in batch_iter::<T>(&data.train, bs, true, epoch_seed) {
            let state = NormState::fit(&batch.inputs, norm);
            let xn = state.normalize(&batch.inputs)?;
            let mut yn = stage2.predict(&xn)?;
            let (r, cache) = residual.forward(&xn)?;
            for (a, b) in yn.data.iter_mut().zip(&r.data) {
                *a += *b;
            }
            let pred = state.denormalize(&yn)?;
            let (loss, grad) = mse_loss(&pred, &batch.targets)?;
            let grad = state.denormalize_backward(&grad)?;
            residual.zero_grad();
            residual.backward(&cache, &grad)?;
            step += 1;
            step_params(residual.params_mut(), &settings.stage3.optim, step)?;
            residual.mark_updated();
            loss_sum += loss;
            batches += 1;
        }
        let val = evaluate(StageModel::Composite(stage2, &residual), &data.val, norm, bs)?;
        log::debug!("stage 3 epoch {epoch}: train {:.6} val mse {:.6}", loss_sum / batches as f64, val.mse);
        if tracker.record(&residual, loss_sum / batches.max(1) as f64, val) {
            break;
        }
    }
    let test = evaluate(StageModel::Composite(stage2, &tracker.best), &data.test, norm, bs)?;
    let (model, report) = tracker.into_report(3, test);
    Ok(StageOutcome {
        model,
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Lowest validation MSE wins; ties go to lower validation MAE, then to the
/// earlier stage.
pub fn select_stage(reports: &[StageReport]) -> Option<&StageReport> {
    reports.iter().min_by(|a, b| {
        a.best_val
            .mse
            .total_cmp(&b.best_val.mse)
            .then(a.best_val.mae.total_cmp(&b.best_val.mae))
            .then(a.stage.cmp(&b.stage))
    })
}
