use serde::{Deserialize, Serialize};

use crate::error::{Result, StairError};
use crate::real::Real;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Streams prediction/target batches and reports flat MSE and MAE over all
/// `N·H·C` entries.
#[derive(Debug, Default, Clone)]
pub struct MetricAccumulator {
    sq: f64,
    abs: f64,
    count: usize,
    bad_windows: Vec<usize>,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// `windows[b]` names batch row `b` in error reports.
    pub fn add<T: Real>(&mut self, preds: &Tensor3<T>, targets: &Tensor3<T>, windows: &[usize]) -> Result<()> {
        preds.same_shape(targets, "metrics")?;
        let per_window = preds.time * preds.channels;
        for b in 0..preds.batch {
            let range = b * per_window..(b + 1) * per_window;
            let mut finite = true;
            for (p, y) in preds.data[range.clone()].iter().zip(&targets.data[range]) {
                let (p, y) = (p.as_f64(), y.as_f64());
                if !p.is_finite() {
                    finite = false;
                    continue;
                }
                let d = p - y;
                self.sq += d * d;
                self.abs += d.abs();
            }
            if !finite {
                self.bad_windows.push(windows.get(b).copied().unwrap_or(b));
            }
            self.count += per_window;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<Metrics> {
        if !self.bad_windows.is_empty() {
            return Err(StairError::NonFinitePrediction { windows: self.bad_windows });
        }
        if self.count == 0 {
            return Err(StairError::Shape("no predictions to score".into()));
        }
        Ok(Metrics {
            mse: self.sq / self.count as f64,
            mae: self.abs / self.count as f64,
        })
    }
}

/// MSE and MAE of denormalized predictions against evaluation-space targets.
pub fn compute_metrics<T: Real>(preds: &Tensor3<T>, targets: &Tensor3<T>) -> Result<Metrics> {
    let mut acc = MetricAccumulator::new();
    let windows: Vec<usize> = (0..preds.batch).collect();
    acc.add(preds, targets, &windows)?;
    acc.finish()
}
