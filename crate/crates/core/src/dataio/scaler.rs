use serde::{Deserialize, Serialize};

use crate::dataio::Segment;
use crate::error::{Result, StairError};

pub const SCALER_STD_FLOOR: f64 = 1e-8;

/// Per-variable standardization fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Population mean and std per column; std is floored at
    /// [`SCALER_STD_FLOOR`] with a warning for (near-)constant columns.
    pub fn fit(train: &Segment) -> Result<Self> {
        if train.len == 0 {
            return Err(StairError::TooShort("cannot fit scaler on an empty segment".into()));
        }
        let n = train.len as f64;
        let mut mean = vec![0.0; train.channels];
        let mut std = vec![0.0; train.channels];
        for c in 0..train.channels {
            let m = (0..train.len).map(|t| train.at(t, c)).sum::<f64>() / n;
            let var = (0..train.len).map(|t| (train.at(t, c) - m).powi(2)).sum::<f64>() / n;
            let mut s = var.sqrt();
            if s < SCALER_STD_FLOOR {
                log::warn!("column {c} is constant on the training split; std floored at {SCALER_STD_FLOOR}");
                s = SCALER_STD_FLOOR;
            }
            mean[c] = m;
            std[c] = s;
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, seg: &Segment) -> Result<Segment> {
        self.check(seg)?;
        let mut out = seg.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            let c = i % seg.channels;
            *v = (*v - self.mean[c]) / self.std[c];
        }
        Ok(out)
    }

    pub fn invert(&self, seg: &Segment) -> Result<Segment> {
        self.check(seg)?;
        let mut out = seg.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            let c = i % seg.channels;
            *v = *v * self.std[c] + self.mean[c];
        }
        Ok(out)
    }

    fn check(&self, seg: &Segment) -> Result<()> {
        if seg.channels != self.mean.len() {
            return Err(StairError::Shape(format!(
                "scaler fitted on {} channels, segment has {}",
                self.mean.len(),
                seg.channels
            )));
        }
        Ok(())
    }
}
