//! Benchmark loading, train-only standardization, protocol splits, sliding
//! windows and synthetic series.

mod csv_io;
mod scaler;
mod split;
mod synthetic;
mod window;

pub use csv_io::{load_csv, write_csv};
pub use scaler::{Scaler, SCALER_STD_FLOOR};
pub use split::{split, SplitProtocol, SplitSpec, Splits};
pub use synthetic::{gen_synthetic, SyntheticSpec};
pub use window::{batch_iter, BatchIter, WindowBatch, WindowSet};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StairError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Source {
    File(PathBuf),
    Synthetic,
}

/// A `len × channels` multivariate series, row-major (time-major).
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub values: Vec<f64>,
    pub len: usize,
    pub names: Vec<String>,
    pub source: Source,
}

impl RawSeries {
    pub fn new(values: Vec<f64>, names: Vec<String>, source: Source) -> Result<Self> {
        let channels = names.len();
        if channels == 0 {
            return Err(StairError::Shape("series needs at least one channel".into()));
        }
        if !values.len().is_multiple_of(channels) {
            return Err(StairError::Shape(format!(
                "{} values do not divide into {channels} channels",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(StairError::Shape(format!(
                "non-finite value at time {}, channel {}",
                pos / channels,
                pos % channels
            )));
        }
        Ok(Self {
            len: values.len() / channels,
            values,
            names,
            source,
        })
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    #[inline]
    pub fn at(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.channels() + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.at(t, c)).collect()
    }

    /// Rows `[start, end)` as a segment.
    pub fn segment(&self, start: usize, end: usize, prefix: usize) -> Segment {
        let c = self.channels();
        Segment {
            values: self.values[start * c..end * c].to_vec(),
            len: end - start,
            channels: c,
            prefix,
            offset: start,
        }
    }
}

/// A contiguous slice of a series used for one split.
///
/// `prefix` counts the leading rows borrowed from the preceding split as
/// look-back context; `offset` is the start row in the source series.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub values: Vec<f64>,
    pub len: usize,
    pub channels: usize,
    pub prefix: usize,
    pub offset: usize,
}

impl Segment {
    #[inline]
    pub fn at(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.channels + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.at(t, c)).collect()
    }
}
