use serde::{Deserialize, Serialize};

use crate::error::{Result, StairError};
use crate::real::Real;

/// Dense `batch × time × channel` array, row-major with channel fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3<T> {
    pub batch: usize,
    pub time: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(batch: usize, time: usize, channels: usize) -> Self {
        Self {
            batch,
            time,
            channels,
            data: vec![T::zero(); batch * time * channels],
        }
    }

    pub fn from_vec(batch: usize, time: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * time * channels {
            return Err(StairError::Shape(format!(
                "buffer of {} values cannot hold {batch}×{time}×{channels}",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            time,
            channels,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, b: usize, t: usize, c: usize) -> usize {
        (b * self.time + t) * self.channels + c
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize, c: usize) -> T {
        self.data[self.idx(b, t, c)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, t: usize, c: usize, v: T) {
        let i = self.idx(b, t, c);
        self.data[i] = v;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.time, self.channels)
    }

    pub fn same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(StairError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Channel-major rows: block `c` holds `batch` rows of length `time`.
    pub fn to_channel_rows(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.data.len()];
        for c in 0..self.channels {
            for b in 0..self.batch {
                let row = (c * self.batch + b) * self.time;
                for t in 0..self.time {
                    out[row + t] = self.get(b, t, c);
                }
            }
        }
        out
    }

    /// Inverse of [`Tensor3::to_channel_rows`].
    pub fn from_channel_rows(batch: usize, time: usize, channels: usize, rows: &[T]) -> Self {
        let mut out = Self::zeros(batch, time, channels);
        for c in 0..channels {
            for b in 0..batch {
                let row = (c * batch + b) * time;
                for t in 0..time {
                    out.set(b, t, c, rows[row + t]);
                }
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Tensor3<U> {
        Tensor3 {
            batch: self.batch,
            time: self.time,
            channels: self.channels,
            data: crate::real::cast_slice(&self.data),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}
