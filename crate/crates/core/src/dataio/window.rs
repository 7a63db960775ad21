use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::Segment;
use crate::error::{Result, StairError};
use crate::real::Real;
use crate::tensor::Tensor3;

/// All `(input, target)` windows of one segment. Immutable once built.
#[derive(Debug, Clone)]
pub struct WindowSet {
    segment: Arc<Segment>,
    pub lookback: usize,
    pub horizon: usize,
}

impl WindowSet {
    pub fn new(segment: Segment, lookback: usize, horizon: usize) -> Result<Self> {
        if lookback == 0 || horizon == 0 {
            return Err(StairError::Config("look-back and horizon must be positive".into()));
        }
        if segment.len < lookback + horizon {
            return Err(StairError::TooShort(format!(
                "segment of {} rows cannot hold a {lookback}+{horizon} window",
                segment.len
            )));
        }
        Ok(Self {
            segment: Arc::new(segment),
            lookback,
            horizon,
        })
    }

    pub fn len(&self) -> usize {
        self.segment.len - self.lookback - self.horizon + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.segment.channels
    }

    pub fn segment(&self) -> &Segment {
        &self.segment
    }

    /// Gathers the windows starting at `starts` into a batch.
    pub fn gather<T: Real>(&self, starts: &[usize]) -> WindowBatch<T> {
        let (l, h, c) = (self.lookback, self.horizon, self.channels());
        let b = starts.len();
        let mut inputs = Tensor3::zeros(b, l, c);
        let mut targets = Tensor3::zeros(b, h, c);
        for (i, &s) in starts.iter().enumerate() {
            let src = &self.segment.values;
            let dst = &mut inputs.data[i * l * c..(i + 1) * l * c];
            for (d, v) in dst.iter_mut().zip(&src[s * c..(s + l) * c]) {
                *d = T::from_f64c(*v);
            }
            let dst = &mut targets.data[i * h * c..(i + 1) * h * c];
            for (d, v) in dst.iter_mut().zip(&src[(s + l) * c..(s + l + h) * c]) {
                *d = T::from_f64c(*v);
            }
        }
        WindowBatch {
            inputs,
            targets,
            indices: starts.to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WindowBatch<T> {
    pub inputs: Tensor3<T>,
    pub targets: Tensor3<T>,
    pub indices: Vec<usize>,
}

/// One pass over a [`WindowSet`] in batches of `batch_size`.
pub struct BatchIter<'a, T> {
    windows: &'a WindowSet,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    _marker: std::marker::PhantomData<T>,
}

/// Every window exactly once; ascending start order, or a permutation that
/// depends only on `seed` when `shuffle` is set.
pub fn batch_iter<T: Real>(
    windows: &WindowSet,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> BatchIter<'_, T> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..windows.len()).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    BatchIter {
        windows,
        order,
        batch_size,
        pos: 0,
        _marker: std::marker::PhantomData,
    }
}

impl<T: Real> BatchIter<'_, T> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl<T: Real> Iterator for BatchIter<'_, T> {
    type Item = WindowBatch<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.windows.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}
