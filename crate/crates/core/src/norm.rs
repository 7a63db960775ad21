//! Partial reversible instance normalization.
//!
//! Each input window is shifted by `α·μ` and divided by `σ^α`, where `μ` and
//! `σ` are that window's per-channel statistics. The same statistics restore
//! the forecast, so `α = 0` is the identity and `α = 1` is plain RevIN
//! without affine parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StairError};
use crate::real::Real;
use crate::tensor::Tensor3;

/// Floor applied to the per-window variance before the square root.
pub const NORM_VAR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Full,
    MeanOnly,
    StdOnly,
    None,
}

impl NormMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Self::Full),
            "mean_only" | "mean-only" => Some(Self::MeanOnly),
            "std_only" | "std-only" => Some(Self::StdOnly),
            "none" => Some(Self::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub mode: NormMode,
    pub alpha: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self {
            mode: NormMode::Full,
            alpha: 0.99,
        }
    }
}

impl NormConfig {
    pub fn none() -> Self {
        Self {
            mode: NormMode::None,
            alpha: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(StairError::Config(format!(
                "norm.alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Label used in ablation tables.
    pub fn label(&self) -> String {
        match self.mode {
            NormMode::None => "none".into(),
            NormMode::Full if self.alpha == 1.0 => "revin".into(),
            NormMode::Full => format!("alpha={}", self.alpha),
            NormMode::MeanOnly => format!("mean_only(alpha={})", self.alpha),
            NormMode::StdOnly => format!("std_only(alpha={})", self.alpha),
        }
    }
}

/// Per-instance, per-channel statistics of one batch of input windows.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState<T> {
    pub batch: usize,
    pub channels: usize,
    /// `batch × channels` window means.
    pub mu: Vec<T>,
    /// `batch × channels` window population std, variance-floored.
    pub sigma: Vec<T>,
    pub alpha: f64,
    pub mode: NormMode,
    /// Effective shift `α·μ` (zero unless the mode removes the mean).
    shift: Vec<T>,
    /// Effective divisor `σ^α` (one unless the mode removes the scale).
    scale: Vec<T>,
}

impl<T: Real> NormState<T> {
    pub fn fit(inputs: &Tensor3<T>, config: NormConfig) -> Self {
        let (b_n, l, c_n) = inputs.shape();
        assert!(l >= 1, "input window must be non-empty");
        let alpha = config.alpha;
        let mut mu = Vec::with_capacity(b_n * c_n);
        let mut sigma = Vec::with_capacity(b_n * c_n);
        let mut shift = Vec::with_capacity(b_n * c_n);
        let mut scale = Vec::with_capacity(b_n * c_n);
        let inactive = config.mode == NormMode::None || alpha == 0.0;
        for b in 0..b_n {
            for c in 0..c_n {
                let m = (0..l).map(|t| inputs.get(b, t, c).as_f64()).sum::<f64>() / l as f64;
                let var = (0..l)
                    .map(|t| (inputs.get(b, t, c).as_f64() - m).powi(2))
                    .sum::<f64>()
                    / l as f64;
                let s = var.max(NORM_VAR_FLOOR).sqrt();
                mu.push(T::from_f64c(m));
                sigma.push(T::from_f64c(s));
                let (sh, sc) = if inactive {
                    (0.0, 1.0)
                } else {
                    let sh = alpha * m;
                    let sc = (alpha * s.ln()).exp();
                    match config.mode {
                        NormMode::Full => (sh, sc),
                        NormMode::MeanOnly => (sh, 1.0),
                        NormMode::StdOnly => (0.0, sc),
                        NormMode::None => unreachable!(),
                    }
                };
                shift.push(T::from_f64c(sh));
                scale.push(T::from_f64c(sc));
            }
        }
        Self {
            batch: b_n,
            channels: c_n,
            mu,
            sigma,
            alpha,
            mode: config.mode,
            shift,
            scale,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mode == NormMode::None || self.alpha == 0.0
    }

    fn check(&self, x: &Tensor3<T>) -> Result<()> {
        if x.batch != self.batch || x.channels != self.channels {
            return Err(StairError::Shape(format!(
                "norm state is {}×{}, tensor is {:?}",
                self.batch,
                self.channels,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check(x)?;
        if self.is_identity() {
            return Ok(x.clone());
        }
        let mut out = x.clone();
        for b in 0..x.batch {
            for t in 0..x.time {
                for c in 0..x.channels {
                    let k = b * self.channels + c;
                    let i = out.idx(b, t, c);
                    out.data[i] = (out.data[i] - self.shift[k]) / self.scale[k];
                }
            }
        }
        Ok(out)
    }

    /// Restores a normalized forecast; the horizon may differ from the
    /// window length the statistics were fitted on.
    pub fn denormalize(&self, y: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check(y)?;
        if self.is_identity() {
            return Ok(y.clone());
        }
        let mut out = y.clone();
        for b in 0..y.batch {
            for t in 0..y.time {
                for c in 0..y.channels {
                    let k = b * self.channels + c;
                    let i = out.idx(b, t, c);
                    out.data[i] = out.data[i] * self.scale[k] + self.shift[k];
                }
            }
        }
        Ok(out)
    }

    /// Pulls a gradient with respect to the restored forecast back to the
    /// normalized forecast.
    pub fn denormalize_backward(&self, grad: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check(grad)?;
        if self.is_identity() {
            return Ok(grad.clone());
        }
        let mut out = grad.clone();
        for b in 0..grad.batch {
            for t in 0..grad.time {
                for c in 0..grad.channels {
                    let i = out.idx(b, t, c);
                    out.data[i] *= self.scale[b * self.channels + c];
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single(values: &[f64]) -> Tensor3<f64> {
        Tensor3::from_vec(1, values.len(), 1, values.to_vec()).unwrap()
    }

    fn cfg(mode: NormMode, alpha: f64) -> NormConfig {
        NormConfig { mode, alpha }
    }

    #[test]
    fn stats_of_simple_window() {
        let st = NormState::fit(&single(&[1.0, 2.0, 3.0]), cfg(NormMode::Full, 1.0));
        assert_abs_diff_eq!(st.mu[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(st.sigma[0], 0.816497, epsilon = 1e-6);
    }

    #[test]
    fn constant_window_uses_floor() {
        let st = NormState::fit(&single(&[5.0; 4]), cfg(NormMode::Full, 1.0));
        assert_eq!(st.mu[0], 5.0);
        assert_eq!(st.sigma[0], NORM_VAR_FLOOR.sqrt());
        let z = st.normalize(&single(&[5.0; 4])).unwrap();
        assert!(z.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn per_instance_stats() {
        let x = Tensor3::from_vec(2, 2, 1, vec![0.0, 2.0, 10.0, 30.0]).unwrap();
        let st = NormState::fit(&x, cfg(NormMode::Full, 1.0));
        assert_eq!(st.mu, vec![1.0, 20.0]);
        assert_abs_diff_eq!(st.sigma[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(st.sigma[1], 10.0, epsilon = 1e-12);
    }

    #[test]
    fn alpha_zero_is_identity() {
        let x = single(&[1.5, -2.0, 7.25]);
        for mode in [NormMode::Full, NormMode::MeanOnly, NormMode::StdOnly, NormMode::None] {
            let st = NormState::fit(&x, cfg(mode, 0.0));
            assert_eq!(st.normalize(&x).unwrap(), x);
            assert_eq!(st.denormalize(&x).unwrap(), x);
        }
        let st = NormState::fit(&x, cfg(NormMode::None, 0.7));
        assert_eq!(st.normalize(&x).unwrap(), x);
    }

    #[test]
    fn full_alpha_one_is_zscore() {
        let x = single(&[1.0, 2.0, 3.0]);
        let z = NormState::fit(&x, cfg(NormMode::Full, 1.0)).normalize(&x).unwrap();
        for (a, e) in z.data.iter().zip([-1.224745, 0.0, 1.224745]) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-6);
        }
    }

    #[test]
    fn partial_alpha() {
        let x = single(&[1.0, 2.0, 3.0]);
        let z = NormState::fit(&x, cfg(NormMode::Full, 0.5)).normalize(&x).unwrap();
        for (a, e) in z.data.iter().zip([0.0, 1.106682, 2.213364]) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-6);
        }
    }

    #[test]
    fn mean_and_std_only() {
        let x = single(&[1.0, 2.0, 3.0]);
        let m = NormState::fit(&x, cfg(NormMode::MeanOnly, 0.5)).normalize(&x).unwrap();
        assert_eq!(m.data, vec![0.0, 1.0, 2.0]);
        let s = NormState::fit(&x, cfg(NormMode::StdOnly, 1.0)).normalize(&x).unwrap();
        for (a, v) in s.data.iter().zip([1.0, 2.0, 3.0]) {
            assert_abs_diff_eq!(*a, v / 0.816496580927726, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_forecast_maps_to_mean() {
        let x = single(&[1.0, 2.0, 3.0]);
        let st = NormState::fit(&x, cfg(NormMode::Full, 1.0));
        let y = st.denormalize(&single(&[0.0; 3])).unwrap();
        for v in y.data {
            assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn stats_ignore_targets() {
        let x = single(&[4.0, 1.0, 9.0]);
        let a = NormState::fit(&x, NormConfig::default());
        let b = NormState::fit(&x, NormConfig::default());
        assert_eq!(a, b);
    }

    #[test]
    fn backward_scales_by_divisor() {
        let x = single(&[1.0, 2.0, 3.0]);
        let st = NormState::fit(&x, cfg(NormMode::Full, 1.0));
        let g = st.denormalize_backward(&single(&[1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(g.data[0], 0.816496580927726, epsilon = 1e-9);
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        assert!(cfg(NormMode::Full, 1.5).validate().is_err());
        assert!(cfg(NormMode::Full, -0.1).validate().is_err());
        assert!(NormConfig::default().validate().is_ok());
    }

    #[test]
    fn mode_names() {
        assert_eq!(serde_json::to_string(&NormMode::MeanOnly).unwrap(), "\"mean_only\"");
        assert_eq!(NormMode::parse("std_only"), Some(NormMode::StdOnly));
    }
}
