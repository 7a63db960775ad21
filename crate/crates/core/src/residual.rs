//! Cross-variable low-rank residual adapter.
//!
//! Each channel's window is encoded to `d_h` features by a shared linear map,
//! channels are mixed by `M = U·Vᵀ` with its diagonal zeroed, and a shared
//! decoder maps the mixed features to a horizon-length correction. The
//! decoder starts at zero so the adapter initially contributes nothing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StairError};
use crate::param::{Linear, Param, ParamSet};
use crate::real::{gemm, Real};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualConfig {
    pub hidden: usize,
    pub rank: usize,
    pub scale: f64,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            rank: 32,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResidualParams<T> {
    pub channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub config: ResidualConfig,
    pub encoder: Linear<T>,
    /// `channels × rank`
    pub u: Param<T>,
    /// `channels × rank`
    pub v: Param<T>,
    pub decoder: Linear<T>,
    generation: u64,
}

impl<T: Real> PartialEq for ResidualParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.channels == other.channels
            && self.lookback == other.lookback
            && self.horizon == other.horizon
            && self.config == other.config
            && self.encoder == other.encoder
            && self.u == other.u
            && self.v == other.v
            && self.decoder == other.decoder
    }
}

#[derive(Debug, Clone)]
pub struct ResidualCache<T> {
    generation: u64,
    batch: usize,
    rows: Vec<T>,
    encoded: Vec<T>,
    mixed: Vec<T>,
    mixing: Vec<T>,
}

static GENERATION: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
}

impl<T: Real> ResidualParams<T> {
    pub fn init(
        channels: usize,
        lookback: usize,
        horizon: usize,
        config: ResidualConfig,
        seed: u64,
    ) -> Result<Self> {
        if channels < 2 {
            return Err(StairError::Config(
                "cross-variable residual needs at least two channels".into(),
            ));
        }
        if config.hidden == 0 || config.rank == 0 {
            return Err(StairError::Config("residual hidden and rank must be ≥ 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Linear::init("residual.encoder", lookback, config.hidden, &mut rng);
        let bound = 1.0 / (config.rank as f64).sqrt();
        let u = Param::uniform("residual.u", vec![channels, config.rank], bound, &mut rng);
        let v = Param::uniform("residual.v", vec![channels, config.rank], bound, &mut rng);
        let decoder = Linear::zeros("residual.decoder", config.hidden, horizon);
        Ok(Self {
            channels,
            lookback,
            horizon,
            config,
            encoder,
            u,
            v,
            decoder,
            generation: next_generation(),
        })
    }

    /// Rebuilds from stored tensors (checkpoint loading).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        channels: usize,
        lookback: usize,
        horizon: usize,
        config: ResidualConfig,
        encoder: Linear<T>,
        u: Param<T>,
        v: Param<T>,
        decoder: Linear<T>,
    ) -> Result<Self> {
        let ok = encoder.fan_in() == lookback
            && encoder.fan_out() == config.hidden
            && u.shape == [channels, config.rank]
            && v.shape == [channels, config.rank]
            && decoder.fan_in() == config.hidden
            && decoder.fan_out() == horizon;
        if !ok {
            return Err(StairError::Shape("residual tensors disagree with their config".into()));
        }
        Ok(Self {
            channels,
            lookback,
            horizon,
            config,
            encoder,
            u,
            v,
            decoder,
            generation: next_generation(),
        })
    }

    /// `M = U·Vᵀ` with the diagonal set to zero, `channels × channels`.
    pub fn mixing_matrix(&self) -> Vec<T> {
        let (c, r) = (self.channels, self.config.rank);
        let mut m = vec![T::zero(); c * c];
        gemm::a_bt(c, r, c, &self.u.value, &self.v.value, &mut m, false);
        for i in 0..c {
            m[i * c + i] = T::zero();
        }
        m
    }

    fn check(&self, x: &Tensor3<T>) -> Result<()> {
        if x.channels != self.channels || x.time != self.lookback {
            return Err(StairError::Shape(format!(
                "residual expects ?×{}×{}, got {:?}",
                self.lookback,
                self.channels,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor3<T>) -> Result<(Tensor3<T>, ResidualCache<T>)> {
        self.check(x)?;
        let (b_n, _, c_n) = x.shape();
        let d = self.config.hidden;
        let rows = x.to_channel_rows();
        let encoded = self.encoder.forward(&rows, c_n * b_n);
        let mixing = self.mixing_matrix();
        let mut mixed = vec![T::zero(); c_n * b_n * d];
        gemm::a_b(c_n, c_n, b_n * d, &mixing, &encoded, &mut mixed, false);
        let mut out = self.decoder.forward(&mixed, c_n * b_n);
        let s = T::from_f64c(self.config.scale);
        out.iter_mut().for_each(|v| *v *= s);
        let r = Tensor3::from_channel_rows(b_n, self.horizon, c_n, &out);
        Ok((
            r,
            ResidualCache {
                generation: self.generation,
                batch: b_n,
                rows,
                encoded,
                mixed,
                mixing,
            },
        ))
    }

    /// Accumulates gradients of encoder, U, V and decoder. The zeroed
    /// diagonal of `M` is a constant, so no gradient reaches those entries.
    pub fn backward(&mut self, cache: &ResidualCache<T>, grad_out: &Tensor3<T>) -> Result<()> {
        if cache.generation != self.generation {
            return Err(StairError::StaleCache("residual parameters changed since forward".into()));
        }
        if grad_out.shape() != (cache.batch, self.horizon, self.channels) {
            return Err(StairError::StaleCache(format!(
                "gradient shape {:?} does not match cached forward",
                grad_out.shape()
            )));
        }
        let (b_n, _, c_n) = grad_out.shape();
        let (d, r) = (self.config.hidden, self.config.rank);
        let s = T::from_f64c(self.config.scale);
        let mut g = grad_out.to_channel_rows();
        g.iter_mut().for_each(|v| *v *= s);

        let d_mixed = self
            .decoder
            .backward(&cache.mixed, &g, c_n * b_n, true)
            .expect("dx requested");

        let mut d_m = vec![T::zero(); c_n * c_n];
        gemm::a_bt(c_n, b_n * d, c_n, &d_mixed, &cache.encoded, &mut d_m, false);
        for i in 0..c_n {
            d_m[i * c_n + i] = T::zero();
        }
        let mut d_enc = vec![T::zero(); c_n * b_n * d];
        gemm::at_b(c_n, c_n, b_n * d, &cache.mixing, &d_mixed, &mut d_enc, false);

        gemm::a_b(c_n, c_n, r, &d_m, &self.v.value, &mut self.u.grad, true);
        gemm::at_b(c_n, c_n, r, &d_m, &self.u.value, &mut self.v.grad, true);
        self.encoder.backward(&cache.rows, &d_enc, c_n * b_n, false);
        Ok(())
    }
}

impl<T: Real> ParamSet<T> for ResidualParams<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![
            &self.encoder.weight,
            &self.encoder.bias,
            &self.u,
            &self.v,
            &self.decoder.weight,
            &self.decoder.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![
            &mut self.encoder.weight,
            &mut self.encoder.bias,
            &mut self.u,
            &mut self.v,
            &mut self.decoder.weight,
            &mut self.decoder.bias,
        ]
    }

    fn mark_updated(&mut self) {
        self.generation = next_generation();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(b: usize, l: usize, c: usize, seed: u64) -> Tensor3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_vec(b, l, c, (0..b * l * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    fn randomize_decoder(p: &mut ResidualParams<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in p.decoder.weight.value.iter_mut().chain(p.decoder.bias.value.iter_mut()) {
            *v = rng.gen_range(-0.5..0.5);
        }
    }

    #[test]
    fn zero_output_at_init() {
        let p = ResidualParams::<f64>::init(4, 8, 5, ResidualConfig::default(), 1).unwrap();
        let (r, _) = p.forward(&random_input(3, 8, 4, 2)).unwrap();
        assert!(r.data.iter().all(|v| *v == 0.0));
        assert_eq!((r.batch, r.time, r.channels), (3, 5, 4));
    }

    #[test]
    fn parameter_count_is_linear_in_channels() {
        let p = ResidualParams::<f32>::init(7, 96, 720, ResidualConfig::default(), 1).unwrap();
        assert_eq!(p.num_params(), 96 * 32 + 32 + 2 * 7 * 32 + 32 * 720 + 720);
        let q = ResidualParams::<f32>::init(14, 96, 720, ResidualConfig::default(), 1).unwrap();
        assert_eq!(q.num_params() - p.num_params(), 2 * 7 * 32);
    }

    #[test]
    fn seeded_init() {
        let a = ResidualParams::<f64>::init(3, 8, 4, ResidualConfig::default(), 5).unwrap();
        let b = ResidualParams::<f64>::init(3, 8, 4, ResidualConfig::default(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn needs_two_channels() {
        assert!(ResidualParams::<f64>::init(1, 8, 4, ResidualConfig::default(), 0).is_err());
    }

    #[test]
    fn own_channel_does_not_affect_own_residual() {
        let mut p = ResidualParams::<f64>::init(3, 6, 4, ResidualConfig { hidden: 5, rank: 2, scale: 1.0 }, 3).unwrap();
        randomize_decoder(&mut p, 4);
        let x = random_input(2, 6, 3, 1);
        let (r0, _) = p.forward(&x).unwrap();
        let mut x2 = x.clone();
        for b in 0..2 {
            for t in 0..6 {
                x2.set(b, t, 1, x.get(b, t, 1) + 3.0 * (t as f64 - 2.5));
            }
        }
        let (r1, _) = p.forward(&x2).unwrap();
        let mut changed_other = false;
        for b in 0..2 {
            for t in 0..4 {
                assert_eq!(r0.get(b, t, 1), r1.get(b, t, 1));
                changed_other |= r0.get(b, t, 0) != r1.get(b, t, 0);
            }
        }
        assert!(changed_other);
    }

    #[test]
    fn two_channel_swap() {
        // Identity encoder/decoder with M = [[0,1],[1,0]]: each channel's
        // residual is the other channel's window.
        let cfg = ResidualConfig { hidden: 3, rank: 1, scale: 1.0 };
        let mut p = ResidualParams::<f64>::init(2, 3, 3, cfg, 0).unwrap();
        let eye = |lin: &mut Linear<f64>| {
            for r in 0..3 {
                for c in 0..3 {
                    lin.weight.value[r * 3 + c] = if r == c { 1.0 } else { 0.0 };
                }
            }
            lin.bias.value.iter_mut().for_each(|v| *v = 0.0);
        };
        eye(&mut p.encoder);
        eye(&mut p.decoder);
        // U·Vᵀ = [[1,1],[1,1]]; the diagonal is removed in use.
        p.u.value = vec![1.0, 1.0];
        p.v.value = vec![1.0, 1.0];
        assert_eq!(p.mixing_matrix(), vec![0.0, 1.0, 1.0, 0.0]);
        let x = Tensor3::from_vec(1, 3, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
        let (r, _) = p.forward(&x).unwrap();
        assert_eq!(r.data, vec![10.0, 1.0, 20.0, 2.0, 30.0, 3.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut p = ResidualParams::<f64>::init(3, 6, 4, ResidualConfig { hidden: 3, rank: 2, scale: 1.0 }, 3).unwrap();
        randomize_decoder(&mut p, 1);
        let (r, cache) = p.forward(&random_input(2, 6, 3, 1)).unwrap();
        p.backward(&cache, &Tensor3::zeros(r.batch, r.time, r.channels)).unwrap();
        assert!(p.params().iter().all(|q| q.grad.iter().all(|g| *g == 0.0)));
    }

    #[test]
    fn rank_is_bounded() {
        let p = ResidualParams::<f64>::init(6, 4, 2, ResidualConfig { hidden: 2, rank: 2, scale: 1.0 }, 8).unwrap();
        // U·Vᵀ has rank ≤ 2 before diagonal removal.
        let (c, r) = (6, 2);
        let mut full = vec![0.0; c * c];
        gemm::a_bt(c, r, c, &p.u.value, &p.v.value, &mut full, false);
        assert!(numerical_rank(&full, c, 1e-6) <= 2);
    }

    fn numerical_rank(m: &[f64], n: usize, tol: f64) -> usize {
        let mut a = m.to_vec();
        let mut rank = 0;
        let mut row = 0;
        for col in 0..n {
            let pivot = (row..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()));
            let Some(p) = pivot else { break };
            if a[p * n + col].abs() <= tol {
                continue;
            }
            for k in 0..n {
                a.swap(row * n + k, p * n + k);
            }
            for i in row + 1..n {
                let f = a[i * n + col] / a[row * n + col];
                for k in 0..n {
                    a[i * n + k] -= f * a[row * n + k];
                }
            }
            rank += 1;
            row += 1;
        }
        rank
    }
}
