use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{RawSeries, Source};
use crate::error::{Result, StairError};

fn default_order() -> usize {
    4
}

/// Linear autoregressive generator with optional cross-channel coupling:
///
/// `x_c[t] = Σ_k a[c][k]·x_c[t-1-k] + κ·Σ_{j≠c} G[c][j]·x_j[t-1] + ε_c[t]`
///
/// Values before `t = 0` are zero and `x_c[0] = initial[c] + ε_c[0]`.
/// `G` defaults to the cyclic neighbour map `G[c][(c+1) mod C] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub length: usize,
    #[serde(default = "default_order")]
    pub order: usize,
    /// `channels × order` autoregressive coefficients.
    pub coefficients: Vec<Vec<f64>>,
    #[serde(default)]
    pub coupling: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    /// Steps generated and discarded before the returned series starts.
    #[serde(default)]
    pub burn_in: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// One AR rule shared by every channel, no coupling.
    pub fn shared_rule(channels: usize, length: usize, seed: u64) -> Self {
        let rule = vec![0.55, 0.25, -0.2, 0.1];
        Self {
            channels,
            lookback: 24,
            horizon: 8,
            length,
            order: 4,
            coefficients: vec![rule; channels],
            coupling: 0.0,
            coupling_matrix: None,
            noise_std: 1.0,
            initial: None,
            burn_in: 200,
            seed,
        }
    }

    /// Each channel gets its own damped oscillator (an AR(2) rule with a
    /// channel-specific period), no coupling.
    pub fn distinct_rules(channels: usize, length: usize, seed: u64) -> Self {
        const PERIODS: [f64; 6] = [5.0, 11.0, 3.0, 17.0, 7.0, 26.0];
        let radius: f64 = 0.97;
        let coefficients = (0..channels)
            .map(|c| {
                let w = 2.0 * std::f64::consts::PI / PERIODS[c % PERIODS.len()];
                vec![2.0 * radius * w.cos(), -radius * radius, 0.0, 0.0]
            })
            .collect();
        Self {
            coefficients,
            ..Self::shared_rule(channels, length, seed)
        }
    }

    /// Mild own dynamics plus cyclic lag-1 coupling of strength `kappa`.
    /// The horizon is short because the neighbour's lag-1 influence is what
    /// a per-channel model cannot see, and it fades over longer horizons.
    pub fn cross_coupled(channels: usize, length: usize, kappa: f64, seed: u64) -> Self {
        Self {
            coefficients: vec![vec![0.45, 0.0, 0.0, 0.0]; channels],
            coupling: kappa,
            horizon: 2,
            ..Self::shared_rule(channels, length, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(StairError::Config(format!("synthetic spec: {m}")));
        if self.channels == 0 {
            return bad("channels must be ≥ 1".into());
        }
        if self.order == 0 {
            return bad("order must be ≥ 1".into());
        }
        if self.length < self.lookback + self.horizon {
            return bad(format!(
                "length {} shorter than look-back + horizon {}",
                self.length,
                self.lookback + self.horizon
            ));
        }
        if self.coefficients.len() != self.channels
            || self.coefficients.iter().any(|r| r.len() != self.order)
        {
            return bad(format!("coefficients must be {}×{}", self.channels, self.order));
        }
        if let Some(g) = &self.coupling_matrix {
            if g.len() != self.channels || g.iter().any(|r| r.len() != self.channels) {
                return bad("coupling_matrix must be channels×channels".into());
            }
        }
        if let Some(init) = &self.initial {
            if init.len() != self.channels {
                return bad("initial must have one value per channel".into());
            }
        }
        if !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return bad("coupling must be finite and ≥ 0".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and ≥ 0".into());
        }
        Ok(())
    }

    fn coupling_weight(&self, c: usize, j: usize) -> f64 {
        if c == j {
            return 0.0;
        }
        match &self.coupling_matrix {
            Some(g) => g[c][j],
            None => {
                if j == (c + 1) % self.channels {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<RawSeries> {
    spec.validate()?;
    let c_n = spec.channels;
    let total = spec.length + spec.burn_in;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = vec![0.0f64; total * c_n];
    for t in 0..total {
        for c in 0..c_n {
            let eps = normal.sample(&mut rng) * spec.noise_std;
            let mut v = if t == 0 {
                spec.initial.as_ref().map_or(0.0, |i| i[c])
            } else {
                0.0
            };
            for (k, a) in spec.coefficients[c].iter().enumerate() {
                if t > k {
                    v += a * x[(t - 1 - k) * c_n + c];
                }
            }
            if spec.coupling > 0.0 && t > 0 {
                let mut cross = 0.0;
                for j in 0..c_n {
                    cross += spec.coupling_weight(c, j) * x[(t - 1) * c_n + j];
                }
                v += spec.coupling * cross;
            }
            x[t * c_n + c] = v + eps;
        }
    }
    let values = x[spec.burn_in * c_n..].to_vec();
    let names = (0..c_n).map(|c| format!("x{c}")).collect();
    RawSeries::new(values, names, Source::Synthetic)
}
