//! Finite-difference gradient checks in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, BankKind, ParamBank};
use crate::error::Result;
use crate::norm::{NormConfig, NormState};
use crate::optim::{anchor_penalty, mse_loss};
use crate::param::ParamSet;
use crate::residual::{ResidualConfig, ResidualParams};
use crate::seed::mix;
use crate::tensor::Tensor3;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub const LOOKBACK: usize = 8;
pub const HORIZON: usize = 4;
pub const CHANNELS: usize = 3;
pub const HIDDEN: usize = 5;
pub const RESIDUAL_HIDDEN: usize = 3;
pub const RANK: usize = 2;
const BATCH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub median_rel_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn random_tensor(b: usize, t: usize, c: usize, rng: &mut ChaCha8Rng) -> Tensor3<f64> {
    let data = (0..b * t * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor3::from_vec(b, t, c, data).expect("shape")
}

fn randomize<S: ParamSet<f64>>(set: &mut S, rng: &mut ChaCha8Rng) {
    for p in set.params_mut() {
        for v in &mut p.value {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    set.mark_updated();
}

/// Compares analytic gradients already stored in `set` with central
/// differences of `loss`.
fn compare<S: ParamSet<f64>>(name: String, set: &mut S, loss: impl Fn(&mut S) -> Result<f64>) -> Result<GradCheck> {
    let analytic: Vec<Vec<f64>> = set.params().iter().map(|p| p.grad.clone()).collect();
    let mut errors = Vec::new();
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &g) in grads.iter().enumerate() {
            let orig = set.params()[pi].value[i];
            set.params_mut()[pi].value[i] = orig + STEP;
            let up = loss(set)?;
            set.params_mut()[pi].value[i] = orig - STEP;
            let down = loss(set)?;
            set.params_mut()[pi].value[i] = orig;
            errors.push(rel_error(g, (up - down) / (2.0 * STEP)));
        }
    }
    errors.sort_by(f64::total_cmp);
    Ok(GradCheck {
        name,
        checked: errors.len(),
        max_rel_error: errors.last().copied().unwrap_or(0.0),
        median_rel_error: errors.get(errors.len() / 2).copied().unwrap_or(0.0),
    })
}

fn weighted_sum(y: &Tensor3<f64>, w: &Tensor3<f64>) -> f64 {
    y.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

fn bank(layers: usize, kind: BankKind, seed: u64) -> Result<ParamBank<f64>> {
    let config = if layers == 1 {
        BackboneConfig::linear(LOOKBACK, HORIZON)
    } else {
        BackboneConfig::mlp(layers, HIDDEN, LOOKBACK, HORIZON)
    };
    let shared = ParamBank::<f64>::init_shared(config, seed)?;
    let mut bank = match kind {
        BankKind::Shared => shared,
        BankKind::Individual => shared.clone_to_individual(CHANNELS)?,
    };
    // distinct per-channel values so individual sets are really exercised
    randomize(&mut bank, &mut ChaCha8Rng::seed_from_u64(mix(seed, 7)));
    Ok(bank)
}

fn kind_label(kind: BankKind) -> &'static str {
    match kind {
        BankKind::Shared => "shared",
        BankKind::Individual => "individual",
    }
}

/// Backbone of `layers` layers (1 = linear), dropout active with a fixed mask.
pub fn check_backbone(layers: usize, kind: BankKind, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(BATCH, LOOKBACK, CHANNELS, &mut rng);
    let w = random_tensor(BATCH, HORIZON, CHANNELS, &mut rng);
    let mut b = bank(layers, kind, seed)?;
    let mask_seed = mix(seed, 11);
    let (_, cache) = b.forward(&x, true, mask_seed)?;
    b.zero_grad();
    b.backward(&cache, &w)?;
    let name = match layers {
        1 => format!("linear/{}", kind_label(kind)),
        n => format!("mlp-{n}x{HIDDEN}/{}", kind_label(kind)),
    };
    compare(name, &mut b, |b| Ok(weighted_sum(&b.forward(&x, true, mask_seed)?.0, &w)))
}

/// Low-rank cross-channel residual with every parameter randomized.
pub fn check_residual(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(BATCH, LOOKBACK, CHANNELS, &mut rng);
    let w = random_tensor(BATCH, HORIZON, CHANNELS, &mut rng);
    let config = ResidualConfig {
        hidden: RESIDUAL_HIDDEN,
        rank: RANK,
        scale: 1.0,
    };
    let mut r = ResidualParams::<f64>::init(CHANNELS, LOOKBACK, HORIZON, config, seed)?;
    randomize(&mut r, &mut rng);
    let (_, cache) = r.forward(&x)?;
    r.zero_grad();
    r.backward(&cache, &w)?;
    compare("residual".into(), &mut r, |r| Ok(weighted_sum(&r.forward(&x)?.0, &w)))
}

/// Normalize, 2-layer bank, denormalize, MSE against a target.
pub fn check_pipeline(norm: NormConfig, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = random_tensor(BATCH, LOOKBACK, CHANNELS, &mut rng);
    for v in &mut x.data {
        *v = 3.0 * *v + 2.0;
    }
    let target = random_tensor(BATCH, HORIZON, CHANNELS, &mut rng);
    let mut b = bank(2, BankKind::Individual, seed)?;
    let state = NormState::fit(&x, norm);
    let xn = state.normalize(&x)?;
    let loss = |b: &ParamBank<f64>| -> Result<(f64, Tensor3<f64>, _)> {
        let (yn, cache) = b.forward(&xn, false, 0)?;
        let (l, g) = mse_loss(&state.denormalize(&yn)?, &target)?;
        Ok((l, g, cache))
    };
    let (_, g, cache) = loss(&b)?;
    b.zero_grad();
    b.backward(&cache, &state.denormalize_backward(&g)?)?;
    compare(format!("pipeline/{}", norm.label()), &mut b, |b| Ok(loss(b)?.0))
}

/// Anchor penalty on an individual bank.
pub fn check_anchor(seed: u64) -> Result<GradCheck> {
    let mut b = bank(2, BankKind::Individual, seed)?;
    let anchor = bank(2, BankKind::Shared, mix(seed, 1))?.sets.remove(0);
    let lambda = 0.3;
    b.zero_grad();
    anchor_penalty(&mut b, &anchor, lambda)?;
    compare("anchor".into(), &mut b, |b| {
        let saved: Vec<Vec<f64>> = b.params().iter().map(|p| p.grad.clone()).collect();
        let v = anchor_penalty(b, &anchor, lambda);
        for (p, g) in b.params_mut().into_iter().zip(saved) {
            p.grad = g;
        }
        v
    })
}

/// The full suite: {linear, 2-layer, 4-layer} × {shared, individual},
/// the residual, the normalization pipeline and the anchor penalty.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    for layers in [1, 2, 4] {
        for kind in [BankKind::Shared, BankKind::Individual] {
            out.push(check_backbone(layers, kind, mix(seed, layers as u64))?);
        }
    }
    out.push(check_residual(mix(seed, 100))?);
    out.push(check_pipeline(NormConfig::default(), mix(seed, 200))?);
    out.push(check_anchor(mix(seed, 300))?);
    Ok(out)
}
