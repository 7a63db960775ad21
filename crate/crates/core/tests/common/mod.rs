#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stair::backbone::BackboneConfig;
use stair::dataio::{gen_synthetic, SplitProtocol, SyntheticSpec};
use stair::optim::{adam_step, OptimConfig};
use stair::param::Param;
use stair::tensor::Tensor3;
use stair::train::{run_stage1, run_stage2, run_stage3, PreparedData, StageReport, StageSettings, TrainSettings};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(b: usize, t: usize, c: usize, scale: f64, offset: f64, rng: &mut ChaCha8Rng) -> Tensor3<f64> {
    let data = (0..b * t * c).map(|_| offset + scale * rng.gen_range(-1.0..1.0)).collect();
    Tensor3::from_vec(b, t, c, data).unwrap()
}

/// Straight-line Adam with decoupled decay on `f(θ) = ½ Σ aᵢ(θᵢ − bᵢ)²`,
/// compared against the library after `steps` steps. Returns max |Δθ|.
pub fn adam_oracle_diff(seed: u64, steps: u64, cfg: &OptimConfig) -> f64 {
    let mut r = rng(seed);
    let n = 10;
    let a: Vec<f64> = (0..n).map(|_| r.gen_range(0.1..5.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
    let theta0: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();

    let mut theta = theta0.clone();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p = Param::new("theta", vec![n], theta0);
    for t in 1..=steps {
        for i in 0..n {
            let g = a[i] * (theta[i] - b[i]);
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / (1.0 - cfg.beta1.powi(t as i32));
            let v_hat = v[i] / (1.0 - cfg.beta2.powi(t as i32));
            theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            theta[i] -= cfg.lr * cfg.weight_decay * theta[i];
        }
        for i in 0..n {
            p.grad[i] = a[i] * (p.value[i] - b[i]);
        }
        adam_step(&mut [&mut p], cfg, t).unwrap();
    }
    theta.iter().zip(&p.value).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub enum Structure {
    Shared,
    Distinct,
    Coupled,
}

pub fn oracle_spec(structure: Structure, seed: u64) -> SyntheticSpec {
    match structure {
        Structure::Shared => SyntheticSpec::shared_rule(4, 4000, seed),
        Structure::Distinct => SyntheticSpec::distinct_rules(4, 4000, seed),
        Structure::Coupled => SyntheticSpec::cross_coupled(4, 4000, 0.5, seed),
    }
}

/// Linear backbone; later stages use the stage-1 learning rate so that a
/// 20-epoch budget is enough to move on these small series.
pub fn oracle_settings(spec: &SyntheticSpec) -> TrainSettings {
    let mut s = TrainSettings::defaults(BackboneConfig::linear(spec.lookback, spec.horizon));
    s.stage2 = StageSettings::with_lr(1e-3);
    s.stage3 = StageSettings::with_lr(1e-3);
    s
}

pub fn oracle_data(spec: &SyntheticSpec) -> PreparedData {
    let series = gen_synthetic(spec).unwrap();
    PreparedData::new(&series, SplitProtocol::Ratio712, spec.lookback, spec.horizon).unwrap()
}

/// Best validation MSE of the three stages.
pub fn stage_gains(structure: Structure, seed: u64) -> [StageReport; 3] {
    let spec = oracle_spec(structure, seed);
    let data = oracle_data(&spec);
    let settings = oracle_settings(&spec);
    let s1 = run_stage1::<f32>(&data, &settings, seed).unwrap();
    let s2 = run_stage2(&s1.model, &data, &settings, seed).unwrap();
    let s3 = run_stage3(&s2.model, &data, &settings, seed).unwrap();
    [s1.report, s2.report, s3.report]
}

use stair::backbone::{BankKind, ParamBank};
use stair::eval::config::{ExperimentConfig, StageOverride};
use stair::norm::{NormConfig, NormMode, NormState};
use stair::param::ParamSet;
use stair::residual::{ResidualConfig, ResidualParams};

/// Sweep of random windows through every mode and α. Returns the worst
/// relative round-trip error and whether the identity cases were exact.
pub fn norm_round_trip_sweep(windows: usize, seed: u64) -> (f64, bool) {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut exact = true;
    for _ in 0..windows {
        let (b, l, c) = (r.gen_range(1..=8), r.gen_range(1..=64), r.gen_range(1..=8));
        let scale = 10f64.powf(r.gen_range(-2.0..2.0));
        let offset = r.gen_range(-50.0..50.0);
        let x = random_tensor(b, l, c, scale, offset, &mut r);
        let max = x.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for mode in [NormMode::Full, NormMode::MeanOnly, NormMode::StdOnly, NormMode::None] {
            for alpha in [0.0, 0.25, 0.5, 0.95, 0.99, 1.0] {
                let state = NormState::fit(&x, NormConfig { mode, alpha });
                let back = state.denormalize(&state.normalize(&x).unwrap()).unwrap();
                worst = worst.max(back.max_abs_diff(&x) / max.max(1e-12));
                if (alpha == 0.0 || mode == NormMode::None) && back.data != x.data {
                    exact = false;
                }
            }
        }
    }
    (worst, exact)
}

/// Joint-matrix export against the forward pass for L=8, H=5, C=4.
/// Returns (max |W·x + b − forward|, off-diagonal blocks all zero,
/// diagonal blocks bitwise identical).
pub fn joint_matrix_check(kind: BankKind, seed: u64) -> (f64, bool, bool) {
    let (l, h, c) = (8, 5, 4);
    let shared = ParamBank::<f32>::init_shared(BackboneConfig::linear(l, h), seed).unwrap();
    let mut bank = match kind {
        BankKind::Shared => shared,
        BankKind::Individual => shared.clone_to_individual(c).unwrap(),
    };
    let mut r = rng(seed);
    if kind == BankKind::Individual {
        for p in bank.params_mut() {
            for v in &mut p.value {
                *v += r.gen_range(-0.1f32..0.1);
            }
        }
        bank.mark_updated();
    }
    let x = random_tensor(3, l, c, 1.0, 0.0, &mut r).cast::<f32>();
    let y = bank.predict(&x).unwrap();
    let (w, bias) = bank.export_joint_matrix(c).unwrap();
    let cols = l * c;
    let mut max_diff = 0.0f64;
    for b in 0..3 {
        let flat: Vec<f64> = (0..c).flat_map(|ch| (0..l).map(move |t| (ch, t))).map(|(ch, t)| x.get(b, t, ch) as f64).collect();
        for ch in 0..c {
            for t in 0..h {
                let row = ch * h + t;
                let mut acc = bias[row] as f64;
                for k in 0..cols {
                    acc += w[row * cols + k] as f64 * flat[k];
                }
                max_diff = max_diff.max((acc - y.get(b, t, ch) as f64).abs());
            }
        }
    }
    let block = |i: usize, j: usize| -> Vec<f32> {
        (0..h).flat_map(|t| (0..l).map(move |k| (t, k))).map(|(t, k)| w[(i * h + t) * cols + j * l + k]).collect()
    };
    let off_zero = (0..c).all(|i| (0..c).filter(|&j| j != i).all(|j| block(i, j).iter().all(|v| v.to_bits() == 0)));
    let diag_same = (1..c).all(|i| {
        block(i, i).iter().zip(block(0, 0)).all(|(a, b)| a.to_bits() == b.to_bits())
    });
    (max_diff, off_zero, diag_same)
}

/// Residual with every parameter randomized; perturbing channel c's input
/// must leave the residual of channel c untouched. Returns the largest
/// change seen on the perturbed channel and the smallest change seen on
/// the other channels (to show the perturbation propagates).
pub fn diagonal_independence(trials: usize, seed: u64) -> (f64, f64) {
    let (l, h, c) = (16, 6, 5);
    let mut r = rng(seed);
    let cfg = ResidualConfig { hidden: 8, rank: 3, scale: 1.0 };
    let mut res = ResidualParams::<f32>::init(c, l, h, cfg, seed).unwrap();
    for p in res.params_mut() {
        for v in &mut p.value {
            *v = r.gen_range(-0.5f32..0.5);
        }
    }
    res.mark_updated();
    let mut own = 0.0f64;
    let mut others = f64::INFINITY;
    for _ in 0..trials {
        let x = random_tensor(2, l, c, 1.0, 0.0, &mut r).cast::<f32>();
        let base = res.forward(&x).unwrap().0;
        let ch = r.gen_range(0..c);
        let mut x2 = x.clone();
        for b in 0..2 {
            for t in 0..l {
                let v = x2.get(b, t, ch) + r.gen_range(-1.0f32..1.0);
                x2.set(b, t, ch, v);
            }
        }
        let moved = res.forward(&x2).unwrap().0;
        for b in 0..2 {
            for t in 0..h {
                for k in 0..c {
                    let d = (moved.get(b, t, k) - base.get(b, t, k)).abs() as f64;
                    if k == ch {
                        own = own.max(d);
                    } else {
                        others = others.min(d);
                    }
                }
            }
        }
    }
    (own, others)
}

pub fn synthetic_config(seed: u64) -> ExperimentConfig {
    let spec = SyntheticSpec::distinct_rules(3, 1200, seed);
    ExperimentConfig {
        name: Some("synthetic".into()),
        synthetic: Some(spec),
        stage1: Some(StageOverride { epochs: Some(4), ..StageOverride::lr(1e-3) }),
        stage2: Some(StageOverride { epochs: Some(3), ..StageOverride::lr(1e-3) }),
        stage3: Some(StageOverride { epochs: Some(3), ..StageOverride::lr(1e-3) }),
        save_predictions: Some(true),
        ..Default::default()
    }
}

/// Every file under `dir`, relative path → bytes, skipping wall-clock timings.
pub fn tree_bytes(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timings.json" {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
