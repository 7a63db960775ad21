//! Loss, Adam with decoupled weight decay, global-norm clipping and the
//! anchor penalty used while fine-tuning per-channel banks.

use serde::{Deserialize, Serialize};

use crate::backbone::{BankKind, Mlp, ParamBank};
use crate::error::{Result, StairError};
use crate::param::{Param, ParamSet};
use crate::real::Real;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            clip_norm: 1.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(StairError::Config(format!("optimizer: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("eps must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be ≥ 0");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

/// Mean squared error over every entry and its gradient `2(ŷ − y)/n`.
pub fn mse_loss<T: Real>(pred: &Tensor3<T>, target: &Tensor3<T>) -> Result<(f64, Tensor3<T>)> {
    pred.same_shape(target, "mse_loss")?;
    let n = pred.data.len();
    if n == 0 {
        return Err(StairError::Shape("mse_loss on empty tensors".into()));
    }
    let scale = 2.0 / n as f64;
    let mut sum = 0.0;
    let mut grad = pred.clone();
    for (g, (p, y)) in grad.data.iter_mut().zip(pred.data.iter().zip(&target.data)) {
        let d = p.as_f64() - y.as_f64();
        sum += d * d;
        *g = T::from_f64c(scale * d);
    }
    Ok((sum / n as f64, grad))
}

/// Adam update with bias correction, followed by the decoupled shrink
/// `θ ← θ − lr·wd·θ`. Moments live in each [`Param`].
pub fn adam_step<T: Real>(params: &mut [&mut Param<T>], cfg: &OptimConfig, step: u64) -> Result<()> {
    assert!(step >= 1, "Adam steps are 1-based");
    if let Some(p) = params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
        return Err(StairError::NonFiniteGradient { block: p.name.clone() });
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let decay = cfg.lr * cfg.weight_decay;
    for p in params.iter_mut() {
        let Param { value, grad, m, v, .. } = &mut **p;
        for i in 0..value.len() {
            let g = grad[i].as_f64();
            let mi = cfg.beta1 * m[i].as_f64() + (1.0 - cfg.beta1) * g;
            let vi = cfg.beta2 * v[i].as_f64() + (1.0 - cfg.beta2) * g * g;
            m[i] = T::from_f64c(mi);
            v[i] = T::from_f64c(vi);
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            let mut theta = value[i].as_f64() - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            theta -= decay * theta;
            value[i] = T::from_f64c(theta);
        }
    }
    Ok(())
}

/// Convenience wrapper running [`adam_step`] over a whole parameter set.
pub fn adam_step_set<T: Real, S: ParamSet<T>>(set: &mut S, cfg: &OptimConfig, step: u64) -> Result<()> {
    adam_step(&mut set.params_mut(), cfg, step)?;
    set.mark_updated();
    Ok(())
}

pub fn global_norm<T: Real>(params: &[&mut Param<T>]) -> f64 {
    params
        .iter()
        .flat_map(|p| p.grad.iter())
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales every gradient by `max_norm / ‖g‖` when the joint norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(params: &mut [&mut Param<T>], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip norm must be positive");
    let norm = global_norm(params);
    if norm > max_norm {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            for g in p.grad.iter_mut() {
                *g = T::from_f64c(g.as_f64() * s);
            }
        }
    }
    norm
}

/// `λ·Σ_c ‖θ_c − θ_anchor‖²`, adding `2λ(θ_c − θ_anchor)` to each channel's
/// gradient buffers.
pub fn anchor_penalty<T: Real>(bank: &mut ParamBank<T>, anchor: &Mlp<T>, lambda: f64) -> Result<f64> {
    if bank.kind != BankKind::Individual {
        return Err(StairError::Unsupported("anchor penalty applies to individual banks".into()));
    }
    let mut penalty = 0.0;
    for set in &mut bank.sets {
        if set.layers.len() != anchor.layers.len() {
            return Err(StairError::Shape("anchor depth differs from bank".into()));
        }
        for (layer, a) in set.layers.iter_mut().zip(&anchor.layers) {
            for (p, q) in [(&mut layer.weight, &a.weight), (&mut layer.bias, &a.bias)] {
                if p.shape != q.shape {
                    return Err(StairError::Shape(format!(
                        "anchor block `{}` is {:?}, bank has {:?}",
                        q.name, q.shape, p.shape
                    )));
                }
                if lambda == 0.0 {
                    continue;
                }
                for ((g, v), a) in p.grad.iter_mut().zip(&p.value).zip(&q.value) {
                    let d = v.as_f64() - a.as_f64();
                    penalty += d * d;
                    *g = T::from_f64c(g.as_f64() + 2.0 * lambda * d);
                }
            }
        }
    }
    Ok(lambda * penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use approx::assert_abs_diff_eq;

    fn t(v: Vec<f64>) -> Tensor3<f64> {
        let n = v.len();
        Tensor3::from_vec(1, n, 1, v).unwrap()
    }

    #[test]
    fn mse_cases() {
        let (l, g) = mse_loss(&t(vec![1.0, 2.0]), &t(vec![1.0, 2.0])).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|v| *v == 0.0));
        let (l, _) = mse_loss(&t(vec![2.0, 3.0, 4.0]), &t(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(l, 1.0);
        let (l, g) = mse_loss(&t(vec![3.0]), &t(vec![1.0])).unwrap();
        assert_eq!((l, g.data[0]), (4.0, 4.0));
        assert!(mse_loss(&t(vec![1.0]), &t(vec![1.0, 2.0])).is_err());
    }

    fn scalar(value: f64, grad: f64) -> Param<f64> {
        let mut p = Param::new("p", vec![1], vec![value]);
        p.grad[0] = grad;
        p
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = scalar(0.0, 1.0);
        let cfg = OptimConfig { weight_decay: 0.0, ..Default::default() };
        adam_step(&mut [&mut p], &cfg, 1).unwrap();
        assert_abs_diff_eq!(p.value[0], -0.001, epsilon = 1e-10);
    }

    #[test]
    fn zero_grad_without_decay_is_noop() {
        let mut p = scalar(0.7, 0.0);
        adam_step(&mut [&mut p], &OptimConfig { weight_decay: 0.0, ..Default::default() }, 1).unwrap();
        assert_eq!(p.value[0], 0.7);
    }

    #[test]
    fn decoupled_decay() {
        let mut p = scalar(1.0, 0.0);
        let cfg = OptimConfig { lr: 1e-3, weight_decay: 1e-5, ..Default::default() };
        adam_step(&mut [&mut p], &cfg, 1).unwrap();
        assert_abs_diff_eq!(p.value[0], 1.0 - 1e-8, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = scalar(1.0, f64::NAN);
        p.name = "layer0.weight".into();
        match adam_step(&mut [&mut p], &OptimConfig::default(), 1) {
            Err(StairError::NonFiniteGradient { block }) => assert_eq!(block, "layer0.weight"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.value[0], 1.0);
    }

    #[test]
    fn clip_cases() {
        let mut p = Param::new("g", vec![2], vec![0.0, 0.0]);
        p.grad = vec![3.0, 4.0];
        let n = clip_global_norm(&mut [&mut p], 1.0);
        assert_eq!(n, 5.0);
        assert_abs_diff_eq!(p.grad[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(p.grad[1], 0.8, epsilon = 1e-12);

        let mut q = Param::new("g", vec![2], vec![0.0, 0.0]);
        q.grad = vec![0.3, 0.4];
        clip_global_norm(&mut [&mut q], 1.0);
        assert_eq!(q.grad, vec![0.3, 0.4]);
    }

    #[test]
    fn clip_spans_blocks() {
        let mut a = Param::new("a", vec![1], vec![0.0]);
        let mut b = Param::new("b", vec![1], vec![0.0]);
        a.grad = vec![6.0];
        b.grad = vec![8.0];
        clip_global_norm(&mut [&mut a, &mut b], 2.0);
        assert!(global_norm(&[&mut a, &mut b]) <= 2.0 + 1e-7);
        assert_abs_diff_eq!(a.grad[0] / b.grad[0], 0.75, epsilon = 1e-12);
    }

    fn scalar_bank(value: f64) -> (ParamBank<f64>, Mlp<f64>) {
        let cfg = BackboneConfig::linear(1, 1);
        let mut shared = ParamBank::<f64>::init_shared(cfg, 0).unwrap();
        shared.sets[0].layers[0].weight.value[0] = 1.0;
        shared.sets[0].layers[0].bias.value[0] = 0.0;
        let anchor = shared.sets[0].clone();
        let mut ind = shared.clone_to_individual(1).unwrap();
        ind.sets[0].layers[0].weight.value[0] = value;
        (ind, anchor)
    }

    #[test]
    fn anchor_at_anchor_is_zero() {
        let (mut bank, anchor) = scalar_bank(1.0);
        assert_eq!(anchor_penalty(&mut bank, &anchor, 0.3).unwrap(), 0.0);
        assert!(bank.params().iter().all(|p| p.grad.iter().all(|g| *g == 0.0)));
    }

    #[test]
    fn anchor_scalar_case() {
        let (mut bank, anchor) = scalar_bank(2.0);
        let pen = anchor_penalty(&mut bank, &anchor, 0.5).unwrap();
        assert_eq!(pen, 0.5);
        assert_eq!(bank.sets[0].layers[0].weight.grad[0], 1.0);
    }

    #[test]
    fn anchor_rejects_shared_and_mismatched() {
        let cfg = BackboneConfig::linear(2, 1);
        let mut shared = ParamBank::<f64>::init_shared(cfg, 0).unwrap();
        let anchor = shared.sets[0].clone();
        assert!(anchor_penalty(&mut shared, &anchor, 1.0).is_err());
        let other = ParamBank::<f64>::init_shared(BackboneConfig::linear(3, 1), 0).unwrap();
        let mut ind = shared.clone_to_individual(2).unwrap();
        assert!(anchor_penalty(&mut ind, &other.sets[0], 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        assert!(OptimConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(OptimConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(OptimConfig { clip_norm: 0.0, ..Default::default() }.validate().is_err());
        assert!(OptimConfig { clip_norm: f64::INFINITY, ..Default::default() }.validate().is_ok());
    }
}
