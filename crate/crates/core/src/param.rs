//! Parameter tensors with paired gradient and Adam moment buffers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Self {
            name: name.into(),
            shape,
            value,
            grad: vec![T::zero(); n],
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![T::zero(); n])
    }

    /// Uniform in `[-bound, bound]`; drawn in f64 so both precisions agree.
    pub fn uniform(name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let value = (0..n)
            .map(|_| T::from_f64c(rng.gen_range(-bound..=bound)))
            .collect();
        Self::new(name, shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn reset_state(&mut self) {
        self.zero_grad();
        self.m.iter_mut().for_each(|g| *g = T::zero());
        self.v.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Anything that owns trainable [`Param`]s.
pub trait ParamSet<T: Real> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    /// Called after every in-place update so outstanding forward caches
    /// can be recognized as stale.
    fn mark_updated(&mut self);

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }
}

/// Affine map `y = x·Wᵀ + b` over row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    /// Fan-in uniform init for weight and bias.
    pub fn init(name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), vec![fan_out, fan_in], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), vec![fan_out], bound, rng),
        }
    }

    pub fn zeros(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), vec![fan_out, fan_in]),
            bias: Param::zeros(format!("{name}.bias"), vec![fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape[0]
    }

    /// `rows × fan_in` → `rows × fan_out`.
    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        let (i, o) = (self.fan_in(), self.fan_out());
        let mut out = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            out.extend_from_slice(&self.bias.value);
        }
        crate::real::gemm::a_bt(rows, i, o, x, &self.weight.value, &mut out, true);
        out
    }

    /// Accumulates weight/bias gradients; returns `dL/dx` when asked.
    pub fn backward(&mut self, x: &[T], dy: &[T], rows: usize, want_dx: bool) -> Option<Vec<T>> {
        let (i, o) = (self.fan_in(), self.fan_out());
        crate::real::gemm::at_b(o, rows, i, dy, x, &mut self.weight.grad, true);
        for r in 0..rows {
            for (g, d) in self.bias.grad.iter_mut().zip(&dy[r * o..(r + 1) * o]) {
                *g += *d;
            }
        }
        want_dx.then(|| {
            let mut dx = vec![T::zero(); rows * i];
            crate::real::gemm::a_b(rows, o, i, dy, &self.weight.value, &mut dx, false);
            dx
        })
    }
}
