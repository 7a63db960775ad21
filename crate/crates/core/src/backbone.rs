//! Temporal mapping applied along the time axis of every channel: a single
//! linear layer or a shallow MLP, with one shared parameter set or one set
//! per channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StairError};
use crate::param::{Linear, Param, ParamSet};
use crate::real::Real;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

fn default_dropout() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: usize,
    #[serde(default)]
    pub hidden: usize,
    pub activation: Activation,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub lookback: usize,
    pub horizon: usize,
}

impl BackboneConfig {
    pub fn linear(lookback: usize, horizon: usize) -> Self {
        Self {
            layers: 1,
            hidden: 0,
            activation: Activation::None,
            dropout: default_dropout(),
            lookback,
            horizon,
        }
    }

    pub fn mlp(layers: usize, hidden: usize, lookback: usize, horizon: usize) -> Self {
        Self {
            layers,
            hidden,
            activation: Activation::Relu,
            dropout: default_dropout(),
            lookback,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(StairError::Config(format!("backbone: {m}")));
        if self.layers == 0 {
            return bad("layers must be ≥ 1");
        }
        if self.layers > 1 && self.hidden == 0 {
            return bad("hidden must be ≥ 1 when layers > 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.lookback == 0 || self.horizon == 0 {
            return bad("look-back and horizon must be positive");
        }
        Ok(())
    }

    pub fn is_linear(&self) -> bool {
        self.layers == 1
    }

    /// `(fan_in, fan_out)` of each layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|i| {
                let fan_in = if i == 0 { self.lookback } else { self.hidden };
                let fan_out = if i + 1 == self.layers { self.horizon } else { self.hidden };
                (fan_in, fan_out)
            })
            .collect()
    }

    pub fn params_per_set(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    fn uses_dropout(&self) -> bool {
        self.layers > 1 && self.activation != Activation::None && self.dropout > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankKind {
    Shared,
    Individual,
}

/// One parameter set of the temporal mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

#[derive(Debug, Clone)]
pub struct ParamBank<T> {
    pub config: BackboneConfig,
    pub kind: BankKind,
    /// One set when shared, one per channel when individual.
    pub sets: Vec<Mlp<T>>,
    generation: u64,
}

impl<T: Real> PartialEq for ParamBank<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.kind == other.kind && self.sets == other.sets
    }
}

static GENERATION: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
}

/// Activations kept by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    generation: u64,
    batch: usize,
    channels: usize,
    /// Per channel, the input of every layer (`batch × fan_in`, row-major).
    layer_inputs: Vec<Vec<Vec<T>>>,
    /// Per channel and hidden layer, the elementwise factor
    /// `relu'(z) · dropout_scale` linking pre-activations to the next input.
    gates: Vec<Vec<Vec<T>>>,
}

impl<T: Real> ParamBank<T> {
    pub fn init_shared(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| Linear::init(&format!("layer{i}"), fan_in, fan_out, &mut rng))
            .collect();
        Ok(Self {
            config,
            kind: BankKind::Shared,
            sets: vec![Mlp { layers }],
            generation: next_generation(),
        })
    }

    /// Builds a bank from explicit parameter sets (checkpoint loading, tests).
    pub fn from_sets(config: BackboneConfig, kind: BankKind, sets: Vec<Mlp<T>>) -> Result<Self> {
        config.validate()?;
        if kind == BankKind::Shared && sets.len() != 1 {
            return Err(StairError::Shape(format!("shared bank needs 1 set, got {}", sets.len())));
        }
        let dims = config.layer_dims();
        for set in &sets {
            let got: Vec<_> = set.layers.iter().map(|l| (l.fan_in(), l.fan_out())).collect();
            if got != dims {
                return Err(StairError::Shape(format!("layer dims {got:?}, config wants {dims:?}")));
            }
        }
        Ok(Self {
            config,
            kind,
            sets,
            generation: next_generation(),
        })
    }

    /// Deep-copies the shared set once per channel with fresh optimizer state.
    pub fn clone_to_individual(&self, channels: usize) -> Result<Self> {
        if self.kind != BankKind::Shared {
            return Err(StairError::Unsupported("clone_to_individual needs a shared bank".into()));
        }
        let mut base = self.sets[0].clone();
        for l in &mut base.layers {
            l.weight.reset_state();
            l.bias.reset_state();
        }
        Ok(Self {
            config: self.config,
            kind: BankKind::Individual,
            sets: vec![base; channels],
            generation: next_generation(),
        })
    }

    fn set_for(&self, channel: usize) -> usize {
        match self.kind {
            BankKind::Shared => 0,
            BankKind::Individual => channel,
        }
    }

    fn check_input(&self, x: &Tensor3<T>) -> Result<()> {
        if x.time != self.config.lookback {
            return Err(StairError::Shape(format!(
                "input length {} but backbone expects {}",
                x.time, self.config.lookback
            )));
        }
        if self.kind == BankKind::Individual && x.channels != self.sets.len() {
            return Err(StairError::Shape(format!(
                "individual bank has {} channels, input has {}",
                self.sets.len(),
                x.channels
            )));
        }
        Ok(())
    }

    /// Maps `batch × L × C` to `batch × H × C`. Dropout is active only in
    /// train mode on activated MLPs and its masks depend only on `seed`.
    pub fn forward(&self, x: &Tensor3<T>, train_mode: bool, seed: u64) -> Result<(Tensor3<T>, ForwardCache<T>)> {
        self.run(x, train_mode, seed, true)
            .map(|(y, cache)| (y, cache.expect("cache requested")))
    }

    /// Eval-mode forward without keeping activations.
    pub fn predict(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.run(x, false, 0, false).map(|(y, _)| y)
    }

    fn run(
        &self,
        x: &Tensor3<T>,
        train_mode: bool,
        seed: u64,
        keep: bool,
    ) -> Result<(Tensor3<T>, Option<ForwardCache<T>>)> {
        self.check_input(x)?;
        let (b_n, l, c_n) = x.shape();
        let h = self.config.horizon;
        let rows = x.to_channel_rows();
        let dropout = train_mode && self.config.uses_dropout();
        let keep_p = 1.0 - self.config.dropout;
        let inv_keep = T::from_f64c(1.0 / keep_p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let relu = self.config.activation == Activation::Relu;
        let n_layers = self.config.layers;

        let mut out_rows = Vec::with_capacity(b_n * h * c_n);
        let mut layer_inputs = Vec::new();
        let mut gates = Vec::new();
        for c in 0..c_n {
            let set = &self.sets[self.set_for(c)];
            let mut a = rows[c * b_n * l..(c + 1) * b_n * l].to_vec();
            let mut inputs_c = Vec::new();
            let mut gates_c = Vec::new();
            for (li, layer) in set.layers.iter().enumerate() {
                let mut z = layer.forward(&a, b_n);
                if li + 1 < n_layers {
                    let mut gate = vec![T::one(); z.len()];
                    for (zv, g) in z.iter_mut().zip(gate.iter_mut()) {
                        if relu && *zv <= T::zero() {
                            *zv = T::zero();
                            *g = T::zero();
                        }
                        if dropout {
                            if rng.gen::<f64>() < keep_p {
                                *zv *= inv_keep;
                                *g *= inv_keep;
                            } else {
                                *zv = T::zero();
                                *g = T::zero();
                            }
                        }
                    }
                    if keep {
                        gates_c.push(gate);
                    }
                }
                if keep {
                    inputs_c.push(std::mem::replace(&mut a, z));
                } else {
                    a = z;
                }
            }
            out_rows.extend_from_slice(&a);
            if keep {
                layer_inputs.push(inputs_c);
                gates.push(gates_c);
            }
        }
        let y = Tensor3::from_channel_rows(b_n, h, c_n, &out_rows);
        let cache = keep.then_some(ForwardCache {
            generation: self.generation,
            batch: b_n,
            channels: c_n,
            layer_inputs,
            gates,
        });
        Ok((y, cache))
    }

    /// Accumulates parameter gradients for `dL/dy` into the gradient buffers.
    pub fn backward(&mut self, cache: &ForwardCache<T>, grad_out: &Tensor3<T>) -> Result<()> {
        if cache.generation != self.generation {
            return Err(StairError::StaleCache(
                "backbone parameters changed since the forward pass".into(),
            ));
        }
        if grad_out.batch != cache.batch
            || grad_out.channels != cache.channels
            || grad_out.time != self.config.horizon
        {
            return Err(StairError::StaleCache(format!(
                "gradient shape {:?} does not match cached forward ({}×{}×{})",
                grad_out.shape(),
                cache.batch,
                self.config.horizon,
                cache.channels
            )));
        }
        let (b_n, h, c_n) = grad_out.shape();
        let g_rows = grad_out.to_channel_rows();
        for c in 0..c_n {
            let s = self.set_for(c);
            let set = &mut self.sets[s];
            let mut dz = g_rows[c * b_n * h..(c + 1) * b_n * h].to_vec();
            for li in (0..set.layers.len()).rev() {
                let x_in = &cache.layer_inputs[c][li];
                let dx = set.layers[li].backward(x_in, &dz, b_n, li > 0);
                if let Some(mut dx) = dx {
                    for (d, g) in dx.iter_mut().zip(&cache.gates[c][li - 1]) {
                        *d *= *g;
                    }
                    dz = dx;
                }
            }
        }
        Ok(())
    }

    /// Joint `HC × LC` operator over channel-major flattened windows
    /// (`input[c·L + t]`, `output[c·H + h]`) plus its `HC` bias.
    pub fn export_joint_matrix(&self, channels: usize) -> Result<(Vec<T>, Vec<T>)> {
        if !self.config.is_linear() {
            return Err(StairError::Unsupported(
                "joint matrix export is defined for linear backbones only".into(),
            ));
        }
        if self.kind == BankKind::Individual && channels != self.sets.len() {
            return Err(StairError::Shape(format!(
                "bank has {} channels, asked for {channels}",
                self.sets.len()
            )));
        }
        let (l, h) = (self.config.lookback, self.config.horizon);
        let cols = l * channels;
        let mut w = vec![T::zero(); h * channels * cols];
        let mut bias = vec![T::zero(); h * channels];
        for c in 0..channels {
            let layer = &self.sets[self.set_for(c)].layers[0];
            for r in 0..h {
                let dst = (c * h + r) * cols + c * l;
                w[dst..dst + l].copy_from_slice(&layer.weight.value[r * l..(r + 1) * l]);
                bias[c * h + r] = layer.bias.value[r];
            }
        }
        Ok((w, bias))
    }

    pub fn channels(&self) -> Option<usize> {
        match self.kind {
            BankKind::Shared => None,
            BankKind::Individual => Some(self.sets.len()),
        }
    }
}

impl<T: Real> ParamSet<T> for ParamBank<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.sets
            .iter()
            .flat_map(|s| s.layers.iter().flat_map(|l| [&l.weight, &l.bias]))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.sets
            .iter_mut()
            .flat_map(|s| s.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]))
            .collect()
    }

    fn mark_updated(&mut self) {
        self.generation = next_generation();
    }
}
