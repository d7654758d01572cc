//! Small multilayer perceptron with hand-written backpropagation.
//!
//! Hidden layers use ReLU. The output layer is linear and is read either as
//! four Q-values or, for actor-critic heads, as four policy logits followed
//! by a scalar state value.

mod checkpoint;
mod optim;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub(crate) use optim::adam_step;
pub use optim::{Adam, Optimizer, OptimizerKind};

use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("input has {got} entries, network expects {expected}")]
    InputDimension { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// One linear output per action.
    Q,
    /// Softmax policy over actions plus a scalar value.
    ActorCritic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub n_actions: usize,
    pub head: Head,
    pub bias: bool,
}

impl NetworkSpec {
    pub fn q(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 64],
            n_actions: 4,
            head: Head::Q,
            bias: true,
        }
    }

    pub fn actor_critic(input_dim: usize) -> Self {
        Self {
            head: Head::ActorCritic,
            ..Self::q(input_dim)
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.head {
            Head::Q => self.n_actions,
            Head::ActorCritic => self.n_actions + 1,
        }
    }

    pub fn validate(&self) -> Result<(), ApproxError> {
        if self.input_dim < 2 {
            return Err(ApproxError::InvalidSpec("input_dim must be >= 2".into()));
        }
        if self.n_actions == 0 {
            return Err(ApproxError::InvalidSpec("n_actions must be >= 1".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(ApproxError::InvalidSpec("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in self.hidden.iter().chain(std::iter::once(&self.output_dim())) {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(i, o)| i * o + if self.bias { o } else { 0 })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// Offset of the row-major `fan_out x fan_in` weight block.
    weights: usize,
    biases: Option<usize>,
}

/// Topology plus parameter layout; holds no parameter values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    n_params: usize,
}

/// Per-layer inputs recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `inputs[l]` is the input of layer `l`; the last entry is the raw output.
    values: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("at least one layer")
    }
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self, ApproxError> {
        spec.validate()?;
        let mut layers = Vec::new();
        let mut offset = 0;
        for (fan_in, fan_out) in spec.layer_dims() {
            let weights = offset;
            offset += fan_in * fan_out;
            let biases = spec.bias.then(|| {
                let b = offset;
                offset += fan_out;
                b
            });
            layers.push(Layer {
                fan_in,
                fan_out,
                weights,
                biases,
            });
        }
        Ok(Self {
            spec,
            layers,
            n_params: offset,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// He-style uniform initialization, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// with zero biases.
    pub fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        for l in &self.layers {
            let bound = (6.0 / l.fan_in as f64).sqrt();
            for w in &mut p[l.weights..l.weights + l.fan_in * l.fan_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Activations, ApproxError> {
        if input.len() != self.spec.input_dim {
            return Err(ApproxError::InputDimension {
                expected: self.spec.input_dim,
                got: input.len(),
            });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(ApproxError::NonFiniteInput);
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let x = values.last().expect("input pushed");
            let mut y = vec![0.0; l.fan_out];
            for (o, out) in y.iter_mut().enumerate() {
                let row = &params[l.weights + o * l.fan_in..l.weights + (o + 1) * l.fan_in];
                let mut acc = l.biases.map_or(0.0, |b| params[b + o]);
                for (w, xi) in row.iter().zip(x) {
                    acc += w * xi;
                }
                *out = if li < last { acc.max(0.0) } else { acc };
            }
            values.push(y);
        }
        Ok(Activations { values })
    }

    /// Accumulates `d loss / d params` into `grad`, given `out_grad`, the
    /// gradient of the loss with respect to the raw (pre-softmax) outputs.
    pub fn backward(
        &self,
        params: &[f64],
        acts: &Activations,
        out_grad: &[f64],
        grad: &mut [f64],
    ) -> Result<(), ApproxError> {
        debug_assert_eq!(out_grad.len(), self.spec.output_dim());
        debug_assert_eq!(grad.len(), self.n_params);
        let mut delta = out_grad.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let x = &acts.values[li];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let g = &mut grad[l.weights + o * l.fan_in..l.weights + (o + 1) * l.fan_in];
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += d * xi;
                }
                if let Some(b) = l.biases {
                    grad[b + o] += d;
                }
            }
            if li == 0 {
                break;
            }
            // Propagate through the weights, then through the ReLU that
            // produced `x` (x > 0 exactly where the unit was active).
            let mut prev = vec![0.0; l.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &params[l.weights + o * l.fan_in..l.weights + (o + 1) * l.fan_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, xi) in prev.iter_mut().zip(x) {
                if *xi <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(ApproxError::NonFiniteGradient);
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Gradient of `-log softmax(logits)[class]` with respect to the logits.
pub fn softmax_cross_entropy_grad(probs: &[f64], class: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == class { p - 1.0 } else { p })
        .collect()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Head outputs decoded from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadOutput {
    Q(Vec<f64>),
    ActorCritic { probs: Vec<f64>, value: f64 },
}

/// Parameter values together with their network and an update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    net: Network,
    values: Vec<f64>,
    version: u64,
}

impl ParamSet {
    pub fn new(spec: NetworkSpec, rng: &mut Rng) -> Result<Self, ApproxError> {
        let net = Network::new(spec)?;
        let values = net.init_params(rng);
        Ok(Self {
            net,
            values,
            version: 0,
        })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self, ApproxError> {
        let net = Network::new(spec)?;
        let values = vec![0.0; net.n_params()];
        Ok(Self {
            net,
            values,
            version: 0,
        })
    }

    pub fn from_values(spec: NetworkSpec, values: Vec<f64>, version: u64) -> Result<Self, ApproxError> {
        let net = Network::new(spec)?;
        if values.len() != net.n_params() {
            return Err(ApproxError::InvalidSpec(format!(
                "{} values for {} parameters",
                values.len(),
                net.n_params()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ApproxError::InvalidSpec("non-finite parameter".into()));
        }
        Ok(Self {
            net,
            values,
            version,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.net.spec()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Activations, ApproxError> {
        self.net.forward(&self.values, input)
    }

    pub fn head(&self, input: &[f64]) -> Result<HeadOutput, ApproxError> {
        let acts = self.forward(input)?;
        Ok(decode_head(self.spec(), acts.output()))
    }

    pub fn backward(
        &self,
        acts: &Activations,
        out_grad: &[f64],
        grad: &mut [f64],
    ) -> Result<(), ApproxError> {
        self.net.backward(&self.values, acts, out_grad, grad)
    }

    /// Applies one optimizer step and bumps the version counter.
    pub fn apply_update(&mut self, opt: &mut Optimizer, grad: &[f64], eta: f64) {
        opt.step(&mut self.values[..], grad, eta);
        self.version += 1;
    }
}

pub fn decode_head(spec: &NetworkSpec, raw: &[f64]) -> HeadOutput {
    match spec.head {
        Head::Q => HeadOutput::Q(raw.to_vec()),
        Head::ActorCritic => HeadOutput::ActorCritic {
            probs: softmax(&raw[..spec.n_actions]),
            value: raw[spec.n_actions],
        },
    }
}

/// Read/write access to a flat parameter vector.
pub trait ParamStore {
    fn len(&self) -> usize;
    fn get(&self, i: usize) -> f64;
    fn set(&mut self, i: usize, v: f64);
}

impl ParamStore for [f64] {
    fn len(&self) -> usize {
        <[f64]>::len(self)
    }

    fn get(&self, i: usize) -> f64 {
        self[i]
    }

    fn set(&mut self, i: usize, v: f64) {
        self[i] = v;
    }
}

/// Parameters shared between threads. Each entry is read and written
/// atomically on its own; a reader may observe a mix of old and new entries.
#[derive(Debug)]
pub struct SharedParams {
    values: Vec<AtomicU64>,
    version: AtomicU64,
}

impl SharedParams {
    pub fn new(values: &[f64], version: u64) -> Self {
        Self {
            values: values.iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
            version: AtomicU64::new(version),
        }
    }

    pub fn snapshot_into(&self, out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.values
                .iter()
                .map(|a| f64::from_bits(a.load(Ordering::Relaxed))),
        );
    }

    pub fn snapshot(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.values.len());
        self.snapshot_into(&mut v);
        v
    }

    pub fn version(&self) -> u64 {
        self.version.load(Ordering::SeqCst)
    }

    /// Increments the version counter and returns the new value.
    pub fn bump_version(&self) -> u64 {
        self.version.fetch_add(1, Ordering::SeqCst) + 1
    }

    pub fn view(&self) -> SharedView<'_> {
        SharedView(&self.values)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SharedView<'a>(&'a [AtomicU64]);

impl ParamStore for SharedView<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self.0[i].load(Ordering::Relaxed))
    }

    fn set(&mut self, i: usize, v: f64) {
        self.0[i].store(v.to_bits(), Ordering::Relaxed);
    }
}
