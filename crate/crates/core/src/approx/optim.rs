use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            _ => Err(format!("unknown optimizer {s:?} (expected sgd or adam)")),
        }
    }
}

/// Adaptive-moment state. Moments live in any [`ParamStore`] so the same
/// update serves both owned and shared parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One Adam step on arbitrary stores; `t` is the 1-based step number.
#[allow(clippy::too_many_arguments)]
pub(crate) fn adam_step<P, M>(
    params: &mut P,
    m: &mut M,
    v: &mut M,
    t: u64,
    grad: &[f64],
    eta: f64,
    (beta1, beta2, eps): (f64, f64, f64),
) where
    P: ParamStore + ?Sized,
    M: ParamStore + ?Sized,
{
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for (i, &g) in grad.iter().enumerate() {
        let mi = beta1 * m.get(i) + (1.0 - beta1) * g;
        let vi = beta2 * v.get(i) + (1.0 - beta2) * g * g;
        m.set(i, mi);
        v.set(i, vi);
        let step = eta * (mi / bc1) / ((vi / bc2).sqrt() + eps);
        params.set(i, params.get(i) - step);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam(Adam),
}

impl Optimizer {
    pub fn sgd() -> Self {
        Self::Sgd
    }

    pub fn adam(n: usize) -> Self {
        Self::Adam(Adam::new(n))
    }

    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(),
            OptimizerKind::Adam => Self::adam(n),
        }
    }

    pub fn step<P: ParamStore + ?Sized>(&mut self, params: &mut P, grad: &[f64], eta: f64) {
        match self {
            Optimizer::Sgd => {
                for (i, &g) in grad.iter().enumerate() {
                    params.set(i, params.get(i) - eta * g);
                }
            }
            Optimizer::Adam(a) => {
                a.t += 1;
                adam_step(
                    params,
                    &mut a.m[..],
                    &mut a.v[..],
                    a.t,
                    grad,
                    eta,
                    (a.beta1, a.beta2, a.eps),
                );
            }
        }
    }
}
