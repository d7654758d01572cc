//! Single learning steps for each algorithm.

use crate::approx::{argmax, softmax, Head, Network, Optimizer, ParamSet};

use super::AgentError;

/// One transition with borrowed state vectors.
#[derive(Debug, Clone, Copy)]
pub struct Experience<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub reward: f64,
    pub next: &'a [f64],
    pub done: bool,
}

fn non_finite(what: &str, value: f64) -> AgentError {
    AgentError::NonFiniteLoss(format!("{what} = {value}"))
}

/// Regresses `Q(s,a)` toward `r + gamma * max_a' Q_target(s',a')` with
/// importance weights on the squared error. Returns the per-sample TD errors
/// measured before the step.
pub fn dqn_update(
    online: &mut ParamSet,
    target: &ParamSet,
    batch: &[Experience<'_>],
    weights: &[f64],
    gamma: f64,
    eta: f64,
    opt: &mut Optimizer,
) -> Result<Vec<f64>, AgentError> {
    assert!(!batch.is_empty(), "empty batch");
    assert_eq!(batch.len(), weights.len());
    let n_out = online.spec().output_dim();
    let mut grad = vec![0.0; online.len()];
    let mut out_grad = vec![0.0; n_out];
    let mut tds = Vec::with_capacity(batch.len());
    let scale = 1.0 / batch.len() as f64;
    for (e, &w) in batch.iter().zip(weights) {
        let y = if e.done {
            e.reward
        } else {
            let next_q = target.forward(e.next)?;
            let q = next_q.output();
            e.reward + gamma * q[argmax(q)]
        };
        let acts = online.forward(e.state)?;
        let td = y - acts.output()[e.action];
        if !td.is_finite() {
            return Err(non_finite("dqn td error", td));
        }
        out_grad.iter_mut().for_each(|g| *g = 0.0);
        out_grad[e.action] = -w * td * scale;
        online.backward(&acts, &out_grad, &mut grad)?;
        tds.push(td);
    }
    online.apply_update(opt, &grad, eta);
    Ok(tds)
}

/// On-policy semi-gradient step toward `r + gamma * Q(s',a')`, where `a'` is
/// the action actually chosen at `s'`. Returns the TD error.
pub fn sarsa_update(
    params: &mut ParamSet,
    exp: &Experience<'_>,
    next_action: usize,
    gamma: f64,
    eta: f64,
    opt: &mut Optimizer,
) -> Result<f64, AgentError> {
    let y = if exp.done {
        exp.reward
    } else {
        exp.reward + gamma * params.forward(exp.next)?.output()[next_action]
    };
    let acts = params.forward(exp.state)?;
    let td = y - acts.output()[exp.action];
    if !td.is_finite() {
        return Err(non_finite("sarsa td error", td));
    }
    let mut out_grad = vec![0.0; params.spec().output_dim()];
    out_grad[exp.action] = -td;
    let mut grad = vec![0.0; params.len()];
    params.backward(&acts, &out_grad, &mut grad)?;
    params.apply_update(opt, &grad, eta);
    Ok(td)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2cCoefficients {
    pub gamma: f64,
    pub entropy: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2cStats {
    pub advantage: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Gradient of the one-step actor-critic loss
/// `-log pi(a|s) * A + c_v * A^2 - c_e * H(pi(.|s))`, with
/// `A = r + gamma * V(s') - V(s)` held constant in the policy term and the
/// bootstrap `V(s')` held constant in the value term.
pub fn a2c_gradient(
    net: &Network,
    params: &[f64],
    exp: &Experience<'_>,
    coef: A2cCoefficients,
    grad: &mut [f64],
) -> Result<A2cStats, AgentError> {
    let spec = net.spec();
    assert_eq!(spec.head, Head::ActorCritic, "a2c needs an actor-critic head");
    let na = spec.n_actions;
    let acts = net.forward(params, exp.state)?;
    let out = acts.output();
    let probs = softmax(&out[..na]);
    let value = out[na];
    let bootstrap = if exp.done {
        0.0
    } else {
        net.forward(params, exp.next)?.output()[na]
    };
    let advantage = exp.reward + coef.gamma * bootstrap - value;
    if !advantage.is_finite() {
        return Err(non_finite("a2c advantage", advantage));
    }
    let entropy: f64 = -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    let mut out_grad = vec![0.0; na + 1];
    for (j, g) in out_grad[..na].iter_mut().enumerate() {
        let onehot = if j == exp.action { 1.0 } else { 0.0 };
        let p = probs[j];
        let log_p = if p > 0.0 { p.ln() } else { 0.0 };
        *g = advantage * (p - onehot) + coef.entropy * p * (log_p + entropy);
    }
    out_grad[na] = -2.0 * coef.value * advantage;
    net.backward(params, &acts, &out_grad, grad)?;
    Ok(A2cStats {
        advantage,
        value,
        entropy,
    })
}

pub fn a2c_update(
    params: &mut ParamSet,
    exp: &Experience<'_>,
    coef: A2cCoefficients,
    eta: f64,
    opt: &mut Optimizer,
) -> Result<A2cStats, AgentError> {
    let mut grad = vec![0.0; params.len()];
    let stats = a2c_gradient(params.network(), params.values(), exp, coef, &mut grad)?;
    params.apply_update(opt, &grad, eta);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{HeadOutput, NetworkSpec};
    use crate::rng;

    /// Linear, bias-free Q-network over one-hot states: a lookup table.
    fn table(n_states: usize, q: &[[f64; 4]]) -> ParamSet {
        let spec = NetworkSpec {
            input_dim: n_states,
            hidden: vec![],
            n_actions: 4,
            head: Head::Q,
            bias: false,
        };
        // Row-major [action x state].
        let mut values = vec![0.0; 4 * n_states];
        for (s, row) in q.iter().enumerate() {
            for (a, v) in row.iter().enumerate() {
                values[a * n_states + s] = *v;
            }
        }
        ParamSet::from_values(spec, values, 0).unwrap()
    }

    const S0: [f64; 2] = [1.0, 0.0];
    const S1: [f64; 2] = [0.0, 1.0];

    fn q_of(p: &ParamSet, s: &[f64], a: usize) -> f64 {
        p.forward(s).unwrap().output()[a]
    }

    #[test]
    fn dqn_tabular_iterate() {
        let mut online = table(2, &[[0.0; 4], [0.0; 4]]);
        let target = table(2, &[[0.0; 4], [0.2, 0.1, -0.3, 0.0]]);
        let exp = Experience {
            state: &S0,
            action: 0,
            reward: 0.1,
            next: &S1,
            done: false,
        };
        let td = dqn_update(&mut online, &target, &[exp], &[1.0], 0.95, 0.005, &mut Optimizer::sgd())
            .unwrap();
        assert!((td[0] - 0.29).abs() < 1e-15);
        // 0.005 * (0.1 + 0.95 * 0.2)
        assert!((q_of(&online, &S0, 0) - 0.00145).abs() < 1e-15);
        assert_eq!(q_of(&online, &S0, 1), 0.0);
        assert_eq!(online.version(), 1);
    }

    #[test]
    fn dqn_gamma_zero_and_done_mask() {
        let target = table(2, &[[0.0; 4], [5.0; 4]]);
        for (gamma, done) in [(0.0, false), (0.95, true)] {
            let mut online = table(2, &[[0.0; 4], [0.0; 4]]);
            let exp = Experience {
                state: &S0,
                action: 2,
                reward: 0.1,
                next: &S1,
                done,
            };
            let td = dqn_update(&mut online, &target, &[exp], &[1.0], gamma, 1.0, &mut Optimizer::sgd())
                .unwrap();
            assert!((td[0] - 0.1).abs() < 1e-15);
            assert!((q_of(&online, &S0, 2) - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn sarsa_tabular_iterate() {
        let q = [[0.05, 0.0, 0.0, 0.0], [0.2, 0.1, -0.3, 0.0]];
        let mut p = table(2, &q);
        let exp = Experience {
            state: &S0,
            action: 0,
            reward: 0.1,
            next: &S1,
            done: false,
        };
        let td = sarsa_update(&mut p, &exp, 1, 0.95, 0.005, &mut Optimizer::sgd()).unwrap();
        // target 0.1 + 0.95 * 0.1 = 0.195; td = 0.145
        assert!((td - 0.145).abs() < 1e-15);
        assert!((q_of(&p, &S0, 0) - (0.05 + 0.005 * 0.145)).abs() < 1e-15);
    }

    #[test]
    fn sarsa_target_below_dqn_target_off_argmax() {
        let q = [[0.0; 4], [0.2, 0.1, -0.3, 0.0]];
        let exp = Experience {
            state: &S0,
            action: 0,
            reward: 0.1,
            next: &S1,
            done: false,
        };
        let mut s = table(2, &q);
        let sarsa_td = sarsa_update(&mut s, &exp, 1, 0.95, 0.0, &mut Optimizer::sgd()).unwrap();
        let mut d = table(2, &q);
        let t = table(2, &q);
        let dqn_td = dqn_update(&mut d, &t, &[exp], &[1.0], 0.95, 0.0, &mut Optimizer::sgd()).unwrap();
        assert!(sarsa_td < dqn_td[0]);
        let sarsa_g0 = sarsa_update(&mut table(2, &q), &exp, 0, 0.0, 0.0, &mut Optimizer::sgd()).unwrap();
        assert!((sarsa_g0 - 0.1).abs() < 1e-15);
    }

    fn ac_spec(dim: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim: dim,
            hidden: vec![8],
            n_actions: 4,
            head: Head::ActorCritic,
            bias: true,
        }
    }

    #[test]
    fn zero_advantage_leaves_params_unchanged() {
        // Zero parameters give V = 0 everywhere, so r = 0 yields A = 0.
        let mut p = ParamSet::zeros(ac_spec(2)).unwrap();
        let before = p.values().to_vec();
        let exp = Experience {
            state: &S0,
            action: 3,
            reward: 0.0,
            next: &S1,
            done: false,
        };
        let coef = A2cCoefficients {
            gamma: 0.95,
            entropy: 0.0,
            value: 0.5,
        };
        let stats = a2c_update(&mut p, &exp, coef, 0.005, &mut Optimizer::sgd()).unwrap();
        assert_eq!(stats.advantage, 0.0);
        assert_eq!(p.values(), before.as_slice());
    }

    #[test]
    fn terminal_advantage_ignores_next_state() {
        let p = ParamSet::new(ac_spec(2), &mut rng::from_seed(5)).unwrap();
        let v = match p.head(&S0).unwrap() {
            HeadOutput::ActorCritic { value, .. } => value,
            other => panic!("{other:?}"),
        };
        let exp = Experience {
            state: &S0,
            action: 1,
            reward: 0.3,
            next: &S1,
            done: true,
        };
        let coef = A2cCoefficients {
            gamma: 0.95,
            entropy: 0.01,
            value: 0.5,
        };
        let mut g = vec![0.0; p.len()];
        let stats = a2c_gradient(p.network(), p.values(), &exp, coef, &mut g).unwrap();
        assert!((stats.advantage - (0.3 - v)).abs() < 1e-15);
    }

    #[test]
    fn value_converges_on_constant_reward_loop() {
        let mut p = ParamSet::zeros(ac_spec(2)).unwrap();
        let mut opt = Optimizer::sgd();
        let exp = Experience {
            state: &S0,
            action: 0,
            reward: 0.1,
            next: &S0,
            done: false,
        };
        let coef = A2cCoefficients {
            gamma: 0.5,
            entropy: 0.0,
            value: 0.5,
        };
        for _ in 0..5000 {
            a2c_update(&mut p, &exp, coef, 0.05, &mut opt).unwrap();
        }
        let v = match p.head(&S0).unwrap() {
            HeadOutput::ActorCritic { value, .. } => value,
            other => panic!("{other:?}"),
        };
        assert!((v - 0.2).abs() < 1e-6, "V = {v}");
    }

    /// Finite-difference check of the actor-critic loss gradient with the
    /// advantage and bootstrap frozen at their current values.
    #[test]
    fn a2c_gradient_matches_frozen_loss() {
        let mut r = rng::from_seed(8);
        let p = ParamSet::new(ac_spec(3), &mut r).unwrap();
        let s = [0.2, 0.5, 0.3];
        let s2 = [0.6, 0.1, 0.3];
        let exp = Experience {
            state: &s,
            action: 2,
            reward: 0.07,
            next: &s2,
            done: false,
        };
        let coef = A2cCoefficients {
            gamma: 0.95,
            entropy: 0.01,
            value: 0.5,
        };
        let mut g = vec![0.0; p.len()];
        let stats = a2c_gradient(p.network(), p.values(), &exp, coef, &mut g).unwrap();
        let y = stats.advantage + stats.value;
        let loss = |vals: &[f64]| {
            let out = p.network().forward(vals, &s).unwrap().output().to_vec();
            let probs = softmax(&out[..4]);
            let h: f64 = -probs.iter().map(|q| q * q.ln()).sum::<f64>();
            -probs[2].ln() * stats.advantage + coef.value * (y - out[4]).powi(2) - coef.entropy * h
        };
        let h = 1e-6;
        for i in 0..p.len() {
            let mut v = p.values().to_vec();
            v[i] += h;
            let up = loss(&v);
            v[i] -= 2.0 * h;
            let down = loss(&v);
            let num = (up - down) / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-6, "param {i}: {num} vs {}", g[i]);
        }
    }
}
