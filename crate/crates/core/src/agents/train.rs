use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index;

use crate::approx::{
    adam_step, Adam, Network, Optimizer, OptimizerKind, ParamSet, ParamStore, SharedParams,
};
use crate::env::{Action, Environment};
use crate::rng::{self, Rng};

use super::replay::{ReplayBuffer, Transition};
use super::updates::{a2c_gradient, dqn_update, sarsa_update, A2cCoefficients, Experience};
use super::{
    AgentError, Algorithm, EpisodeLog, Policy, TrainConfig, TrainHeader, TrainLog,
    TRAIN_LOG_SCHEMA,
};

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ParamSet,
    pub log: TrainLog,
}

/// Trains `algorithm` on `env` for `cfg.episodes` episodes.
pub fn train_agent(
    algorithm: Algorithm,
    env: &Environment,
    cfg: &TrainConfig,
) -> Result<TrainOutput, AgentError> {
    cfg.validate()?;
    let spec = cfg.network_spec(algorithm, env.universe().state_dim());
    let params = ParamSet::new(spec, &mut rng::stream(cfg.seed, "init", 0))?;
    let probes = probe_set(env, cfg);
    let (params, episodes) = match algorithm {
        Algorithm::Dqn => train_dqn(env, cfg, params, &probes)?,
        Algorithm::Sarsa => train_sarsa(env, cfg, params, &probes)?,
        Algorithm::A2c => train_a2c(env, cfg, params, &probes)?,
        Algorithm::A3c => return a3c_train(env, cfg),
    };
    Ok(TrainOutput {
        params,
        log: TrainLog {
            header: header(algorithm, env, cfg),
            episodes,
        },
    })
}

fn header(algorithm: Algorithm, env: &Environment, cfg: &TrainConfig) -> TrainHeader {
    TrainHeader {
        schema: TRAIN_LOG_SCHEMA.to_string(),
        algorithm,
        config: cfg.clone(),
        target: env.target().clone(),
        episode: *env.config(),
        universe_size: env.len(),
        universe_seed: env.universe().seed(),
        state_dim: env.universe().state_dim(),
    }
}

/// Fixed probe states drawn once per run.
fn probe_set(env: &Environment, cfg: &TrainConfig) -> Vec<usize> {
    let mut r = rng::stream(cfg.seed, "probe", 0);
    let n = cfg.probe_states.min(env.len());
    let mut v = index::sample(&mut r, env.len(), n).into_vec();
    v.sort_unstable();
    v
}

fn max_value(net: &Network, values: &[f64], env: &Environment, probes: &[usize]) -> Result<f64, AgentError> {
    let mut best = f64::NEG_INFINITY;
    let na = net.spec().n_actions;
    for &p in probes {
        let acts = net.forward(values, env.state(p))?;
        let out = acts.output();
        let v = match net.spec().head {
            crate::approx::Head::Q => out[..na].iter().copied().fold(f64::NEG_INFINITY, f64::max),
            crate::approx::Head::ActorCritic => out[na],
        };
        best = best.max(v);
    }
    Ok(best)
}

/// Running totals for one episode.
struct Tally {
    start: usize,
    steps: usize,
    reward: f64,
    counts: [u64; 4],
    no_candidates: u64,
}

impl Tally {
    fn new(start: usize) -> Self {
        Self {
            start,
            steps: 0,
            reward: 0.0,
            counts: [0; 4],
            no_candidates: 0,
        }
    }

    fn record(&mut self, action: Action, reward: f64, no_candidates: bool) {
        self.steps += 1;
        self.reward += reward;
        self.counts[action.index()] += 1;
        self.no_candidates += no_candidates as u64;
    }

    fn finish(
        self,
        episode: usize,
        epsilon: Option<f64>,
        end: usize,
        env: &Environment,
        max_value: f64,
        updates: u64,
    ) -> EpisodeLog {
        EpisodeLog {
            episode,
            epsilon,
            start: self.start,
            end,
            steps: self.steps,
            reward: self.reward,
            start_match: env.score(self.start),
            terminal_match: env.score(end),
            success: env.is_success(end),
            max_value,
            action_counts: self.counts,
            no_candidate_steps: self.no_candidates,
            updates,
        }
    }
}

/// DQN state: online and target networks, optimizer and replay buffer.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    pub online: ParamSet,
    pub target: ParamSet,
    pub optimizer: Optimizer,
    pub buffer: ReplayBuffer,
    updates: u64,
    batch_size: usize,
    sync_interval: u64,
    gamma: f64,
    eta: f64,
}

impl DqnLearner {
    pub fn new(params: ParamSet, cfg: &TrainConfig) -> Self {
        Self {
            target: params.clone(),
            optimizer: Optimizer::new(cfg.optimizer, params.len()),
            online: params,
            buffer: ReplayBuffer::new(cfg.replay_capacity, cfg.per_alpha, cfg.per_epsilon),
            updates: 0,
            batch_size: cfg.batch_size,
            sync_interval: cfg.target_sync_interval,
            gamma: cfg.gamma,
            eta: cfg.eta,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Stores `t` and, once the buffer holds a full batch, performs one
    /// prioritized update. Returns whether an update happened.
    pub fn observe(
        &mut self,
        t: Transition,
        env: &Environment,
        per_beta: f64,
        rng: &mut Rng,
    ) -> Result<bool, AgentError> {
        self.buffer.push(t);
        if self.buffer.len() < self.batch_size {
            return Ok(false);
        }
        let sample = self.buffer.sample(self.batch_size, per_beta, rng);
        let batch: Vec<Experience<'_>> = sample
            .transitions
            .iter()
            .map(|t| Experience {
                state: env.state(t.state as usize),
                action: t.action as usize,
                reward: t.reward,
                next: env.state(t.next as usize),
                done: t.done,
            })
            .collect();
        let tds = dqn_update(
            &mut self.online,
            &self.target,
            &batch,
            &sample.weights,
            self.gamma,
            self.eta,
            &mut self.optimizer,
        )?;
        for (&i, td) in sample.indices.iter().zip(tds) {
            self.buffer.set_td_error(i, td);
        }
        self.updates += 1;
        if self.updates % self.sync_interval == 0 {
            self.target.values_mut().copy_from_slice(self.online.values());
        }
        Ok(true)
    }
}

fn train_dqn(
    env: &Environment,
    cfg: &TrainConfig,
    params: ParamSet,
    probes: &[usize],
) -> Result<(ParamSet, Vec<EpisodeLog>), AgentError> {
    let mut rng = rng::stream(cfg.seed, "train", 0);
    let mut learner = DqnLearner::new(params, cfg);
    let mut logs = Vec::with_capacity(cfg.episodes);
    for ep in 0..cfg.episodes {
        let eps = cfg.epsilon(ep);
        let beta = cfg.per_beta(ep);
        let policy = Policy::EpsilonGreedy(eps);
        let mut cur = env.random_start(&mut rng);
        let mut tally = Tally::new(cur);
        while !env.is_success(cur) && tally.steps < cfg.max_steps {
            let action = policy.act(&learner.online, env.state(cur), &mut rng)?;
            let rec = env.transition(cur, action, &mut rng)?;
            let t = Transition {
                state: cur as u32,
                action: action.index() as u8,
                reward: rec.reward,
                next: rec.to as u32,
                done: env.is_success(rec.to),
            };
            learner.observe(t, env, beta, &mut rng)?;
            tally.record(action, rec.reward, rec.no_candidates);
            cur = rec.to;
        }
        let mv = max_value(learner.online.network(), learner.online.values(), env, probes)?;
        logs.push(tally.finish(ep, Some(eps), cur, env, mv, learner.online.version()));
    }
    Ok((learner.online, logs))
}

fn train_sarsa(
    env: &Environment,
    cfg: &TrainConfig,
    mut params: ParamSet,
    probes: &[usize],
) -> Result<(ParamSet, Vec<EpisodeLog>), AgentError> {
    let mut rng = rng::stream(cfg.seed, "train", 0);
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    let mut logs = Vec::with_capacity(cfg.episodes);
    for ep in 0..cfg.episodes {
        let eps = cfg.epsilon(ep);
        let policy = Policy::EpsilonGreedy(eps);
        let mut cur = env.random_start(&mut rng);
        let mut tally = Tally::new(cur);
        if !env.is_success(cur) {
            let mut action = policy.act(&params, env.state(cur), &mut rng)?;
            while tally.steps < cfg.max_steps {
                let rec = env.transition(cur, action, &mut rng)?;
                let done = env.is_success(rec.to);
                let next_action = if done {
                    action
                } else {
                    policy.act(&params, env.state(rec.to), &mut rng)?
                };
                let exp = Experience {
                    state: env.state(cur),
                    action: action.index(),
                    reward: rec.reward,
                    next: env.state(rec.to),
                    done,
                };
                sarsa_update(&mut params, &exp, next_action.index(), cfg.gamma, cfg.eta, &mut opt)?;
                tally.record(action, rec.reward, rec.no_candidates);
                cur = rec.to;
                action = next_action;
                if done {
                    break;
                }
            }
        }
        let mv = max_value(params.network(), params.values(), env, probes)?;
        logs.push(tally.finish(ep, Some(eps), cur, env, mv, params.version()));
    }
    Ok((params, logs))
}

/// Where actor-critic parameters live: owned (A2C) or shared (A3C).
trait AcStore {
    fn snapshot(&self, out: &mut Vec<f64>);
    fn apply(&mut self, grad: &[f64], eta: f64);
}

struct Owned {
    params: ParamSet,
    opt: Optimizer,
}

impl AcStore for Owned {
    fn snapshot(&self, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(self.params.values());
    }

    fn apply(&mut self, grad: &[f64], eta: f64) {
        self.params.apply_update(&mut self.opt, grad, eta);
    }
}

/// Shared parameters plus shared optimizer state, updated without locks.
struct Shared<'a> {
    params: &'a SharedParams,
    m: &'a SharedParams,
    v: &'a SharedParams,
    t: &'a AtomicU64,
    kind: OptimizerKind,
    adam: (f64, f64, f64),
}

impl AcStore for Shared<'_> {
    fn snapshot(&self, out: &mut Vec<f64>) {
        self.params.snapshot_into(out);
    }

    fn apply(&mut self, grad: &[f64], eta: f64) {
        let mut p = self.params.view();
        match self.kind {
            OptimizerKind::Sgd => {
                for (i, &g) in grad.iter().enumerate() {
                    p.set(i, p.get(i) - eta * g);
                }
            }
            OptimizerKind::Adam => {
                let t = self.t.fetch_add(1, Ordering::SeqCst) + 1;
                adam_step(&mut p, &mut self.m.view(), &mut self.v.view(), t, grad, eta, self.adam);
            }
        }
        self.params.bump_version();
    }
}

/// One actor-critic episode with per-step updates.
fn ac_episode<S: AcStore>(
    store: &mut S,
    net: &Network,
    env: &Environment,
    cfg: &TrainConfig,
    episode: usize,
    probes: &[usize],
    rng: &mut Rng,
) -> Result<EpisodeLog, AgentError> {
    let coef = A2cCoefficients {
        gamma: cfg.gamma,
        entropy: cfg.entropy_coef,
        value: cfg.value_coef,
    };
    let mut snap = Vec::with_capacity(net.n_params());
    let mut grad = vec![0.0; net.n_params()];
    let mut cur = env.random_start(rng);
    let mut tally = Tally::new(cur);
    while !env.is_success(cur) && tally.steps < cfg.max_steps {
        store.snapshot(&mut snap);
        let action = Policy::Stochastic.act_with(net, &snap, env.state(cur), rng)?;
        let rec = env.transition(cur, action, rng)?;
        let exp = Experience {
            state: env.state(cur),
            action: action.index(),
            reward: rec.reward,
            next: env.state(rec.to),
            done: env.is_success(rec.to),
        };
        grad.iter_mut().for_each(|g| *g = 0.0);
        a2c_gradient(net, &snap, &exp, coef, &mut grad)?;
        store.apply(&grad, cfg.eta);
        tally.record(action, rec.reward, rec.no_candidates);
        cur = rec.to;
    }
    store.snapshot(&mut snap);
    let mv = max_value(net, &snap, env, probes)?;
    // The caller fills in `updates` from its own view of the version.
    Ok(tally.finish(episode, None, cur, env, mv, 0))
}

fn train_a2c(
    env: &Environment,
    cfg: &TrainConfig,
    params: ParamSet,
    probes: &[usize],
) -> Result<(ParamSet, Vec<EpisodeLog>), AgentError> {
    let mut rng = rng::stream(cfg.seed, "train", 0);
    let net = params.network().clone();
    let opt = Optimizer::new(cfg.optimizer, params.len());
    let mut store = Owned { params, opt };
    let mut logs = Vec::with_capacity(cfg.episodes);
    for ep in 0..cfg.episodes {
        let mut log = ac_episode(&mut store, &net, env, cfg, ep, probes, &mut rng)?;
        log.updates = store.params.version();
        logs.push(log);
    }
    Ok((store.params, logs))
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

/// Asynchronous advantage actor-critic: `cfg.workers` threads pull episode
/// indices from a shared counter and apply one-step actor-critic updates to
/// shared parameters without locking. Worker `w` draws from the stream
/// `(seed, "train", w)`, so one worker replays A2C exactly.
pub fn a3c_train(env: &Environment, cfg: &TrainConfig) -> Result<TrainOutput, AgentError> {
    cfg.validate()?;
    let spec = cfg.network_spec(Algorithm::A3c, env.universe().state_dim());
    let init = ParamSet::new(spec.clone(), &mut rng::stream(cfg.seed, "init", 0))?;
    let net = init.network().clone();
    let probes = probe_set(env, cfg);
    let n = init.len();
    let shared = SharedParams::new(init.values(), 0);
    let m = SharedParams::new(&vec![0.0; n], 0);
    let v = SharedParams::new(&vec![0.0; n], 0);
    let t = AtomicU64::new(0);
    let defaults = Adam::new(0);
    let adam = (defaults.beta1, defaults.beta2, defaults.eps);
    let next_episode = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let logs = Mutex::new(Vec::with_capacity(cfg.episodes));

    let results: Vec<Result<(), AgentError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.workers)
            .map(|w| {
                let (shared, m, v, t) = (&shared, &m, &v, &t);
                let (net, probes, next_episode, stop, logs) =
                    (&net, &probes, &next_episode, &stop, &logs);
                scope.spawn(move || -> Result<(), AgentError> {
                    let mut rng = rng::stream(cfg.seed, "train", w as u64);
                    let mut store = Shared {
                        params: shared,
                        m,
                        v,
                        t,
                        kind: cfg.optimizer,
                        adam,
                    };
                    loop {
                        if stop.load(Ordering::SeqCst) {
                            return Ok(());
                        }
                        let ep = next_episode.fetch_add(1, Ordering::SeqCst);
                        if ep >= cfg.episodes {
                            return Ok(());
                        }
                        match ac_episode(&mut store, net, env, cfg, ep, probes, &mut rng) {
                            Ok(mut log) => {
                                log.updates = shared.version();
                                logs.lock().expect("log collector poisoned").push(log);
                            }
                            Err(e) => {
                                stop.store(true, Ordering::SeqCst);
                                return Err(e);
                            }
                        }
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(w, h)| {
                h.join().unwrap_or_else(|p| {
                    Err(AgentError::WorkerPanic {
                        worker: w,
                        message: panic_message(p.as_ref()),
                    })
                })
            })
            .collect()
    });
    for r in results {
        r?;
    }
    let mut episodes = logs.into_inner().expect("log collector poisoned");
    episodes.sort_by_key(|e| e.episode);
    let params = ParamSet::from_values(spec, shared.snapshot(), shared.version())?;
    Ok(TrainOutput {
        params,
        log: TrainLog {
            header: header(Algorithm::A3c, env, cfg),
            episodes,
        },
    })
}
