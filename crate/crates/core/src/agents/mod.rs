//! Learners (DQN with prioritized replay, SARSA, A2C, A3C), exploration
//! policies and greedy inference.

mod replay;
mod train;
mod updates;

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{argmax, softmax, ApproxError, Head, Network, NetworkSpec, OptimizerKind, ParamSet};
use crate::domain::TargetSpec;
use crate::env::{Action, EnvError, Environment, EpisodeConfig, StepRecord};
use crate::rng::{self, Rng};

pub use replay::{ReplayBuffer, Sample, SumTree, Transition};
pub use train::{a3c_train, train_agent, DqnLearner, TrainOutput};
pub use updates::{
    a2c_gradient, a2c_update, dqn_update, sarsa_update, A2cCoefficients, A2cStats, Experience,
};

pub const TRAIN_LOG_SCHEMA: &str = "quizforge.trainlog/1";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model expects {model}-dim states, universe has {universe}")]
    DimensionMismatch { model: usize, universe: usize },
    #[error("worker {worker} failed: {message}")]
    WorkerPanic { worker: usize, message: String },
    #[error("train log line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dqn,
    Sarsa,
    A2c,
    A3c,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::Dqn, Self::Sarsa, Self::A2c, Self::A3c];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dqn => "dqn",
            Self::Sarsa => "sarsa",
            Self::A2c => "a2c",
            Self::A3c => "a3c",
        }
    }

    pub fn head(self) -> Head {
        match self {
            Self::Dqn | Self::Sarsa => Head::Q,
            Self::A2c | Self::A3c => Head::ActorCritic,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dqn" => Ok(Self::Dqn),
            "sarsa" => Ok(Self::Sarsa),
            "a2c" => Ok(Self::A2c),
            "a3c" => Ok(Self::A3c),
            _ => Err(format!("unknown algorithm {s:?} (expected dqn, sarsa, a2c or a3c)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub max_steps: usize,
    pub gamma: f64,
    pub eta: f64,
    /// DQN minibatch size; SARSA and the actor-critic learners are online.
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    /// DQN target network refresh period, in gradient updates.
    pub target_sync_interval: u64,
    pub replay_capacity: usize,
    pub per_alpha: f64,
    /// PER importance exponent at the first episode; annealed linearly to 1.
    pub per_beta_start: f64,
    pub per_epsilon: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// A3C worker threads.
    pub workers: usize,
    pub optimizer: OptimizerKind,
    pub hidden: Vec<usize>,
    /// States on which the max Q (or V) curve is evaluated.
    pub probe_states: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 5000,
            max_steps: 100,
            gamma: 0.95,
            eta: 0.005,
            batch_size: 128,
            epsilon_start: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.05,
            target_sync_interval: 500,
            replay_capacity: 50_000,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_epsilon: 1e-6,
            entropy_coef: 0.01,
            value_coef: 0.5,
            workers: 4,
            optimizer: OptimizerKind::Adam,
            hidden: vec![64, 64],
            probe_states: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad("eta must be > 0");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return bad("epsilon_decay must lie in (0, 1]");
        }
        if !(self.epsilon_min >= 0.0 && self.epsilon_min <= 1.0) {
            return bad("epsilon_min must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) {
            return bad("epsilon_start must lie in [0, 1]");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay_capacity must be >= batch_size");
        }
        if self.target_sync_interval == 0 {
            return bad("target_sync_interval must be >= 1");
        }
        if !(self.per_alpha >= 0.0 && self.per_alpha.is_finite()) {
            return bad("per_alpha must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.per_beta_start) {
            return bad("per_beta_start must lie in [0, 1]");
        }
        if !(self.per_epsilon > 0.0 && self.per_epsilon.is_finite()) {
            return bad("per_epsilon must be > 0");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return bad("entropy_coef and value_coef must be >= 0");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return bad("hidden widths must be >= 1");
        }
        Ok(())
    }

    /// Exploration rate used during episode `episode` (0-based).
    pub fn epsilon(&self, episode: usize) -> f64 {
        let e = self.epsilon_start * self.epsilon_decay.powf(episode as f64);
        e.max(self.epsilon_min)
    }

    /// PER importance exponent for episode `episode`.
    pub fn per_beta(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return 1.0;
        }
        let frac = episode as f64 / (self.episodes - 1) as f64;
        self.per_beta_start + (1.0 - self.per_beta_start) * frac.min(1.0)
    }

    pub fn network_spec(&self, algorithm: Algorithm, input_dim: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            hidden: self.hidden.clone(),
            n_actions: Action::COUNT,
            head: algorithm.head(),
            bias: true,
        }
    }
}

/// Behavior or evaluation policy over a parameter snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    EpsilonGreedy(f64),
    Greedy,
    /// Samples from the softmax head (softmax of Q for Q-networks).
    Stochastic,
}

impl Policy {
    pub fn act(&self, params: &ParamSet, state: &[f64], rng: &mut Rng) -> Result<Action, AgentError> {
        self.act_with(params.network(), params.values(), state, rng)
    }

    pub fn act_with(
        &self,
        net: &Network,
        values: &[f64],
        state: &[f64],
        rng: &mut Rng,
    ) -> Result<Action, AgentError> {
        let index = match *self {
            Policy::EpsilonGreedy(eps) => {
                if rng.random::<f64>() < eps {
                    rng.random_range(0..Action::COUNT)
                } else {
                    greedy_index(net, values, state)?
                }
            }
            Policy::Greedy => greedy_index(net, values, state)?,
            Policy::Stochastic => {
                let probs = action_probabilities(net, values, state)?;
                sample_categorical(&probs, rng)
            }
        };
        Ok(Action::from_index(index).expect("index below Action::COUNT"))
    }
}

fn greedy_index(net: &Network, values: &[f64], state: &[f64]) -> Result<usize, AgentError> {
    let acts = net.forward(values, state)?;
    let out = &acts.output()[..net.spec().n_actions];
    Ok(match net.spec().head {
        Head::Q => argmax(out),
        Head::ActorCritic => argmax(&softmax(out)),
    })
}

pub fn action_probabilities(net: &Network, values: &[f64], state: &[f64]) -> Result<Vec<f64>, AgentError> {
    let acts = net.forward(values, state)?;
    Ok(softmax(&acts.output()[..net.spec().n_actions]))
}

pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Per-episode training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub start: usize,
    pub end: usize,
    pub steps: usize,
    pub reward: f64,
    pub start_match: f64,
    pub terminal_match: f64,
    pub success: bool,
    /// Max over actions of Q (or max V) over the probe states.
    pub max_value: f64,
    pub action_counts: [u64; 4],
    pub no_candidate_steps: u64,
    /// Parameter version after the episode.
    pub updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHeader {
    pub schema: String,
    pub algorithm: Algorithm,
    pub config: TrainConfig,
    pub target: TargetSpec,
    pub episode: EpisodeConfig,
    pub universe_size: usize,
    pub universe_seed: u64,
    pub state_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub header: TrainHeader,
    pub episodes: Vec<EpisodeLog>,
}

impl TrainLog {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), AgentError> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for e in &self.episodes {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, AgentError> {
        let mut lines = input.lines().enumerate();
        let fmt_err = |line: usize, message: String| AgentError::Format { line, message };
        let (_, first) = lines
            .next()
            .ok_or_else(|| fmt_err(1, "missing header".into()))?;
        let header: TrainHeader =
            serde_json::from_str(&first?).map_err(|e| fmt_err(1, e.to_string()))?;
        if header.schema != TRAIN_LOG_SCHEMA {
            return Err(fmt_err(1, format!("unsupported schema {:?}", header.schema)));
        }
        let mut episodes = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: EpisodeLog =
                serde_json::from_str(&line).map_err(|e| fmt_err(i + 1, e.to_string()))?;
            episodes.push(e);
        }
        Ok(Self { header, episodes })
    }

    pub fn total_steps(&self) -> u64 {
        self.episodes.iter().map(|e| e.steps as u64).sum()
    }
}

/// Result of one greedy inference session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub start: usize,
    pub final_quiz: usize,
    pub final_match: f64,
    /// Best-scoring quiz visited, including the start.
    pub best_quiz: usize,
    pub best_match: f64,
    /// Steps taken before `best_quiz` was first reached.
    pub best_step: usize,
    pub iterations: usize,
    pub success: bool,
    pub trace: Vec<StepRecord>,
    #[serde(skip)]
    pub elapsed_secs: f64,
}

pub fn check_dimension(params: &ParamSet, env: &Environment) -> Result<(), AgentError> {
    let model = params.spec().input_dim;
    let universe = env.universe().state_dim();
    if model != universe {
        return Err(AgentError::DimensionMismatch { model, universe });
    }
    Ok(())
}

/// Greedy session from `start`; the candidate draws use a stream derived
/// from `(seed, start)`, so the result is a pure function of its inputs.
pub fn infer_quiz(
    params: &ParamSet,
    env: &Environment,
    start: usize,
    seed: u64,
) -> Result<Inference, AgentError> {
    check_dimension(params, env)?;
    let clock = Instant::now();
    let mut rng = rng::stream(seed, "infer", start as u64);
    let net = params.network();
    let values = params.values();
    let episode = env.run_episode(
        start,
        |s, r| {
            Policy::Greedy
                .act_with(net, values, s, r)
                .expect("state dimension checked")
        },
        &mut rng,
    )?;
    let elapsed_secs = clock.elapsed().as_secs_f64();
    let mut best = (start, env.score(start), 0);
    for (i, rec) in episode.trace.iter().enumerate() {
        if rec.match_after > best.1 {
            best = (rec.to, rec.match_after, i + 1);
        }
    }
    Ok(Inference {
        start,
        final_quiz: episode.end,
        final_match: env.score(episode.end),
        best_quiz: best.0,
        best_match: best.1,
        best_step: best.2,
        iterations: episode.trace.len(),
        success: episode.success,
        trace: episode.trace,
        elapsed_secs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::NetworkSpec;

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epsilon(0), 1.0);
        assert!((cfg.epsilon(1) - 0.995).abs() < 1e-15);
        assert!(0.995f64.powi(1000) < 0.0068);
        assert_eq!(cfg.epsilon(1000), 0.05);
        let mut last = f64::INFINITY;
        for e in 0..2000 {
            let x = cfg.epsilon(e);
            assert!(x <= last && x >= cfg.epsilon_min);
            last = x;
        }
    }

    #[test]
    fn per_beta_anneals_to_one() {
        let cfg = TrainConfig {
            episodes: 11,
            ..Default::default()
        };
        assert_eq!(cfg.per_beta(0), 0.4);
        assert!((cfg.per_beta(5) - 0.7).abs() < 1e-12);
        assert_eq!(cfg.per_beta(10), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { gamma: 1.5, ..Default::default() },
            TrainConfig { eta: 0.0, ..Default::default() },
            TrainConfig { epsilon_decay: 0.0, ..Default::default() },
            TrainConfig { epsilon_min: -0.1, ..Default::default() },
            TrainConfig { workers: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn uniform_exploration_with_epsilon_one() {
        let p = ParamSet::new(NetworkSpec::q(15), &mut rng::from_seed(1)).unwrap();
        let mut r = rng::from_seed(2);
        let mut counts = [0u32; 4];
        let n = 40_000;
        for _ in 0..n {
            let a = Policy::EpsilonGreedy(1.0).act(&p, &[0.1; 15], &mut r).unwrap();
            counts[a.index()] += 1;
        }
        let mean = n as f64 / 4.0;
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn stochastic_policy_follows_probabilities() {
        let mut r = rng::from_seed(3);
        let probs = [0.1, 0.2, 0.3, 0.4];
        let mut counts = [0u32; 4];
        for _ in 0..50_000 {
            counts[sample_categorical(&probs, &mut r)] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            assert!((*c as f64 / 50_000.0 - p).abs() < 0.01);
        }
    }

    #[test]
    fn algorithm_names_roundtrip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("ppo".parse::<Algorithm>().is_err());
    }
}
