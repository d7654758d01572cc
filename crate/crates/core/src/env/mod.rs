//! The quiz-navigation MDP.
//!
//! A state is a quiz of the [`Universe`]; each of the four actions moves to a
//! quiz drawn uniformly from that action's candidate list. Rewards are
//! computed from precomputed per-quiz target scores.

mod universe;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use universe::{Universe, DEDUP_THRESHOLD, NEIGHBORS, UNIVERSE_SCHEMA};

use crate::domain::{self, DomainError, TargetSpec};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("pool of {pool} MCQs cannot provide {n} distinct {k}-subsets")]
    InsufficientPool { pool: usize, k: usize, n: usize },
    #[error("quiz {quiz} has no candidate for {action}")]
    NoCandidates { quiz: usize, action: Action },
    #[error("quiz index {index} out of range ({len} quizzes)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("target has {target} entries, universe has {universe}")]
    TargetDimension { target: usize, universe: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("universe file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    SimTopic = 0,
    SimLevel = 1,
    DissTopic = 2,
    DissLevel = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::SimTopic,
        Action::SimLevel,
        Action::DissTopic,
        Action::DissLevel,
    ];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_similarity(self) -> bool {
        matches!(self, Action::SimTopic | Action::SimLevel)
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::SimTopic => "SimTopic",
            Action::SimLevel => "SimLevel",
            Action::DissTopic => "DissTopic",
            Action::DissLevel => "DissLevel",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RewardScheme {
    /// Reward is the destination's target match.
    #[serde(alias = "r1")]
    R1,
    /// Reward is the change in target match.
    #[default]
    #[serde(alias = "r2")]
    R2,
}

impl FromStr for RewardScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "r1" => Ok(Self::R1),
            "r2" => Ok(Self::R2),
            _ => Err(format!("unknown reward scheme {s:?} (expected r1 or r2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    /// Episodes stop once the current quiz scores at least this much.
    pub beta: f64,
    pub reward: RewardScheme,
    pub gamma: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 100,
            beta: 0.85,
            reward: RewardScheme::R2,
            gamma: 0.95,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_steps == 0 {
            return Err(EnvError::InvalidConfig("max_steps must be >= 1".into()));
        }
        // Thresholds above 1 are accepted: they make success unreachable.
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(EnvError::InvalidConfig("beta must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(EnvError::InvalidConfig("gamma must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One transition of a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub from: usize,
    pub action: Action,
    pub to: usize,
    pub reward: f64,
    pub match_before: f64,
    pub match_after: f64,
    /// The action had no candidate and the agent stayed put.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_candidates: bool,
}

/// A universe bound to one target: per-quiz scores are computed once.
#[derive(Debug, Clone)]
pub struct Environment {
    universe: Arc<Universe>,
    target: TargetSpec,
    cfg: EpisodeConfig,
    topic_scores: Arc<Vec<f64>>,
    diff_scores: Arc<Vec<f64>>,
    scores: Arc<Vec<f64>>,
}

impl Environment {
    pub fn new(
        universe: Arc<Universe>,
        target: TargetSpec,
        cfg: EpisodeConfig,
    ) -> Result<Self, EnvError> {
        if target.tc.len() != universe.n_topics() {
            return Err(EnvError::TargetDimension {
                target: target.tc.len(),
                universe: universe.n_topics(),
            });
        }
        if target.td.len() != universe.n_levels() {
            return Err(EnvError::TargetDimension {
                target: target.td.len(),
                universe: universe.n_levels(),
            });
        }
        cfg.validate()?;
        let mut topic_scores = Vec::with_capacity(universe.len());
        let mut diff_scores = Vec::with_capacity(universe.len());
        for q in universe.quizzes() {
            topic_scores.push(domain::topic_match(q, &target.tc)?);
            diff_scores.push(domain::diff_match(q, &target.td)?);
        }
        let scores = topic_scores
            .iter()
            .zip(&diff_scores)
            .map(|(&t, &d)| domain::scalarize(target.alpha, t, d))
            .collect();
        Ok(Self {
            universe,
            target,
            cfg,
            topic_scores: Arc::new(topic_scores),
            diff_scores: Arc::new(diff_scores),
            scores: Arc::new(scores),
        })
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn universe_arc(&self) -> &Arc<Universe> {
        &self.universe
    }

    pub fn target(&self) -> &TargetSpec {
        &self.target
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.universe.len()
    }

    pub fn is_empty(&self) -> bool {
        self.universe.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        self.universe.state(i)
    }

    pub fn score(&self, i: usize) -> f64 {
        self.scores[i]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn topic_score(&self, i: usize) -> f64 {
        self.topic_scores[i]
    }

    pub fn diff_score(&self, i: usize) -> f64 {
        self.diff_scores[i]
    }

    pub fn is_success(&self, i: usize) -> bool {
        self.scores[i] >= self.cfg.beta
    }

    pub fn random_start(&self, rng: &mut Rng) -> usize {
        rng.random_range(0..self.len())
    }

    fn reward(&self, before: f64, after: f64) -> f64 {
        match self.cfg.reward {
            RewardScheme::R1 => after,
            RewardScheme::R2 => after - before,
        }
    }

    /// Applies `action` at `current`.
    pub fn step(
        &self,
        current: usize,
        action: Action,
        rng: &mut Rng,
    ) -> Result<StepRecord, EnvError> {
        let cands = self.universe.candidates(current, action)?;
        let to = cands[rng.random_range(0..cands.len())] as usize;
        let before = self.scores[current];
        let after = self.scores[to];
        Ok(StepRecord {
            from: current,
            action,
            to,
            reward: self.reward(before, after),
            match_before: before,
            match_after: after,
            no_candidates: false,
        })
    }

    /// Like [`Environment::step`], but an empty candidate list becomes a
    /// zero-reward self-transition.
    pub fn transition(
        &self,
        current: usize,
        action: Action,
        rng: &mut Rng,
    ) -> Result<StepRecord, EnvError> {
        match self.step(current, action, rng) {
            Err(EnvError::NoCandidates { .. }) => {
                let m = self.scores[current];
                Ok(StepRecord {
                    from: current,
                    action,
                    to: current,
                    reward: 0.0,
                    match_before: m,
                    match_after: m,
                    no_candidates: true,
                })
            }
            other => other,
        }
    }

    /// Runs one session from `start` under `policy`, stopping on success or
    /// after `max_steps` transitions.
    pub fn run_episode<P>(
        &self,
        start: usize,
        mut policy: P,
        rng: &mut Rng,
    ) -> Result<Episode, EnvError>
    where
        P: FnMut(&[f64], &mut Rng) -> Action,
    {
        if start >= self.len() {
            return Err(EnvError::IndexOutOfRange {
                index: start,
                len: self.len(),
            });
        }
        let mut trace = Vec::new();
        let mut current = start;
        while !self.is_success(current) && trace.len() < self.cfg.max_steps {
            let action = policy(self.state(current), rng);
            let rec = self.transition(current, action, rng)?;
            current = rec.to;
            trace.push(rec);
        }
        Ok(Episode {
            start,
            end: current,
            success: self.is_success(current),
            trace,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start: usize,
    pub end: usize,
    pub success: bool,
    pub trace: Vec<StepRecord>,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.trace.iter().map(|r| r.reward).sum()
    }
}

/// Discounted sum of per-step match improvements; the first step is weighted
/// by `gamma^1`.
pub fn session_match(trace: &[StepRecord], gamma: f64) -> f64 {
    let mut weight = 1.0;
    trace
        .iter()
        .map(|r| {
            weight *= gamma;
            weight * (r.match_after - r.match_before)
        })
        .sum()
}
