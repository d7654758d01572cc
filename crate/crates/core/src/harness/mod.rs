//! Experiment orchestration: alpha sweeps, repeated inference, transfer and
//! report emission.

mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{self, AgentError, Algorithm, TrainConfig, TrainLog};
use crate::approx::ParamSet;
use crate::datagen::{self, DataError, Dataset, DatasetSpec};
use crate::domain::{uniform, DomainError, TargetSpec};
use crate::env::{Action, EnvError, Environment, EpisodeConfig, Universe};
use crate::oracle;
use crate::rng;

pub use report::{
    aggregate, emit_report, read_rows_jsonl, write_rows_jsonl, CellSummary, CurveRecord,
    ReportFiles, TrajectoryRecord, TrajectoryStep, CURVE_SCHEMA, REPORT_SCHEMA, ROWS_SCHEMA,
    TRAJECTORY_SCHEMA,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("window {start}..{end} selects no steps in a log of {len} episodes")]
    EmptyWindow { start: usize, end: usize, len: usize },
    #[error("model expects {model}-dim states, destination universe has {universe}")]
    DimensionMismatch { model: usize, universe: usize },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("no rows to report")]
    NoRows,
    #[error("rows file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(AgentError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::DimensionMismatch { model, universe } => {
                HarnessError::DimensionMismatch { model, universe }
            }
            other => HarnessError::Agent(other),
        }
    }
}

/// Anything that can fill a plan cell: a learner or the exhaustive oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Dqn,
    Sarsa,
    A2c,
    A3c,
    Oracle,
}

impl Solver {
    pub fn algorithm(self) -> Option<Algorithm> {
        match self {
            Solver::Dqn => Some(Algorithm::Dqn),
            Solver::Sarsa => Some(Algorithm::Sarsa),
            Solver::A2c => Some(Algorithm::A2c),
            Solver::A3c => Some(Algorithm::A3c),
            Solver::Oracle => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self.algorithm() {
            Some(a) => a.name(),
            None => "oracle",
        }
    }
}

impl From<Algorithm> for Solver {
    fn from(a: Algorithm) -> Self {
        match a {
            Algorithm::Dqn => Solver::Dqn,
            Algorithm::Sarsa => Solver::Sarsa,
            Algorithm::A2c => Solver::A2c,
            Algorithm::A3c => Solver::A3c,
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("oracle") {
            return Ok(Solver::Oracle);
        }
        s.parse::<Algorithm>()
            .map(Solver::from)
            .map_err(|_| format!("unknown algorithm {s:?} (expected dqn, sarsa, a2c, a3c or oracle)"))
    }
}

/// Where a plan's MCQ pool comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetRef {
    Synthetic {
        name: String,
        #[serde(flatten)]
        spec: DatasetSpec,
    },
    Csv {
        name: String,
        path: PathBuf,
        /// Keep a random subset of this many topics.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        topic_subset: Option<usize>,
        #[serde(default)]
        subset_seed: u64,
    },
}

impl DatasetRef {
    pub fn name(&self) -> &str {
        match self {
            DatasetRef::Synthetic { name, .. } | DatasetRef::Csv { name, .. } => name,
        }
    }

    pub fn load(&self) -> Result<Dataset, DataError> {
        match self {
            DatasetRef::Synthetic { spec, .. } => datagen::generate_synthetic(spec),
            DatasetRef::Csv {
                path,
                topic_subset,
                subset_seed,
                ..
            } => {
                let ds = datagen::load_dataset(path)?;
                match topic_subset {
                    Some(count) => {
                        let topics = datagen::sample_topics(ds.n_topics(), *count, *subset_seed);
                        datagen::filter_topics(&ds, &topics)
                    }
                    None => Ok(ds),
                }
            }
        }
    }
}

/// Named teacher goals. Biased targets split the topic mass evenly over two
/// topics and keep difficulties uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetRef {
    Uniform,
    Bias,
    /// `Bias` with its topic coordinates permuted by a seeded shuffle.
    BiasPrime {
        #[serde(default)]
        seed: u64,
    },
    Custom {
        name: String,
        tc: Vec<f64>,
        td: Vec<f64>,
    },
}

impl TargetRef {
    pub fn name(&self) -> String {
        match self {
            TargetRef::Uniform => "uniform".into(),
            TargetRef::Bias => "bias".into(),
            TargetRef::BiasPrime { .. } => "bias_prime".into(),
            TargetRef::Custom { name, .. } => name.clone(),
        }
    }

    /// Topic and difficulty vectors for a pool with the given vocabularies.
    pub fn vectors(&self, n_topics: usize, n_levels: usize) -> (Vec<f64>, Vec<f64>) {
        match self {
            TargetRef::Uniform => (uniform(n_topics), uniform(n_levels)),
            TargetRef::Bias => (biased_topics(n_topics), uniform(n_levels)),
            TargetRef::BiasPrime { seed } => {
                (permuted_bias(n_topics, *seed), uniform(n_levels))
            }
            TargetRef::Custom { tc, td, .. } => (tc.clone(), td.clone()),
        }
    }

    pub fn spec(
        &self,
        n_topics: usize,
        n_levels: usize,
        alpha: f64,
        beta: f64,
    ) -> Result<TargetSpec, DomainError> {
        let (tc, td) = self.vectors(n_topics, n_levels);
        TargetSpec::new(tc, td, alpha, beta)
    }
}

impl FromStr for TargetRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(TargetRef::Uniform),
            "bias" => Ok(TargetRef::Bias),
            "bias_prime" | "bias-prime" => Ok(TargetRef::BiasPrime { seed: 0 }),
            _ => Err(format!("unknown target {s:?} (expected uniform, bias or bias_prime)")),
        }
    }
}

fn bias_support(n: usize) -> Vec<usize> {
    match n {
        0 => vec![],
        1 => vec![0],
        2..=4 => vec![0, n - 1],
        _ => vec![n / 2, n - 2],
    }
}

/// Half the mass on topic `n/2`, half on topic `n-2` (topics 5 and 8 of 10).
pub fn biased_topics(n: usize) -> Vec<f64> {
    let support = bias_support(n);
    let mut v = vec![0.0; n];
    for &i in &support {
        v[i] = 1.0 / support.len() as f64;
    }
    v
}

/// `biased_topics(n)` with coordinates moved by a seeded permutation. The
/// permutation is redrawn until the support changes, when that is possible.
pub fn permuted_bias(n: usize, seed: u64) -> Vec<f64> {
    let base = biased_topics(n);
    let support = bias_support(n);
    let mut r = rng::stream(seed, "bias-prime", 0);
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..64 {
        perm.shuffle(&mut r);
        let mut moved: Vec<usize> = support.iter().map(|&i| perm[i]).collect();
        moved.sort_unstable();
        if moved != support || n <= support.len() {
            break;
        }
    }
    let mut out = vec![0.0; n];
    for (i, &p) in perm.iter().enumerate() {
        out[p] = base[i];
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub datasets: Vec<DatasetRef>,
    pub targets: Vec<TargetRef>,
    pub solvers: Vec<Solver>,
    pub alphas: Vec<f64>,
    /// Inference starts per cell.
    pub runs: usize,
    pub seed: u64,
    pub universe_size: usize,
    pub k: usize,
    /// Fixed universe seed; derived from `seed` and the dataset name when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub universe_seed: Option<u64>,
    pub episode: EpisodeConfig,
    pub train: TrainConfig,
}

impl ExperimentPlan {
    pub fn default_alphas() -> Vec<f64> {
        vec![0.0, 0.25, 0.5, 0.75, 1.0]
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidPlan(m.to_string()));
        if self.runs == 0 {
            return bad("runs must be >= 1");
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("alphas must be a non-empty subset of [0, 1]");
        }
        if self.datasets.is_empty() || self.targets.is_empty() || self.solvers.is_empty() {
            return bad("datasets, targets and algorithms must be non-empty");
        }
        if self.universe_size == 0 || self.k == 0 {
            return bad("universe_size and k must be >= 1");
        }
        self.episode.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// Identifies one cell of a plan's cross-product.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub dataset: String,
    pub target: String,
    pub algorithm: String,
    /// Alpha rendered with its shortest round-trip representation.
    pub alpha: String,
}

impl CellKey {
    pub fn new(dataset: &str, target: &str, algorithm: &str, alpha: f64) -> Self {
        Self {
            dataset: dataset.into(),
            target: target.into(),
            algorithm: algorithm.into(),
            alpha: format!("{alpha}"),
        }
    }

    pub fn label(&self) -> String {
        format!("{}/{}/{}/{}", self.dataset, self.target, self.algorithm, self.alpha)
    }
}

/// One inference run inside a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub target: String,
    pub algorithm: String,
    pub alpha: f64,
    pub run: usize,
    pub start: usize,
    /// Similarity of the best quiz reached.
    pub similarity: f64,
    /// Steps in the session (universe size for the oracle).
    pub iterations: usize,
    /// Steps until the best quiz was first reached.
    pub best_step: usize,
    pub final_similarity: f64,
    pub success: bool,
    pub action_histogram: [u64; 4],
    /// Wall-clock seconds; excluded from deterministic artifacts.
    #[serde(skip)]
    pub infer_time_sec: f64,
}

impl MetricsRow {
    pub fn key(&self) -> CellKey {
        CellKey::new(&self.dataset, &self.target, &self.algorithm, self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: CellKey,
    pub error: String,
}

/// Everything a plan run produces.
#[derive(Debug, Clone, Default)]
pub struct PlanOutput {
    pub rows: Vec<MetricsRow>,
    pub curves: Vec<CurveRecord>,
    pub trajectories: Vec<TrajectoryRecord>,
    pub failures: Vec<CellFailure>,
    pub models: BTreeMap<CellKey, ParamSet>,
    pub logs: BTreeMap<CellKey, TrainLog>,
}

/// Greedy inference of `params` from `runs` starts, one row per start.
/// Starts are drawn from a stream keyed by `(seed, cell)`.
pub fn evaluate(
    params: &ParamSet,
    env: &Environment,
    key: &CellKey,
    runs: usize,
    seed: u64,
) -> Result<(Vec<MetricsRow>, Vec<TrajectoryRecord>), HarnessError> {
    agents::check_dimension(params, env)?;
    let mut rows = Vec::with_capacity(runs);
    let mut trajectories = Vec::with_capacity(runs);
    let alpha = env.target().alpha;
    for run in 0..runs {
        let run_seed = rng::derive_seed(seed, &format!("start:{}", key.label()), run as u64);
        let start = rng::from_seed(run_seed).random_range(0..env.len());
        let inf = agents::infer_quiz(params, env, start, run_seed)?;
        let mut hist = [0u64; 4];
        for r in &inf.trace {
            hist[r.action.index()] += 1;
        }
        rows.push(MetricsRow {
            dataset: key.dataset.clone(),
            target: key.target.clone(),
            algorithm: key.algorithm.clone(),
            alpha,
            run,
            start,
            similarity: inf.best_match,
            iterations: inf.iterations,
            best_step: inf.best_step,
            final_similarity: inf.final_match,
            success: inf.success,
            action_histogram: hist,
            infer_time_sec: inf.elapsed_secs,
        });
        trajectories.push(TrajectoryRecord::from_inference(key, run, env, &inf));
    }
    Ok((rows, trajectories))
}

fn oracle_rows(env: &Environment, key: &CellKey, runs: usize) -> Vec<MetricsRow> {
    let best = oracle::oracle_best(env).expect("universe is non-empty");
    (0..runs)
        .map(|run| MetricsRow {
            dataset: key.dataset.clone(),
            target: key.target.clone(),
            algorithm: key.algorithm.clone(),
            alpha: env.target().alpha,
            run,
            start: best.index,
            similarity: best.score,
            iterations: best.scan_count,
            best_step: best.scan_count,
            final_similarity: best.score,
            success: env.is_success(best.index),
            action_histogram: [0; 4],
            infer_time_sec: best.elapsed_secs,
        })
        .collect()
}

/// Seed for training in a cell.
pub fn cell_seed(plan_seed: u64, key: &CellKey) -> u64 {
    rng::derive_seed(plan_seed, &format!("train:{}", key.label()), 0)
}

/// Runs every cell of the plan. Failing cells are recorded and skipped.
pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanOutput, HarnessError> {
    plan.validate()?;
    let mut out = PlanOutput::default();
    for dref in &plan.datasets {
        let universe = match load_universe(plan, dref) {
            Ok(u) => Arc::new(u),
            Err(e) => {
                for t in &plan.targets {
                    for s in &plan.solvers {
                        for &a in &plan.alphas {
                            out.failures.push(CellFailure {
                                cell: CellKey::new(dref.name(), &t.name(), s.name(), a),
                                error: e.to_string(),
                            });
                        }
                    }
                }
                continue;
            }
        };
        for target in &plan.targets {
            for &alpha in &plan.alphas {
                for &solver in &plan.solvers {
                    let key = CellKey::new(dref.name(), &target.name(), solver.name(), alpha);
                    if let Err(e) = run_cell(plan, &universe, target, alpha, solver, &key, &mut out) {
                        out.failures.push(CellFailure {
                            cell: key,
                            error: e.to_string(),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

fn load_universe(plan: &ExperimentPlan, dref: &DatasetRef) -> Result<Universe, HarnessError> {
    let pool = dref.load()?;
    let seed = plan
        .universe_seed
        .unwrap_or_else(|| rng::derive_seed(plan.seed, &format!("universe:{}", dref.name()), 0));
    Ok(Universe::build(&pool, plan.k, plan.universe_size, seed)?)
}

fn run_cell(
    plan: &ExperimentPlan,
    universe: &Arc<Universe>,
    target: &TargetRef,
    alpha: f64,
    solver: Solver,
    key: &CellKey,
    out: &mut PlanOutput,
) -> Result<(), HarnessError> {
    let spec = target.spec(universe.n_topics(), universe.n_levels(), alpha, plan.episode.beta)?;
    let env = Environment::new(universe.clone(), spec, plan.episode)?;
    let Some(algorithm) = solver.algorithm() else {
        out.rows.extend(oracle_rows(&env, key, plan.runs));
        return Ok(());
    };
    let cfg = TrainConfig {
        seed: cell_seed(plan.seed, key),
        max_steps: plan.episode.max_steps,
        ..plan.train.clone()
    };
    let trained = agents::train_agent(algorithm, &env, &cfg)?;
    let (rows, trajectories) = evaluate(&trained.params, &env, key, plan.runs, plan.seed)?;
    out.curves
        .extend(CurveRecord::from_log(key, &trained.log));
    out.rows.extend(rows);
    out.trajectories.extend(trajectories);
    out.models.insert(key.clone(), trained.params);
    out.logs.insert(key.clone(), trained.log);
    Ok(())
}

/// Inference-only run of a trained model against a new target or dataset.
pub fn transfer_run(
    source: &ParamSet,
    env: &Environment,
    key: &CellKey,
    runs: usize,
    seed: u64,
) -> Result<Vec<MetricsRow>, HarnessError> {
    let model = source.spec().input_dim;
    let universe = env.universe().state_dim();
    if model != universe {
        return Err(HarnessError::DimensionMismatch { model, universe });
    }
    Ok(evaluate(source, env, key, runs, seed)?.0)
}

/// Normalized action frequencies over the episodes in `window`.
pub fn action_distribution(log: &TrainLog, window: Range<usize>) -> Result<[f64; 4], HarnessError> {
    let empty = || HarnessError::EmptyWindow {
        start: window.start,
        end: window.end,
        len: log.episodes.len(),
    };
    if window.start >= window.end || window.end > log.episodes.len() {
        return Err(empty());
    }
    let mut counts = [0u64; 4];
    for e in &log.episodes[window.clone()] {
        for (c, n) in counts.iter_mut().zip(e.action_counts) {
            *c += n;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(empty());
    }
    Ok(counts.map(|c| c as f64 / total as f64))
}

/// Combined share of the two similarity actions in a histogram.
pub fn similarity_share(hist: &[f64; 4]) -> f64 {
    Action::ALL
        .iter()
        .filter(|a| a.is_similarity())
        .map(|a| hist[a.index()])
        .sum()
}
