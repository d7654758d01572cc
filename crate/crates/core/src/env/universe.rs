//! The materialized quiz universe and its neighbour rankings.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use super::{Action, EnvError};
use crate::datagen::Dataset;
use crate::domain::{Mcq, Quiz, SUM_TOLERANCE};
use crate::rng;

pub const UNIVERSE_SCHEMA: &str = "quizforge.universe/1";

/// Destinations kept per action.
pub const NEIGHBORS: usize = 25;
/// Destinations whose full-state similarity to the current quiz exceeds this
/// are treated as near-duplicates and never offered.
pub const DEDUP_THRESHOLD: f64 = 0.95;

/// Per-quiz candidate lists, one per action, in ranking order.
type Neighborhood = [Vec<u32>; 4];

#[derive(Debug)]
pub struct Universe {
    k: usize,
    n_topics: usize,
    n_levels: usize,
    seed: u64,
    quizzes: Vec<Quiz>,
    /// Row-major `N x (n_topics + n_levels)`.
    states: Vec<f64>,
    topic_norms: Vec<f64>,
    diff_norms: Vec<f64>,
    state_norms: Vec<f64>,
    neighbors: Vec<OnceLock<Neighborhood>>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
fn cos_with_norms(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// `C(n, k)`, saturating at `u128::MAX`.
fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

impl Universe {
    /// Samples `n` distinct `k`-subsets of the pool uniformly at random,
    /// rejecting repeats.
    pub fn build(pool: &Dataset, k: usize, n: usize, seed: u64) -> Result<Self, EnvError> {
        if k == 0 || n == 0 {
            return Err(EnvError::InvalidConfig("k and n must be positive".into()));
        }
        let available = binomial(pool.len(), k);
        if available < n as u128 {
            return Err(EnvError::InsufficientPool {
                pool: pool.len(),
                k,
                n,
            });
        }
        let mut r = rng::stream(seed, "universe", 0);
        let mut seen: BTreeSet<Vec<u32>> = BTreeSet::new();
        let mut quizzes = Vec::with_capacity(n);
        while quizzes.len() < n {
            let mut picks = sample_indices(&mut r, pool.len(), k).into_vec();
            picks.sort_unstable();
            let ids: Vec<u32> = picks.iter().map(|&i| pool.mcqs[i].id).collect();
            if !seen.insert(ids) {
                continue;
            }
            let members: Vec<&Mcq> = picks.iter().map(|&i| &pool.mcqs[i]).collect();
            quizzes.push(Quiz::from_mcqs(
                &members,
                k,
                pool.n_topics(),
                pool.n_levels(),
            )?);
        }
        Ok(Self::from_quizzes(
            quizzes,
            k,
            pool.n_topics(),
            pool.n_levels(),
            seed,
        ))
    }

    /// Wraps already-validated quizzes.
    pub fn from_quizzes(
        quizzes: Vec<Quiz>,
        k: usize,
        n_topics: usize,
        n_levels: usize,
        seed: u64,
    ) -> Self {
        let dim = n_topics + n_levels;
        let mut states = Vec::with_capacity(quizzes.len() * dim);
        let mut topic_norms = Vec::with_capacity(quizzes.len());
        let mut diff_norms = Vec::with_capacity(quizzes.len());
        let mut state_norms = Vec::with_capacity(quizzes.len());
        for q in &quizzes {
            states.extend_from_slice(&q.topic_vec);
            states.extend_from_slice(&q.diff_vec);
            topic_norms.push(norm(&q.topic_vec));
            diff_norms.push(norm(&q.diff_vec));
            state_norms.push(norm(&states[states.len() - dim..]));
        }
        let neighbors = (0..quizzes.len()).map(|_| OnceLock::new()).collect();
        Self {
            k,
            n_topics,
            n_levels,
            seed,
            quizzes,
            states,
            topic_norms,
            diff_norms,
            state_norms,
            neighbors,
        }
    }

    pub fn len(&self) -> usize {
        self.quizzes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quizzes.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_topics(&self) -> usize {
        self.n_topics
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state_dim(&self) -> usize {
        self.n_topics + self.n_levels
    }

    pub fn quiz(&self, i: usize) -> &Quiz {
        &self.quizzes[i]
    }

    pub fn quizzes(&self) -> &[Quiz] {
        &self.quizzes
    }

    /// Concatenated topic and difficulty vector of quiz `i`.
    pub fn state(&self, i: usize) -> &[f64] {
        let d = self.state_dim();
        &self.states[i * d..(i + 1) * d]
    }

    fn topic_part(&self, i: usize) -> &[f64] {
        &self.state(i)[..self.n_topics]
    }

    fn diff_part(&self, i: usize) -> &[f64] {
        &self.state(i)[self.n_topics..]
    }

    pub fn topic_similarity(&self, i: usize, j: usize) -> f64 {
        cos_with_norms(
            self.topic_part(i),
            self.topic_part(j),
            self.topic_norms[i],
            self.topic_norms[j],
        )
    }

    pub fn diff_similarity(&self, i: usize, j: usize) -> f64 {
        cos_with_norms(
            self.diff_part(i),
            self.diff_part(j),
            self.diff_norms[i],
            self.diff_norms[j],
        )
    }

    pub fn state_similarity(&self, i: usize, j: usize) -> f64 {
        cos_with_norms(
            self.state(i),
            self.state(j),
            self.state_norms[i],
            self.state_norms[j],
        )
    }

    /// Up to 25 destinations for `action` from quiz `current`.
    ///
    /// Every other quiz whose full-state similarity to `current` is at most
    /// 0.95 is ranked by the cosine similarity of the action's objective
    /// sub-vector; `Sim*` keeps the 25 highest, `Diss*` the 25 lowest. Ties
    /// go to the lower quiz index.
    pub fn candidates(&self, current: usize, action: Action) -> Result<&[u32], EnvError> {
        if current >= self.len() {
            return Err(EnvError::IndexOutOfRange {
                index: current,
                len: self.len(),
            });
        }
        let hood = self.neighbors[current].get_or_init(|| self.rank(current));
        let list = &hood[action.index()];
        if list.is_empty() {
            return Err(EnvError::NoCandidates {
                quiz: current,
                action,
            });
        }
        Ok(list)
    }

    fn rank(&self, current: usize) -> Neighborhood {
        let mut by_topic: Vec<(f64, u32)> = Vec::new();
        let mut by_diff: Vec<(f64, u32)> = Vec::new();
        for j in 0..self.len() {
            if j == current || self.state_similarity(current, j) > DEDUP_THRESHOLD {
                continue;
            }
            by_topic.push((self.topic_similarity(current, j), j as u32));
            by_diff.push((self.diff_similarity(current, j), j as u32));
        }
        let desc = |a: &(f64, u32), b: &(f64, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        let asc = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        [
            top(&mut by_topic.clone(), desc),
            top(&mut by_diff.clone(), desc),
            top(&mut by_topic, asc),
            top(&mut by_diff, asc),
        ]
    }

    /// Number of quizzes whose neighbour lists have been materialized.
    pub fn cached_neighborhoods(&self) -> usize {
        self.neighbors.iter().filter(|n| n.get().is_some()).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), EnvError> {
        let header = UniverseHeader {
            schema: UNIVERSE_SCHEMA.to_string(),
            k: self.k,
            n_topics: self.n_topics,
            n_levels: self.n_levels,
            n: self.len(),
            seed: self.seed,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for q in &self.quizzes {
            let row = UniverseRow {
                mcqs: q.mcq_ids.clone(),
                topic: q.topic_vec.clone(),
                diff: q.diff_vec.clone(),
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads and validates a universe written by [`Universe::write_jsonl`].
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, EnvError> {
        let mut lines = input.lines();
        let bad = |line: usize, message: String| EnvError::Format { line, message };
        let header_line = lines.next().ok_or_else(|| bad(1, "empty file".into()))??;
        let header: UniverseHeader =
            serde_json::from_str(&header_line).map_err(|e| bad(1, e.to_string()))?;
        if header.schema != UNIVERSE_SCHEMA {
            return Err(bad(1, format!("unsupported schema {:?}", header.schema)));
        }
        if header.k == 0 || header.n_topics == 0 || header.n_levels == 0 {
            return Err(bad(1, "k, n_topics and n_levels must be positive".into()));
        }
        let mut quizzes = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: UniverseRow =
                serde_json::from_str(&line).map_err(|e| bad(lineno, e.to_string()))?;
            let quiz = row
                .into_quiz(header.k, header.n_topics, header.n_levels)
                .map_err(|m| bad(lineno, m))?;
            if !seen.insert(quiz.mcq_ids.clone()) {
                return Err(bad(lineno, "duplicate quiz".into()));
            }
            quizzes.push(quiz);
            if quizzes.len() > header.n {
                return Err(bad(lineno, format!("more than {} quizzes", header.n)));
            }
        }
        if quizzes.len() != header.n {
            return Err(bad(
                0,
                format!("header declares {} quizzes, found {}", header.n, quizzes.len()),
            ));
        }
        Ok(Self::from_quizzes(
            quizzes,
            header.k,
            header.n_topics,
            header.n_levels,
            header.seed,
        ))
    }
}

fn top<F>(items: &mut [(f64, u32)], cmp: F) -> Vec<u32>
where
    F: Fn(&(f64, u32), &(f64, u32)) -> Ordering,
{
    if items.len() > NEIGHBORS {
        items.select_nth_unstable_by(NEIGHBORS - 1, &cmp);
    }
    let keep = items.len().min(NEIGHBORS);
    let head = &mut items[..keep];
    head.sort_by(&cmp);
    head.iter().map(|&(_, j)| j).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct UniverseHeader {
    schema: String,
    k: usize,
    n_topics: usize,
    n_levels: usize,
    n: usize,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct UniverseRow {
    mcqs: Vec<u32>,
    topic: Vec<f64>,
    diff: Vec<f64>,
}

impl UniverseRow {
    fn into_quiz(self, k: usize, n_topics: usize, n_levels: usize) -> Result<Quiz, String> {
        if self.mcqs.len() != k {
            return Err(format!("expected {k} MCQ ids, got {}", self.mcqs.len()));
        }
        if self.mcqs.windows(2).any(|w| w[0] >= w[1]) {
            return Err("MCQ ids must be strictly increasing".into());
        }
        check_proportions("topic", &self.topic, n_topics, k)?;
        check_proportions("diff", &self.diff, n_levels, k)?;
        Ok(Quiz {
            mcq_ids: self.mcqs,
            topic_vec: self.topic,
            diff_vec: self.diff,
        })
    }
}

fn check_proportions(name: &str, v: &[f64], len: usize, k: usize) -> Result<(), String> {
    if v.len() != len {
        return Err(format!("{name} vector has length {}, expected {len}", v.len()));
    }
    let mut sum = 0.0;
    for &x in v {
        let scaled = x * k as f64;
        if !x.is_finite() || x < 0.0 || (scaled - scaled.round()).abs() > 1e-6 {
            return Err(format!("{name} entry {x} is not a multiple of 1/{k}"));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(format!("{name} vector sums to {sum}"));
    }
    Ok(())
}
