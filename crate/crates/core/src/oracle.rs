//! Exhaustive best-quiz baseline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::Environment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub index: usize,
    pub score: f64,
    /// Number of quizzes examined; always the universe size.
    pub scan_count: usize,
    #[serde(skip)]
    pub elapsed_secs: f64,
}

/// Scans every quiz and returns the best-scoring one, lowest index on ties.
/// Returns `None` for an empty universe.
pub fn oracle_best(env: &Environment) -> Option<OracleResult> {
    let clock = Instant::now();
    let scores = env.scores();
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(index, score)| OracleResult {
        index,
        score,
        scan_count: scores.len(),
        elapsed_secs: clock.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::domain::{uniform, Mcq, Quiz, TargetSpec};
    use crate::env::{EpisodeConfig, Universe};

    fn quiz(mcqs: &[Mcq]) -> Quiz {
        let refs: Vec<&Mcq> = mcqs.iter().collect();
        Quiz::from_mcqs(&refs, 2, 2, 2).unwrap()
    }

    #[test]
    fn perfect_member_scores_one_and_ties_pick_lowest() {
        let m = |id, t, l| Mcq::new(id, t, l);
        let quizzes = vec![
            quiz(&[m(0, 0, 0), m(1, 0, 1)]),
            quiz(&[m(2, 0, 0), m(3, 1, 1)]),
            quiz(&[m(4, 1, 0), m(5, 0, 1)]),
        ];
        let u = Arc::new(Universe::from_quizzes(quizzes, 2, 2, 2, 0));
        let t = TargetSpec::new(uniform(2), uniform(2), 0.5, 0.85).unwrap();
        let env = Environment::new(u, t, EpisodeConfig::default()).unwrap();
        let r = oracle_best(&env).unwrap();
        assert_eq!(r.index, 1);
        assert!((r.score - 1.0).abs() < 1e-12);
        assert_eq!(r.scan_count, 3);
        assert_eq!(oracle_best(&env).unwrap().index, 1);
    }
}
