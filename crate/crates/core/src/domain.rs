//! MCQs, quizzes, teacher targets and the similarity functions that score
//! a quiz against a target.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used when checking that a proportion vector sums to one.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("vector has no nonzero entry")]
    ZeroVector,
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("quiz needs exactly {expected} MCQs, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("MCQ {0} appears more than once")]
    DuplicateMcq(u32),
    #[error("MCQ {id}: {field} index {index} out of range (< {bound})")]
    IndexOutOfRange {
        id: u32,
        field: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("invalid target: {0}")]
    InvalidTarget(String),
}

/// One multiple-choice question. Topic and level are dense indices into the
/// dataset vocabularies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mcq {
    pub id: u32,
    pub topic: usize,
    pub level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<McqText>,
}

impl Mcq {
    pub fn new(id: u32, topic: usize, level: usize) -> Self {
        Self {
            id,
            topic,
            level,
            text: None,
        }
    }
}

/// Free text carried along for export; never interpreted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct McqText {
    pub question: String,
    pub choices: [String; 4],
    pub answer: String,
}

/// A k-subset of MCQs with its topic and difficulty proportion vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quiz {
    /// Sorted, distinct member ids.
    pub mcq_ids: Vec<u32>,
    pub topic_vec: Vec<f64>,
    pub diff_vec: Vec<f64>,
}

impl Quiz {
    /// Builds a quiz from exactly `k` distinct MCQs.
    pub fn from_mcqs(
        members: &[&Mcq],
        k: usize,
        n_topics: usize,
        n_levels: usize,
    ) -> Result<Self, DomainError> {
        if members.len() != k {
            return Err(DomainError::SizeMismatch {
                expected: k,
                actual: members.len(),
            });
        }
        let mut seen = BTreeSet::new();
        let mut topic_counts = vec![0usize; n_topics];
        let mut level_counts = vec![0usize; n_levels];
        for mcq in members {
            if !seen.insert(mcq.id) {
                return Err(DomainError::DuplicateMcq(mcq.id));
            }
            if mcq.topic >= n_topics {
                return Err(DomainError::IndexOutOfRange {
                    id: mcq.id,
                    field: "topic",
                    index: mcq.topic,
                    bound: n_topics,
                });
            }
            if mcq.level >= n_levels {
                return Err(DomainError::IndexOutOfRange {
                    id: mcq.id,
                    field: "level",
                    index: mcq.level,
                    bound: n_levels,
                });
            }
            topic_counts[mcq.topic] += 1;
            level_counts[mcq.level] += 1;
        }
        Ok(Self {
            mcq_ids: seen.into_iter().collect(),
            topic_vec: proportions(&topic_counts, k),
            diff_vec: proportions(&level_counts, k),
        })
    }

    pub fn k(&self) -> usize {
        self.mcq_ids.len()
    }

    /// The MDP state: topic vector followed by difficulty vector.
    pub fn state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.topic_vec.len() + self.diff_vec.len());
        s.extend_from_slice(&self.topic_vec);
        s.extend_from_slice(&self.diff_vec);
        s
    }
}

fn proportions(counts: &[usize], k: usize) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / k as f64).collect()
}

/// Teacher goal: target topic and difficulty distributions, the scalarization
/// weight `alpha` and the success threshold `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub tc: Vec<f64>,
    pub td: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl TargetSpec {
    pub fn new(tc: Vec<f64>, td: Vec<f64>, alpha: f64, beta: f64) -> Result<Self, DomainError> {
        let spec = Self { tc, td, alpha, beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for (name, v) in [("tc", &self.tc), ("td", &self.td)] {
            if v.is_empty() {
                return Err(DomainError::InvalidTarget(format!("{name} is empty")));
            }
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(DomainError::InvalidTarget(format!(
                    "{name} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(DomainError::InvalidTarget(format!(
                    "{name} sums to {sum}, expected 1"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DomainError::InvalidTarget(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(DomainError::InvalidTarget(format!(
                "beta {} outside (0, 1]",
                self.beta
            )));
        }
        Ok(())
    }

    /// Same distributions, different weight.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self {
            beta,
            ..self.clone()
        }
    }
}

/// Cosine similarity of two non-negative vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, DomainError> {
    if a.len() != b.len() {
        return Err(DomainError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(DomainError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0))
}

pub fn topic_match(z: &Quiz, tc: &[f64]) -> Result<f64, DomainError> {
    cosine_similarity(&z.topic_vec, tc)
}

pub fn diff_match(z: &Quiz, td: &[f64]) -> Result<f64, DomainError> {
    cosine_similarity(&z.diff_vec, td)
}

/// `alpha * topicMatch + (1 - alpha) * diffMatch`.
pub fn target_match(z: &Quiz, spec: &TargetSpec) -> Result<f64, DomainError> {
    let t = topic_match(z, &spec.tc)?;
    let d = diff_match(z, &spec.td)?;
    Ok(scalarize(spec.alpha, t, d))
}

#[inline]
pub fn scalarize(alpha: f64, topic: f64, diff: f64) -> f64 {
    alpha * topic + (1.0 - alpha) * diff
}

/// Uniform proportion vector of length `n`.
pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mcqs(spec: &[(usize, usize)]) -> Vec<Mcq> {
        spec.iter()
            .enumerate()
            .map(|(i, &(t, l))| Mcq::new(i as u32, t, l))
            .collect()
    }

    fn quiz(spec: &[(usize, usize)], nt: usize, nl: usize) -> Quiz {
        let pool = mcqs(spec);
        let refs: Vec<&Mcq> = pool.iter().collect();
        Quiz::from_mcqs(&refs, spec.len(), nt, nl).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.5, 0.5], &[0.5, 0.5]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let mut half = vec![0.0; 10];
        half[0] = 0.5;
        half[1] = 0.5;
        let s = cosine_similarity(&half, &uniform(10)).unwrap();
        // 0.1 / (sqrt(0.5) * sqrt(0.1)) = sqrt(0.2)
        assert!((s - 0.2f64.sqrt()).abs() < 1e-12);
        assert!((s - 0.4472).abs() < 1e-4);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(DomainError::ZeroVector)
        );
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(DomainError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn quiz_proportions() {
        let mut spec = vec![(0, 0); 5];
        spec.extend(vec![(1, 0); 5]);
        let z = quiz(&spec, 10, 5);
        assert_eq!(z.topic_vec[..2], [0.5, 0.5]);
        assert!(z.topic_vec[2..].iter().all(|&x| x == 0.0));

        let z = quiz(&[(3, 2); 10], 10, 5);
        assert_eq!(z.diff_vec, vec![0.0, 0.0, 1.0, 0.0, 0.0]);

        let z = quiz(&[(0, 0), (1, 0)], 2, 1);
        assert_eq!(z.topic_vec, vec![0.5, 0.5]);
        assert_eq!(z.state(), vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn quiz_errors() {
        let pool = mcqs(&[(0, 0), (1, 1)]);
        let refs: Vec<&Mcq> = pool.iter().collect();
        assert_eq!(
            Quiz::from_mcqs(&refs, 3, 2, 2),
            Err(DomainError::SizeMismatch {
                expected: 3,
                actual: 2
            })
        );
        let dup = [&pool[0], &pool[0]];
        assert_eq!(
            Quiz::from_mcqs(&dup, 2, 2, 2),
            Err(DomainError::DuplicateMcq(0))
        );
        assert!(matches!(
            Quiz::from_mcqs(&refs, 2, 1, 2),
            Err(DomainError::IndexOutOfRange { field: "topic", .. })
        ));
    }

    #[test]
    fn match_examples() {
        let spec5 = [(5, 0), (5, 1), (5, 2), (5, 3), (5, 4)];
        let spec8 = [(8, 0), (8, 1), (8, 2), (8, 3), (8, 4)];
        let all: Vec<_> = spec5.iter().chain(&spec8).copied().collect();
        let z = quiz(&all, 10, 5);
        let mut tc = vec![0.0; 10];
        tc[5] = 0.5;
        tc[8] = 0.5;
        assert!((topic_match(&z, &tc).unwrap() - 1.0).abs() < 1e-12);
        assert!((diff_match(&z, &uniform(5)).unwrap() - 1.0).abs() < 1e-12);

        let mut half = vec![(0, 0); 5];
        half.extend(vec![(1, 0); 5]);
        let z = quiz(&half, 10, 5);
        assert!((topic_match(&z, &uniform(10)).unwrap() - 0.4472).abs() < 1e-4);
        assert!((diff_match(&z, &uniform(5)).unwrap() - 0.4472).abs() < 1e-4);

        let polar: Vec<_> = (0..10).map(|i| (i, if i < 5 { 0 } else { 4 })).collect();
        let z = quiz(&polar, 10, 5);
        assert!((diff_match(&z, &[0.5, 0.0, 0.0, 0.0, 0.5]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn target_match_weights() {
        let mut half = vec![(0, 0); 5];
        half.extend(vec![(1, 0); 5]);
        let z = quiz(&half, 10, 5);
        let t = topic_match(&z, &uniform(10)).unwrap();
        let d = diff_match(&z, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let spec = TargetSpec::new(uniform(10), vec![1.0, 0.0, 0.0, 0.0, 0.0], 1.0, 0.85).unwrap();
        assert_eq!(target_match(&z, &spec).unwrap(), t);
        assert_eq!(target_match(&z, &spec.with_alpha(0.0)).unwrap(), d);
        let m = target_match(&z, &spec.with_alpha(0.5)).unwrap();
        assert!((m - 0.5 * (0.2f64.sqrt() + 1.0)).abs() < 1e-12);
        assert!((m - 0.7236).abs() < 1e-4);
    }

    #[test]
    fn target_validation() {
        assert!(TargetSpec::new(vec![0.5, 0.4], uniform(2), 0.5, 0.85).is_err());
        assert!(TargetSpec::new(uniform(2), uniform(2), 1.5, 0.85).is_err());
        assert!(TargetSpec::new(uniform(2), uniform(2), 0.5, 0.0).is_err());
        assert!(TargetSpec::new(uniform(2), uniform(2), 0.5, 1.0).is_ok());
    }

    fn nonzero_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, n).prop_filter("nonzero", |v| v.iter().any(|&x| x > 1e-6))
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(a in nonzero_vec(6), b in nonzero_vec(6), c in 0.01f64..100.0) {
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            prop_assert!((cosine_similarity(&scaled, &b).unwrap() - ab).abs() < 1e-12);
            prop_assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn quiz_vectors_sum_to_one(assign in prop::collection::vec((0usize..10, 0usize..5), 1..30)) {
            let z = quiz(&assign, 10, 5);
            prop_assert!((z.topic_vec.iter().sum::<f64>() - 1.0).abs() < SUM_TOLERANCE);
            prop_assert!((z.diff_vec.iter().sum::<f64>() - 1.0).abs() < SUM_TOLERANCE);
            prop_assert_eq!(z.state().len(), 15);
        }

        #[test]
        fn target_match_bounded_and_monotone(
            assign in prop::collection::vec((0usize..10, 0usize..5), 10),
            tc in nonzero_vec(10), td in nonzero_vec(5), alpha in 0.0f64..=1.0,
            bump in 0.0f64..0.5,
        ) {
            let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); v.into_iter().map(|x| x / s).collect::<Vec<_>>() };
            let spec = TargetSpec { tc: norm(tc), td: norm(td), alpha, beta: 0.85 };
            let z = quiz(&assign, 10, 5);
            let m = target_match(&z, &spec).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&m));
            let t = topic_match(&z, &spec.tc).unwrap();
            let d = diff_match(&z, &spec.td).unwrap();
            prop_assert!(scalarize(alpha, t + bump, d) >= scalarize(alpha, t, d));
        }
    }
}
