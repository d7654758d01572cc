//! TOML run configuration.
//!
//! A file holds a top-level `seed` and one table per stage. Every key is
//! optional and falls back to the documented default. Overrides given as
//! `section.key=value` pairs are applied to the parsed table before it is
//! validated, so anything settable in the file is settable from the command
//! line. The base seed can also come from the `QUIZFORGE_SEED` environment
//! variable; precedence is file, then environment, then explicit overrides.
//!
//! ```toml
//! seed = 7
//!
//! [dataset]
//! source = "synthetic"     # or "csv"
//! n_mcqs = 1500
//!
//! [universe]
//! size = 10000
//! k = 10
//!
//! [episode]
//! beta = 0.85
//! reward = "r2"
//!
//! [target]
//! name = "uniform"         # uniform | bias | bias_prime | custom
//! alpha = 0.5
//!
//! [train]
//! algorithm = "dqn"
//! episodes = 5000
//!
//! [plan]
//! algorithms = ["dqn", "oracle"]
//! alphas = [0.0, 0.25, 0.5, 0.75, 1.0]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Algorithm, TrainConfig};
use crate::datagen::DatasetSpec;
use crate::env::EpisodeConfig;
use crate::harness::{DatasetRef, ExperimentPlan, Solver, TargetRef};
use crate::rng;

pub const SEED_ENV: &str = "QUIZFORGE_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DataSource,
    pub name: String,
    /// CSV to read (`csv`) or write (`gen-synthetic`).
    pub path: PathBuf,
    pub n_mcqs: usize,
    pub n_topics: usize,
    pub n_levels: usize,
    pub topic_concentration: f64,
    pub level_concentration: f64,
    /// Keep only a random subset of this many topics after loading.
    pub topic_subset: Option<usize>,
    /// Defaults to a value derived from the base seed.
    pub seed: Option<u64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            name: "synthetic".into(),
            path: PathBuf::from("dataset.csv"),
            n_mcqs: 1500,
            n_topics: 10,
            n_levels: 5,
            topic_concentration: 1.0,
            level_concentration: 1.0,
            topic_subset: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseSection {
    pub size: usize,
    pub k: usize,
    pub path: PathBuf,
    pub seed: Option<u64>,
}

impl Default for UniverseSection {
    fn default() -> Self {
        Self {
            size: 10_000,
            k: 10,
            path: PathBuf::from("universe.jsonl"),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    /// `uniform`, `bias`, `bias_prime` or `custom`.
    pub name: String,
    pub alpha: f64,
    /// Permutation seed for `bias_prime`.
    pub permutation_seed: u64,
    pub tc: Option<Vec<f64>>,
    pub td: Option<Vec<f64>>,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            name: "uniform".into(),
            alpha: 0.5,
            permutation_seed: 0,
            tc: None,
            td: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    pub runs: usize,
    pub checkpoint: PathBuf,
    /// Explicit start quiz; random starts when absent.
    pub start: Option<usize>,
}

impl Default for InferSection {
    fn default() -> Self {
        Self {
            runs: 10,
            checkpoint: PathBuf::from("model.qzp"),
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub targets: Vec<String>,
    pub algorithms: Vec<Solver>,
    pub alphas: Vec<f64>,
    pub runs: usize,
    /// Extra datasets; the `[dataset]` table is used when empty.
    pub datasets: Vec<DatasetSection>,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            targets: vec!["uniform".into()],
            algorithms: vec![Solver::Dqn, Solver::Oracle],
            alphas: ExperimentPlan::default_alphas(),
            runs: 10,
            datasets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

/// `[train]`: the learner plus its hyperparameters in one flat table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub algorithm: Algorithm,
    pub params: TrainConfig,
}

impl Serialize for TrainSection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::Error;
        let mut table = toml::Table::try_from(&self.params).map_err(S::Error::custom)?;
        table.insert("algorithm".into(), toml::Value::String(self.algorithm.name().into()));
        table.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TrainSection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut table = toml::Table::deserialize(d)?;
        let algorithm = match table.remove("algorithm") {
            Some(v) => Algorithm::deserialize(v).map_err(|e| D::Error::custom(format!("algorithm: {e}")))?,
            None => Algorithm::Dqn,
        };
        let params = TrainConfig::deserialize(toml::Value::Table(table)).map_err(D::Error::custom)?;
        Ok(Self { algorithm, params })
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Dqn,
            params: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub universe: UniverseSection,
    pub episode: EpisodeConfig,
    pub target: TargetSection,
    pub train: TrainSection,
    pub infer: InferSection,
    pub plan: PlanSection,
    pub output: OutputSection,
}

/// TOML integers are signed 64-bit, so derived seeds keep 63 bits.
fn toml_seed(seed: u64) -> u64 {
    seed & i64::MAX as u64
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| invalid(key, "empty key"))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn has_path(table: &toml::Table, key: &str) -> bool {
    let mut cur = table;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        match cur.get(*p) {
            Some(toml::Value::Table(t)) if i + 1 < parts.len() => cur = t,
            Some(_) if i + 1 == parts.len() => return true,
            _ => return false,
        }
    }
    false
}

/// Maps serde's message onto the offending key where it names one.
fn parse_error(e: toml::de::Error) -> ConfigError {
    ConfigError::Parse(e.to_string().trim().replace('\n', " "))
}

impl Config {
    /// Builds a config from TOML text, the seed environment variable (when
    /// `env_seed` is given) and `key=value` overrides.
    pub fn from_parts(
        text: &str,
        env_seed: Option<&str>,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(parse_error)?;
        if let Some(s) = env_seed {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| invalid(SEED_ENV, format!("{s:?} is not an unsigned integer")))?;
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        for (k, v) in overrides {
            set_path(&mut table, k, parse_value(v))?;
        }
        let explicit_train_seed = has_path(&table, "train.seed");
        let mut cfg: Config = Config::deserialize(toml::Value::Table(table)).map_err(parse_error)?;
        if !explicit_train_seed {
            cfg.train.params.seed = toml_seed(rng::derive_seed(cfg.seed, "train", 0));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or defaults when `None`), honoring `QUIZFORGE_SEED`.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        let env_seed = std::env::var(SEED_ENV).ok();
        Self::from_parts(&text, env_seed.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.target.alpha) {
            return Err(invalid("target.alpha", "must lie in [0, 1]"));
        }
        self.target_ref()?;
        self.episode
            .validate()
            .map_err(|e| invalid("episode", e.to_string()))?;
        self.train
            .params
            .validate()
            .map_err(|e| invalid("train", e.to_string()))?;
        if self.universe.k == 0 || self.universe.size == 0 {
            return Err(invalid("universe", "size and k must be >= 1"));
        }
        if self.plan.runs == 0 {
            return Err(invalid("plan.runs", "must be >= 1"));
        }
        if self.plan.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(invalid("plan.alphas", "entries must lie in [0, 1]"));
        }
        for t in &self.plan.targets {
            t.parse::<TargetRef>().map_err(|m| invalid("plan.targets", m))?;
        }
        if self.infer.runs == 0 {
            return Err(invalid("infer.runs", "must be >= 1"));
        }
        Ok(())
    }

    pub fn dataset_seed(&self, section: &DatasetSection) -> u64 {
        section
            .seed
            .unwrap_or_else(|| rng::derive_seed(self.seed, &format!("dataset:{}", section.name), 0))
    }

    pub fn universe_seed(&self) -> u64 {
        self.universe
            .seed
            .unwrap_or_else(|| rng::derive_seed(self.seed, "universe", 0))
    }

    pub fn dataset_ref(&self, section: &DatasetSection) -> DatasetRef {
        match section.source {
            DataSource::Synthetic => DatasetRef::Synthetic {
                name: section.name.clone(),
                spec: DatasetSpec {
                    n_mcqs: section.n_mcqs,
                    n_topics: section.n_topics,
                    n_levels: section.n_levels,
                    topic_concentration: section.topic_concentration,
                    level_concentration: section.level_concentration,
                    seed: self.dataset_seed(section),
                },
            },
            DataSource::Csv => DatasetRef::Csv {
                name: section.name.clone(),
                path: section.path.clone(),
                topic_subset: section.topic_subset,
                subset_seed: self.dataset_seed(section),
            },
        }
    }

    pub fn target_ref(&self) -> Result<TargetRef, ConfigError> {
        let t = &self.target;
        match t.name.as_str() {
            "custom" => match (&t.tc, &t.td) {
                (Some(tc), Some(td)) => Ok(TargetRef::Custom {
                    name: "custom".into(),
                    tc: tc.clone(),
                    td: td.clone(),
                }),
                _ => Err(invalid("target.tc", "custom targets need both tc and td")),
            },
            "bias_prime" => Ok(TargetRef::BiasPrime {
                seed: t.permutation_seed,
            }),
            other => other.parse().map_err(|m| invalid("target.name", m)),
        }
    }

    pub fn plan(&self) -> Result<ExperimentPlan, ConfigError> {
        let datasets = if self.plan.datasets.is_empty() {
            vec![self.dataset_ref(&self.dataset)]
        } else {
            self.plan.datasets.iter().map(|d| self.dataset_ref(d)).collect()
        };
        let targets = self
            .plan
            .targets
            .iter()
            .map(|t| match t.parse::<TargetRef>() {
                Ok(TargetRef::BiasPrime { .. }) => Ok(TargetRef::BiasPrime {
                    seed: self.target.permutation_seed,
                }),
                Ok(other) => Ok(other),
                Err(m) => Err(invalid("plan.targets", m)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExperimentPlan {
            datasets,
            targets,
            solvers: self.plan.algorithms.clone(),
            alphas: self.plan.alphas.clone(),
            runs: self.plan.runs,
            seed: self.seed,
            universe_size: self.universe.size,
            k: self.universe.k,
            universe_seed: self.universe.seed,
            episode: self.episode,
            train: self.train.params.clone(),
        })
    }

    /// The effective configuration as JSON, for embedding in artifacts.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_parts("", None, &[]).unwrap();
        assert_eq!(c.universe.size, 10_000);
        assert_eq!(c.train.params.episodes, 5000);
        assert_eq!(c.episode.beta, 0.85);
        assert_eq!(c.train.params.seed, toml_seed(rng::derive_seed(0, "train", 0)));
    }

    #[test]
    fn sections_env_and_overrides() {
        let text = r#"
seed = 3
[train]
algorithm = "sarsa"
episodes = 10
[episode]
reward = "r1"
"#;
        let c = Config::from_parts(text, Some("11"), &[("train.episodes".into(), "20".into())]).unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.train.algorithm, Algorithm::Sarsa);
        assert_eq!(c.train.params.episodes, 20);
        assert_eq!(c.episode.reward, crate::env::RewardScheme::R1);
        let c = Config::from_parts(text, None, &[("train.seed".into(), "5".into())]).unwrap();
        assert_eq!(c.train.params.seed, 5);
        let c = Config::from_parts("", None, &[("target.name".into(), "bias".into())]).unwrap();
        assert_eq!(c.target_ref().unwrap(), TargetRef::Bias);
    }

    #[test]
    fn errors_name_the_key() {
        let e = Config::from_parts("[train]\nepisodez = 3\n", None, &[]).unwrap_err();
        assert!(e.to_string().contains("episodez"), "{e}");
        let e = Config::from_parts("[target]\nalpha = 2.0\n", None, &[]).unwrap_err();
        assert!(e.to_string().contains("target.alpha"), "{e}");
        let e = Config::from_parts("", Some("abc"), &[]).unwrap_err();
        assert!(e.to_string().contains(SEED_ENV), "{e}");
        let e = Config::from_parts("[universe]\nsize = \"big\"\n", None, &[]).unwrap_err();
        assert!(e.to_string().contains("size"), "{e}");
    }

    #[test]
    fn serialized_config_reloads() {
        let c = Config::from_parts("seed = 9\n[train]\nepisodes = 7\n", None, &[]).unwrap();
        let text = toml::to_string(&c).unwrap();
        let back = Config::from_parts(&text, None, &[]).unwrap();
        assert_eq!(back, c);
    }
}
