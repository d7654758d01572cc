//! MCQ pools: synthetic generation from Dirichlet-drawn categoricals, CSV
//! ingestion and export, and topic filtering.
//!
//! CSV schema (header required, column order free):
//!
//! ```text
//! id,topic,difficulty,question,choice_a,choice_b,choice_c,choice_d,answer
//! ```
//!
//! Only `id`, `topic` and `difficulty` are required. Topic and difficulty
//! labels are mapped to dense indices in sorted order (numeric when every
//! label parses as a number, lexicographic otherwise) unless a sidecar
//! `<file>.meta.json` declares the vocabularies.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Mcq, McqText};
use crate::rng;

pub const META_SCHEMA: &str = "quizforge.dataset-meta/1";

const COLUMNS: [&str; 9] = [
    "id",
    "topic",
    "difficulty",
    "question",
    "choice_a",
    "choice_b",
    "choice_c",
    "choice_d",
    "answer",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("missing required column {0:?}")]
    MissingColumn(&'static str),
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("no MCQ survives the topic filter")]
    EmptyResult,
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parameters for a synthetic pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_mcqs: usize,
    pub n_topics: usize,
    pub n_levels: usize,
    pub topic_concentration: f64,
    pub level_concentration: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// `Uniform` flavour: concentration 1 on both axes.
    pub fn uniform(n_mcqs: usize, n_topics: usize, n_levels: usize, seed: u64) -> Self {
        Self {
            n_mcqs,
            n_topics,
            n_levels,
            topic_concentration: 1.0,
            level_concentration: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_mcqs == 0 || self.n_topics == 0 || self.n_levels == 0 {
            return Err(DataError::InvalidSpec(
                "n_mcqs, n_topics and n_levels must be positive".into(),
            ));
        }
        if self.n_mcqs > u32::MAX as usize {
            return Err(DataError::InvalidSpec("n_mcqs exceeds the id space".into()));
        }
        for (name, c) in [
            ("topic_concentration", self.topic_concentration),
            ("level_concentration", self.level_concentration),
        ] {
            if !(c.is_finite() && c > 0.0) {
                return Err(DataError::InvalidSpec(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Provenance of a generated pool: its spec and the categoricals drawn for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMeta {
    pub spec: DatasetSpec,
    pub topic_probs: Vec<f64>,
    pub level_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub mcqs: Vec<Mcq>,
    pub topic_labels: Vec<String>,
    pub level_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticMeta>,
}

impl Dataset {
    pub fn n_topics(&self) -> usize {
        self.topic_labels.len()
    }

    pub fn n_levels(&self) -> usize {
        self.level_labels.len()
    }

    pub fn len(&self) -> usize {
        self.mcqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mcqs.is_empty()
    }

    pub fn topic_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_topics()];
        for m in &self.mcqs {
            c[m.topic] += 1;
        }
        c
    }

    pub fn level_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_levels()];
        for m in &self.mcqs {
            c[m.level] += 1;
        }
        c
    }
}

/// Sidecar file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema: String,
    pub topic_labels: Vec<String>,
    pub level_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticMeta>,
}

/// Draws a point on the simplex from a symmetric Dirichlet by normalizing
/// independent Gamma(concentration, 1) variates.
pub fn sample_dirichlet(dim: usize, concentration: f64, rng: &mut rng::Rng) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("concentration validated > 0");
    let mut draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter_mut().for_each(|x| *x /= sum);
    } else {
        // Every variate underflowed; the limit is a vertex of the simplex.
        draws.iter_mut().for_each(|x| *x = 0.0);
        draws[rng.random_range(0..dim)] = 1.0;
    }
    draws
}

/// Generates a synthetic pool. One topic categorical and one level
/// categorical are drawn per dataset; each MCQ then samples its topic and
/// level independently from them.
pub fn generate_synthetic(spec: &DatasetSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, "datagen", 0);
    let topic_probs = sample_dirichlet(spec.n_topics, spec.topic_concentration, &mut rng);
    let level_probs = sample_dirichlet(spec.n_levels, spec.level_concentration, &mut rng);
    let topic_dist = WeightedIndex::new(&topic_probs)
        .map_err(|e| DataError::InvalidSpec(format!("topic categorical: {e}")))?;
    let level_dist = WeightedIndex::new(&level_probs)
        .map_err(|e| DataError::InvalidSpec(format!("level categorical: {e}")))?;
    let mcqs = (0..spec.n_mcqs)
        .map(|i| {
            let topic = topic_dist.sample(&mut rng);
            let level = level_dist.sample(&mut rng);
            Mcq::new(i as u32, topic, level)
        })
        .collect();
    Ok(Dataset {
        mcqs,
        topic_labels: (0..spec.n_topics).map(|i| i.to_string()).collect(),
        level_labels: (1..=spec.n_levels).map(|i| i.to_string()).collect(),
        synthetic: Some(SyntheticMeta {
            spec: spec.clone(),
            topic_probs,
            level_probs,
        }),
    })
}

/// Explicit label vocabularies, usually read from the sidecar.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    pub topics: Vec<String>,
    pub levels: Vec<String>,
}

struct RawRow {
    line: u64,
    id: u32,
    topic: String,
    level: String,
    text: Option<McqText>,
}

/// Parses CSV bytes into a dataset. With `vocab`, labels must belong to it;
/// otherwise vocabularies are inferred from the distinct labels.
pub fn parse_csv<R: Read>(input: R, vocab: Option<&Vocab>) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let mut cols: BTreeMap<&'static str, usize> = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        let name = h.trim_start_matches('\u{feff}').to_ascii_lowercase();
        match COLUMNS.iter().find(|c| **c == name) {
            Some(c) => {
                if cols.insert(c, i).is_some() {
                    return Err(DataError::Parse {
                        line: 1,
                        message: format!("duplicate column {c:?}"),
                    });
                }
            }
            None => return Err(DataError::UnknownColumn(h.to_string())),
        }
    }
    for required in ["id", "topic", "difficulty"] {
        if !cols.contains_key(required) {
            return Err(DataError::MissingColumn(required));
        }
    }
    let has_text = COLUMNS[3..].iter().any(|c| cols.contains_key(c));

    let mut rows = Vec::new();
    let mut ids = BTreeSet::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |name: &str| cols.get(name).and_then(|&i| record.get(i)).unwrap_or("");
        let id_raw = field("id");
        let id: u32 = id_raw.parse().map_err(|_| DataError::Parse {
            line,
            message: format!("invalid id {id_raw:?}"),
        })?;
        if !ids.insert(id) {
            return Err(DataError::Parse {
                line,
                message: format!("duplicate id {id}"),
            });
        }
        let topic = field("topic");
        if topic.is_empty() {
            return Err(DataError::Parse {
                line,
                message: format!("row {id}: missing topic"),
            });
        }
        let level = field("difficulty");
        if level.is_empty() {
            return Err(DataError::Parse {
                line,
                message: format!("row {id}: missing difficulty"),
            });
        }
        let text = has_text.then(|| McqText {
            question: field("question").to_string(),
            choices: [
                field("choice_a").to_string(),
                field("choice_b").to_string(),
                field("choice_c").to_string(),
                field("choice_d").to_string(),
            ],
            answer: field("answer").to_string(),
        });
        rows.push(RawRow {
            line,
            id,
            topic: topic.to_string(),
            level: level.to_string(),
            text,
        });
    }
    if rows.is_empty() {
        return Err(DataError::EmptyDataset);
    }

    let (topic_labels, level_labels) = match vocab {
        Some(v) => (v.topics.clone(), v.levels.clone()),
        None => (
            sorted_labels(rows.iter().map(|r| r.topic.as_str())),
            sorted_labels(rows.iter().map(|r| r.level.as_str())),
        ),
    };
    let topic_index: BTreeMap<&str, usize> = topic_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let level_index: BTreeMap<&str, usize> = level_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut mcqs = Vec::with_capacity(rows.len());
    for row in rows {
        let topic = *topic_index
            .get(row.topic.as_str())
            .ok_or_else(|| DataError::Parse {
                line: row.line,
                message: format!("topic {:?} not in vocabulary", row.topic),
            })?;
        let level = *level_index
            .get(row.level.as_str())
            .ok_or_else(|| DataError::Parse {
                line: row.line,
                message: format!("difficulty {:?} not in vocabulary", row.level),
            })?;
        mcqs.push(Mcq {
            id: row.id,
            topic,
            level,
            text: row.text,
        });
    }
    Ok(Dataset {
        mcqs,
        topic_labels,
        level_labels,
        synthetic: None,
    })
}

fn sorted_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let distinct: BTreeSet<&str> = labels.collect();
    let numeric: Option<Vec<(f64, &str)>> = distinct
        .iter()
        .map(|l| l.parse::<f64>().ok().filter(|x| x.is_finite()).map(|x| (x, *l)))
        .collect();
    match numeric {
        Some(mut pairs) => {
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            pairs.into_iter().map(|(_, l)| l.to_string()).collect()
        }
        None => distinct.into_iter().map(str::to_string).collect(),
    }
}

pub fn meta_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Loads a CSV dataset, honouring its sidecar vocabulary when present.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let meta_file = meta_path(path);
    let meta: Option<DatasetMeta> = if meta_file.exists() {
        Some(serde_json::from_reader(File::open(&meta_file)?)?)
    } else {
        None
    };
    let vocab = meta.as_ref().map(|m| Vocab {
        topics: m.topic_labels.clone(),
        levels: m.level_labels.clone(),
    });
    let mut ds = parse_csv(File::open(path)?, vocab.as_ref())?;
    ds.synthetic = meta.and_then(|m| m.synthetic);
    Ok(ds)
}

/// Writes the pool as CSV. Text columns are emitted only when some MCQ has
/// text, so text-free pools read back unchanged.
pub fn write_csv<W: Write>(ds: &Dataset, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let with_text = ds.mcqs.iter().any(|m| m.text.is_some());
    let width = if with_text { COLUMNS.len() } else { 3 };
    w.write_record(&COLUMNS[..width])?;
    let empty = McqText::default();
    for m in &ds.mcqs {
        let id = m.id.to_string();
        let text = m.text.as_ref().unwrap_or(&empty);
        let record = [
            id.as_str(),
            ds.topic_labels[m.topic].as_str(),
            ds.level_labels[m.level].as_str(),
            text.question.as_str(),
            text.choices[0].as_str(),
            text.choices[1].as_str(),
            text.choices[2].as_str(),
            text.choices[3].as_str(),
            text.answer.as_str(),
        ];
        w.write_record(&record[..width])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the CSV and its vocabulary sidecar.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    write_csv(ds, File::create(path)?)?;
    let meta = DatasetMeta {
        schema: META_SCHEMA.to_string(),
        topic_labels: ds.topic_labels.clone(),
        level_labels: ds.level_labels.clone(),
        synthetic: ds.synthetic.clone(),
    };
    let mut f = File::create(meta_path(path))?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Keeps MCQs whose topic is in `topics` and re-indexes topics densely in
/// ascending order of their original index.
pub fn filter_topics(ds: &Dataset, topics: &BTreeSet<usize>) -> Result<Dataset, DataError> {
    if topics.is_empty() {
        return Err(DataError::InvalidSpec("topic subset is empty".into()));
    }
    let kept: Vec<usize> = topics
        .iter()
        .copied()
        .filter(|&t| t < ds.n_topics())
        .collect();
    let remap: BTreeMap<usize, usize> = kept.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let mcqs: Vec<Mcq> = ds
        .mcqs
        .iter()
        .filter_map(|m| {
            remap.get(&m.topic).map(|&t| Mcq {
                topic: t,
                ..m.clone()
            })
        })
        .collect();
    if mcqs.is_empty() {
        return Err(DataError::EmptyResult);
    }
    Ok(Dataset {
        mcqs,
        topic_labels: kept.iter().map(|&t| ds.topic_labels[t].clone()).collect(),
        level_labels: ds.level_labels.clone(),
        synthetic: None,
    })
}

/// Picks `count` distinct topic indices out of `n_topics`.
pub fn sample_topics(n_topics: usize, count: usize, seed: u64) -> BTreeSet<usize> {
    let mut r = rng::stream(seed, "topic-subset", 0);
    sample_indices(&mut r, n_topics, count.min(n_topics))
        .into_iter()
        .collect()
}
