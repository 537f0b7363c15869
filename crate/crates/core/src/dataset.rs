//! Labeled short-text corpora: JSON-lines ingestion and seeded train/validation splits.
//!
//! Two layouts are understood. `simple_jsonl` holds one self-contained object per
//! line (`id`, `text`, `timestamp`, `has_media`, `label`). `challenge_jsonl` is the
//! Clickbait Challenge 2017 layout: an `instances.jsonl` file (`postText`,
//! `postTimestamp`, `postMedia`) and an optional `truth.jsonl` (`truthMean`)
//! joined on `id`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset, NaiveDateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub text: String,
    pub timestamp: Option<DateTime<FixedOffset>>,
    pub has_media: Option<bool>,
    /// Mean clickbaitiness judgment in [0, 1].
    pub label: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub provenance: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    ChallengeJsonl,
    SimpleJsonl,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn seven_three(seed: u64) -> Self {
        Self {
            train_fraction: 0.7,
            seed,
        }
    }

    pub fn two_one(seed: u64) -> Self {
        Self {
            train_fraction: 2.0 / 3.0,
            seed,
        }
    }
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::DuplicateId(inst.id.clone()));
            }
            if let Some(label) = inst.label {
                if !(0.0..=1.0).contains(&label) {
                    return Err(Error::LabelOutOfRange {
                        id: inst.id.clone(),
                        label,
                    });
                }
            }
        }
        Ok(Self {
            instances,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Labels in instance order; `None` if any instance is unlabeled.
    pub fn labels(&self) -> Option<Vec<f64>> {
        self.instances.iter().map(|i| i.label).collect()
    }

    pub fn subset(&self, indices: &[usize], tag: &str) -> Dataset {
        Dataset {
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
            provenance: format!("{}#{tag}", self.provenance),
        }
    }

    pub fn write_simple_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for inst in &self.instances {
            let rec = SimpleRecord {
                id: inst.id.clone(),
                text: inst.text.clone(),
                timestamp: inst.timestamp.map(|t| t.to_rfc3339()),
                has_media: inst.has_media,
                label: inst.label,
            };
            serde_json::to_writer(&mut out, &rec).expect("serializing a plain record");
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct SimpleRecord {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    has_media: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<f64>,
}

/// Loads a corpus. For `ChallengeJsonl`, `path` is the instances file and a
/// sibling `truth.jsonl` is joined in when present.
pub fn load_dataset(path: &Path, schema: Schema) -> Result<Dataset> {
    match schema {
        Schema::SimpleJsonl => load_simple(path),
        Schema::ChallengeJsonl => {
            let truth = path.with_file_name("truth.jsonl");
            let truth = truth.exists().then_some(truth);
            load_challenge(path, truth.as_deref())
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        message: message.into(),
    }
}

fn load_simple(path: &Path) -> Result<Dataset> {
    let mut instances = Vec::new();
    for (lineno, line) in read_lines(path)? {
        let rec: SimpleRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let timestamp = rec
            .timestamp
            .as_deref()
            .map(|s| parse_timestamp(s).ok_or_else(|| parse_err(path, lineno, format!("bad timestamp {s:?}"))))
            .transpose()?;
        instances.push(Instance {
            id: rec.id,
            text: rec.text,
            timestamp,
            has_media: rec.has_media,
            label: rec.label,
        });
    }
    Dataset::new(instances, path.display().to_string())
}

pub fn load_challenge(instances_path: &Path, truth_path: Option<&Path>) -> Result<Dataset> {
    let mut instances = Vec::new();
    let mut by_id = HashMap::new();
    for (lineno, line) in read_lines(instances_path)? {
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| parse_err(instances_path, lineno, e.to_string()))?;
        let id = json_id(&v).ok_or_else(|| parse_err(instances_path, lineno, "missing id"))?;
        let text = match v.get("postText") {
            Some(Value::Array(parts)) => parts
                .iter()
                .filter_map(Value::as_str)
                .collect::<Vec<_>>()
                .join(" "),
            Some(Value::String(s)) => s.clone(),
            _ => String::new(),
        };
        let timestamp = match v.get("postTimestamp").and_then(Value::as_str) {
            Some(s) => Some(parse_timestamp(s).ok_or_else(|| {
                parse_err(instances_path, lineno, format!("bad timestamp {s:?}"))
            })?),
            None => None,
        };
        let has_media = v
            .get("postMedia")
            .and_then(Value::as_array)
            .map(|m| !m.is_empty());
        if by_id.insert(id.clone(), instances.len()).is_some() {
            return Err(Error::DuplicateId(id));
        }
        instances.push(Instance {
            id,
            text,
            timestamp,
            has_media,
            label: None,
        });
    }
    if let Some(truth_path) = truth_path {
        for (lineno, line) in read_lines(truth_path)? {
            let v: Value = serde_json::from_str(&line)
                .map_err(|e| parse_err(truth_path, lineno, e.to_string()))?;
            let id = json_id(&v).ok_or_else(|| parse_err(truth_path, lineno, "missing id"))?;
            let mean = v
                .get("truthMean")
                .and_then(Value::as_f64)
                .ok_or_else(|| parse_err(truth_path, lineno, "missing truthMean"))?;
            let &idx = by_id.get(&id).ok_or(Error::OrphanTruth(id))?;
            instances[idx].label = Some(mean);
        }
    }
    Dataset::new(instances, instances_path.display().to_string())
}

fn json_id(v: &Value) -> Option<String> {
    match v.get("id")? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Accepts RFC 3339, naive ISO-8601 (taken as UTC), and the Twitter
/// `Tue Jun 09 16:31:10 +0000 2015` layout.
pub fn parse_timestamp(s: &str) -> Option<DateTime<FixedOffset>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t);
    }
    if let Ok(t) = DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y") {
        return Some(t);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(Utc.from_utc_datetime(&naive).fixed_offset());
        }
    }
    None
}

/// Number of items assigned to the train side: ⌈fraction·total⌉.
pub fn train_size(total: usize, fraction: f64) -> usize {
    let exact = fraction * total as f64;
    // tolerate representation error so 0.7·10 gives 7, not 8
    (exact - 1e-9).ceil().max(0.0) as usize
}

/// Seeded uniform partition of `0..total` into (train, validation) indices.
pub fn split_indices(total: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = train_size(total, spec.train_fraction);
    if n_train == 0 || n_train >= total {
        return Err(Error::EmptySplit {
            total,
            fraction: spec.train_fraction,
        });
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let validation = order.split_off(n_train);
    Ok((order, validation))
}

pub fn split(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, validation) = split_indices(dataset.len(), spec)?;
    Ok((
        dataset.subset(&train, "train"),
        dataset.subset(&validation, "validation"),
    ))
}
