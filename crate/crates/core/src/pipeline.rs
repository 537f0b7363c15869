//! Configuration and the five pipeline stages behind the `icarfish` binary:
//! `extract`, `score`, `sweep`, `predict` and `report`. Every stage reads and
//! writes a single output directory.
//!
//! Files in the output directory:
//!
//! | file                       | written by | contents                               |
//! |----------------------------|------------|----------------------------------------|
//! | `vocabulary.json`          | extract    | column layout + document frequencies   |
//! | `train.matrix`             | extract    | binary sparse matrix cache             |
//! | `labels.json`              | extract    | instance ids and labels                |
//! | `extract.manifest.json`    | extract    | input fingerprint for no-op detection  |
//! | `records.tsv`              | score      | append-only removal records            |
//! | `scores.tsv`               | score      | per-feature LMO scores                 |
//! | `sweep.csv`                | sweep      | fraction, subset size, validation MSE  |
//! | `selected_subset.json`     | sweep      | retained feature names + vocab hash    |
//! | `model.json`               | sweep      | ridge model on the selected subset     |
//! | `impact.tsv`               | report     | high-impact features by category       |
//! | `impact_by_category.csv`   | report     | per-category plot data                 |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bitset::ActiveSet;
use crate::dataset::{load_dataset, Dataset, Schema, SplitSpec};
use crate::error::{Error, Result};
use crate::features::{build_vocabulary, extract_matrix, Category, FeatureVocabulary, NgramConfig, Resources};
use crate::lmo::{self, derive_seed, LmoConfig, RecordSpill, ResolvedLmo, RunOptions, ScoreTable, STREAM_SWEEP};
use crate::regression::{fit_ridge, load_model, save_model, DEFAULT_ALPHA};
use crate::sparse::SparseMatrix;
use crate::sweep::{
    build_percent_subsets, default_fractions, evaluate_subsets, impact_report, rank_features, select_best,
    sweep_csv, SelectedSubset, SubsetEvaluation, SubsetRounding, DEFAULT_IMPACT_THRESHOLD,
};

pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const MATRIX_FILE: &str = "train.matrix";
pub const LABELS_FILE: &str = "labels.json";
pub const MANIFEST_FILE: &str = "extract.manifest.json";
pub const RECORDS_FILE: &str = "records.tsv";
pub const SCORES_FILE: &str = "scores.tsv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SUBSET_FILE: &str = "selected_subset.json";
pub const MODEL_FILE: &str = "model.json";
pub const IMPACT_FILE: &str = "impact.tsv";
pub const IMPACT_CATEGORY_FILE: &str = "impact_by_category.csv";
const LOCK_FILE: &str = ".icarfish.lock";

/// Refuse LMO jobs whose n·r·(n − m) exceeds this unless overridden.
pub const DEFAULT_COMPUTE_BUDGET: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmoSection {
    pub m: Option<usize>,
    pub r: Option<usize>,
    pub coverage: f64,
    pub alpha: f64,
    pub split_fraction: f64,
    pub compute_budget: f64,
}

impl Default for LmoSection {
    fn default() -> Self {
        Self {
            m: None,
            r: None,
            coverage: lmo::DEFAULT_COVERAGE,
            alpha: DEFAULT_ALPHA,
            split_fraction: lmo::DEFAULT_SPLIT_FRACTION,
            compute_budget: DEFAULT_COMPUTE_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Retained fractions; the default grid when unset.
    pub fractions: Option<Vec<f64>>,
    pub rounding: SubsetRounding,
    pub split_fraction: f64,
    pub impact_threshold: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            fractions: None,
            rounding: SubsetRounding::default(),
            split_fraction: 2.0 / 3.0,
            impact_threshold: DEFAULT_IMPACT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Training corpus (instances file for `challenge_jsonl`).
    pub train: Option<PathBuf>,
    pub schema: Schema,
    pub resources: PathBuf,
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
    pub workers: usize,
    pub features: NgramConfig,
    pub lmo: LmoSection,
    pub sweep: SweepSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: None,
            schema: Schema::ChallengeJsonl,
            resources: PathBuf::from("resources"),
            output_dir: PathBuf::from("out"),
            seed: None,
            workers: 1,
            features: NgramConfig::default(),
            lmo: LmoSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses a TOML config; relative paths resolve against its directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = cfg.train.as_mut() {
            rebase(t);
        }
        rebase(&mut cfg.resources);
        rebase(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::Config("no seed set; pass --seed, set ICARFISH_SEED, or add `seed` to the config file".into())
        })
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.output_dir.join(file)
    }

    pub fn lmo_config(&self, n: usize) -> Result<LmoConfig> {
        Ok(LmoConfig {
            n,
            m: self.lmo.m,
            r: self.lmo.r,
            coverage: self.lmo.coverage,
            alpha: self.lmo.alpha,
            master_seed: self.seed()?,
            split_fraction: self.lmo.split_fraction,
            workers: self.workers,
        })
    }

    pub fn sweep_split(&self) -> Result<SplitSpec> {
        Ok(SplitSpec {
            train_fraction: self.sweep.split_fraction,
            seed: derive_seed(self.seed()?, 0, STREAM_SWEEP),
        })
    }

    fn validate_common(&self) -> Result<u64> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.seed()
    }
}

/// Advisory lock on the output directory; removed on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is locked by another command (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub ids: Vec<String>,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExtractManifest {
    input_hash: String,
    vocabulary_hash: String,
    matrix_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractSummary {
    pub rows: usize,
    pub category_counts: BTreeMap<Category, usize>,
    pub total: usize,
    pub vocabulary_hash: String,
    pub matrix_hash: String,
    /// True when the cache was already current and nothing was rewritten.
    pub up_to_date: bool,
}

fn input_fingerprint(cfg: &PipelineConfig, train: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut feed = |p: &Path| -> Result<()> {
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        hasher.update(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
        Ok(())
    };
    feed(train)?;
    if cfg.schema == Schema::ChallengeJsonl {
        let truth = train.with_file_name("truth.jsonl");
        if truth.exists() {
            feed(&truth)?;
        }
    }
    let mut resource_files: Vec<PathBuf> = vec![
        cfg.resources.join(crate::features::ABBREVIATIONS_FILE),
        cfg.resources.join(crate::features::LEXICON_FILE),
    ];
    let lists_dir = cfg.resources.join(crate::features::WORDLIST_DIR);
    if let Ok(rd) = fs::read_dir(&lists_dir) {
        let mut lists: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).collect();
        lists.sort();
        resource_files.extend(lists);
    }
    for p in &resource_files {
        feed(p)?;
    }
    hasher.update(serde_json::to_vec(&(cfg.schema, cfg.features)).expect("config serializes"));
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn load_training_set(cfg: &PipelineConfig) -> Result<(Dataset, PathBuf)> {
    let train = cfg
        .train
        .clone()
        .ok_or_else(|| Error::Config("no training corpus configured (`train`)".into()))?;
    if !train.exists() {
        return Err(Error::Config(format!("training corpus {} does not exist", train.display())));
    }
    Ok((load_dataset(&train, cfg.schema)?, train))
}

/// Builds the vocabulary from the training corpus and caches its matrix.
pub fn cmd_extract(cfg: &PipelineConfig) -> Result<ExtractSummary> {
    cfg.validate_common()?;
    let (dataset, train_path) = load_training_set(cfg)?;
    let resources = Resources::load(&cfg.resources)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;

    let input_hash = input_fingerprint(cfg, &train_path)?;
    if let Ok(raw) = fs::read(cfg.out(MANIFEST_FILE)) {
        if let Ok(manifest) = serde_json::from_slice::<ExtractManifest>(&raw) {
            if manifest.input_hash == input_hash {
                if let (Ok(vocab), Ok(matrix_bytes)) =
                    (FeatureVocabulary::load(&cfg.out(VOCABULARY_FILE)), fs::read(cfg.out(MATRIX_FILE)))
                {
                    if vocab.hash() == manifest.vocabulary_hash && sha256_hex(&matrix_bytes) == manifest.matrix_hash {
                        info!("extract: inputs unchanged, cache is current");
                        return Ok(ExtractSummary {
                            rows: dataset.len(),
                            total: vocab.len(),
                            category_counts: vocab.category_counts(),
                            vocabulary_hash: manifest.vocabulary_hash,
                            matrix_hash: manifest.matrix_hash,
                            up_to_date: true,
                        });
                    }
                }
            }
        }
    }

    let labels = dataset.labels().ok_or_else(|| {
        Error::Config(format!("training corpus {} has unlabeled instances", train_path.display()))
    })?;
    if dataset.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let vocab = build_vocabulary(&dataset, &resources.lists, cfg.features)?;
    let matrix = extract_matrix(&dataset, &vocab, &resources)?;
    let vocabulary_hash = vocab.hash();
    let matrix_bytes = matrix.to_bytes(&vocabulary_hash);
    let matrix_hash = sha256_hex(&matrix_bytes);

    vocab.save(&cfg.out(VOCABULARY_FILE))?;
    write(&cfg.out(MATRIX_FILE), &matrix_bytes)?;
    let label_file = LabelFile {
        ids: dataset.instances.iter().map(|i| i.id.clone()).collect(),
        labels,
    };
    write(&cfg.out(LABELS_FILE), serde_json::to_vec(&label_file).expect("labels serialize"))?;
    let manifest = ExtractManifest {
        input_hash,
        vocabulary_hash: vocabulary_hash.clone(),
        matrix_hash: matrix_hash.clone(),
    };
    write(&cfg.out(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;

    Ok(ExtractSummary {
        rows: dataset.len(),
        total: vocab.len(),
        category_counts: vocab.category_counts(),
        vocabulary_hash,
        matrix_hash,
        up_to_date: false,
    })
}

/// Cached vocabulary, training matrix, and labels.
pub struct TrainingCache {
    pub vocab: FeatureVocabulary,
    pub matrix: SparseMatrix,
    pub labels: Vec<f64>,
}

pub fn load_cache(cfg: &PipelineConfig) -> Result<TrainingCache> {
    let missing: Vec<&str> = [VOCABULARY_FILE, MATRIX_FILE, LABELS_FILE]
        .into_iter()
        .filter(|f| !cfg.out(f).exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "missing {} in {}; run `icarfish extract` first",
            missing.join(", "),
            cfg.output_dir.display()
        )));
    }
    let vocab = FeatureVocabulary::load(&cfg.out(VOCABULARY_FILE))?;
    let (matrix, hash) = SparseMatrix::load(&cfg.out(MATRIX_FILE))?;
    let expected = vocab.hash();
    if hash != expected {
        return Err(Error::VocabularyMismatch { expected, found: hash });
    }
    if matrix.cols() != vocab.len() {
        return Err(Error::DimensionMismatch {
            what: "cached matrix columns vs vocabulary",
            expected: vocab.len(),
            found: matrix.cols(),
        });
    }
    let raw = fs::read(cfg.out(LABELS_FILE)).map_err(|e| Error::io(cfg.out(LABELS_FILE), e))?;
    let labels: LabelFile = serde_json::from_slice(&raw).map_err(|e| Error::Format(format!("{LABELS_FILE}: {e}")))?;
    if labels.labels.len() != matrix.rows() {
        return Err(Error::DimensionMismatch {
            what: "labels vs cached matrix rows",
            expected: matrix.rows(),
            found: labels.labels.len(),
        });
    }
    Ok(TrainingCache {
        vocab,
        matrix,
        labels: labels.labels,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreOptions {
    pub budget_override: bool,
    pub keep_going: bool,
}

#[derive(Debug, Clone)]
pub struct ScoreSummary {
    pub config: ResolvedLmo,
    pub mean_removals: f64,
    pub never_removed: usize,
    pub resumed_runs: usize,
    pub failed_runs: Vec<(usize, String)>,
}

pub fn check_budget(config: &ResolvedLmo, budget: f64, overridden: bool) -> Result<()> {
    let cost = config.compute_cost();
    if !overridden && cost as f64 > budget {
        return Err(Error::Config(format!(
            "LMO job n·r·(n−m) = {cost} ({} fits) exceeds the compute budget {budget:e}; \
             lower the coverage or pass --budget-override. \
             For reference, 1000 runs × 1000 removals over 37,528 features (10^6 fits) is a cluster-scale workload",
            config.fit_count()
        )));
    }
    Ok(())
}

/// Runs the LMO job, resuming complete runs found in the record spill.
pub fn cmd_score(cfg: &PipelineConfig, opts: ScoreOptions) -> Result<ScoreSummary> {
    let seed = cfg.validate_common()?;
    let cache = load_cache(cfg)?;
    let resolved = cfg.lmo_config(cache.vocab.len())?.resolve()?;
    check_budget(&resolved, cfg.lmo.compute_budget, opts.budget_override)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;

    let (mut spill, completed) = RecordSpill::open(&cfg.out(RECORDS_FILE), &resolved)?;
    let resumed_runs = completed.len();
    if resumed_runs > 0 {
        info!("score: resuming, {resumed_runs} of {} runs already recorded", resolved.r);
    }
    let outcome = lmo::run_lmo_with(
        &resolved,
        &cache.matrix,
        &cache.labels,
        cache.vocab.entries(),
        RunOptions {
            keep_going: opts.keep_going,
            completed,
            spill: Some(&mut spill),
        },
    )?;
    write(&cfg.out(SCORES_FILE), outcome.table.to_tsv(seed))?;
    Ok(ScoreSummary {
        config: resolved,
        mean_removals: outcome.table.mean_removals(),
        never_removed: outcome.table.never_removed_count(),
        resumed_runs,
        failed_runs: outcome.failures,
    })
}

pub fn load_scores(cfg: &PipelineConfig, vocab: &FeatureVocabulary) -> Result<ScoreTable> {
    let path = cfg.out(SCORES_FILE);
    let raw = fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {} ({e}); run `icarfish score` first", path.display())))?;
    let table = ScoreTable::from_tsv(&raw)?;
    if table.len() != vocab.len()
        || table
            .features
            .iter()
            .zip(vocab.entries())
            .any(|(f, e)| f.name != e.name || f.category != e.category)
    {
        return Err(Error::Format(format!("{} does not match the cached vocabulary", path.display())));
    }
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub evaluations: Vec<SubsetEvaluation>,
    pub best: SubsetEvaluation,
    pub full: SubsetEvaluation,
}

/// Ranks features, evaluates the subset grid on one split, stores the best
/// subset and a model refit on all training rows with it.
pub fn cmd_sweep(cfg: &PipelineConfig) -> Result<SweepSummary> {
    let seed = cfg.validate_common()?;
    let cache = load_cache(cfg)?;
    let table = load_scores(cfg, &cache.vocab)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;

    let ranked = rank_features(&table);
    let fractions = cfg.sweep.fractions.clone().unwrap_or_else(default_fractions);
    let subsets = build_percent_subsets(&ranked, &fractions, cfg.sweep.rounding)?;
    let evaluations = evaluate_subsets(
        &subsets,
        &cache.matrix,
        &cache.labels,
        cfg.sweep_split()?,
        cfg.lmo.alpha,
        cfg.workers,
    )?;
    let best = select_best(&evaluations).ok_or_else(|| Error::Config("empty fraction list".into()))?;
    let full = evaluations
        .iter()
        .copied()
        .max_by(|a, b| a.retained_fraction.total_cmp(&b.retained_fraction))
        .expect("nonempty");
    write(&cfg.out(SWEEP_FILE), sweep_csv(&evaluations, seed))?;

    let best_set = subsets
        .iter()
        .find(|(f, s)| *f == best.retained_fraction && s.count() == best.subset_size)
        .map(|(_, s)| s.clone())
        .expect("best evaluation comes from a subset");
    SelectedSubset::new(&best, &best_set, &cache.vocab, seed).save(&cfg.out(SUBSET_FILE))?;
    let model = fit_ridge(&cache.matrix, &cache.labels, &best_set, cfg.lmo.alpha)?;
    save_model(&model, &cache.vocab.hash(), &cfg.out(MODEL_FILE))?;
    Ok(SweepSummary {
        evaluations,
        best,
        full,
    })
}

#[derive(Debug, Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    #[serde(rename = "clickbaitScore")]
    clickbait_score: f64,
}

/// Scores an unseen corpus and writes challenge-format `results.jsonl`.
/// Returns the clamped scores in input order.
pub fn cmd_predict(cfg: &PipelineConfig, instances: &Path, schema: Schema, out: &Path) -> Result<Vec<f64>> {
    let vocab = FeatureVocabulary::load(&cfg.out(VOCABULARY_FILE))?;
    let (model, model_hash) = load_model(&cfg.out(MODEL_FILE))?;
    let vocab_hash = vocab.hash();
    if model_hash != vocab_hash {
        return Err(Error::VocabularyMismatch {
            expected: model_hash,
            found: vocab_hash,
        });
    }
    let subset = SelectedSubset::load(&cfg.out(SUBSET_FILE))?;
    let active: ActiveSet = subset.active_set(&vocab)?;
    if active != model.active {
        return Err(Error::Format("model and selected subset disagree on the active features".into()));
    }
    let resources = Resources::load(&cfg.resources)?;
    let dataset = load_dataset(instances, schema)?;
    let matrix = extract_matrix(&dataset, &vocab, &resources)?;
    let scores: Vec<f64> = model.predict(&matrix)?.into_iter().map(|p| p.clamp(0.0, 1.0)).collect();

    let mut body = Vec::new();
    for (inst, &s) in dataset.instances.iter().zip(&scores) {
        serde_json::to_writer(
            &mut body,
            &PredictionLine {
                id: &inst.id,
                clickbait_score: s,
            },
        )
        .expect("prediction serializes");
        body.push(b'\n');
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write(out, body)?;
    Ok(scores)
}

#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub reported: usize,
    pub per_category: BTreeMap<Category, (usize, usize)>,
    pub negative_fraction: f64,
}

/// Writes the high-impact feature listing and per-category plot data.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<ReportSummary> {
    let seed = cfg.validate_common()?;
    let vocab = FeatureVocabulary::load(&cfg.out(VOCABULARY_FILE))?;
    let table = load_scores(cfg, &vocab)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let report = impact_report(&table, cfg.sweep.impact_threshold);
    write(&cfg.out(IMPACT_FILE), report.to_tsv(seed))?;
    write(&cfg.out(IMPACT_CATEGORY_FILE), report.category_csv(seed))?;
    let per_category = report
        .by_category
        .iter()
        .map(|(c, rows)| {
            let pos = rows.iter().filter(|f| f.lmo_score.unwrap() > 0.0).count();
            (*c, (pos, rows.len() - pos))
        })
        .collect();
    Ok(ReportSummary {
        reported: report.len(),
        per_category,
        negative_fraction: report.negative_fraction,
    })
}
