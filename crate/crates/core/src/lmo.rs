//! Leave-many-out feature scoring.
//!
//! A run starts from the full feature set, draws one train/validation split,
//! and removes features one at a time in a random order until `m` remain.
//! Each removal yields a leave-one-out error `δ = MSE(without f) − MSE(with f)`
//! measured on the run's validation rows; consecutive fits share their
//! models, so one fit per step suffices. A feature's score is the mean of all
//! its deltas across `r` runs.
//!
//! Seeds: every run derives two 64-bit seeds from `(master_seed, run_id)` with
//! SplitMix64, one for the removal order (`STREAM_ORDER`) and one for the
//! split (`STREAM_SPLIT`). The derivation is platform independent.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitset::ActiveSet;
use crate::dataset::{split_indices, SplitSpec};
use crate::error::{Error, Result};
use crate::features::{Category, FeatureEntry};
use crate::regression::{fit_ridge, mse, DEFAULT_ALPHA};
use crate::sparse::SparseMatrix;
use crate::tsv;

pub const DEFAULT_COVERAGE: f64 = 25.0;
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.7;
/// Removals per run when neither `m` nor `r` is given.
pub const DEFAULT_REMOVALS_PER_RUN: usize = 1000;

pub const STREAM_ORDER: u64 = 0x6f72_6465_7200_0001;
pub const STREAM_SPLIT: u64 = 0x7370_6c69_7400_0002;
pub const STREAM_SWEEP: u64 = 0x7377_6565_7000_0003;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed for `(master, index, stream)`.
pub fn derive_seed(master: u64, index: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master ^ stream).wrapping_add(index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmoConfig {
    /// Full feature count.
    pub n: usize,
    /// Minimum subset size; derived from `coverage` when unset.
    pub m: Option<usize>,
    /// Number of runs; derived from `coverage` when unset.
    pub r: Option<usize>,
    pub coverage: f64,
    pub alpha: f64,
    pub master_seed: u64,
    pub split_fraction: f64,
    pub workers: usize,
}

impl LmoConfig {
    pub fn new(n: usize, master_seed: u64) -> Self {
        Self {
            n,
            m: None,
            r: None,
            coverage: DEFAULT_COVERAGE,
            alpha: DEFAULT_ALPHA,
            master_seed,
            split_fraction: DEFAULT_SPLIT_FRACTION,
            workers: 1,
        }
    }

    /// Fills in `m` and/or `r` so that r·(n − m)/n ≈ coverage.
    pub fn resolve(&self) -> Result<ResolvedLmo> {
        let n = self.n;
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 features, have {n}")));
        }
        if !(self.coverage > 0.0 && self.coverage.is_finite()) {
            return Err(Error::Config(format!("coverage must be positive, got {}", self.coverage)));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let runs_for = |removals: usize| ((self.coverage * n as f64 / removals as f64) - 1e-9).ceil().max(1.0) as usize;
        let (m, r) = match (self.m, self.r) {
            (Some(m), Some(r)) => (m, r),
            (Some(m), None) => {
                if m == 0 || m >= n {
                    return Err(Error::Config(format!("m must satisfy 1 <= m < n (m={m}, n={n})")));
                }
                (m, runs_for(n - m))
            }
            (None, Some(r)) => {
                let removals = ((self.coverage * n as f64 / r.max(1) as f64) - 1e-9).ceil() as usize;
                (n - removals.clamp(1, n - 1), r)
            }
            (None, None) => {
                let removals = DEFAULT_REMOVALS_PER_RUN.min(n.div_ceil(2)).clamp(1, n - 1);
                (n - removals, runs_for(removals))
            }
        };
        if m == 0 || m >= n {
            return Err(Error::Config(format!("m must satisfy 1 <= m < n (m={m}, n={n})")));
        }
        if r == 0 {
            return Err(Error::Config("r must be at least 1".into()));
        }
        Ok(ResolvedLmo {
            n,
            m,
            r,
            alpha: self.alpha,
            master_seed: self.master_seed,
            split_fraction: self.split_fraction,
            workers: self.workers,
        })
    }
}

/// An `LmoConfig` with `m` and `r` fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedLmo {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub split_fraction: f64,
    pub workers: usize,
}

impl ResolvedLmo {
    pub fn removals_per_run(&self) -> usize {
        self.n - self.m
    }

    /// Expected removals per feature, r·(n − m)/n.
    pub fn coverage(&self) -> f64 {
        self.r as f64 * self.removals_per_run() as f64 / self.n as f64
    }

    /// n·r·(n − m), the budget measure the CLI enforces.
    pub fn compute_cost(&self) -> u128 {
        self.n as u128 * self.r as u128 * self.removals_per_run() as u128
    }

    /// Fits performed by the whole job (one baseline plus one per removal, per run).
    pub fn fit_count(&self) -> u128 {
        self.r as u128 * (self.removals_per_run() as u128 + 1)
    }

    /// Identifies everything that determines run outputs.
    pub fn fingerprint(&self) -> String {
        format!(
            "n={} m={} r={} alpha={} master_seed={} split_fraction={}",
            self.n, self.m, self.r, self.alpha, self.master_seed, self.split_fraction
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub run_id: usize,
    pub removal_sequence: Vec<usize>,
    pub split_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovalRecord {
    pub run_id: usize,
    pub feature: usize,
    /// 1-based step within the run.
    pub position: usize,
    pub delta: f64,
}

/// Everything a run measured: MSE after each step (index 0 is the full set).
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub run_id: usize,
    pub mses: Vec<f64>,
    pub records: Vec<RemovalRecord>,
}

pub fn plan_runs(config: &ResolvedLmo) -> Result<Vec<RunSpec>> {
    let n = config.n;
    let removals = n
        .checked_sub(config.m)
        .filter(|&k| k >= 1)
        .ok_or_else(|| Error::Config(format!("n − m must be at least 1 (n={n}, m={})", config.m)))?;
    Ok((0..config.r)
        .map(|run_id| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, run_id as u64, STREAM_ORDER));
            // partial Fisher-Yates: the first `removals` slots are a uniform random prefix
            let mut perm: Vec<usize> = (0..n).collect();
            for i in 0..removals {
                let j = rng.gen_range(i..n);
                perm.swap(i, j);
            }
            perm.truncate(removals);
            RunSpec {
                run_id,
                removal_sequence: perm,
                split_seed: derive_seed(config.master_seed, run_id as u64, STREAM_SPLIT),
            }
        })
        .collect())
}

/// Executes one run: one split, a baseline fit on all features, then one
/// refit per removal.
pub fn execute_run(spec: &RunSpec, x: &SparseMatrix, y: &[f64], config: &ResolvedLmo) -> Result<RunTrace> {
    if x.cols() != config.n {
        return Err(Error::DimensionMismatch {
            what: "matrix columns vs configured n",
            expected: config.n,
            found: x.cols(),
        });
    }
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "label count vs matrix rows",
            expected: x.rows(),
            found: y.len(),
        });
    }
    let fail = |step: usize, e: Error| Error::RunFailed {
        run_id: spec.run_id,
        step,
        source: Box::new(e),
    };
    if let Some(&bad) = spec.removal_sequence.iter().find(|&&f| f >= config.n) {
        return Err(fail(0, Error::Config(format!("feature id {bad} out of range"))));
    }

    let split = SplitSpec {
        train_fraction: config.split_fraction,
        seed: spec.split_seed,
    };
    let (train_rows, val_rows) = split_indices(x.rows(), split).map_err(|e| fail(0, e))?;
    let x_train = x.select_rows(&train_rows);
    let x_val = x.select_rows(&val_rows);
    let y_train: Vec<f64> = train_rows.iter().map(|&i| y[i]).collect();
    let y_val: Vec<f64> = val_rows.iter().map(|&i| y[i]).collect();

    let evaluate = |active: &ActiveSet| -> Result<f64> {
        let model = fit_ridge(&x_train, &y_train, active, config.alpha)?;
        let pred = model.predict(&x_val)?;
        Ok(mse(&pred, &y_val)?.mse)
    };

    let mut active = ActiveSet::full(config.n);
    let mut mses = Vec::with_capacity(spec.removal_sequence.len() + 1);
    mses.push(evaluate(&active).map_err(|e| fail(0, e))?);
    let mut records = Vec::with_capacity(spec.removal_sequence.len());
    for (i, &feature) in spec.removal_sequence.iter().enumerate() {
        let step = i + 1;
        if !active.remove(feature) {
            return Err(fail(step, Error::Config(format!("feature {feature} removed twice"))));
        }
        let current = evaluate(&active).map_err(|e| fail(step, e))?;
        let delta = current - mses[i];
        if !delta.is_finite() {
            return Err(fail(step, Error::Config("non-finite leave-one-out error".into())));
        }
        mses.push(current);
        records.push(RemovalRecord {
            run_id: spec.run_id,
            feature,
            position: step,
            delta,
        });
    }
    Ok(RunTrace {
        run_id: spec.run_id,
        mses,
        records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScore {
    pub feature: usize,
    pub name: String,
    pub category: Category,
    pub removal_count: usize,
    /// Mean delta; `None` when the feature was never removed.
    pub lmo_score: Option<f64>,
}

impl FeatureScore {
    pub fn never_removed(&self) -> bool {
        self.removal_count == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub features: Vec<FeatureScore>,
}

/// Per-feature mean of deltas. Deltas are summed in (run_id, position) order,
/// so any permutation of `records` yields the same table bit for bit.
pub fn aggregate_scores(records: &[RemovalRecord], entries: &[FeatureEntry]) -> ScoreTable {
    let mut per_feature: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); entries.len()];
    for r in records {
        per_feature[r.feature].push((r.run_id, r.position, r.delta));
    }
    let features = per_feature
        .into_iter()
        .enumerate()
        .map(|(feature, mut deltas)| {
            deltas.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
            let count = deltas.len();
            let score = (count > 0).then(|| deltas.iter().map(|d| d.2).sum::<f64>() / count as f64);
            FeatureScore {
                feature,
                name: entries[feature].name.clone(),
                category: entries[feature].category,
                removal_count: count,
                lmo_score: score,
            }
        })
        .collect();
    ScoreTable { features }
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn never_removed_count(&self) -> usize {
        self.features.iter().filter(|f| f.never_removed()).count()
    }

    pub fn mean_removals(&self) -> f64 {
        if self.features.is_empty() {
            return 0.0;
        }
        self.features.iter().map(|f| f.removal_count).sum::<usize>() as f64 / self.features.len() as f64
    }

    pub fn to_tsv(&self, master_seed: u64) -> String {
        let mut out = format!("# master_seed={master_seed}\nfeature_id\tname\tcategory\tremoval_count\tlmo_score\n");
        for f in &self.features {
            let score = f.lmo_score.map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                f.feature,
                tsv::escape(&f.name),
                f.category,
                f.removal_count,
                score
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<ScoreTable> {
        let bad = |line: usize, msg: &str| Error::Format(format!("score table line {line}: {msg}"));
        let mut features = Vec::new();
        let mut seen_header = false;
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            if !seen_header {
                seen_header = true;
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(bad(i + 1, "expected 5 columns"));
            }
            let feature: usize = cols[0].parse().map_err(|_| bad(i + 1, "feature_id"))?;
            if feature != features.len() {
                return Err(bad(i + 1, "feature ids must be dense and ordered"));
            }
            let name = tsv::unescape(cols[1]).ok_or_else(|| bad(i + 1, "name escape"))?;
            let category: Category = cols[2].parse()?;
            let removal_count: usize = cols[3].parse().map_err(|_| bad(i + 1, "removal_count"))?;
            let lmo_score = if cols[4].is_empty() {
                None
            } else {
                Some(cols[4].parse::<f64>().map_err(|_| bad(i + 1, "lmo_score"))?)
            };
            if lmo_score.is_some() != (removal_count > 0) {
                return Err(bad(i + 1, "score present iff removal_count > 0"));
            }
            features.push(FeatureScore {
                feature,
                name,
                category,
                removal_count,
                lmo_score,
            });
        }
        Ok(ScoreTable { features })
    }
}

/// Append-only per-removal log: `run_id\tstep\tfeature_id\tdelta`, preceded
/// by a header line carrying the job fingerprint. Runs are written whole and
/// in run order.
pub struct RecordSpill {
    writer: BufWriter<fs::File>,
}

const SPILL_MAGIC: &str = "# icarfish-records v1";

impl RecordSpill {
    /// Opens `path` for a job. Complete runs already present under the same
    /// fingerprint are returned and kept; anything else is discarded.
    pub fn open(path: &Path, config: &ResolvedLmo) -> Result<(Self, BTreeMap<usize, Vec<RemovalRecord>>)> {
        let header = format!("{SPILL_MAGIC} {}", config.fingerprint());
        let completed = match fs::read_to_string(path) {
            Ok(text) => read_spill(&text, &header, config.removals_per_run()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(Error::io(path, e)),
        };
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut spill = Self {
            writer: BufWriter::new(file),
        };
        writeln!(spill.writer, "{header}").map_err(|e| Error::io(path, e))?;
        for records in completed.values() {
            spill.write_records(records).map_err(|e| Error::io(path, e))?;
        }
        spill.writer.flush().map_err(|e| Error::io(path, e))?;
        Ok((spill, completed))
    }

    fn write_records(&mut self, records: &[RemovalRecord]) -> std::io::Result<()> {
        for r in records {
            writeln!(self.writer, "{}\t{}\t{}\t{}", r.run_id, r.position, r.feature, r.delta)?;
        }
        Ok(())
    }

    pub fn append(&mut self, trace: &RunTrace) -> std::io::Result<()> {
        self.write_records(&trace.records)?;
        self.writer.flush()
    }
}

fn read_spill(text: &str, header: &str, per_run: usize) -> BTreeMap<usize, Vec<RemovalRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header => {}
        None => return BTreeMap::new(),
        Some(_) => {
            warn!("record spill belongs to a different job configuration; starting over");
            return BTreeMap::new();
        }
    }
    let mut runs: BTreeMap<usize, Vec<RemovalRecord>> = BTreeMap::new();
    for line in lines {
        let mut parts = line.split('\t');
        let parsed = (|| {
            let run_id = parts.next()?.parse().ok()?;
            let position = parts.next()?.parse().ok()?;
            let feature = parts.next()?.parse().ok()?;
            let delta: f64 = parts.next()?.parse().ok()?;
            (parts.next().is_none() && delta.is_finite()).then_some(RemovalRecord {
                run_id,
                feature,
                position,
                delta,
            })
        })();
        let Some(rec) = parsed else { break };
        runs.entry(rec.run_id).or_default().push(rec);
    }
    runs.retain(|_, recs| {
        recs.len() == per_run && recs.iter().enumerate().all(|(i, r)| r.position == i + 1)
    });
    runs
}

#[derive(Debug, Default)]
pub struct RunOptions<'a> {
    /// Record failed runs and exclude them instead of failing the job.
    pub keep_going: bool,
    /// Runs already finished (e.g. recovered from a spill); not re-executed.
    pub completed: BTreeMap<usize, Vec<RemovalRecord>>,
    pub spill: Option<&'a mut RecordSpill>,
}

#[derive(Debug)]
pub struct LmoOutcome {
    pub table: ScoreTable,
    /// (run_id, error message) for runs excluded under `keep_going`.
    pub failures: Vec<(usize, String)>,
    pub records: usize,
}

impl std::fmt::Debug for RecordSpill {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("RecordSpill")
    }
}

/// Runs the whole job on `workers` threads pulling from a shared queue.
/// The table depends only on (config, data).
pub fn run_lmo(config: &ResolvedLmo, x: &SparseMatrix, y: &[f64], entries: &[FeatureEntry]) -> Result<ScoreTable> {
    run_lmo_with(config, x, y, entries, RunOptions::default()).map(|o| o.table)
}

pub fn run_lmo_with(
    config: &ResolvedLmo,
    x: &SparseMatrix,
    y: &[f64],
    entries: &[FeatureEntry],
    mut options: RunOptions<'_>,
) -> Result<LmoOutcome> {
    if entries.len() != config.n || x.cols() != config.n {
        return Err(Error::DimensionMismatch {
            what: "feature entries / matrix columns vs configured n",
            expected: config.n,
            found: if entries.len() != config.n { entries.len() } else { x.cols() },
        });
    }
    let plan = plan_runs(config)?;
    let pending: Vec<&RunSpec> = plan
        .iter()
        .filter(|s| !options.completed.contains_key(&s.run_id))
        .collect();

    let mut finished: BTreeMap<usize, Vec<RemovalRecord>> = std::mem::take(&mut options.completed);
    let mut failures = Vec::new();
    let mut first_error: Option<Error> = None;

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<RunTrace>)>();
    let workers = config.workers.max(1).min(pending.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, pending) = (&next, &abort, &pending);
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(spec) = pending.get(i) else { break };
                let result = execute_run(spec, x, y, config);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // reorder buffer so the spill is written in run order
        let mut buffered: BTreeMap<usize, Option<RunTrace>> = BTreeMap::new();
        let mut cursor = 0usize;
        for (i, result) in rx {
            match result {
                Ok(trace) => {
                    buffered.insert(i, Some(trace));
                }
                Err(e) => {
                    let run_id = pending[i].run_id;
                    if options.keep_going {
                        warn!("run {run_id} failed and is excluded: {e}");
                        failures.push((run_id, e.to_string()));
                        buffered.insert(i, None);
                    } else {
                        abort.store(true, Ordering::SeqCst);
                        if first_error.is_none() {
                            first_error = Some(e);
                        }
                        continue;
                    }
                }
            }
            if first_error.is_some() {
                continue;
            }
            while let Some(slot) = buffered.remove(&cursor) {
                if let Some(trace) = slot {
                    if let Some(spill) = options.spill.as_deref_mut() {
                        if let Err(e) = spill.append(&trace) {
                            abort.store(true, Ordering::SeqCst);
                            first_error.get_or_insert(Error::Format(format!("writing record spill: {e}")));
                            break;
                        }
                    }
                    finished.insert(trace.run_id, trace.records);
                }
                cursor += 1;
            }
        }
    });

    if let Some(e) = first_error {
        return Err(e);
    }
    failures.sort_by_key(|f| f.0);
    let records: Vec<RemovalRecord> = finished.into_values().flatten().collect();
    let table = aggregate_scores(&records, entries);
    if table.never_removed_count() > 0 {
        warn!(
            "{} of {} features were never removed and have no score",
            table.never_removed_count(),
            table.len()
        );
    }
    Ok(LmoOutcome {
        records: records.len(),
        table,
        failures,
    })
}

/// Placeholder names `f0000…` for matrices without a vocabulary.
pub fn anonymous_entries(n: usize) -> Vec<FeatureEntry> {
    let width = n.saturating_sub(1).to_string().len().max(1);
    (0..n)
        .map(|i| FeatureEntry {
            name: format!("f{i:0width$}"),
            category: Category::Engineered,
        })
        .collect()
}

/// Mean removals per feature implied by a plan.
pub fn plan_coverage(plan: &[RunSpec], n: usize) -> f64 {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for s in plan {
        for &f in &s.removal_sequence {
            *counts.entry(f).or_default() += 1;
        }
    }
    counts.values().sum::<usize>() as f64 / n as f64
}
