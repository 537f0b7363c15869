//! Ranking by LMO score, nested top-k subsets, and the subset sweep.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bitset::ActiveSet;
use crate::dataset::{split_indices, SplitSpec};
use crate::error::{Error, Result};
use crate::features::{Category, FeatureEntry, FeatureVocabulary};
use crate::lmo::{FeatureScore, ScoreTable};
use crate::pool::parallel_map;
use crate::regression::{fit_ridge, mse};
use crate::sparse::SparseMatrix;
use crate::tsv;

pub const DEFAULT_IMPACT_THRESHOLD: f64 = 1e-5;

/// How a retained fraction becomes a feature count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetRounding {
    /// ⌈fraction · n⌉
    #[default]
    Ceil,
    /// ⌊fraction · n⌋, e.g. 32% of 37,528 → 12,008.
    Floor,
}

impl SubsetRounding {
    pub fn size(self, fraction: f64, n: usize) -> usize {
        let exact = fraction * n as f64;
        let size = match self {
            SubsetRounding::Ceil => (exact - 1e-9).ceil(),
            SubsetRounding::Floor => (exact + 1e-9).floor(),
        };
        (size.max(0.0) as usize).min(n)
    }
}

/// 100%, 98%, …, 2%, then 1.5%, 1%, 0.5%.
pub fn default_fractions() -> Vec<f64> {
    let mut out: Vec<f64> = (1..=50).rev().map(|k| (2 * k) as f64 / 100.0).collect();
    out.extend([0.015, 0.010, 0.005]);
    out
}

fn score_order(a: &FeatureScore, b: &FeatureScore) -> Ordering {
    match (a.lmo_score, b.lmo_score) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
    .then_with(|| a.name.cmp(&b.name))
    .then_with(|| a.category.cmp(&b.category))
    .then_with(|| a.feature.cmp(&b.feature))
}

/// Column ids by descending score, ties by name; never-removed features last.
pub fn rank_features(table: &ScoreTable) -> Vec<usize> {
    if !table.is_empty() && table.never_removed_count() == table.len() {
        warn!("no feature has a score; ranking falls back to name order");
    }
    let mut order: Vec<&FeatureScore> = table.features.iter().collect();
    order.sort_by(|a, b| score_order(a, b));
    order.into_iter().map(|f| f.feature).collect()
}

/// One active set per fraction: the first `size(fraction)` ranked features.
pub fn build_percent_subsets(
    ranked: &[usize],
    fractions: &[f64],
    rounding: SubsetRounding,
) -> Result<Vec<(f64, ActiveSet)>> {
    let n = ranked.len();
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("fraction {f} is outside (0, 1]")));
            }
            let k = rounding.size(f, n);
            if k == 0 {
                return Err(Error::EmptySubset(f));
            }
            Ok((f, ActiveSet::from_indices(n, ranked[..k].iter().copied())))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetEvaluation {
    pub retained_fraction: f64,
    pub subset_size: usize,
    pub validation_mse: f64,
    pub split_seed: u64,
}

/// Fits every subset on the same split and records its validation MSE.
/// Output is ordered by descending fraction.
pub fn evaluate_subsets(
    subsets: &[(f64, ActiveSet)],
    x: &SparseMatrix,
    y: &[f64],
    split: SplitSpec,
    alpha: f64,
    workers: usize,
) -> Result<Vec<SubsetEvaluation>> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "label count vs matrix rows",
            expected: x.rows(),
            found: y.len(),
        });
    }
    let (train, val) = split_indices(x.rows(), split)?;
    let x_train = x.select_rows(&train);
    let x_val = x.select_rows(&val);
    let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let y_val: Vec<f64> = val.iter().map(|&i| y[i]).collect();

    let results = parallel_map(subsets, workers, |(fraction, active)| {
        let run = || -> Result<f64> {
            let model = fit_ridge(&x_train, &y_train, active, alpha)?;
            Ok(mse(&model.predict(&x_val)?, &y_val)?.mse)
        };
        run().map(|m| SubsetEvaluation {
            retained_fraction: *fraction,
            subset_size: active.count(),
            validation_mse: m,
            split_seed: split.seed,
        })
        .map_err(|e| Error::SubsetFailed {
            fraction: *fraction,
            source: Box::new(e),
        })
    });
    let mut evals = results.into_iter().collect::<Result<Vec<_>>>()?;
    evals.sort_by(|a, b| b.retained_fraction.total_cmp(&a.retained_fraction));
    Ok(evals)
}

/// Lowest validation MSE; ties go to the larger subset.
pub fn select_best(evals: &[SubsetEvaluation]) -> Option<SubsetEvaluation> {
    evals.iter().copied().min_by(|a, b| {
        a.validation_mse
            .total_cmp(&b.validation_mse)
            .then(b.subset_size.cmp(&a.subset_size))
            .then(b.retained_fraction.total_cmp(&a.retained_fraction))
    })
}

pub fn sweep_csv(evals: &[SubsetEvaluation], master_seed: u64) -> String {
    let mut out = format!("# master_seed={master_seed}\nfraction,subset_size,validation_mse\n");
    for e in evals {
        out.push_str(&format!("{},{},{}\n", e.retained_fraction, e.subset_size, e.validation_mse));
    }
    out
}

/// Features with |score| above a threshold, grouped by category.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactReport {
    pub threshold: f64,
    /// Within a category: descending score, ties by name.
    pub by_category: BTreeMap<Category, Vec<FeatureScore>>,
    /// Share of scored features whose score is negative.
    pub negative_fraction: f64,
    pub scored: usize,
}

pub fn impact_report(table: &ScoreTable, threshold: f64) -> ImpactReport {
    let mut by_category: BTreeMap<Category, Vec<FeatureScore>> = BTreeMap::new();
    let mut scored = 0usize;
    let mut negative = 0usize;
    for f in &table.features {
        let Some(s) = f.lmo_score else { continue };
        scored += 1;
        if s < 0.0 {
            negative += 1;
        }
        if s.abs() > threshold {
            by_category.entry(f.category).or_default().push(f.clone());
        }
    }
    for rows in by_category.values_mut() {
        rows.sort_by(score_order);
    }
    ImpactReport {
        threshold,
        by_category,
        negative_fraction: if scored == 0 { 0.0 } else { negative as f64 / scored as f64 },
        scored,
    }
}

impl ImpactReport {
    pub fn len(&self) -> usize {
        self.by_category.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_tsv(&self, master_seed: u64) -> String {
        let mut out = format!(
            "# master_seed={master_seed} threshold={} negative_fraction={} scored={}\ncategory\tfeature_id\tname\tlmo_score\n",
            self.threshold, self.negative_fraction, self.scored
        );
        for (cat, rows) in &self.by_category {
            for f in rows {
                out.push_str(&format!(
                    "{cat}\t{}\t{}\t{}\n",
                    f.feature,
                    tsv::escape(&f.name),
                    f.lmo_score.expect("reported features are scored")
                ));
            }
        }
        out
    }

    /// Plot data: one point per reported feature, ranked within its category.
    pub fn category_csv(&self, master_seed: u64) -> String {
        let mut out = format!("# master_seed={master_seed}\ncategory,rank,lmo_score\n");
        for (cat, rows) in &self.by_category {
            for (i, f) in rows.iter().enumerate() {
                out.push_str(&format!("{cat},{},{}\n", i + 1, f.lmo_score.unwrap()));
            }
        }
        out
    }
}

/// The retained features of the chosen subset, tied to a vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSubset {
    pub vocabulary_hash: String,
    pub master_seed: u64,
    pub retained_fraction: f64,
    pub subset_size: usize,
    pub validation_mse: f64,
    pub features: Vec<FeatureEntry>,
}

impl SelectedSubset {
    pub fn new(best: &SubsetEvaluation, active: &ActiveSet, vocab: &FeatureVocabulary, master_seed: u64) -> Self {
        Self {
            vocabulary_hash: vocab.hash(),
            master_seed,
            retained_fraction: best.retained_fraction,
            subset_size: best.subset_size,
            validation_mse: best.validation_mse,
            features: active.iter().map(|c| vocab.entry(c).clone()).collect(),
        }
    }

    /// Resolves feature names back to columns of `vocab`.
    pub fn active_set(&self, vocab: &FeatureVocabulary) -> Result<ActiveSet> {
        let found = vocab.hash();
        if found != self.vocabulary_hash {
            return Err(Error::VocabularyMismatch {
                expected: self.vocabulary_hash.clone(),
                found,
            });
        }
        let mut set = ActiveSet::empty(vocab.len());
        for e in &self.features {
            let col = vocab
                .lookup(e.category, &e.name)
                .ok_or_else(|| Error::Format(format!("selected feature {} {:?} not in vocabulary", e.category, e.name)))?;
            set.insert(col);
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("subset serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&raw).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmo::{aggregate_scores, anonymous_entries, RemovalRecord};
    use proptest::prelude::*;

    fn table(scores: &[(&str, Option<f64>)]) -> ScoreTable {
        ScoreTable {
            features: scores
                .iter()
                .enumerate()
                .map(|(i, &(name, s))| FeatureScore {
                    feature: i,
                    name: name.into(),
                    category: Category::WordNgram,
                    removal_count: usize::from(s.is_some()),
                    lmo_score: s,
                })
                .collect(),
        }
    }

    fn eval(fraction: f64, size: usize, m: f64) -> SubsetEvaluation {
        SubsetEvaluation {
            retained_fraction: fraction,
            subset_size: size,
            validation_mse: m,
            split_seed: 0,
        }
    }

    #[test]
    fn rank_with_name_tiebreak() {
        let t = table(&[("a", Some(0.1)), ("b", Some(-0.2)), ("c", Some(0.1))]);
        assert_eq!(rank_features(&t), vec![0, 2, 1]);
    }

    #[test]
    fn never_removed_rank_last_by_name() {
        let t = table(&[("z", None), ("y", Some(-5.0)), ("a", None)]);
        assert_eq!(rank_features(&t), vec![1, 2, 0]);
        let t = table(&[("q", None), ("b", None), ("m", None)]);
        assert_eq!(rank_features(&t), vec![1, 2, 0]);
    }

    #[test]
    fn default_grid() {
        let g = default_fractions();
        assert_eq!(g.len(), 53);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[49], 0.02);
        assert_eq!(&g[50..], &[0.015, 0.01, 0.005]);
    }

    #[test]
    fn subset_sizes() {
        assert_eq!(SubsetRounding::Ceil.size(1.0, 37_528), 37_528);
        assert_eq!(SubsetRounding::Ceil.size(0.005, 1000), 5);
        assert_eq!(SubsetRounding::Floor.size(0.005, 1000), 5);
        // published sizes: 12,008 (32.0%), 375 (1.0%), 187 (0.5%) of 37,528
        assert_eq!(SubsetRounding::Floor.size(0.32, 37_528), 12_008);
        assert_eq!(SubsetRounding::Floor.size(0.01, 37_528), 375);
        assert_eq!(SubsetRounding::Floor.size(0.005, 37_528), 187);
        assert_eq!(SubsetRounding::Ceil.size(0.32, 37_528), 12_009);
        assert_eq!(SubsetRounding::Ceil.size(0.98, 50), 49);
    }

    #[test]
    fn full_fraction_is_identity_and_zero_is_error() {
        let ranked = vec![3, 1, 0, 2];
        let s = build_percent_subsets(&ranked, &[1.0], SubsetRounding::Ceil).unwrap();
        assert_eq!(s[0].1, ActiveSet::full(4));
        assert!(matches!(
            build_percent_subsets(&ranked, &[0.1], SubsetRounding::Floor),
            Err(Error::EmptySubset(_))
        ));
        assert!(build_percent_subsets(&ranked, &[0.0], SubsetRounding::Ceil).is_err());
        assert!(build_percent_subsets(&ranked, &[1.5], SubsetRounding::Ceil).is_err());
    }

    #[test]
    fn select_best_rules() {
        let one = [eval(1.0, 10, 0.3)];
        assert_eq!(select_best(&one), Some(one[0]));
        let tie = [eval(0.5, 5, 0.2), eval(0.8, 8, 0.2), eval(1.0, 10, 0.25)];
        assert_eq!(select_best(&tie).unwrap().subset_size, 8);
        assert_eq!(select_best(&[]), None);
        // published table: 100% 0.0328, 32% 0.0297, 1% 0.0323, 0.5% 0.0342
        let published = [
            eval(1.0, 37_528, 0.0328),
            eval(0.32, 12_008, 0.0297),
            eval(0.01, 375, 0.0323),
            eval(0.005, 187, 0.0342),
        ];
        let best = select_best(&published).unwrap();
        assert_eq!((best.subset_size, best.retained_fraction), (12_008, 0.32));
    }

    #[test]
    fn impact_threshold_and_grouping() {
        let entries = anonymous_entries(4);
        let recs = [
            RemovalRecord { run_id: 0, feature: 0, position: 1, delta: 1e-3 },
            RemovalRecord { run_id: 0, feature: 1, position: 2, delta: 5e-6 },
            RemovalRecord { run_id: 0, feature: 2, position: 3, delta: -1e-6 },
        ];
        let t = aggregate_scores(&recs, &entries);
        let r = impact_report(&t, DEFAULT_IMPACT_THRESHOLD);
        assert_eq!(r.len(), 1);
        assert_eq!(r.by_category[&Category::Engineered][0].feature, 0);
        assert!((r.negative_fraction - 1.0 / 3.0).abs() < 1e-15);
        let quiet = impact_report(&t, 1.0);
        assert!(quiet.is_empty());
        assert_eq!(quiet.to_tsv(0).lines().count(), 2);
    }

    proptest! {
        #[test]
        fn subsets_are_nested(n in 1usize..400, seed: u64) {
            let mut ranked: Vec<usize> = (0..n).collect();
            let mut s = seed;
            for i in (1..n).rev() {
                s = crate::lmo::splitmix64(s);
                ranked.swap(i, (s % (i as u64 + 1)) as usize);
            }
            let fracs: Vec<f64> = default_fractions().into_iter().filter(|&f| SubsetRounding::Ceil.size(f, n) > 0).collect();
            let subsets = build_percent_subsets(&ranked, &fracs, SubsetRounding::Ceil).unwrap();
            for w in subsets.windows(2) {
                prop_assert!(w[1].1.is_subset(&w[0].1));
            }
        }

        #[test]
        fn select_best_is_permutation_invariant(mses in proptest::collection::vec((1usize..5, 0u8..4), 1..12), seed: u64) {
            let evals: Vec<SubsetEvaluation> = mses
                .iter()
                .enumerate()
                .map(|(i, &(size, m))| eval(1.0 - i as f64 * 0.01, size, m as f64 * 0.01))
                .collect();
            let mut shuffled = evals.clone();
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = crate::lmo::splitmix64(s);
                shuffled.swap(i, (s % (i as u64 + 1)) as usize);
            }
            prop_assert_eq!(select_best(&evals), select_best(&shuffled));
        }

        #[test]
        fn report_rows_exceed_threshold(scores in proptest::collection::vec(-1e-4f64..1e-4, 1..50)) {
            let entries = anonymous_entries(scores.len());
            let recs: Vec<RemovalRecord> = scores.iter().enumerate().map(|(i, &d)| RemovalRecord { run_id: 0, feature: i, position: i + 1, delta: d }).collect();
            let r = impact_report(&aggregate_scores(&recs, &entries), DEFAULT_IMPACT_THRESHOLD);
            let mut seen = std::collections::HashSet::new();
            for rows in r.by_category.values() {
                for f in rows {
                    prop_assert!(f.lmo_score.unwrap().abs() > DEFAULT_IMPACT_THRESHOLD);
                    prop_assert!(seen.insert(f.feature));
                }
            }
            prop_assert_eq!(seen.len(), scores.iter().filter(|s| s.abs() > DEFAULT_IMPACT_THRESHOLD).count());
        }
    }
}
