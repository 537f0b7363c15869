//! Vocabulary and matrix extraction checked against a brute-force recount.

use std::collections::{BTreeMap, BTreeSet};

use icarfish::dataset::{Dataset, Instance};
use icarfish::features::{
    build_vocabulary, engineered_features, extract_matrix, tokenize, Category, NgramConfig, Resources,
    WordListResource, ENGINEERED_COUNT,
};
use proptest::prelude::*;

fn corpus(texts: &[&str]) -> Dataset {
    Dataset::new(
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Instance {
                id: format!("p{i}"),
                text: t.to_string(),
                timestamp: None,
                has_media: Some(i % 2 == 0),
                label: Some(0.1 * i as f64),
            })
            .collect(),
        "fixture",
    )
    .unwrap()
}

/// (total count, document frequency) per n-gram, by plain nested loops.
fn brute_counts(texts: &[&str]) -> BTreeMap<(Category, String), (usize, usize)> {
    let mut out: BTreeMap<(Category, String), (usize, usize)> = BTreeMap::new();
    for text in texts {
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        let words = tokenize(text);
        let mut seen: BTreeSet<(Category, String)> = BTreeSet::new();
        for n in 1..=3 {
            let mut i = 0;
            while i + n <= chars.len() {
                let g: String = chars[i..i + n].iter().collect();
                let key = (Category::CharNgram, g);
                out.entry(key.clone()).or_default().0 += 1;
                seen.insert(key);
                i += 1;
            }
            let mut i = 0;
            while i + n <= words.len() {
                let g = words[i..i + n].join(" ");
                let key = (Category::WordNgram, g);
                out.entry(key.clone()).or_default().0 += 1;
                seen.insert(key);
                i += 1;
            }
        }
        for key in seen {
            out.get_mut(&key).unwrap().1 += 1;
        }
    }
    out
}

const FIXTURE: [&str; 5] = [
    "You won't believe this!",
    "this is big",
    "This is it.",
    "big news: this",
    "you, this, big",
];

fn lists() -> Vec<WordListResource> {
    vec![
        WordListResource::new("stop", ["is", "it", "this"]).unwrap(),
        WordListResource::new("bait", ["you won't believe", "big"]).unwrap(),
    ]
}

#[test]
fn vocabulary_matches_hand_enumeration() {
    let ds = corpus(&FIXTURE);
    let vocab = build_vocabulary(&ds, &lists(), NgramConfig::default()).unwrap();

    let counts = brute_counts(&FIXTURE);
    let kept: Vec<_> = counts.iter().filter(|(_, c)| c.0 >= 3).collect();
    let expected_names: Vec<(Category, String)> = kept.iter().map(|(k, _)| (*k).clone()).collect();
    let ngram_names: Vec<(Category, String)> = vocab.entries()[..vocab.ngram_count()]
        .iter()
        .map(|e| (e.category, e.name.clone()))
        .collect();
    assert_eq!(ngram_names, expected_names);
    let expected_df: Vec<u32> = kept.iter().map(|(_, c)| c.1 as u32).collect();
    assert_eq!(vocab.doc_freq(), expected_df.as_slice());

    // a few by hand: "this" occurs in all five posts, "big" in three
    assert!(vocab.lookup(Category::WordNgram, "this").is_some());
    assert!(vocab.lookup(Category::WordNgram, "big").is_some());
    assert!(vocab.lookup(Category::WordNgram, "is").is_none()); // 2 occurrences
    assert!(vocab.lookup(Category::CharNgram, "thi").is_some());
    assert!(vocab.lookup(Category::CharNgram, "his").is_some());

    let tail: Vec<&str> = vocab.entries()[vocab.ngram_count()..].iter().map(|e| e.name.as_str()).collect();
    assert_eq!(tail.len(), ENGINEERED_COUNT + 2);
    assert_eq!(&tail[ENGINEERED_COUNT..], &["bait", "stop"]);
}

#[test]
fn matrix_matches_independent_tfidf() {
    let ds = corpus(&FIXTURE);
    let resources = Resources {
        lists: lists(),
        ..Resources::default()
    };
    let vocab = build_vocabulary(&ds, &resources.lists, NgramConfig::default()).unwrap();
    let x = extract_matrix(&ds, &vocab, &resources).unwrap();
    assert_eq!((x.rows(), x.cols()), (5, vocab.len()));

    let n_docs = FIXTURE.len() as f64;
    let counts = brute_counts(&FIXTURE);
    for (row, text) in FIXTURE.iter().enumerate() {
        let own = brute_counts(&[text]);
        let mut expected = vec![0.0; vocab.len()];
        for (col, e) in vocab.entries()[..vocab.ngram_count()].iter().enumerate() {
            let key = (e.category, e.name.clone());
            if let Some(&(tf, _)) = own.get(&key) {
                let df = counts[&key].1 as f64;
                expected[col] = tf as f64 * (((1.0 + n_docs) / (1.0 + df)).ln() + 1.0);
            }
        }
        let norm: f64 = expected.iter().map(|v| v * v).sum::<f64>().sqrt();
        expected.iter_mut().for_each(|v| *v /= norm);
        let eng = engineered_features(&ds.instances[row], &resources.engineered);
        let base = vocab.ngram_count();
        expected[base..base + ENGINEERED_COUNT].copy_from_slice(&eng);
        let toks = tokenize(text);
        let bait = toks.windows(3).filter(|w| w.join(" ") == "you won't believe").count()
            + toks.iter().filter(|t| *t == "big").count();
        let stop = toks.iter().filter(|t| ["is", "it", "this"].contains(&t.as_str())).count();
        expected[base + ENGINEERED_COUNT] = bait as f64;
        expected[base + ENGINEERED_COUNT + 1] = stop as f64;

        for (col, want) in expected.iter().enumerate() {
            let got = x.get(row, col);
            assert!((got - want).abs() < 1e-12, "row {row} col {col}: {got} vs {want}");
        }
    }
}

#[test]
fn four_document_tfidf_values() {
    // docs over three repeated terms; columns = word unigrams with ≥3 occurrences
    let texts = ["aa bb", "aa aa cc", "bb cc cc", "aa bb cc"];
    let ds = corpus(&texts);
    let vocab = build_vocabulary(&ds, &[], NgramConfig::default()).unwrap();
    let x = extract_matrix(&ds, &vocab, &Resources::default()).unwrap();
    let col = |w: &str| vocab.lookup(Category::WordNgram, w).unwrap();
    // spreadsheet recomputation for doc 1 ("aa aa cc"), restricted to its n-gram block
    let dense = x.to_dense();
    let block: f64 = dense[1][..vocab.ngram_count()].iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((block - 1.0).abs() < 1e-12);
    let idf = |df: f64| (5.0f64 / (1.0 + df)).ln() + 1.0;
    // word weights before normalization: aa → 2·idf(3), cc → 1·idf(3)
    let ratio = dense[1][col("aa")] / dense[1][col("cc")];
    assert!((ratio - 2.0 * idf(3.0) / idf(3.0)).abs() < 1e-12);
    assert_eq!(dense[1][col("bb")], 0.0);
}

#[test]
fn unseen_vocabulary_leaves_ngram_block_empty() {
    let ds = corpus(&FIXTURE);
    let resources = Resources {
        lists: lists(),
        ..Resources::default()
    };
    let vocab = build_vocabulary(&ds, &resources.lists, NgramConfig::default()).unwrap();
    let unseen = corpus(&["ZZZQQQ", ""]);
    let x = extract_matrix(&unseen, &vocab, &resources).unwrap();
    for row in 0..2 {
        let (idx, _) = x.row(row);
        assert!(idx.iter().all(|&c| c as usize >= vocab.ngram_count()));
    }
    // engineered block still populated: char count of "ZZZQQQ" is 6
    assert_eq!(x.get(0, vocab.ngram_count() + 2), 6.0);
    // empty text: only has_media (instance 0 has media)
    assert_eq!(x.row(1).0.len(), 0);
}

#[test]
fn extraction_is_deterministic() {
    let ds = corpus(&FIXTURE);
    let resources = Resources {
        lists: lists(),
        ..Resources::default()
    };
    let a = build_vocabulary(&ds, &resources.lists, NgramConfig::default()).unwrap();
    let b = build_vocabulary(&ds, &resources.lists, NgramConfig::default()).unwrap();
    assert_eq!(a.hash(), b.hash());
    let xa = extract_matrix(&ds, &a, &resources).unwrap();
    let xb = extract_matrix(&ds, &b, &resources).unwrap();
    assert_eq!(xa.to_bytes(&a.hash()), xb.to_bytes(&b.hash()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn threshold_and_norm_properties(texts in proptest::collection::vec("[ab c.!]{0,12}", 1..8)) {
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let ds = corpus(&refs);
        let vocab = build_vocabulary(&ds, &[], NgramConfig::default()).unwrap();
        let counts = brute_counts(&refs);
        for ((cat, name), (total, _)) in &counts {
            let present = vocab.lookup(*cat, name).is_some();
            prop_assert_eq!(present, *total >= 3, "{} {:?} total {}", cat, name, total);
        }
        prop_assert_eq!(vocab.ngram_count(), counts.values().filter(|c| c.0 >= 3).count());

        let x = extract_matrix(&ds, &vocab, &Resources::default()).unwrap();
        for row in 0..x.rows() {
            let (idx, val) = x.row(row);
            let mut sq = 0.0;
            for (&c, &v) in idx.iter().zip(val) {
                prop_assert!(v.is_finite());
                if (c as usize) < vocab.ngram_count() {
                    prop_assert!(v > 0.0);
                    sq += v * v;
                }
            }
            if sq > 0.0 {
                prop_assert!((sq.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }
}
