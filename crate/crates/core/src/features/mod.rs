//! Feature extraction: tf-idf weighted character and word n-grams, twelve
//! engineered features, and one occurrence count per word list.

pub mod engineered;
pub mod ngrams;
pub mod tokenize;
pub mod wordlist;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub use engineered::{engineered_features, EngineeredResources, SentimentLexicon, ENGINEERED_COUNT, ENGINEERED_NAMES};
pub use ngrams::{char_ngrams, word_ngrams};
pub use tokenize::tokenize;
pub use wordlist::{wordlist_features, WordListResource};

pub const NGRAM_SIZES: [usize; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    CharNgram,
    WordNgram,
    Engineered,
    Wordlist,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::CharNgram,
        Category::WordNgram,
        Category::Engineered,
        Category::Wordlist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::CharNgram => "char_ngram",
            Category::WordNgram => "word_ngram",
            Category::Engineered => "engineered",
            Category::Wordlist => "wordlist",
        }
    }

    pub fn is_ngram(self) -> bool {
        matches!(self, Category::CharNgram | Category::WordNgram)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown feature category {s:?}")))
    }
}

/// How the "occurs more than twice" filter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Total occurrences across the training corpus.
    #[default]
    CorpusCount,
    /// Number of training posts containing the n-gram.
    DocumentFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramConfig {
    pub min_count: u32,
    pub mode: ThresholdMode,
}

impl Default for NgramConfig {
    fn default() -> Self {
        Self {
            min_count: 3,
            mode: ThresholdMode::CorpusCount,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub name: String,
    pub category: Category,
}

/// Column layout of the feature matrix. Names are unique within a category;
/// n-gram columns come first and carry training document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVocabulary {
    entries: Vec<FeatureEntry>,
    doc_freq: Vec<u32>,
    train_docs: usize,
    config: NgramConfig,
    #[serde(skip)]
    index: HashMap<(Category, String), usize>,
}

impl FeatureVocabulary {
    fn from_parts(entries: Vec<FeatureEntry>, doc_freq: Vec<u32>, train_docs: usize, config: NgramConfig) -> Result<Self> {
        let mut vocab = Self {
            entries,
            doc_freq,
            train_docs,
            config,
            index: HashMap::new(),
        };
        vocab.rebuild_index()?;
        Ok(vocab)
    }

    fn rebuild_index(&mut self) -> Result<()> {
        let n_ngram = self.entries.iter().filter(|e| e.category.is_ngram()).count();
        if n_ngram != self.doc_freq.len()
            || self.entries[..n_ngram].iter().any(|e| !e.category.is_ngram())
        {
            return Err(Error::Format("vocabulary n-gram block is inconsistent".into()));
        }
        self.index.clear();
        for (i, e) in self.entries.iter().enumerate() {
            if self.index.insert((e.category, e.name.clone()), i).is_some() {
                return Err(Error::Format(format!("duplicate feature {} {:?}", e.category, e.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn entry(&self, col: usize) -> &FeatureEntry {
        &self.entries[col]
    }

    pub fn lookup(&self, category: Category, name: &str) -> Option<usize> {
        self.index.get(&(category, name.to_string())).copied()
    }

    pub fn ngram_count(&self) -> usize {
        self.doc_freq.len()
    }

    pub fn doc_freq(&self) -> &[u32] {
        &self.doc_freq
    }

    pub fn train_docs(&self) -> usize {
        self.train_docs
    }

    pub fn config(&self) -> NgramConfig {
        self.config
    }

    pub fn category_counts(&self) -> BTreeMap<Category, usize> {
        let mut out: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
        for e in &self.entries {
            *out.get_mut(&e.category).unwrap() += 1;
        }
        out
    }

    /// Wordlist column names in column order.
    pub fn wordlist_names(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|e| e.category == Category::Wordlist)
            .map(|e| e.name.as_str())
    }

    /// Hex SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("vocabulary serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("vocabulary serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut vocab: Self = serde_json::from_slice(&raw)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        vocab.rebuild_index()?;
        Ok(vocab)
    }
}

/// Smoothed inverse document frequency: ln((1 + N) / (1 + df)) + 1.
pub fn idf(n_docs: usize, df: u32) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Weights raw n-gram counts by tf·idf and scales the row to unit L2 norm.
/// `counts` holds (column, raw count); `doc_freq` is indexed by column.
pub fn tfidf_transform(counts: &[(u32, u32)], doc_freq: &[u32], n_docs: usize) -> Vec<(u32, f64)> {
    let mut weighted: Vec<(u32, f64)> = counts
        .iter()
        .filter(|&&(_, tf)| tf > 0)
        .map(|&(c, tf)| (c, tf as f64 * idf(n_docs, doc_freq[c as usize])))
        .collect();
    let norm = weighted.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut weighted {
            *v /= norm;
        }
    }
    weighted
}

/// Abbreviations, sentiment lexicon, and word lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Resources {
    pub engineered: EngineeredResources,
    pub lists: Vec<WordListResource>,
}

pub const ABBREVIATIONS_FILE: &str = "abbreviations.txt";
pub const LEXICON_FILE: &str = "sentiment_lexicon.tsv";
pub const WORDLIST_DIR: &str = "wordlists";

impl Resources {
    /// Loads `abbreviations.txt`, `sentiment_lexicon.tsv` and every
    /// `wordlists/*.txt` (list name = file stem) from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let abbr = dir.join(ABBREVIATIONS_FILE);
        let lex = dir.join(LEXICON_FILE);
        let lists_dir = dir.join(WORDLIST_DIR);
        let missing: Vec<PathBuf> = [&abbr, &lex, &lists_dir]
            .into_iter()
            .filter(|p| !p.exists())
            .cloned()
            .collect();
        if !missing.is_empty() {
            let names: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
            return Err(Error::Config(format!(
                "resources directory {} is incomplete; expected {ABBREVIATIONS_FILE}, {LEXICON_FILE} and {WORDLIST_DIR}/*.txt; missing: {}",
                dir.display(),
                names.join(", ")
            )));
        }
        let raw = fs::read_to_string(&abbr).map_err(|e| Error::io(&abbr, e))?;
        let abbreviations: HashSet<String> = wordlist::parse_list_lines(&raw).map(str::to_lowercase).collect();
        let lexicon = SentimentLexicon::load(&lex)?;

        let mut paths: Vec<PathBuf> = fs::read_dir(&lists_dir)
            .map_err(|e| Error::io(&lists_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Config(format!("no word lists (*.txt) in {}", lists_dir.display())));
        }
        let lists = paths
            .iter()
            .map(|p| {
                let name = p.file_stem().unwrap().to_string_lossy().into_owned();
                WordListResource::load(name, p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            engineered: EngineeredResources {
                abbreviations,
                lexicon,
            },
            lists,
        })
    }
}

#[derive(Default)]
struct NgramStats {
    total: u64,
    docs: u32,
}

/// Builds the column layout from a training corpus: filtered char and word
/// 1–3-grams, the engineered block, then one column per word list. Each
/// block is sorted by name.
pub fn build_vocabulary(train: &Dataset, lists: &[WordListResource], config: NgramConfig) -> Result<FeatureVocabulary> {
    let mut stats: BTreeMap<(Category, String), NgramStats> = BTreeMap::new();
    for inst in &train.instances {
        let tokens = tokenize(&inst.text);
        let grams = char_ngrams(&inst.text, &NGRAM_SIZES)
            .into_iter()
            .map(|(g, c)| (Category::CharNgram, g, c))
            .chain(word_ngrams(&tokens, &NGRAM_SIZES).into_iter().map(|(g, c)| (Category::WordNgram, g, c)));
        for (cat, gram, count) in grams {
            let s = stats.entry((cat, gram)).or_default();
            s.total += count as u64;
            s.docs += 1;
        }
    }

    let mut entries = Vec::new();
    let mut doc_freq = Vec::new();
    for ((category, name), s) in stats {
        let measure = match config.mode {
            ThresholdMode::CorpusCount => s.total,
            ThresholdMode::DocumentFrequency => s.docs as u64,
        };
        if measure >= config.min_count as u64 {
            entries.push(FeatureEntry { name, category });
            doc_freq.push(s.docs);
        }
    }
    entries.extend(ENGINEERED_NAMES.iter().map(|n| FeatureEntry {
        name: n.to_string(),
        category: Category::Engineered,
    }));
    let mut names: Vec<&str> = lists.iter().map(|l| l.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("word list names must be unique".into()));
    }
    entries.extend(names.into_iter().map(|n| FeatureEntry {
        name: n.to_string(),
        category: Category::Wordlist,
    }));
    FeatureVocabulary::from_parts(entries, doc_freq, train.len(), config)
}

/// Maps a dataset onto the vocabulary's columns. Unknown n-grams are dropped;
/// tf-idf uses the vocabulary's training document frequencies.
pub fn extract_matrix(dataset: &Dataset, vocab: &FeatureVocabulary, resources: &Resources) -> Result<SparseMatrix> {
    let by_name: HashMap<&str, &WordListResource> = resources.lists.iter().map(|l| (l.name.as_str(), l)).collect();
    let lists: Vec<&WordListResource> = vocab
        .wordlist_names()
        .map(|n| {
            by_name
                .get(n)
                .copied()
                .ok_or_else(|| Error::Config(format!("word list {n:?} required by the vocabulary is not loaded")))
        })
        .collect::<Result<_>>()?;
    if lists.len() != resources.lists.len() {
        return Err(Error::DimensionMismatch {
            what: "word list columns",
            expected: lists.len(),
            found: resources.lists.len(),
        });
    }
    let engineered_start = vocab.ngram_count();
    let wordlist_start = engineered_start + ENGINEERED_COUNT;
    if wordlist_start + lists.len() != vocab.len() {
        return Err(Error::DimensionMismatch {
            what: "vocabulary columns",
            expected: wordlist_start + lists.len(),
            found: vocab.len(),
        });
    }

    let mut matrix = SparseMatrix::new(vocab.len());
    for inst in &dataset.instances {
        let tokens = tokenize(&inst.text);
        let mut counts: Vec<(u32, u32)> = Vec::new();
        for (gram, c) in char_ngrams(&inst.text, &NGRAM_SIZES) {
            if let Some(col) = vocab.lookup(Category::CharNgram, &gram) {
                counts.push((col as u32, c));
            }
        }
        for (gram, c) in word_ngrams(&tokens, &NGRAM_SIZES) {
            if let Some(col) = vocab.lookup(Category::WordNgram, &gram) {
                counts.push((col as u32, c));
            }
        }
        let mut row = tfidf_transform(&counts, vocab.doc_freq(), vocab.train_docs());
        let eng = engineered::engineered_from_tokens(inst, &tokens, &resources.engineered);
        row.extend(eng.iter().enumerate().map(|(k, &v)| ((engineered_start + k) as u32, v)));
        row.extend(
            lists
                .iter()
                .enumerate()
                .map(|(k, l)| ((wordlist_start + k) as u32, l.count(&tokens) as f64)),
        );
        matrix.push_row(row);
    }
    Ok(matrix)
}
