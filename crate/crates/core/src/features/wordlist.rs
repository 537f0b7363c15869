//! Word-list resources and per-list occurrence counts.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::tokenize::tokenize;

/// A named list of lowercase words or phrases; one count feature per list.
#[derive(Debug, Clone, PartialEq)]
pub struct WordListResource {
    pub name: String,
    pub entries: BTreeSet<String>,
    // entries tokenized, grouped by phrase length
    phrases: BTreeMap<usize, HashSet<Vec<String>>>,
}

impl WordListResource {
    pub fn new<I, S>(name: impl Into<String>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let name = name.into();
        let entries: BTreeSet<String> = entries
            .into_iter()
            .map(|s| s.as_ref().trim().to_lowercase())
            .filter(|s| !s.is_empty())
            .collect();
        if entries.is_empty() {
            return Err(Error::Config(format!("word list {name:?} is empty")));
        }
        let mut phrases: BTreeMap<usize, HashSet<Vec<String>>> = BTreeMap::new();
        for e in &entries {
            let toks = tokenize(e);
            if !toks.is_empty() {
                phrases.entry(toks.len()).or_default().insert(toks);
            }
        }
        Ok(Self {
            name,
            entries,
            phrases,
        })
    }

    /// Reads one entry per line; `#` comment lines and blanks are skipped.
    pub fn load(name: impl Into<String>, path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(name, parse_list_lines(&raw))
    }

    /// Occurrences of any entry in the token sequence. Phrases match as
    /// contiguous token runs; every match counts.
    pub fn count(&self, tokens: &[String]) -> usize {
        let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        self.phrases
            .iter()
            .map(|(&len, set)| {
                if lowered.len() < len {
                    0
                } else {
                    lowered.windows(len).filter(|w| set.contains(*w)).count()
                }
            })
            .sum()
    }
}

pub(crate) fn parse_list_lines(raw: &str) -> impl Iterator<Item = &str> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

pub fn wordlist_features(tokens: &[String], lists: &[WordListResource]) -> Vec<f64> {
    lists.iter().map(|l| l.count(tokens) as f64).collect()
}
