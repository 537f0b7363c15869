//! The twelve hand-engineered per-post features.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use chrono::Timelike;

use crate::dataset::Instance;
use crate::error::{Error, Result};
use crate::features::tokenize::{is_word, tokenize};
use crate::features::wordlist::parse_list_lines;

pub const ENGINEERED_COUNT: usize = 12;

/// Column names, in output order. The numeric prefix keeps lexicographic
/// order equal to the fixed feature order.
pub const ENGINEERED_NAMES: [&str; ENGINEERED_COUNT] = [
    "e01_mean_word_length",
    "e02_max_word_length",
    "e03_char_count",
    "e04_at_count",
    "e05_hash_count",
    "e06_dot_count",
    "e07_starts_with_number",
    "e08_abbreviation_count",
    "e09_has_media",
    "e10_part_of_day",
    "e11_sentiment",
    "e12_flesch_kincaid",
];

/// Lexicon-driven sentiment polarity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SentimentLexicon {
    valence: HashMap<String, f64>,
}

const NORMALIZATION_ALPHA: f64 = 15.0;

impl SentimentLexicon {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self {
            valence: entries
                .into_iter()
                .map(|(w, v)| (w.to_lowercase(), v))
                .collect(),
        }
    }

    /// Reads `word<TAB>valence` lines; `#` comments allowed.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for line in parse_list_lines(&raw) {
            let mut parts = line.split_whitespace();
            let (Some(word), Some(val)) = (parts.next(), parts.next()) else {
                return Err(Error::Format(format!("lexicon line {line:?} in {}", path.display())));
            };
            let val: f64 = val
                .parse()
                .map_err(|_| Error::Format(format!("lexicon valence {val:?} in {}", path.display())))?;
            entries.push((word.to_string(), val));
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.valence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valence.is_empty()
    }

    /// Sum of token valences (negated after not/no/never/…n't), squashed
    /// into [-1, 1] by s / sqrt(s² + 15).
    pub fn polarity(&self, tokens: &[String]) -> f64 {
        let mut sum = 0.0;
        for (i, tok) in tokens.iter().enumerate() {
            let Some(&v) = self.valence.get(tok.as_str()) else {
                continue;
            };
            let negated = i > 0 && is_negator(&tokens[i - 1]);
            sum += if negated { -v } else { v };
        }
        if sum == 0.0 {
            0.0
        } else {
            sum / (sum * sum + NORMALIZATION_ALPHA).sqrt()
        }
    }
}

fn is_negator(token: &str) -> bool {
    matches!(token, "not" | "no" | "never") || token.ends_with("n't") || token.ends_with("n’t")
}

/// Resources the engineered block depends on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EngineeredResources {
    pub abbreviations: HashSet<String>,
    pub lexicon: SentimentLexicon,
}

pub fn count_syllables(word: &str) -> usize {
    let letters: Vec<char> = word
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphabetic())
        .collect();
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut groups = 0;
    let mut prev_vowel = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    // silent trailing e, except consonant + "le" ("table")
    let n = letters.len();
    if groups > 1 && n >= 2 && letters[n - 1] == 'e' && !is_vowel(letters[n - 2]) {
        let le = letters[n - 2] == 'l' && n >= 3 && !is_vowel(letters[n - 3]);
        if !le {
            groups -= 1;
        }
    }
    groups.max(1)
}

/// Flesch-Kincaid grade level; 0 for text without words.
pub fn flesch_kincaid_grade(text: &str, tokens: &[String]) -> f64 {
    let words: Vec<&String> = tokens.iter().filter(|t| is_word(t)).collect();
    if words.is_empty() {
        return 0.0;
    }
    let mut sentences = 0usize;
    let mut in_run = false;
    for c in text.chars() {
        let terminal = matches!(c, '.' | '!' | '?');
        if terminal && !in_run {
            sentences += 1;
        }
        in_run = terminal;
    }
    let sentences = sentences.max(1) as f64;
    let n_words = words.len() as f64;
    let syllables: usize = words.iter().map(|w| count_syllables(w)).sum();
    0.39 * (n_words / sentences) + 11.8 * (syllables as f64 / n_words) - 15.59
}

/// 1..=4 by six-hour block of the local hour; 0 when unknown.
pub fn part_of_day(instance: &Instance) -> f64 {
    match instance.timestamp {
        None => 0.0,
        Some(t) => (t.hour() / 6 + 1) as f64,
    }
}

fn abbreviation_count(text: &str, abbreviations: &HashSet<String>) -> usize {
    if abbreviations.is_empty() {
        return 0;
    }
    text.split_whitespace()
        .filter(|chunk| {
            let lower = chunk.to_lowercase();
            let trimmed = lower.trim_matches(|c: char| !(c.is_alphanumeric() || c == '.'));
            let bare = trimmed.trim_end_matches('.');
            (!trimmed.is_empty() && abbreviations.contains(trimmed))
                || (!bare.is_empty() && abbreviations.contains(bare))
        })
        .count()
}

pub fn engineered_features(instance: &Instance, res: &EngineeredResources) -> [f64; ENGINEERED_COUNT] {
    let text = instance.text.as_str();
    let tokens = tokenize(text);
    engineered_from_tokens(instance, &tokens, res)
}

pub(crate) fn engineered_from_tokens(
    instance: &Instance,
    tokens: &[String],
    res: &EngineeredResources,
) -> [f64; ENGINEERED_COUNT] {
    let text = instance.text.as_str();
    let word_lengths: Vec<usize> = tokens
        .iter()
        .filter(|t| is_word(t))
        .map(|t| t.chars().count())
        .collect();
    let mean_len = if word_lengths.is_empty() {
        0.0
    } else {
        word_lengths.iter().sum::<usize>() as f64 / word_lengths.len() as f64
    };
    let max_len = word_lengths.iter().copied().max().unwrap_or(0) as f64;
    let count = |ch: char| text.chars().filter(|&c| c == ch).count() as f64;
    let starts_with_number = text
        .trim_start()
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_digit());

    [
        mean_len,
        max_len,
        text.chars().count() as f64,
        count('@'),
        count('#'),
        count('.'),
        if starts_with_number { 1.0 } else { 0.0 },
        abbreviation_count(text, &res.abbreviations) as f64,
        if instance.has_media == Some(true) { 1.0 } else { 0.0 },
        part_of_day(instance),
        res.lexicon.polarity(tokens),
        flesch_kincaid_grade(text, tokens),
    ]
}
