//! Rule-based tweet tokenizer.
//!
//! Tokens are lowercased. URLs, @mentions, #hashtags, ASCII emoticons and runs
//! of emoji each stay whole; words keep inner apostrophes ("don't"); every
//! other non-space character becomes its own token.

use std::sync::OnceLock;

use regex::Regex;

fn token_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"(?x)
            (?:https?://|www\.)[^\s]+                      # urls
            | [@＠][\w_]+                                  # mentions
            | \#[\w_]+                                     # hashtags
            | (?:[<>]?[:;=8][\-o\*']?[\)\]\(\[dDpP/\\:\}\{@\|]) # ascii emoticons
            | (?:\p{Extended_Pictographic}|\x{FE0F}|\x{200D}|[\x{1F3FB}-\x{1F3FF}]|[\x{1F1E6}-\x{1F1FF}])+
            | \w+(?:['’]\w+)*                              # words, numbers
            | [^\s]                                        # any other single mark
            "#,
        )
        .expect("token pattern compiles")
    })
}

pub fn tokenize(text: &str) -> Vec<String> {
    token_pattern()
        .find_iter(text)
        .map(|m| m.as_str().to_lowercase())
        .collect()
}

/// True when the token carries at least one letter or digit.
pub fn is_word(token: &str) -> bool {
    !token.starts_with('@')
        && !token.starts_with('#')
        && !token.starts_with("http")
        && token.chars().any(char::is_alphanumeric)
}
