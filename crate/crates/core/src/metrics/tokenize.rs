use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Tokenization applied before BLEU n-gram extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenizationMode {
    /// mteval-v14 international tokenization.
    #[default]
    Intl,
    /// Whitespace splitting only.
    None,
}

impl fmt::Display for TokenizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizationMode::Intl => "intl",
            TokenizationMode::None => "none",
        })
    }
}

impl FromStr for TokenizationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "intl" => Ok(TokenizationMode::Intl),
            "none" => Ok(TokenizationMode::None),
            other => Err(format!("unknown tokenization `{other}` (expected intl or none)")),
        }
    }
}

// Python's str.isspace() also treats the ASCII separators 0x1c..0x1f as
// whitespace; keep splitting identical to the reference scorers.
fn is_space(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

/// Split on runs of whitespace, dropping empty tokens.
pub fn split_whitespace(text: &str) -> Vec<&str> {
    text.split(is_space).filter(|t| !t.is_empty()).collect()
}

/// Remove all whitespace.
pub fn strip_whitespace(text: &str) -> String {
    text.chars().filter(|&c| !is_space(c)).collect()
}

struct IntlRules {
    punct_after_non_digit: Regex,
    punct_before_non_digit: Regex,
    symbol: Regex,
}

fn intl_rules() -> &'static IntlRules {
    static RULES: OnceLock<IntlRules> = OnceLock::new();
    RULES.get_or_init(|| IntlRules {
        punct_after_non_digit: Regex::new(r"(\P{N})(\p{P})").unwrap(),
        punct_before_non_digit: Regex::new(r"(\p{P})(\P{N})").unwrap(),
        symbol: Regex::new(r"(\p{S})").unwrap(),
    })
}

/// The three mteval-v14 rewrite passes: space out punctuation preceded by
/// a non-digit, punctuation followed by a non-digit, then every symbol.
/// Each pass is a left-to-right non-overlapping substitution.
pub fn intl_rewrite(text: &str) -> String {
    let rules = intl_rules();
    let s = rules.punct_after_non_digit.replace_all(text, "${1} ${2} ");
    let s = rules.punct_before_non_digit.replace_all(&s, " ${1} ${2}");
    rules.symbol.replace_all(&s, " ${1} ").into_owned()
}

pub fn tokenize(text: &str, mode: TokenizationMode) -> Vec<String> {
    match mode {
        TokenizationMode::None => split_whitespace(text).into_iter().map(str::to_string).collect(),
        TokenizationMode::Intl => split_whitespace(&intl_rewrite(text))
            .into_iter()
            .map(str::to_string)
            .collect(),
    }
}
