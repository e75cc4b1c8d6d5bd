//! Small English helpers for caption templates: articles, plurals, numbers.

use alloc::format;
use alloc::string::{String, ToString};

const NUMBER_WORDS: [&str; 20] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

const IRREGULAR_PLURALS: [(&str, &str); 7] = [
    ("person", "people"),
    ("child", "children"),
    ("man", "men"),
    ("woman", "women"),
    ("foot", "feet"),
    ("tooth", "teeth"),
    ("mouse", "mice"),
];

/// How counts are written in captions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumberStyle {
    /// `one` through `twenty` spelled out, digits above.
    #[default]
    Words,
    /// Always digits.
    Digits,
}

/// `a` or `an` by the first letter of `word`.
pub fn indefinite_article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// `word` with its indefinite article, e.g. `an apple`.
pub fn with_article(word: &str) -> String {
    format!("{} {}", indefinite_article(word), word)
}

fn pluralize_word(word: &str) -> String {
    let lower = word.to_ascii_lowercase();
    if let Some((_, plural)) = IRREGULAR_PLURALS.iter().find(|(s, _)| *s == lower) {
        return (*plural).to_string();
    }
    if IRREGULAR_PLURALS.iter().any(|(_, p)| *p == lower) {
        return word.to_string();
    }
    let sibilant = ["s", "x", "z", "ch", "sh"].iter().any(|end| lower.ends_with(end));
    if sibilant {
        return format!("{word}es");
    }
    let mut rev = lower.chars().rev();
    if let (Some('y'), Some(prev)) = (rev.next(), rev.next()) {
        if !matches!(prev, 'a' | 'e' | 'i' | 'o' | 'u') {
            return format!("{}ies", &word[..word.len() - 1]);
        }
    }
    format!("{word}s")
}

/// Plural of a noun phrase; only the last word inflects (`sports outfit` →
/// `sports outfits`).
pub fn pluralize(noun: &str) -> String {
    match noun.rfind(' ') {
        Some(i) => format!("{}{}", &noun[..=i], pluralize_word(&noun[i + 1..])),
        None => pluralize_word(noun),
    }
}

/// Renders a count in the given style.
pub fn render_number(n: u32, style: NumberStyle) -> String {
    match style {
        NumberStyle::Words if (1..=20).contains(&n) => NUMBER_WORDS[n as usize - 1].to_string(),
        _ => n.to_string(),
    }
}

/// Inverse of [`render_number`] for spelled-out numbers and digit strings.
pub fn parse_number(word: &str) -> Option<u32> {
    NUMBER_WORDS
        .iter()
        .position(|w| *w == word)
        .map(|i| i as u32 + 1)
        .or_else(|| word.parse().ok())
}

/// `"{count} {noun}"` with the noun inflected for the count.
pub fn count_phrase(n: u32, noun: &str, style: NumberStyle) -> String {
    let noun = if n == 1 { noun.to_string() } else { pluralize(noun) };
    format!("{} {}", render_number(n, style), noun)
}
