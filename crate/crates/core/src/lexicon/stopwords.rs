//! Embedded English stop-word list (`resources/stopwords-en-v1.txt`).

use std::collections::HashSet;
use std::sync::LazyLock;

pub const STOPWORDS_NAME: &str = "stopwords-en-v1";

pub const STOPWORDS_TEXT: &str = include_str!("../../resources/stopwords-en-v1.txt");

static STOPWORDS: LazyLock<HashSet<&'static str>> =
    LazyLock::new(|| STOPWORDS_TEXT.lines().map(str::trim).filter(|l| !l.is_empty()).collect());

/// Case-insensitive membership test.
pub fn is_stopword(token: &str) -> bool {
    if token.chars().any(char::is_uppercase) {
        STOPWORDS.contains(token.to_lowercase().as_str())
    } else {
        STOPWORDS.contains(token)
    }
}

pub fn stopwords() -> impl Iterator<Item = &'static str> {
    STOPWORDS_TEXT.lines().filter(|l| !l.is_empty())
}
