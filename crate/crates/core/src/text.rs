//! Sentence records, whitespace tokens and line normalization.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use crate::{CorpusError, Result};

/// One line of corpus text with its provenance.
///
/// `doc_no` is the 0-based index of the blank-line separated block the line
/// came from. Sources without blank lines are a single document `0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentenceRecord {
    pub text: String,
    pub source_id: Arc<str>,
    pub line_no: u64,
    pub doc_no: u64,
}

impl SentenceRecord {
    /// Builds a record, normalizing `text` so it never carries line terminators.
    pub fn new(text: &str, source_id: impl Into<Arc<str>>, line_no: u64) -> Self {
        assert!(line_no >= 1, "line numbers are 1-based");
        SentenceRecord {
            text: normalize_line(text).into_owned(),
            source_id: source_id.into(),
            line_no,
            doc_no: 0,
        }
    }

    pub fn with_doc(mut self, doc_no: u64) -> Self {
        self.doc_no = doc_no;
        self
    }
}

impl AsRef<str> for SentenceRecord {
    fn as_ref(&self) -> &str {
        &self.text
    }
}

/// A maximal run of non-whitespace characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token<'a>(&'a str);

impl<'a> Token<'a> {
    pub fn as_str(&self) -> &'a str {
        self.0
    }

    /// Length in Unicode scalar values.
    pub fn char_len(&self) -> usize {
        self.0.chars().count()
    }
}

impl Deref for Token<'_> {
    type Target = str;

    fn deref(&self) -> &str {
        self.0
    }
}

impl fmt::Display for Token<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

/// Splits on maximal runs of Unicode whitespace. Never yields empty tokens.
pub fn tokenize_ws(text: &str) -> Vec<Token<'_>> {
    tokens(text).collect()
}

pub(crate) fn tokens(text: &str) -> impl Iterator<Item = Token<'_>> + '_ {
    text.split_whitespace().map(Token)
}

/// Strips the line terminator and surrounding whitespace.
///
/// No Unicode normalization is applied. A carriage return left inside the
/// line (a lone `\r` in a `\n`-terminated file) becomes a space so records
/// never contain line-break characters.
pub fn normalize_line(raw: &str) -> std::borrow::Cow<'_, str> {
    let trimmed = raw.trim();
    if trimmed.contains(['\r', '\n']) {
        std::borrow::Cow::Owned(trimmed.replace(['\r', '\n'], " "))
    } else {
        std::borrow::Cow::Borrowed(trimmed)
    }
}

/// Decodes one physical line and normalizes it, reporting where bad bytes were found.
pub fn normalize_bytes<'a>(raw: &'a [u8], source_id: &str, line_no: u64) -> Result<std::borrow::Cow<'a, str>> {
    let text = std::str::from_utf8(raw).map_err(|_| CorpusError::Encoding {
        source_id: source_id.to_string(),
        line_no,
    })?;
    Ok(normalize_line(text))
}
