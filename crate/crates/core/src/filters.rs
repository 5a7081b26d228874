//! Sentence-quality filters.
//!
//! Five checks run in a fixed order and the first rejection wins:
//!
//! 1. non-Latin letter ratio,
//! 2. token count bounds,
//! 3. runs of consecutive punctuation inside a token,
//! 4. average token length bounds,
//! 5. HTML / URL fragments.
//!
//! A "token" is a maximal whitespace-free run (see [`crate::tokenize_ws`]).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_script::{Script, UnicodeScript};

use crate::text::{tokens, Token};
use crate::{CorpusError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    NonLatin,
    Length,
    PunctRun,
    AvgWordLen,
    Html,
}

impl RejectReason {
    pub const ALL: [RejectReason; 5] = [
        RejectReason::NonLatin,
        RejectReason::Length,
        RejectReason::PunctRun,
        RejectReason::AvgWordLen,
        RejectReason::Html,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::NonLatin => "NonLatin",
            RejectReason::Length => "Length",
            RejectReason::PunctRun => "PunctRun",
            RejectReason::AvgWordLen => "AvgWordLen",
            RejectReason::Html => "Html",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RejectReason {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        RejectReason::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| CorpusError::Config(format!("unknown reject reason `{s}`")))
    }
}

/// Outcome of filtering one sentence. A pass never carries a reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterVerdict {
    Pass,
    Reject(RejectReason),
}

impl FilterVerdict {
    pub fn passed(self) -> bool {
        matches!(self, FilterVerdict::Pass)
    }

    pub fn reason(self) -> Option<RejectReason> {
        match self {
            FilterVerdict::Pass => None,
            FilterVerdict::Reject(r) => Some(r),
        }
    }
}

fn default_html_patterns() -> Vec<String> {
    [
        "http://", "https://", "www.", ".com", ".html", ".php", "href=", "</", "/>",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Reject when non-Latin letters exceed this share of non-whitespace characters.
    pub nonlatin_max_ratio: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Longest allowed run of consecutive punctuation characters inside a token.
    pub punct_run_max: usize,
    pub awl_min: f64,
    pub awl_max: f64,
    /// Case-insensitive substrings that mark a token as HTML or URL debris.
    pub html_patterns: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            nonlatin_max_ratio: 0.15,
            min_tokens: 4,
            max_tokens: 150,
            punct_run_max: 2,
            awl_min: 3.0,
            awl_max: 18.0,
            html_patterns: default_html_patterns(),
        }
    }
}

impl FilterConfig {
    /// Every invariant violation, as human-readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.nonlatin_max_ratio) {
            out.push(format!(
                "nonlatin_max_ratio {} must lie in [0, 1]",
                self.nonlatin_max_ratio
            ));
        }
        if self.min_tokens < 1 || self.min_tokens > self.max_tokens {
            out.push(format!(
                "token bounds must satisfy 1 <= min_tokens ({}) <= max_tokens ({})",
                self.min_tokens, self.max_tokens
            ));
        }
        if !(self.awl_min > 0.0 && self.awl_min <= self.awl_max) {
            out.push(format!(
                "average word length bounds must satisfy 0 < awl_min ({}) <= awl_max ({})",
                self.awl_min, self.awl_max
            ));
        }
        if self.punct_run_max < 1 {
            out.push("punct_run_max must be at least 1".into());
        }
        if self.html_patterns.is_empty() || self.html_patterns.iter().any(|p| p.is_empty()) {
            out.push("html_patterns must be a non-empty list of non-empty strings".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().as_slice() {
            [] => Ok(()),
            v => Err(CorpusError::Config(v.join("; "))),
        }
    }

    /// Parses a flat TOML document; omitted keys keep their defaults.
    pub fn from_toml(doc: &str) -> Result<Self> {
        let cfg: FilterConfig = toml::from_str(doc).map_err(|e| CorpusError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn is_punct(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
    )
}

fn is_non_latin_letter(c: char) -> bool {
    c.is_alphabetic() && c.script() != Script::Latin
}

/// Letter statistics used by the non-Latin filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScriptCounts {
    /// Non-whitespace characters.
    pub visible: usize,
    /// Alphabetic characters outside the Latin script.
    pub non_latin: usize,
}

impl ScriptCounts {
    pub fn of(text: &str) -> Self {
        text.chars()
            .filter(|c| !c.is_whitespace())
            .fold(ScriptCounts::default(), |mut acc, c| {
                acc.visible += 1;
                acc.non_latin += is_non_latin_letter(c) as usize;
                acc
            })
    }

    pub fn ratio(&self) -> f64 {
        if self.visible == 0 {
            0.0
        } else {
            self.non_latin as f64 / self.visible as f64
        }
    }
}

fn longest_punct_run(token: &str) -> usize {
    let mut best = 0;
    let mut run = 0;
    for c in token.chars() {
        if is_punct(c) {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

fn check_non_latin(text: &str, cfg: &FilterConfig) -> bool {
    let counts = ScriptCounts::of(text);
    counts.visible == 0 || counts.ratio() <= cfg.nonlatin_max_ratio
}

fn check_length(toks: &[Token<'_>], cfg: &FilterConfig) -> bool {
    (cfg.min_tokens..=cfg.max_tokens).contains(&toks.len())
}

fn check_punct_run(toks: &[Token<'_>], cfg: &FilterConfig) -> bool {
    toks.iter().all(|t| longest_punct_run(t) <= cfg.punct_run_max)
}

fn average_word_length(toks: &[Token<'_>]) -> Option<f64> {
    if toks.is_empty() {
        return None;
    }
    let chars: usize = toks.iter().map(Token::char_len).sum();
    Some(chars as f64 / toks.len() as f64)
}

fn check_avg_word_len(toks: &[Token<'_>], cfg: &FilterConfig) -> bool {
    average_word_length(toks).is_none_or(|r| cfg.awl_min <= r && r <= cfg.awl_max)
}

fn check_html(toks: &[Token<'_>], patterns: &[String]) -> bool {
    !toks.iter().any(|t| {
        let lower = t.to_lowercase();
        patterns.iter().any(|p| lower.contains(p.as_str()))
    })
}

fn verdict(ok: bool, reason: RejectReason) -> FilterVerdict {
    if ok {
        FilterVerdict::Pass
    } else {
        FilterVerdict::Reject(reason)
    }
}

fn lowered(patterns: &[String]) -> Vec<String> {
    patterns.iter().map(|p| p.to_lowercase()).collect()
}

pub fn filter_non_latin(text: &str, cfg: &FilterConfig) -> FilterVerdict {
    verdict(check_non_latin(text, cfg), RejectReason::NonLatin)
}

pub fn filter_length(text: &str, cfg: &FilterConfig) -> FilterVerdict {
    verdict(check_length(&crate::tokenize_ws(text), cfg), RejectReason::Length)
}

pub fn filter_punct_run(text: &str, cfg: &FilterConfig) -> FilterVerdict {
    verdict(check_punct_run(&crate::tokenize_ws(text), cfg), RejectReason::PunctRun)
}

/// Sentences with no tokens pass; the length filter owns that case.
pub fn filter_avg_word_len(text: &str, cfg: &FilterConfig) -> FilterVerdict {
    verdict(
        check_avg_word_len(&crate::tokenize_ws(text), cfg),
        RejectReason::AvgWordLen,
    )
}

pub fn filter_html(text: &str, cfg: &FilterConfig) -> FilterVerdict {
    verdict(
        check_html(&crate::tokenize_ws(text), &lowered(&cfg.html_patterns)),
        RejectReason::Html,
    )
}

/// Runs all five filters in order and returns the first rejection.
pub fn apply_filters(text: &str, cfg: &FilterConfig) -> FilterVerdict {
    FilterSet::new(cfg.clone()).check(text)
}

/// A compiled filter configuration for streaming use.
#[derive(Debug, Clone)]
pub struct FilterSet {
    cfg: FilterConfig,
    patterns: Vec<String>,
}

impl FilterSet {
    pub fn new(cfg: FilterConfig) -> Self {
        let patterns = lowered(&cfg.html_patterns);
        FilterSet { cfg, patterns }
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn check(&self, text: &str) -> FilterVerdict {
        let cfg = &self.cfg;
        if !check_non_latin(text, cfg) {
            return FilterVerdict::Reject(RejectReason::NonLatin);
        }
        let toks: Vec<Token<'_>> = tokens(text).collect();
        let checks = [
            (check_length(&toks, cfg), RejectReason::Length),
            (check_punct_run(&toks, cfg), RejectReason::PunctRun),
            (check_avg_word_len(&toks, cfg), RejectReason::AvgWordLen),
        ];
        for (ok, reason) in checks {
            if !ok {
                return FilterVerdict::Reject(reason);
            }
        }
        verdict(check_html(&toks, &self.patterns), RejectReason::Html)
    }

    /// Every measurement the filters look at, for display.
    pub fn measure(&self, text: &str) -> Measurements {
        let toks: Vec<Token<'_>> = tokens(text).collect();
        let script = ScriptCounts::of(text);
        Measurements {
            non_latin_ratio: script.ratio(),
            tokens: toks.len(),
            longest_punct_run: toks.iter().map(|t| longest_punct_run(t)).max().unwrap_or(0),
            avg_word_len: average_word_length(&toks),
            html_hit: toks.iter().find_map(|t| {
                let lower = t.to_lowercase();
                self.patterns.iter().find(|p| lower.contains(p.as_str())).cloned()
            }),
            verdict: self.check(text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurements {
    pub non_latin_ratio: f64,
    pub tokens: usize,
    pub longest_punct_run: usize,
    pub avg_word_len: Option<f64>,
    pub html_hit: Option<String>,
    #[serde(serialize_with = "ser_verdict")]
    pub verdict: FilterVerdict,
}

fn ser_verdict<S: serde::Serializer>(v: &FilterVerdict, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(v.reason().map_or("Pass", RejectReason::as_str))
}
