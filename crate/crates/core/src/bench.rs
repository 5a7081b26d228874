//! Benchmark-dataset preprocessing: tweet cleanup, Dengue label packing and
//! NLI pair generation from news articles.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::{CorpusError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TweetPrepConfig {
    pub link_token: String,
    pub mention_token: String,
    pub hashtag_token: String,
    /// Entity text (including `&` and `;`) to replacement string.
    pub entity_map: BTreeMap<String, String>,
}

impl Default for TweetPrepConfig {
    fn default() -> Self {
        let entity_map = [
            ("&amp;", "&"),
            ("&lt;", "<"),
            ("&gt;", ">"),
            ("&quot;", "\""),
            ("&#39;", "'"),
            ("&nbsp;", "\u{a0}"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        TweetPrepConfig {
            link_token: "[LINK]".into(),
            mention_token: "[MENTION]".into(),
            hashtag_token: "[HASHTAG]".into(),
            entity_map,
        }
    }
}

impl TweetPrepConfig {
    pub fn validate(&self) -> Result<()> {
        let toks = [&self.link_token, &self.mention_token, &self.hashtag_token];
        if toks.iter().any(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
            return Err(CorpusError::Config(
                "special tokens must be non-empty without whitespace".into(),
            ));
        }
        if toks[0] == toks[1] || toks[1] == toks[2] || toks[0] == toks[2] {
            return Err(CorpusError::Config(
                "link, mention and hashtag tokens must differ".into(),
            ));
        }
        if self
            .entity_map
            .keys()
            .any(|k| !(k.starts_with('&') && k.ends_with(';') && k.len() > 2))
        {
            return Err(CorpusError::Config("entity keys must look like `&name;`".into()));
        }
        Ok(())
    }
}

fn map_tokens<'a>(text: &'a str, f: impl Fn(&'a str) -> Option<&'a str>) -> String {
    text.split_whitespace()
        .map(|t| f(t).unwrap_or(t))
        .collect::<Vec<_>>()
        .join(" ")
}

fn attaches_left(tok: &str) -> bool {
    tok.chars()
        .all(|c| matches!(c, '.' | ',' | '!' | '?' | ';' | ':' | '%' | ')' | ']' | '}'))
}

fn opens(tok: &str) -> bool {
    tok.chars().all(|c| matches!(c, '(' | '[' | '{'))
}

/// Undoes Moses-style spacing around sentence punctuation and brackets.
///
/// `. , ! ? ; : %` and closing brackets join the previous token, opening
/// brackets join the next one. Whitespace runs become single spaces.
pub fn moses_detokenize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut glue_next = true;
    for tok in text.split_whitespace() {
        if !(glue_next || attaches_left(tok)) {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = opens(tok);
    }
    out
}

fn is_link(tok: &str) -> bool {
    let lower = tok.to_ascii_lowercase();
    ["http://", "https://", "www."]
        .iter()
        .any(|p| lower.starts_with(p) && lower.len() > p.len())
}

pub fn collapse_links(text: &str, cfg: &TweetPrepConfig) -> String {
    map_tokens(text, |t| is_link(t).then_some(cfg.link_token.as_str()))
}

fn starts_with_marker(tok: &str, marker: char) -> bool {
    tok.starts_with(marker) && tok.chars().count() > 1
}

/// Tokens starting with `@` and longer than one character become the mention token.
pub fn collapse_mentions(text: &str, cfg: &TweetPrepConfig) -> String {
    map_tokens(text, |t| {
        starts_with_marker(t, '@').then_some(cfg.mention_token.as_str())
    })
}

pub fn collapse_hashtags(text: &str, cfg: &TweetPrepConfig) -> String {
    map_tokens(text, |t| {
        starts_with_marker(t, '#').then_some(cfg.hashtag_token.as_str())
    })
}

fn is_clitic(tok: &str) -> bool {
    if tok.eq_ignore_ascii_case("n't") || tok.eq_ignore_ascii_case("n’t") {
        return true;
    }
    let mut chars = tok.chars();
    matches!(chars.next(), Some('\'' | '’')) && {
        let rest = chars.as_str();
        !rest.is_empty() && rest.chars().all(char::is_alphabetic)
    }
}

fn ends_wordlike(tok: &str) -> bool {
    tok.chars().last().is_some_and(char::is_alphanumeric)
}

fn starts_wordlike(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_alphanumeric)
}

/// Rejoins split contractions (`it 's` → `it's`) and spaced single hyphens
/// (`one - two` → `one-two`). Double hyphens are left alone.
pub fn renormalize_spacing(text: &str) -> String {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let mut out: Vec<String> = Vec::with_capacity(toks.len());
    let mut i = 0;
    while i < toks.len() {
        let tok = toks[i];
        let prev_wordlike = out.last().is_some_and(|p| ends_wordlike(p));
        if prev_wordlike && is_clitic(tok) {
            out.last_mut().expect("checked").push_str(tok);
            i += 1;
        } else if prev_wordlike && tok == "-" && toks.get(i + 1).is_some_and(|n| starts_wordlike(n)) {
            let last = out.last_mut().expect("checked");
            last.push('-');
            last.push_str(toks[i + 1]);
            i += 2;
        } else {
            out.push(tok.to_string());
            i += 1;
        }
    }
    out.join(" ")
}

/// Replaces known entities until none remain, so doubly escaped text
/// (`&amp;amp;`) also ends up decoded.
pub fn decode_html_entities(text: &str, cfg: &TweetPrepConfig) -> String {
    let mut current = text.to_string();
    loop {
        let next = decode_entities_once(&current, &cfg.entity_map);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn decode_entities_once(text: &str, map: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        match map.iter().find(|(k, _)| rest.starts_with(k.as_str())) {
            Some((k, v)) => {
                out.push_str(v);
                rest = &rest[k.len()..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Full tweet cleanup: detokenize, decode entities, collapse links,
/// mentions and hashtags, then rejoin contractions and hyphens.
pub fn preprocess_tweet(text: &str, cfg: &TweetPrepConfig) -> String {
    let s = moses_detokenize(text);
    let s = decode_html_entities(&s, cfg);
    // a decoded &nbsp; can open a new token boundary, so reattach once more
    let s = moses_detokenize(&s);
    let s = collapse_links(&s, cfg);
    let s = collapse_mentions(&s, cfg);
    let s = collapse_hashtags(&s, cfg);
    renormalize_spacing(&s)
}

/// Dengue topic flags in the order absent, dengue, healthclasses, mosquito, sick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DengueLabelVector(pub [bool; 5]);

impl DengueLabelVector {
    pub const NAMES: [&'static str; 5] = ["absent", "dengue", "healthclasses", "mosquito", "sick"];
}

/// Reads the flags as a 5-bit binary number, first flag most significant.
pub fn encode_dengue_labels(v: DengueLabelVector) -> u8 {
    v.0.iter().fold(0u8, |acc, &bit| (acc << 1) | bit as u8)
}

pub fn decode_dengue_labels(n: i64) -> Result<DengueLabelVector> {
    if !(0..=31).contains(&n) {
        return Err(CorpusError::LabelRange(n));
    }
    let mut flags = [false; 5];
    for (i, f) in flags.iter_mut().enumerate() {
        *f = (n >> (4 - i)) & 1 == 1;
    }
    Ok(DengueLabelVector(flags))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NliLabel {
    Entailment,
    Contradiction,
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Contradiction => "contradiction",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NliPair {
    pub premise: String,
    pub hypothesis: String,
    pub label: NliLabel,
}

/// Which adjacent sentence plays the premise in an entailment pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PremiseSide {
    #[default]
    Earlier,
    Later,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NliOutput {
    pub pairs: Vec<NliPair>,
    /// Articles with fewer than two sentences.
    pub skipped_articles: usize,
    /// Entailment pairs dropped because no distinct cross-article sentence existed.
    pub unmatched: usize,
    /// True when fewer than two usable articles exist, so no contradictions could be drawn.
    pub contradictions_impossible: bool,
}

const MAX_DRAWS: usize = 64;

fn article_rng(seed: u64, article: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(xxh3_64_with_seed(&(article as u64).to_le_bytes(), seed))
}

/// Builds entailment pairs from adjacent sentences and an equal number of
/// contradiction pairs that match each premise with a random sentence from
/// another article.
///
/// The random stream for article `i` is derived from `(seed, i)` alone, so
/// the output does not depend on how articles are scheduled.
pub fn make_nli_pairs<S: AsRef<str>>(articles: &[Vec<S>], seed: u64, premise: PremiseSide) -> NliOutput {
    let usable: Vec<usize> = (0..articles.len()).filter(|&i| articles[i].len() >= 2).collect();
    let mut out = NliOutput {
        skipped_articles: articles.len() - usable.len(),
        contradictions_impossible: usable.len() < 2,
        ..NliOutput::default()
    };

    for (slot, &ai) in usable.iter().enumerate() {
        let sents = &articles[ai];
        let mut rng = article_rng(seed, ai);
        for w in sents.windows(2) {
            let (earlier, later) = (w[0].as_ref(), w[1].as_ref());
            let (p, h) = match premise {
                PremiseSide::Earlier => (earlier, later),
                PremiseSide::Later => (later, earlier),
            };
            if p == h || p.is_empty() || h.is_empty() {
                out.unmatched += 1;
                continue;
            }
            if out.contradictions_impossible {
                out.pairs.push(NliPair {
                    premise: p.into(),
                    hypothesis: h.into(),
                    label: NliLabel::Entailment,
                });
                continue;
            }
            let negative = (0..MAX_DRAWS).find_map(|_| {
                let mut other = rng.random_range(0..usable.len() - 1);
                if other >= slot {
                    other += 1;
                }
                let pool = &articles[usable[other]];
                let cand = pool[rng.random_range(0..pool.len())].as_ref();
                (cand != p && !cand.is_empty()).then_some(cand)
            });
            match negative {
                Some(neg) => {
                    out.pairs.push(NliPair {
                        premise: p.into(),
                        hypothesis: h.into(),
                        label: NliLabel::Entailment,
                    });
                    out.pairs.push(NliPair {
                        premise: p.into(),
                        hypothesis: neg.into(),
                        label: NliLabel::Contradiction,
                    });
                }
                None => out.unmatched += 1,
            }
        }
    }
    out
}

/// Splits blank-line separated text into articles of non-empty lines.
pub fn parse_articles(text: &str) -> Vec<Vec<String>> {
    let mut articles = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        let line = crate::normalize_line(line);
        if line.is_empty() {
            if !current.is_empty() {
                articles.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line.into_owned());
        }
    }
    if !current.is_empty() {
        articles.push(current);
    }
    articles
}
