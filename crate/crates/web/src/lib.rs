//! Browser bindings for the demo page in `www/`.
//!
//! Each export has a plain Rust twin returning `Result<_, String>` so the
//! logic can be tested natively; the wasm wrappers only convert errors.

use filcorpus::bench::{preprocess_tweet, TweetPrepConfig};
use filcorpus::bpe::{learn_bpe, BpeModel, TokenizerConfig};
use filcorpus::filters::{FilterConfig, FilterSet, Measurements};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct LineReport<'a> {
    line: usize,
    text: &'a str,
    #[serde(flatten)]
    m: Measurements,
}

/// Measures every non-blank line of `text` under the thresholds in
/// `config_json` (any subset of the filter settings; missing keys take defaults).
pub fn explore_filters(text: &str, config_json: &str) -> Result<String, String> {
    let cfg: FilterConfig = if config_json.trim().is_empty() {
        FilterConfig::default()
    } else {
        serde_json::from_str(config_json).map_err(|e| format!("config: {e}"))?
    };
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(problems.join("; "));
    }
    let set = FilterSet::new(cfg);
    let rows: Vec<LineReport> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| LineReport {
            line: i + 1,
            text: l.trim(),
            m: set.measure(l.trim()),
        })
        .collect();
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

/// Runs the tweet cleanup on each line independently.
pub fn prep_tweets(text: &str) -> String {
    let cfg = TweetPrepConfig::default();
    text.lines()
        .map(|l| preprocess_tweet(l, &cfg))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Serialize)]
struct Segmented<'a> {
    vocab_size: usize,
    merges: usize,
    words: Vec<Vec<&'a str>>,
    ids: Vec<u32>,
}

fn train(corpus: &str, vocab_size: usize) -> Result<BpeModel, String> {
    let cfg = TokenizerConfig {
        vocab_size,
        ..TokenizerConfig::default()
    };
    learn_bpe(corpus.lines(), &cfg).map_err(|e| e.to_string())
}

/// Trains on `corpus` and segments `text`, grouping subwords by word.
pub fn segment_with_bpe(corpus: &str, vocab_size: usize, text: &str) -> Result<String, String> {
    let model = train(corpus, vocab_size)?;
    let eow = model.end_of_word_id();
    let ids = model.encode(text);
    let mut words = vec![Vec::new()];
    for &id in &ids {
        let tok = model.token_of(id).unwrap_or("?");
        words.last_mut().expect("non-empty").push(tok);
        if id == eow || tok.ends_with(filcorpus::bpe::END_OF_WORD) {
            words.push(Vec::new());
        }
    }
    words.retain(|w| !w.is_empty());
    let out = Segmented {
        vocab_size: model.vocab_size(),
        merges: model.merge_count(),
        words,
        ids,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = exploreFilters)]
pub fn explore_filters_js(text: &str, config_json: &str) -> Result<String, JsError> {
    explore_filters(text, config_json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = prepTweets)]
pub fn prep_tweets_js(text: &str) -> String {
    prep_tweets(text)
}

#[wasm_bindgen(js_name = segmentWithBpe)]
pub fn segment_with_bpe_js(corpus: &str, vocab_size: usize, text: &str) -> Result<String, JsError> {
    segment_with_bpe(corpus, vocab_size, text).map_err(|e| JsError::new(&e))
}
