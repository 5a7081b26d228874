//! Independent oracles and fixture generators shared by the integration tests.
//!
//! Nothing here calls into the library's own filter, dedup or BPE logic.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use filcorpus::filters::{FilterConfig, RejectReason};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

pub fn fixture(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Rows of a TSV fixture whose first line is a `#` header.
pub fn tsv_rows(doc: &str) -> Vec<Vec<&str>> {
    doc.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split('\t').collect())
        .collect()
}

/// Straight transcription of the filter definitions, built on regexes.
pub struct NaiveFilters {
    cfg: FilterConfig,
    visible: Regex,
    foreign_letter: Regex,
    token: Regex,
    punct_run: Regex,
}

impl NaiveFilters {
    pub fn new(cfg: FilterConfig) -> Self {
        let punct_run = Regex::new(&format!(r"\p{{P}}{{{},}}", cfg.punct_run_max + 1)).unwrap();
        NaiveFilters {
            cfg,
            visible: Regex::new(r"\S").unwrap(),
            foreign_letter: Regex::new(r"[\p{Alphabetic}&&[^\p{Script=Latin}]]").unwrap(),
            token: Regex::new(r"\S+").unwrap(),
            punct_run,
        }
    }

    pub fn verdict(&self, s: &str) -> Option<RejectReason> {
        let d = self.visible.find_iter(s).count();
        let l = self.foreign_letter.find_iter(s).count();
        if d > 0 && l as f64 / d as f64 > self.cfg.nonlatin_max_ratio {
            return Some(RejectReason::NonLatin);
        }
        let toks: Vec<&str> = self.token.find_iter(s).map(|m| m.as_str()).collect();
        if toks.len() < self.cfg.min_tokens || toks.len() > self.cfg.max_tokens {
            return Some(RejectReason::Length);
        }
        if toks.iter().any(|t| self.punct_run.is_match(t)) {
            return Some(RejectReason::PunctRun);
        }
        let chars: usize = toks.iter().map(|t| t.chars().count()).sum();
        let r = chars as f64 / toks.len() as f64;
        if r < self.cfg.awl_min || r > self.cfg.awl_max {
            return Some(RejectReason::AvgWordLen);
        }
        let pats: Vec<String> = self.cfg.html_patterns.iter().map(|p| p.to_lowercase()).collect();
        if toks.iter().any(|t| {
            let t = t.to_lowercase();
            pats.iter().any(|p| t.contains(p.as_str()))
        }) {
            return Some(RejectReason::Html);
        }
        None
    }
}

/// Keep-first dedup with a set of whole strings.
pub fn naive_dedup(lines: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    lines.iter().filter(|l| seen.insert(l.as_str())).cloned().collect()
}

/// Quadratic BPE: recount every pair after every merge, ties to the
/// lexicographically smallest pair.
pub fn reference_merges(words: &[(&str, u64)], n: usize) -> Vec<(String, String)> {
    let mut segs: Vec<(Vec<String>, u64)> = words
        .iter()
        .map(|(w, c)| {
            let mut s: Vec<String> = w.chars().map(String::from).collect();
            s.push("</w>".into());
            (s, *c)
        })
        .collect();
    let mut out = Vec::new();
    while out.len() < n {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (s, c) in &segs {
            for w in s.windows(2) {
                *counts.entry((w[0].clone(), w[1].clone())).or_default() += c;
            }
        }
        let Some(&max) = counts.values().max() else { break };
        let best = counts.into_iter().find(|(_, c)| *c == max).unwrap().0;
        for (s, _) in &mut segs {
            let mut next = Vec::with_capacity(s.len());
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == best.0 && s[i + 1] == best.1 {
                    next.push(format!("{}{}", s[i], s[i + 1]));
                    i += 2;
                } else {
                    next.push(s[i].clone());
                    i += 1;
                }
            }
            *s = next;
        }
        out.push(best);
    }
    out
}

const SYLLABLES: &[&str] = &[
    "ka", "ma", "na", "pa", "sa", "ta", "la", "ba", "ga", "da", "ha", "ya", "wa", "ng", "mga", "ay", "ang", "si", "ni",
    "ko", "mo", "to", "lo", "bi", "di", "gi", "hi", "ki", "li", "mi", "pi", "ri", "ti", "yo", "bu", "ku", "lu", "mu",
    "nu", "pu", "su", "tu",
];

pub fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=4);
    let mut w: String = (0..n)
        .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
        .collect();
    if rng.random_bool(0.1) {
        let mut c = w.chars();
        if let Some(f) = c.next() {
            w = f.to_uppercase().chain(c).collect();
        }
    }
    w
}

pub fn sentence(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    let mut s: Vec<String> = (0..n).map(|_| word(rng)).collect();
    if rng.random_bool(0.5) {
        s.last_mut().unwrap().push('.');
    }
    s.join(" ")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A line that trips one of the filters, chosen at random.
pub fn noisy_line(rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..6) {
        0 => "Это предложение написано кириллицей целиком".to_string(),
        1 => format!("{} {}", word(rng), word(rng)),
        2 => format!("{} wow!!! {} {}", word(rng), word(rng), word(rng)),
        3 => "a b c d e f g".to_string(),
        4 => format!(
            "{} {} basahin sa www.balita{}.ph ngayon",
            word(rng),
            word(rng),
            rng.random_range(0..50)
        ),
        _ => format!("{} <br/> {} {} {}", word(rng), word(rng), word(rng), word(rng)),
    }
}
