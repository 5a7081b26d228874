//! Cased byte-pair-encoding over Unicode characters.
//!
//! Words are whitespace tokens. Each word starts as its characters followed
//! by a separate end-of-word symbol, and training repeatedly merges the most
//! frequent adjacent pair (ties go to the lexicographically smallest pair)
//! until the vocabulary holds exactly `vocab_size` entries.
//!
//! Id layout: special tokens first, then the alphabet in frequency order,
//! then the end-of-word symbol, then merge outputs in rank order. Tokens
//! added after training take the ids above that.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{CorpusError, Result};

pub const END_OF_WORD: &str = "</w>";
const HEADER_TAG: &str = "#filcorpus-bpe";
const FORMAT_VERSION: u32 = 1;

fn tok_err(msg: impl Into<String>) -> CorpusError {
    CorpusError::Tokenizer(msg.into())
}

fn default_specials() -> Vec<String> {
    ["<unk>", "<pad>", "<s>", "</s>", "<mask>"]
        .into_iter()
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
    pub character_coverage: f64,
    /// Always true; present so configs state it explicitly.
    pub case_preserving: bool,
    /// Reserved at the lowest ids in this order.
    pub special_tokens: Vec<String>,
    /// Surface emitted for characters outside the alphabet. Must be one of `special_tokens`.
    pub unk_token: String,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            vocab_size: 32_000,
            character_coverage: 1.0,
            case_preserving: true,
            special_tokens: default_specials(),
            unk_token: "<unk>".into(),
        }
    }
}

impl TokenizerConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.character_coverage > 0.0 && self.character_coverage <= 1.0) {
            out.push(format!(
                "character_coverage {} must lie in (0, 1]",
                self.character_coverage
            ));
        }
        if !self.case_preserving {
            out.push("case_preserving cannot be disabled".into());
        }
        let mut seen = HashSet::new();
        for t in &self.special_tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                out.push(format!(
                    "special token {t:?} must be non-empty and contain no whitespace"
                ));
            }
            if !seen.insert(t.as_str()) {
                out.push(format!("special token {t:?} listed twice"));
            }
        }
        if !seen.contains(self.unk_token.as_str()) {
            out.push(format!("unk_token {:?} is not among special_tokens", self.unk_token));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().as_slice() {
            [] => Ok(()),
            v => Err(CorpusError::Config(v.join("; "))),
        }
    }
}

/// Word frequencies of a corpus, the only view of the text training needs.
#[derive(Debug, Clone, Default)]
pub struct WordCounts {
    counts: HashMap<String, u64>,
}

impl WordCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_text(&mut self, text: &str) {
        for w in text.split_whitespace() {
            self.add_word(w, 1);
        }
    }

    pub fn add_word(&mut self, word: &str, count: u64) {
        if let Some(c) = self.counts.get_mut(word) {
            *c += count;
        } else {
            self.counts.insert(word.to_string(), count);
        }
    }

    pub fn from_texts<I>(texts: I) -> Self
    where
        I: IntoIterator,
        I::Item: AsRef<str>,
    {
        let mut wc = WordCounts::new();
        for t in texts {
            wc.add_text(t.as_ref());
        }
        wc
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn distinct_words(&self) -> usize {
        self.counts.len()
    }

    fn char_frequencies(&self) -> HashMap<char, u64> {
        let mut freq = HashMap::new();
        for (w, &c) in &self.counts {
            for ch in w.chars() {
                *freq.entry(ch).or_insert(0) += c;
            }
        }
        freq
    }

    /// Words in byte order, for deterministic processing.
    fn sorted(&self) -> Vec<(&str, u64)> {
        let mut v: Vec<_> = self.counts.iter().map(|(w, &c)| (w.as_str(), c)).collect();
        v.sort_unstable();
        v
    }
}

/// Characters kept as atomic symbols, most frequent first (ties by code point).
///
/// Returns the shortest frequency-ranked prefix whose occurrences reach
/// `coverage` of all non-whitespace characters; `1.0` keeps everything seen.
pub fn build_alphabet<I>(corpus: I, coverage: f64) -> Result<Vec<char>>
where
    I: IntoIterator,
    I::Item: AsRef<str>,
{
    alphabet_from_counts(&WordCounts::from_texts(corpus), coverage)
}

pub fn alphabet_from_counts(words: &WordCounts, coverage: f64) -> Result<Vec<char>> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(tok_err(format!("coverage {coverage} must lie in (0, 1]")));
    }
    let freq = words.char_frequencies();
    if freq.is_empty() {
        return Err(tok_err("cannot build an alphabet from an empty corpus"));
    }
    let mut ranked: Vec<(char, u64)> = freq.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let total: u64 = ranked.iter().map(|r| r.1).sum();
    let target = coverage * total as f64;
    let mut cumulative = 0u64;
    let mut out = Vec::new();
    for (ch, n) in ranked {
        if cumulative as f64 >= target {
            break;
        }
        cumulative += n;
        out.push(ch);
    }
    Ok(out)
}

type SymbolId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
struct MergeRule {
    rank: u32,
    output: SymbolId,
}

/// A trained tokenizer. Immutable; [`BpeModel::add_special_tokens`] returns a new model.
#[derive(Debug, Clone, PartialEq)]
pub struct BpeModel {
    vocab: Vec<String>,
    index: HashMap<String, SymbolId>,
    merges: Vec<(SymbolId, SymbolId)>,
    rules: HashMap<(SymbolId, SymbolId), MergeRule>,
    /// Number of training-time special tokens (ids `0..specials`).
    specials: usize,
    /// Tokens appended after training, occupying the top ids.
    added: usize,
    unk: SymbolId,
    eow: SymbolId,
    character_coverage: f64,
    /// Longest special-token surface, in bytes, for atomic matching.
    max_special_len: usize,
}

struct HeapEntry {
    count: u64,
    left: Arc<str>,
    right: Arc<str>,
    pair: (SymbolId, SymbolId),
}

impl HeapEntry {
    fn key(&self) -> (u64, Reverse<&str>, Reverse<&str>) {
        (self.count, Reverse(&*self.left), Reverse(&*self.right))
    }
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

struct Trainer {
    symbols: Vec<Arc<str>>,
    index: HashMap<Arc<str>, SymbolId>,
    words: Vec<(Vec<SymbolId>, u64)>,
    pair_counts: HashMap<(SymbolId, SymbolId), u64>,
    /// Words that may contain each pair; may hold stale or repeated entries.
    where_: HashMap<(SymbolId, SymbolId), Vec<usize>>,
    heap: BinaryHeap<HeapEntry>,
    unk: SymbolId,
}

impl Trainer {
    fn intern(&mut self, s: &str) -> SymbolId {
        if let Some(&id) = self.index.get(s) {
            return id;
        }
        let id = self.symbols.len() as SymbolId;
        let arc: Arc<str> = Arc::from(s);
        self.symbols.push(arc.clone());
        self.index.insert(arc, id);
        id
    }

    fn pairs<'a>(&self, syms: &'a [SymbolId]) -> impl Iterator<Item = (SymbolId, SymbolId)> + 'a {
        let unk = self.unk;
        syms.windows(2)
            .map(|w| (w[0], w[1]))
            .filter(move |&(a, b)| a != unk && b != unk)
    }

    fn push(&mut self, pair: (SymbolId, SymbolId)) {
        let count = self.pair_counts.get(&pair).copied().unwrap_or(0);
        if count > 0 {
            self.heap.push(HeapEntry {
                count,
                left: self.symbols[pair.0 as usize].clone(),
                right: self.symbols[pair.1 as usize].clone(),
                pair,
            });
        }
    }

    fn seed_counts(&mut self) {
        for (wi, (syms, count)) in self.words.iter().enumerate() {
            for p in syms.windows(2).map(|w| (w[0], w[1])) {
                if p.0 == self.unk || p.1 == self.unk {
                    continue;
                }
                *self.pair_counts.entry(p).or_insert(0) += count;
                self.where_.entry(p).or_default().push(wi);
            }
        }
        let mut pairs: Vec<_> = self.pair_counts.keys().copied().collect();
        pairs.sort_unstable();
        for p in pairs {
            self.push(p);
        }
    }

    fn best_pair(&mut self) -> Option<(SymbolId, SymbolId)> {
        while let Some(top) = self.heap.pop() {
            if self.pair_counts.get(&top.pair).copied() == Some(top.count) {
                return Some(top.pair);
            }
        }
        None
    }

    fn apply_merge(&mut self, pair: (SymbolId, SymbolId), output: SymbolId) {
        let mut affected = self.where_.remove(&pair).unwrap_or_default();
        affected.sort_unstable();
        affected.dedup();
        // net change per pair; pairs that merely survive the merge net to zero
        let mut delta: HashMap<(SymbolId, SymbolId), i64> = HashMap::new();
        for wi in affected {
            let count = self.words[wi].1 as i64;
            let merged = merge_all(&self.words[wi].0, pair, output);
            if merged.len() == self.words[wi].0.len() {
                continue;
            }
            for p in self.pairs(&self.words[wi].0) {
                *delta.entry(p).or_insert(0) -= count;
            }
            for p in self.pairs(&merged) {
                *delta.entry(p).or_insert(0) += count;
                if p.0 == output || p.1 == output {
                    self.where_.entry(p).or_default().push(wi);
                }
            }
            self.words[wi].0 = merged;
        }
        self.pair_counts.remove(&pair);
        let mut changed: Vec<_> = delta.into_iter().filter(|&(p, d)| d != 0 && p != pair).collect();
        changed.sort_unstable();
        for (p, d) in changed {
            let c = self.pair_counts.entry(p).or_insert(0);
            *c = (*c as i64 + d) as u64;
            if *c == 0 {
                self.pair_counts.remove(&p);
                self.where_.remove(&p);
            } else {
                self.push(p);
            }
        }
    }
}

/// Replaces every non-overlapping occurrence of `pair`, scanning left to right.
fn merge_all(syms: &[SymbolId], pair: (SymbolId, SymbolId), output: SymbolId) -> Vec<SymbolId> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
            out.push(output);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

/// Learns a model from raw texts (one sentence each).
pub fn learn_bpe<I>(corpus: I, cfg: &TokenizerConfig) -> Result<BpeModel>
where
    I: IntoIterator,
    I::Item: AsRef<str>,
{
    learn_bpe_from_counts(&WordCounts::from_texts(corpus), cfg)
}

pub fn learn_bpe_from_counts(words: &WordCounts, cfg: &TokenizerConfig) -> Result<BpeModel> {
    cfg.validate()?;
    if words.is_empty() {
        return Err(tok_err("cannot train on an empty corpus"));
    }
    let alphabet = alphabet_from_counts(words, cfg.character_coverage)?;

    let mut trainer = Trainer {
        symbols: Vec::new(),
        index: HashMap::new(),
        words: Vec::new(),
        pair_counts: HashMap::new(),
        where_: HashMap::new(),
        heap: BinaryHeap::new(),
        unk: 0,
    };
    for s in &cfg.special_tokens {
        trainer.intern(s);
    }
    trainer.unk = trainer.index[cfg.unk_token.as_str()];
    let mut buf = [0u8; 4];
    for &ch in &alphabet {
        trainer.intern(ch.encode_utf8(&mut buf));
    }
    let eow = trainer.intern(END_OF_WORD);
    let base = trainer.symbols.len();
    if cfg.vocab_size < base {
        return Err(tok_err(format!(
            "vocab_size {} is smaller than the {} reserved symbols ({} special, {} alphabet, 1 end-of-word)",
            cfg.vocab_size,
            base,
            cfg.special_tokens.len(),
            alphabet.len()
        )));
    }

    let kept: HashSet<char> = alphabet.iter().copied().collect();
    for (word, count) in words.sorted() {
        let mut syms: Vec<SymbolId> = word
            .chars()
            .map(|c| {
                if kept.contains(&c) {
                    trainer.index[c.encode_utf8(&mut buf) as &str]
                } else {
                    trainer.unk
                }
            })
            .collect();
        syms.push(eow);
        trainer.words.push((syms, count));
    }
    trainer.seed_counts();

    let mut merges = Vec::new();
    while trainer.symbols.len() < cfg.vocab_size {
        let Some(pair) = trainer.best_pair() else {
            return Err(tok_err(format!(
                "corpus ran out of pairs at {} symbols; vocab_size {} is unreachable",
                trainer.symbols.len(),
                cfg.vocab_size
            )));
        };
        let joined = format!(
            "{}{}",
            trainer.symbols[pair.0 as usize], trainer.symbols[pair.1 as usize]
        );
        let output = trainer.intern(&joined);
        merges.push(pair);
        trainer.apply_merge(pair, output);
    }

    let vocab: Vec<String> = trainer.symbols.iter().map(|s| s.to_string()).collect();
    BpeModel::assemble(
        vocab,
        merges,
        cfg.special_tokens.len(),
        0,
        trainer.unk,
        eow,
        cfg.character_coverage,
    )
}

/// A piece of a whitespace word during encoding.
enum Piece<'a> {
    Text(&'a str),
    Special(SymbolId),
}

impl BpeModel {
    fn assemble(
        vocab: Vec<String>,
        merges: Vec<(SymbolId, SymbolId)>,
        specials: usize,
        added: usize,
        unk: SymbolId,
        eow: SymbolId,
        character_coverage: f64,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(vocab.len());
        for (id, s) in vocab.iter().enumerate() {
            if index.insert(s.clone(), id as SymbolId).is_some() {
                return Err(tok_err(format!("vocabulary lists {s:?} twice")));
            }
        }
        let mut rules = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let joined = format!("{}{}", vocab[a as usize], vocab[b as usize]);
            let output = *index
                .get(&joined)
                .ok_or_else(|| tok_err(format!("merge output {joined:?} is missing from the vocabulary")))?;
            // a repeated pair keeps its first rank
            rules.entry((a, b)).or_insert(MergeRule {
                rank: rank as u32,
                output,
            });
        }
        let max_special_len = vocab[..specials]
            .iter()
            .chain(&vocab[vocab.len() - added..])
            .map(String::len)
            .max()
            .unwrap_or(0);
        Ok(BpeModel {
            vocab,
            index,
            merges,
            rules,
            specials,
            added,
            unk,
            eow,
            character_coverage,
            max_special_len,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn end_of_word_id(&self) -> u32 {
        self.eow
    }

    /// Merges in rank order as surface pairs.
    pub fn merges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.merges
            .iter()
            .map(|&(a, b)| (self.vocab[a as usize].as_str(), self.vocab[b as usize].as_str()))
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    pub fn special_tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.special_ids().map(|id| self.vocab[id as usize].as_str())
    }

    fn special_ids(&self) -> impl Iterator<Item = SymbolId> + '_ {
        let n = self.vocab.len();
        (0..self.specials).chain(n - self.added..n).map(|i| i as SymbolId)
    }

    fn is_special(&self, id: SymbolId) -> bool {
        let id = id as usize;
        id < self.specials || id >= self.vocab.len() - self.added
    }

    /// Finds the earliest special-token occurrence in `word`, preferring the longest at a position.
    fn next_special(&self, word: &str) -> Option<(usize, usize, SymbolId)> {
        if self.max_special_len == 0 {
            return None;
        }
        for (start, _) in word.char_indices() {
            let rest = &word[start..];
            let found = self
                .special_ids()
                .filter(|&id| rest.starts_with(self.vocab[id as usize].as_str()))
                .max_by_key(|&id| (self.vocab[id as usize].len(), Reverse(id)));
            if let Some(id) = found {
                return Some((start, start + self.vocab[id as usize].len(), id));
            }
        }
        None
    }

    fn pieces<'a>(&self, mut word: &'a str) -> Vec<Piece<'a>> {
        let mut out = Vec::new();
        while let Some((s, e, id)) = self.next_special(word) {
            if s > 0 {
                out.push(Piece::Text(&word[..s]));
            }
            out.push(Piece::Special(id));
            word = &word[e..];
        }
        if !word.is_empty() {
            out.push(Piece::Text(word));
        }
        out
    }

    /// Applies merges to one symbol sequence, lowest rank first.
    fn merge_symbols(&self, syms: &mut Vec<SymbolId>) {
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.rules.get(&(w[0], w[1])).map(|r| (r.rank, (w[0], w[1]), r.output)))
                .min_by_key(|t| t.0);
            let Some((_, pair, output)) = best else { break };
            *syms = merge_all(syms, pair, output);
        }
    }

    fn encode_fragment(&self, text: &str, word_final: bool, out: &mut Vec<u32>) {
        let mut buf = [0u8; 4];
        let mut syms: Vec<SymbolId> = text
            .chars()
            .map(|c| {
                self.index
                    .get(c.encode_utf8(&mut buf) as &str)
                    .copied()
                    .unwrap_or(self.unk)
            })
            .collect();
        if word_final {
            syms.push(self.eow);
        }
        self.merge_symbols(&mut syms);
        out.extend(syms);
    }

    /// Whitespace-splits `text` and segments each word. Special-token
    /// surfaces always map to their single id; unknown characters map to
    /// the unknown id.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let pieces = self.pieces(word);
            let last = pieces.len().saturating_sub(1);
            for (i, piece) in pieces.into_iter().enumerate() {
                match piece {
                    Piece::Special(id) => out.push(id),
                    Piece::Text(t) => self.encode_fragment(t, i == last, &mut out),
                }
            }
        }
        out
    }

    /// Inverse of [`encode`](Self::encode) for text fully covered by the alphabet.
    ///
    /// Special tokens other than the unknown token decode as whole words, so
    /// a special embedded at the start of a longer word gains a space. The
    /// unknown token decodes to its own surface.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let surface = self
                .token_of(id)
                .ok_or_else(|| tok_err(format!("id {id} is outside the vocabulary of {}", self.vocab.len())))?;
            if id != self.unk && self.is_special(id) {
                out.push_str(surface);
                out.push(' ');
            } else if let Some(stem) = surface.strip_suffix(END_OF_WORD) {
                out.push_str(stem);
                out.push(' ');
            } else {
                out.push_str(surface);
            }
        }
        if out.ends_with(' ') {
            out.pop();
        }
        Ok(out)
    }

    /// Appends atomic tokens above the current top id. Existing ids never move.
    pub fn add_special_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<BpeModel> {
        let mut vocab = self.vocab.clone();
        let mut fresh = HashSet::new();
        for t in tokens {
            let t = t.as_ref();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(tok_err(format!(
                    "special token {t:?} must be non-empty and contain no whitespace"
                )));
            }
            if self.index.contains_key(t) || !fresh.insert(t) {
                return Err(tok_err(format!("token {t:?} is already in the vocabulary")));
            }
            vocab.push(t.to_string());
        }
        BpeModel::assemble(
            vocab,
            self.merges.clone(),
            self.specials,
            self.added + tokens.len(),
            self.unk,
            self.eow,
            self.character_coverage,
        )
    }

    /// Renders `(merges file, vocab file)`.
    pub fn to_files(&self) -> (String, String) {
        let mut merges = format!(
            "{HEADER_TAG} version={FORMAT_VERSION} end_of_word={END_OF_WORD} vocab_size={} \
             character_coverage={} specials={} added={} unk_id={} case_preserving=true tie_break=lexicographic\n",
            self.vocab.len(),
            self.character_coverage,
            self.specials,
            self.added,
            self.unk,
        );
        for (a, b) in self.merges() {
            let _ = writeln!(merges, "{a} {b}");
        }
        let mut vocab = String::new();
        for (id, s) in self.vocab.iter().enumerate() {
            let _ = writeln!(vocab, "{s}\t{id}");
        }
        (merges, vocab)
    }

    pub fn from_files(merges: &str, vocab: &str) -> Result<Self> {
        let mut lines = merges.lines();
        let header = lines.next().ok_or_else(|| tok_err("merges file is empty"))?;
        let mut fields = header.split(' ');
        if fields.next() != Some(HEADER_TAG) {
            return Err(tok_err(format!("merges header must start with {HEADER_TAG}")));
        }
        let meta: HashMap<&str, &str> = fields.filter_map(|f| f.split_once('=')).collect();
        let get = |k: &str| {
            meta.get(k)
                .copied()
                .ok_or_else(|| tok_err(format!("merges header lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| tok_err(format!("bad `{k}` in header"))) };
        if num("version")? != FORMAT_VERSION as usize {
            return Err(tok_err("unsupported model version"));
        }
        if get("end_of_word")? != END_OF_WORD {
            return Err(tok_err("unsupported end-of-word marker"));
        }
        let coverage: f64 = get("character_coverage")?
            .parse()
            .map_err(|_| tok_err("bad `character_coverage` in header"))?;

        let mut surfaces = Vec::new();
        for (i, line) in vocab.lines().enumerate() {
            let (s, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| tok_err(format!("vocab line {} lacks a tab", i + 1)))?;
            if id.parse::<usize>().ok() != Some(i) {
                return Err(tok_err(format!("vocab line {} must carry id {i}", i + 1)));
            }
            surfaces.push(s.to_string());
        }
        if surfaces.len() != num("vocab_size")? {
            return Err(tok_err("vocab file size disagrees with the merges header"));
        }
        let index: HashMap<&str, SymbolId> = surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as SymbolId))
            .collect();
        let lookup = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| tok_err(format!("merge symbol {s:?} not in vocab")))
        };
        let mut pairs = Vec::new();
        for line in lines {
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| tok_err(format!("bad merge line {line:?}")))?;
            pairs.push((lookup(a)?, lookup(b)?));
        }
        let eow = lookup(END_OF_WORD)?;
        let (specials, added, unk) = (num("specials")?, num("added")?, num("unk_id")?);
        if specials + added > surfaces.len() || unk >= specials {
            return Err(tok_err("special token ranges are inconsistent with the vocab"));
        }
        drop(index);
        BpeModel::assemble(surfaces, pairs, specials, added, unk as SymbolId, eow, coverage)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        let (merges, vocab) = self.to_files();
        for (name, body) in [("merges.txt", merges), ("vocab.txt", vocab)] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| CorpusError::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))
        };
        Self::from_files(&read("merges.txt")?, &read("vocab.txt")?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn toy_counts() -> WordCounts {
        let mut wc = WordCounts::new();
        for (w, c) in [("low", 5), ("lower", 2), ("newest", 6), ("widest", 3)] {
            wc.add_word(w, c);
        }
        wc
    }

    fn cfg(vocab_size: usize) -> TokenizerConfig {
        TokenizerConfig {
            vocab_size,
            ..TokenizerConfig::default()
        }
    }

    /// Recounts every pair each round. Returns the first `n` merges.
    fn reference_merges(words: &[(String, u64)], n: usize) -> Vec<(String, String)> {
        let mut segs: Vec<(Vec<String>, u64)> = words
            .iter()
            .map(|(w, c)| {
                let mut s: Vec<String> = w.chars().map(String::from).collect();
                s.push(END_OF_WORD.into());
                (s, *c)
            })
            .collect();
        let mut out = Vec::new();
        while out.len() < n {
            let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
            for (s, c) in &segs {
                for w in s.windows(2) {
                    *counts.entry((w[0].clone(), w[1].clone())).or_insert(0) += c;
                }
            }
            let Some(max) = counts.values().copied().max() else {
                break;
            };
            let best = counts.into_iter().find(|(_, c)| *c == max).unwrap().0;
            for (s, _) in segs.iter_mut() {
                let mut merged = Vec::new();
                let mut i = 0;
                while i < s.len() {
                    if i + 1 < s.len() && s[i] == best.0 && s[i + 1] == best.1 {
                        merged.push(format!("{}{}", s[i], s[i + 1]));
                        i += 2;
                    } else {
                        merged.push(s[i].clone());
                        i += 1;
                    }
                }
                *s = merged;
            }
            out.push(best);
        }
        out
    }

    /// Applies one merge at a time: the lowest-ranked pair, leftmost occurrence.
    fn reference_segment(model: &BpeModel, word: &str) -> Vec<String> {
        let ranks: HashMap<(String, String), usize> = model
            .merges()
            .enumerate()
            .map(|(i, (a, b))| ((a.to_string(), b.to_string()), i))
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        let mut s: Vec<String> = word.chars().map(String::from).collect();
        s.push(END_OF_WORD.into());
        loop {
            let best = (0..s.len().saturating_sub(1))
                .filter_map(|i| ranks.get(&(s[i].clone(), s[i + 1].clone())).map(|r| (*r, i)))
                .min();
            let Some((_, i)) = best else { break };
            let joined = format!("{}{}", s[i], s[i + 1]);
            s.splice(i..i + 2, [joined]);
        }
        s
    }

    #[test]
    fn alphabet_examples() {
        assert_eq!(build_alphabet(["aab"], 1.0).unwrap(), ['a', 'b']);
        let text = format!("{}{}c", "a".repeat(90), "b".repeat(9));
        assert_eq!(build_alphabet([text.as_str()], 0.99).unwrap(), ['a', 'b']);
        assert!(build_alphabet(["Niño x"], 1.0).unwrap().contains(&'ñ'));
        assert!(build_alphabet(Vec::<String>::new(), 1.0).is_err());
        assert!(build_alphabet(["   "], 1.0).is_err());
        // ties by code point
        assert_eq!(build_alphabet(["ba"], 1.0).unwrap(), ['a', 'b']);
    }

    #[test]
    fn toy_first_merge_is_e_s() {
        // (e,s), (s,t) and (t,</w>) all occur 9 times; (e,s) sorts first
        let model = learn_bpe_from_counts(&toy_counts(), &cfg(5 + 10 + 1 + 10)).unwrap();
        assert_eq!(model.merges().next(), Some(("e", "s")));
        let words: Vec<(String, u64)> = toy_counts().sorted().into_iter().map(|(w, c)| (w.into(), c)).collect();
        let reference = reference_merges(&words, model.merge_count());
        let learned: Vec<(String, String)> = model.merges().map(|(a, b)| (a.into(), b.into())).collect();
        assert_eq!(learned, reference);
    }

    #[test]
    fn toy_lowest_uses_es_merge() {
        let model = learn_bpe_from_counts(&toy_counts(), &cfg(5 + 10 + 1 + 10)).unwrap();
        let ids = model.encode("lowest");
        let got: Vec<&str> = ids.iter().map(|&i| model.token_of(i).unwrap()).collect();
        assert_eq!(got, reference_segment(&model, "lowest"));
        assert!(got.iter().any(|s| s.starts_with("es")), "{got:?}");
        assert_eq!(model.decode(&ids).unwrap(), "lowest");
    }

    #[test]
    fn zero_merge_boundary() {
        // alphabet d,e,i,l,n,o,r,s,t,w = 10 chars
        let exact = learn_bpe_from_counts(&toy_counts(), &cfg(5 + 10 + 1)).unwrap();
        assert_eq!(exact.merge_count(), 0);
        assert_eq!(exact.vocab_size(), 16);
        assert!(learn_bpe_from_counts(&toy_counts(), &cfg(15)).is_err());
    }

    #[test]
    fn unreachable_vocab_size_is_an_error() {
        let err = learn_bpe(["ab"], &cfg(100)).unwrap_err();
        assert!(err.to_string().contains("unreachable"), "{err}");
        assert!(learn_bpe(Vec::<String>::new(), &cfg(100)).is_err());
    }

    #[test]
    fn deterministic_files() {
        let corpus = ["Magandang umaga po sa inyong lahat", "Salamat po", "magandang gabi"];
        let a = learn_bpe(corpus, &cfg(50)).unwrap().to_files();
        let b = learn_bpe(corpus, &cfg(50)).unwrap().to_files();
        assert_eq!(a, b);
        let reloaded = BpeModel::from_files(&a.0, &a.1).unwrap();
        assert_eq!(reloaded.to_files(), a);
    }

    #[test]
    fn special_ids_are_lowest() {
        let model = learn_bpe(["abc abd"], &cfg(14)).unwrap();
        let specials: Vec<_> = model.special_tokens().map(|s| model.id_of(s).unwrap()).collect();
        assert_eq!(specials, [0, 1, 2, 3, 4]);
        assert_eq!(model.unk_id(), 0);
    }

    #[test]
    fn unknown_characters() {
        let text = format!("{} z", "ab ".repeat(200));
        let model = learn_bpe(
            [text.as_str()],
            &TokenizerConfig {
                character_coverage: 0.9,
                ..cfg(9)
            },
        )
        .unwrap();
        assert!(model.id_of("z").is_none());
        let ids = model.encode("az");
        assert!(ids.contains(&model.unk_id()));
        assert_eq!(model.decode(&ids).unwrap(), "a<unk>");
    }

    #[test]
    fn decode_errors_and_empties() {
        let model = learn_bpe(["kamusta po"], &cfg(20)).unwrap();
        assert_eq!(model.encode(""), Vec::<u32>::new());
        assert_eq!(model.decode(&[]).unwrap(), "");
        let err = model.decode(&[9999]).unwrap_err();
        assert!(err.to_string().contains("9999"));
        assert_eq!(model.decode(&model.encode("kamusta po")).unwrap(), "kamusta po");
    }

    #[test]
    fn added_tokens_are_atomic() {
        let model = learn_bpe(["see the link here", "Mention someone"], &cfg(30)).unwrap();
        let same = model.add_special_tokens::<&str>(&[]).unwrap();
        assert_eq!(same, model);
        let grown = model.add_special_tokens(&["[LINK]", "[MENTION]", "[HASHTAG]"]).unwrap();
        assert_eq!(grown.vocab_size(), model.vocab_size() + 3);
        let link = grown.id_of("[LINK]").unwrap();
        assert_eq!(link as usize, model.vocab_size());
        assert_eq!(grown.encode("[LINK]"), [link]);
        assert_eq!(
            grown.decode(&grown.encode("see [LINK] here")).unwrap(),
            "see [LINK] here"
        );
        assert_eq!(grown.decode(&grown.encode("the[LINK]")).unwrap(), "the[LINK]");
        for id in 0..model.vocab_size() as u32 {
            assert_eq!(grown.token_of(id), model.token_of(id));
        }
        assert!(grown.add_special_tokens(&["[LINK]"]).is_err());
        assert!(model.add_special_tokens(&["[X]", "[X]"]).is_err());
        let (m, v) = grown.to_files();
        assert_eq!(BpeModel::from_files(&m, &v).unwrap(), grown);
    }

    #[test]
    fn config_validation() {
        assert!(TokenizerConfig::default().validate().is_ok());
        let bad = TokenizerConfig {
            character_coverage: 0.0,
            case_preserving: false,
            special_tokens: vec!["<pad>".into(), "<pad>".into()],
            ..TokenizerConfig::default()
        };
        assert_eq!(bad.violations().len(), 4);
    }

    fn small_corpus() -> impl Strategy<Value = Vec<(String, u64)>> {
        prop::collection::btree_map("[a-dA-C]{1,6}", 1u64..20, 1..40).prop_map(|m| m.into_iter().collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn incremental_trainer_matches_reference(words in small_corpus(), extra in 0usize..30) {
            let mut wc = WordCounts::new();
            for (w, c) in &words {
                wc.add_word(w, *c);
            }
            let base = 5 + alphabet_from_counts(&wc, 1.0).unwrap().len() + 1;
            let Ok(model) = learn_bpe_from_counts(&wc, &cfg(base + extra)) else {
                return Ok(());
            };
            prop_assert_eq!(model.vocab_size(), base + extra);
            let reference = reference_merges(&words, model.merge_count());
            let learned: Vec<(String, String)> = model.merges().map(|(a, b)| (a.into(), b.into())).collect();
            prop_assert_eq!(learned, reference);
            for (w, _) in &words {
                let ids = model.encode(w);
                let got: Vec<&str> = ids.iter().map(|&i| model.token_of(i).unwrap()).collect();
                prop_assert_eq!(got, reference_segment(&model, w));
                prop_assert_eq!(model.decode(&ids).unwrap(), w.clone());
            }
        }

        #[test]
        fn more_merges_never_lengthen_encodings(words in small_corpus(), k in 0usize..20) {
            let mut wc = WordCounts::new();
            for (w, c) in &words {
                wc.add_word(w, *c);
            }
            let base = 5 + alphabet_from_counts(&wc, 1.0).unwrap().len() + 1;
            let (Ok(small), Ok(big)) = (
                learn_bpe_from_counts(&wc, &cfg(base + k)),
                learn_bpe_from_counts(&wc, &cfg(base + k + 1)),
            ) else {
                return Ok(());
            };
            let text: Vec<&str> = words.iter().map(|(w, _)| w.as_str()).collect();
            let text = text.join(" ");
            prop_assert!(big.encode(&text).len() <= small.encode(&text).len());
        }
    }
}
