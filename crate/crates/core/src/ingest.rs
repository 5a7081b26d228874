//! Corpus readers and deterministic splitting.
//!
//! Plain corpora are one sentence per line; blank lines separate documents.
//! Bitext arrives either as a two-column TSV or as a pair of line-aligned
//! files. Splitting assigns whole units (lines or documents) to subset A by
//! an exact quota over a seeded hash order, so the partition never depends on
//! input order or worker count.

use std::collections::HashSet;
use std::io::BufRead;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::text::{normalize_bytes, SentenceRecord};
use crate::{CorpusError, Result};

fn read_raw_line<R: BufRead>(reader: &mut R, buf: &mut Vec<u8>) -> std::io::Result<bool> {
    buf.clear();
    Ok(reader.read_until(b'\n', buf)? > 0)
}

/// Streams [`SentenceRecord`]s out of a plain one-sentence-per-line source.
///
/// Blank lines are skipped and counted. Physical line numbers are kept, so
/// record `line_no`s have gaps where blank lines were.
pub struct PlainReader<R> {
    reader: R,
    source_id: Arc<str>,
    buf: Vec<u8>,
    line_no: u64,
    doc_no: u64,
    seen_text: bool,
    pending_break: bool,
    skipped: u64,
    bytes: u64,
    failed: bool,
}

impl<R: BufRead> PlainReader<R> {
    pub fn lines_read(&self) -> u64 {
        self.line_no
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn bytes_read(&self) -> u64 {
        self.bytes
    }
}

impl<R: BufRead> Iterator for PlainReader<R> {
    type Item = Result<SentenceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            match read_raw_line(&mut self.reader, &mut self.buf) {
                Ok(false) => return None,
                Ok(true) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            }
            self.line_no += 1;
            self.bytes += self.buf.len() as u64;
            let text = match normalize_bytes(&self.buf, &self.source_id, self.line_no) {
                Ok(t) => t,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            };
            if text.is_empty() {
                self.skipped += 1;
                if self.seen_text {
                    self.pending_break = true;
                }
                continue;
            }
            if self.pending_break {
                self.doc_no += 1;
                self.pending_break = false;
            }
            self.seen_text = true;
            return Some(Ok(SentenceRecord {
                text: text.into_owned(),
                source_id: self.source_id.clone(),
                line_no: self.line_no,
                doc_no: self.doc_no,
            }));
        }
    }
}

/// Reads a plain corpus. Empty lines are skipped; see [`PlainReader::skipped`].
pub fn read_plain_corpus<R: BufRead>(reader: R, source_id: &str) -> PlainReader<R> {
    PlainReader {
        reader,
        source_id: Arc::from(source_id),
        buf: Vec::new(),
        line_no: 0,
        doc_no: 0,
        seen_text: false,
        pending_break: false,
        skipped: 0,
        bytes: 0,
        failed: false,
    }
}

/// One aligned sentence pair. Either side may be empty as read; extraction skips those.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitextRecord {
    pub source_text: String,
    pub target_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

impl FromStr for Side {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Side::Source),
            "target" => Ok(Side::Target),
            other => Err(CorpusError::Config(format!("unknown bitext side `{other}`"))),
        }
    }
}

/// Physical line number plus the pair read from it.
pub type NumberedBitext = (u64, BitextRecord);

/// Reads `source<TAB>target` lines. Blank lines are ignored; any other line
/// without exactly two columns is an error.
pub fn read_tsv_bitext<'a, R: BufRead + 'a>(
    mut reader: R,
    source_id: &'a str,
) -> impl Iterator<Item = Result<NumberedBitext>> + 'a {
    let mut buf = Vec::new();
    let mut line_no = 0u64;
    let mut failed = false;
    std::iter::from_fn(move || loop {
        if failed {
            return None;
        }
        match read_raw_line(&mut reader, &mut buf) {
            Ok(false) => return None,
            Ok(true) => {}
            Err(e) => {
                failed = true;
                return Some(Err(e.into()));
            }
        }
        line_no += 1;
        let line = match std::str::from_utf8(&buf) {
            Ok(l) => l.trim_end_matches(['\n', '\r']),
            Err(_) => {
                failed = true;
                return Some(Err(CorpusError::Encoding {
                    source_id: source_id.to_string(),
                    line_no,
                }));
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(src), Some(tgt), None) = (cols.next(), cols.next(), cols.next()) else {
            failed = true;
            return Some(Err(CorpusError::Malformed {
                source_id: source_id.to_string(),
                line_no,
                message: "expected exactly two tab-separated columns".into(),
            }));
        };
        return Some(Ok((
            line_no,
            BitextRecord {
                source_text: crate::normalize_line(src).into_owned(),
                target_text: crate::normalize_line(tgt).into_owned(),
            },
        )));
    })
}

/// Zips two line-aligned files. Unequal line counts are an error at the
/// first line where one side runs out.
pub fn read_paired_bitext<'a, A: BufRead + 'a, B: BufRead + 'a>(
    mut source: A,
    mut target: B,
    source_id: &'a str,
) -> impl Iterator<Item = Result<NumberedBitext>> + 'a {
    let (mut sbuf, mut tbuf) = (Vec::new(), Vec::new());
    let mut line_no = 0u64;
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        let step = (|| -> Result<Option<NumberedBitext>> {
            let s_more = read_raw_line(&mut source, &mut sbuf)?;
            let t_more = read_raw_line(&mut target, &mut tbuf)?;
            match (s_more, t_more) {
                (false, false) => return Ok(None),
                (true, true) => {}
                _ => {
                    return Err(CorpusError::Malformed {
                        source_id: source_id.to_string(),
                        line_no: line_no + 1,
                        message: "paired files have different line counts".into(),
                    })
                }
            }
            line_no += 1;
            Ok(Some((
                line_no,
                BitextRecord {
                    source_text: normalize_bytes(&sbuf, source_id, line_no)?.into_owned(),
                    target_text: normalize_bytes(&tbuf, source_id, line_no)?.into_owned(),
                },
            )))
        })();
        match step {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                done = true;
                None
            }
            Err(e) => {
                done = true;
                Some(Err(e))
            }
        }
    })
}

/// Pulls one side out of a bitext stream, preserving order.
///
/// Pairs whose chosen side is empty are dropped and counted in
/// [`BitextExtract::skipped`]. No deduplication happens here.
pub struct BitextExtract<I> {
    inner: I,
    side: Side,
    source_id: Arc<str>,
    skipped: u64,
    seen: u64,
}

impl<I> BitextExtract<I> {
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn pairs_seen(&self) -> u64 {
        self.seen
    }
}

impl<I: Iterator<Item = Result<NumberedBitext>>> Iterator for BitextExtract<I> {
    type Item = Result<SentenceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (line_no, rec) = match self.inner.next()? {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            };
            self.seen += 1;
            let text = match self.side {
                Side::Source => rec.source_text,
                Side::Target => rec.target_text,
            };
            if text.is_empty() {
                self.skipped += 1;
                continue;
            }
            return Some(Ok(SentenceRecord {
                text,
                source_id: self.source_id.clone(),
                line_no,
                doc_no: 0,
            }));
        }
    }
}

pub fn extract_bitext_side<I>(records: I, side: Side, source_id: &str) -> BitextExtract<I::IntoIter>
where
    I: IntoIterator<Item = Result<NumberedBitext>>,
{
    BitextExtract {
        inner: records.into_iter(),
        side,
        source_id: Arc::from(source_id),
        skipped: 0,
        seen: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    Line,
    #[default]
    Document,
}

impl FromStr for SplitUnit {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(SplitUnit::Line),
            "document" => Ok(SplitUnit::Document),
            other => Err(CorpusError::Config(format!("unknown split unit `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of units assigned to subset A.
    pub ratio: f64,
    pub seed: u64,
    #[serde(default)]
    pub unit: SplitUnit,
}

impl SplitConfig {
    pub fn new(ratio: f64, seed: u64, unit: SplitUnit) -> Result<Self> {
        let cfg = SplitConfig { ratio, seed, unit };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(CorpusError::Config(format!(
                "split ratio {} is outside [0, 1]",
                self.ratio
            )));
        }
        Ok(())
    }

    /// Number of the `n` units that go to subset A: `ceil(ratio * n)`.
    pub fn quota(&self, n: usize) -> usize {
        // guard against 0.6 * 10 landing a hair above 6
        let raw = (self.ratio * n as f64 - 1e-9).ceil();
        (raw.max(0.0) as usize).min(n)
    }
}

/// Identity of a split unit: the source plus a line or document number.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UnitKey {
    pub source_id: Arc<str>,
    pub number: u64,
}

impl UnitKey {
    pub fn of(record: &SentenceRecord, unit: SplitUnit) -> Self {
        UnitKey {
            source_id: record.source_id.clone(),
            number: match unit {
                SplitUnit::Line => record.line_no,
                SplitUnit::Document => record.doc_no,
            },
        }
    }

    /// Seeded 64-bit hash over `source_id`, a `0xff` separator and the
    /// little-endian unit number.
    pub fn hash(&self, seed: u64) -> u64 {
        let mut bytes = Vec::with_capacity(self.source_id.len() + 9);
        bytes.extend_from_slice(self.source_id.as_bytes());
        bytes.push(0xff);
        bytes.extend_from_slice(&self.number.to_le_bytes());
        xxh3_64_with_seed(&bytes, seed)
    }
}

/// Chooses the subset-A units: sort distinct keys by seeded hash (ties by key)
/// and take the first [`SplitConfig::quota`] of them.
pub fn assign_units<I>(keys: I, cfg: &SplitConfig, workers: usize) -> HashSet<UnitKey>
where
    I: IntoIterator<Item = UnitKey>,
{
    let mut distinct: Vec<UnitKey> = keys.into_iter().collect::<HashSet<_>>().into_iter().collect();
    let quota = cfg.quota(distinct.len());
    let seed = cfg.seed;

    let mut hashed: Vec<(u64, UnitKey)> = run_with_workers(workers, move || {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            let mut v: Vec<(u64, UnitKey)> = distinct.par_drain(..).map(|k| (k.hash(seed), k)).collect();
            v.par_sort_unstable();
            v
        }
        #[cfg(not(feature = "parallel"))]
        {
            let mut v: Vec<(u64, UnitKey)> = distinct.drain(..).map(|k| (k.hash(seed), k)).collect();
            v.sort_unstable();
            v
        }
    });
    hashed.truncate(quota);
    hashed.into_iter().map(|(_, k)| k).collect()
}

#[cfg(feature = "parallel")]
fn run_with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_with_workers<T>(_workers: usize, f: impl FnOnce() -> T) -> T {
    f()
}

/// Partitions records into (A, B), preserving input order within each side.
pub fn split_corpus(records: Vec<SentenceRecord>, cfg: &SplitConfig) -> (Vec<SentenceRecord>, Vec<SentenceRecord>) {
    split_corpus_with_workers(records, cfg, 1)
}

pub fn split_corpus_with_workers(
    records: Vec<SentenceRecord>,
    cfg: &SplitConfig,
    workers: usize,
) -> (Vec<SentenceRecord>, Vec<SentenceRecord>) {
    let chosen = assign_units(records.iter().map(|r| UnitKey::of(r, cfg.unit)), cfg, workers);
    records
        .into_iter()
        .partition(|r| chosen.contains(&UnitKey::of(r, cfg.unit)))
}
