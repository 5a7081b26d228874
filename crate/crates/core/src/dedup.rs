//! Keep-first exact deduplication.
//!
//! Lines are identified by a 128-bit XXH3 digest of their exact bytes, with
//! no case folding or whitespace collapsing. [`dedup_stream`] keeps the key
//! set in memory. [`ExternalDedup`] bounds memory by sorting `(key, index)`
//! runs on disk and then re-reading the input to emit survivors in order.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use xxhash_rust::xxh3::xxh3_128;

use crate::text::SentenceRecord;
use crate::{CorpusError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DedupKey(pub u128);

pub fn dedup_key(text: &str) -> DedupKey {
    DedupKey(xxh3_128(text.as_bytes()))
}

/// Anything that carries the text deduplication should compare.
pub trait DedupText {
    fn dedup_text(&self) -> &str;
}

impl DedupText for SentenceRecord {
    fn dedup_text(&self) -> &str {
        &self.text
    }
}

impl DedupText for String {
    fn dedup_text(&self) -> &str {
        self
    }
}

impl DedupText for &str {
    fn dedup_text(&self) -> &str {
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DedupCounts {
    pub read: u64,
    pub kept: u64,
}

impl DedupCounts {
    pub fn dropped(&self) -> u64 {
        self.read - self.kept
    }
}

impl std::fmt::Display for DedupCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "read={} kept={} dropped={}", self.read, self.kept, self.dropped())
    }
}

/// In-memory keep-first filter.
#[derive(Debug, Default)]
pub struct Deduper {
    seen: HashSet<DedupKey>,
    counts: DedupCounts,
}

impl Deduper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns true the first time `text` is offered.
    pub fn admit(&mut self, text: &str) -> bool {
        self.counts.read += 1;
        let fresh = self.seen.insert(dedup_key(text));
        self.counts.kept += fresh as u64;
        fresh
    }

    pub fn counts(&self) -> DedupCounts {
        self.counts
    }
}

pub struct DedupStream<I> {
    inner: I,
    deduper: Deduper,
}

impl<I> DedupStream<I> {
    pub fn counts(&self) -> DedupCounts {
        self.deduper.counts()
    }
}

impl<T: DedupText, I: Iterator<Item = T>> Iterator for DedupStream<I> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        self.inner.by_ref().find(|item| self.deduper.admit(item.dedup_text()))
    }
}

/// Lazily yields the first occurrence of each distinct text, in input order.
pub fn dedup_stream<I>(records: I) -> DedupStream<I::IntoIter>
where
    I: IntoIterator,
    I::Item: DedupText,
{
    DedupStream {
        inner: records.into_iter(),
        deduper: Deduper::new(),
    }
}

const KEY_RECORD: usize = 24;
const INDEX_RECORD: usize = 8;

static RUN_DIR_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Scratch directory removed on drop.
struct RunDir {
    path: PathBuf,
    runs: u64,
}

impl RunDir {
    fn create(parent: &Path) -> Result<Self> {
        let n = RUN_DIR_COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = parent.join(format!("filcorpus-dedup-{}-{n}", std::process::id()));
        fs::create_dir_all(&path).map_err(|e| CorpusError::io(&path, e))?;
        Ok(RunDir { path, runs: 0 })
    }

    fn write_run<const W: usize>(&mut self, records: impl Iterator<Item = [u8; W]>) -> Result<PathBuf> {
        self.runs += 1;
        let path = self.path.join(format!("run-{:06}", self.runs));
        let file = File::create(&path).map_err(|e| CorpusError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for rec in records {
            w.write_all(&rec).map_err(|e| CorpusError::io(&path, e))?;
        }
        w.flush().map_err(|e| CorpusError::io(&path, e))?;
        Ok(path)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.path);
    }
}

/// Reads fixed-width records from a sorted run file.
struct RunReader<const W: usize> {
    reader: BufReader<File>,
    path: PathBuf,
}

impl<const W: usize> RunReader<W> {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        Ok(RunReader {
            reader: BufReader::new(file),
            path: path.to_path_buf(),
        })
    }

    fn next_record(&mut self) -> Result<Option<[u8; W]>> {
        let mut buf = [0u8; W];
        match self.reader.read_exact(&mut buf) {
            Ok(()) => Ok(Some(buf)),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Ok(None),
            Err(e) => Err(CorpusError::io(&self.path, e)),
        }
    }
}

/// K-way merge over sorted run files. Records compare as big-endian bytes.
struct RunMerge<const W: usize> {
    readers: Vec<RunReader<W>>,
    heap: BinaryHeap<Reverse<([u8; W], usize)>>,
}

impl<const W: usize> RunMerge<W> {
    fn new(paths: &[PathBuf]) -> Result<Self> {
        let mut readers = paths.iter().map(|p| RunReader::open(p)).collect::<Result<Vec<_>>>()?;
        let mut heap = BinaryHeap::with_capacity(readers.len());
        for (i, r) in readers.iter_mut().enumerate() {
            if let Some(rec) = r.next_record()? {
                heap.push(Reverse((rec, i)));
            }
        }
        Ok(RunMerge { readers, heap })
    }

    fn next_record(&mut self) -> Result<Option<[u8; W]>> {
        let Some(Reverse((rec, i))) = self.heap.pop() else {
            return Ok(None);
        };
        if let Some(next) = self.readers[i].next_record()? {
            self.heap.push(Reverse((next, i)));
        }
        Ok(Some(rec))
    }
}

fn encode_key_record(key: DedupKey, index: u64) -> [u8; KEY_RECORD] {
    let mut out = [0u8; KEY_RECORD];
    out[..16].copy_from_slice(&key.0.to_be_bytes());
    out[16..].copy_from_slice(&index.to_be_bytes());
    out
}

/// Disk-backed keep-first deduplication for inputs whose key set does not fit in memory.
///
/// The input is read twice, so it is supplied as a factory that reopens it.
#[derive(Debug, Clone)]
pub struct ExternalDedup {
    tmp_dir: PathBuf,
    chunk_keys: usize,
}

impl ExternalDedup {
    pub const DEFAULT_CHUNK_KEYS: usize = 1 << 20;

    pub fn new(tmp_dir: impl Into<PathBuf>) -> Self {
        ExternalDedup {
            tmp_dir: tmp_dir.into(),
            chunk_keys: Self::DEFAULT_CHUNK_KEYS,
        }
    }

    /// Maximum number of keys held in memory before a run is spilled.
    pub fn chunk_keys(mut self, n: usize) -> Self {
        self.chunk_keys = n.max(1);
        self
    }

    pub fn run<T, I, F, E>(&self, mut open: F, mut emit: E) -> Result<DedupCounts>
    where
        T: DedupText,
        I: Iterator<Item = Result<T>>,
        F: FnMut() -> Result<I>,
        E: FnMut(T) -> Result<()>,
    {
        let mut dir = RunDir::create(&self.tmp_dir)?;

        // pass 1: sorted (key, index) runs
        let mut key_runs = Vec::new();
        let mut buf: Vec<(DedupKey, u64)> = Vec::with_capacity(self.chunk_keys.min(1 << 16));
        let mut read = 0u64;
        for item in open()? {
            let item = item?;
            buf.push((dedup_key(item.dedup_text()), read));
            read += 1;
            if buf.len() >= self.chunk_keys {
                buf.sort_unstable();
                key_runs.push(dir.write_run(buf.drain(..).map(|(k, i)| encode_key_record(k, i)))?);
            }
        }
        if !buf.is_empty() {
            buf.sort_unstable();
            key_runs.push(dir.write_run(buf.drain(..).map(|(k, i)| encode_key_record(k, i)))?);
        }

        // merge: the first record of each key group has the smallest index
        let mut merge = RunMerge::<KEY_RECORD>::new(&key_runs)?;
        let mut survivors: Vec<u64> = Vec::new();
        let mut index_runs = Vec::new();
        let mut last_key: Option<[u8; 16]> = None;
        while let Some(rec) = merge.next_record()? {
            let key: [u8; 16] = rec[..16].try_into().expect("fixed width");
            if last_key == Some(key) {
                continue;
            }
            last_key = Some(key);
            survivors.push(u64::from_be_bytes(rec[16..].try_into().expect("fixed width")));
            if survivors.len() >= self.chunk_keys {
                survivors.sort_unstable();
                index_runs.push(dir.write_run(survivors.drain(..).map(u64::to_be_bytes))?);
            }
        }
        drop(merge);
        if !survivors.is_empty() {
            survivors.sort_unstable();
            index_runs.push(dir.write_run(survivors.drain(..).map(u64::to_be_bytes))?);
        }
        for p in &key_runs {
            let _ = fs::remove_file(p);
        }

        // pass 2: stream the input again, emitting survivors by index
        let mut wanted = RunMerge::<INDEX_RECORD>::new(&index_runs)?;
        let mut next_wanted = wanted.next_record()?.map(u64::from_be_bytes);
        let mut kept = 0u64;
        let mut reread = 0u64;
        for item in open()? {
            let item = item?;
            if next_wanted == Some(reread) {
                emit(item)?;
                kept += 1;
                next_wanted = wanted.next_record()?.map(u64::from_be_bytes);
            }
            reread += 1;
        }
        if reread != read {
            return Err(CorpusError::Config(format!(
                "input changed between passes: {read} records then {reread}"
            )));
        }
        Ok(DedupCounts { read, kept })
    }
}
