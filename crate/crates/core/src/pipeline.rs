//! End-to-end corpus build: ingest → filter → dedup → split → tokenizer.
//!
//! Configuration is a TOML document (schema version 1):
//!
//! ```toml
//! version = 1
//! output_dir = "build"
//! seed = 2022
//! workers = 4
//!
//! [[sources]]
//! source_id = "oscar"
//! path = "oscar.txt"
//! format = "plain"           # plain | tsv | paired
//!
//! [[sources]]
//! source_id = "ted2020"
//! path = "ted.en"            # for `paired`, the source-language file
//! target_path = "ted.tl"
//! format = "paired"
//! side = "target"
//!
//! [filter]                   # any FilterConfig field, defaults otherwise
//! min_tokens = 4
//!
//! [dedup]
//! external_sort = false
//!
//! [split]                    # optional
//! ratio = 0.6
//! unit = "document"
//! sources = ["newsph"]       # optional; other sources go wholly to subset A
//!
//! [tokenizer]                # optional; trained on subset A (or the corpus)
//! vocab_size = 32000
//! ```
//!
//! Relative paths resolve against the config file's directory. Outputs are
//! staged in a scratch directory and moved into `output_dir` only after every
//! stage succeeded.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::bpe::{learn_bpe_from_counts, TokenizerConfig, WordCounts};
use crate::dedup::{DedupCounts, Deduper, ExternalDedup};
use crate::filters::{FilterConfig, FilterSet, FilterVerdict};
use crate::ingest::{
    assign_units, extract_bitext_side, read_paired_bitext, read_plain_corpus, read_tsv_bitext, Side, SplitConfig,
    SplitUnit, UnitKey,
};
use crate::text::SentenceRecord;
use crate::{CorpusError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Plain,
    Tsv,
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub source_id: String,
    pub path: PathBuf,
    pub format: SourceFormat,
    #[serde(default)]
    pub target_path: Option<PathBuf>,
    #[serde(default)]
    pub side: Option<Side>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupSection {
    pub external_sort: bool,
    pub chunk_keys: Option<usize>,
    pub tmp_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub ratio: f64,
    #[serde(default)]
    pub unit: SplitUnit,
    /// Sources subject to the split; `None` means all of them.
    #[serde(default)]
    pub sources: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub dedup: DedupSection,
    #[serde(default)]
    pub split: Option<SplitSection>,
    #[serde(default)]
    pub tokenizer: Option<TokenizerConfig>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_workers() -> usize {
    1
}

/// Derives an independent seed for one named consumer of randomness.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    xxh3_64_with_seed(name.as_bytes(), seed)
}

impl PipelineConfig {
    /// Parses a config document. Relative paths are joined onto `base_dir`.
    pub fn from_toml_str(doc: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(doc).map_err(|e| CorpusError::Config(format!("config parse error: {e}")))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        for s in &mut cfg.sources {
            resolve(&mut s.path);
            if let Some(t) = s.target_path.as_mut() {
                resolve(t);
            }
        }
        resolve(&mut cfg.output_dir);
        if let Some(t) = cfg.dedup.tmp_dir.as_mut() {
            resolve(t);
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let doc = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&doc, base).map_err(|e| match e {
            CorpusError::Config(m) => CorpusError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn split_config(&self) -> Option<SplitConfig> {
        self.split.as_ref().map(|s| SplitConfig {
            ratio: s.ratio,
            seed: sub_seed(self.seed, "split"),
            unit: s.unit,
        })
    }
}

/// Lists every problem with `cfg`; an empty list means it can run.
pub fn validate_config(cfg: &PipelineConfig) -> Vec<String> {
    let mut report = Vec::new();
    if cfg.version != CONFIG_VERSION {
        report.push(format!(
            "unsupported config version {} (expected {CONFIG_VERSION})",
            cfg.version
        ));
    }
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    for (i, s) in cfg.sources.iter().enumerate() {
        if let Some(&j) = first_seen.get(s.source_id.as_str()) {
            report.push(format!(
                "duplicate source_id `{}` in sources[{j}] and sources[{i}]",
                s.source_id
            ));
        } else {
            first_seen.insert(&s.source_id, i);
        }
        if s.source_id.is_empty() || s.source_id.contains(['\t', '\n', '\r']) {
            report.push(format!(
                "sources[{i}]: source_id must be non-empty without tabs or line breaks"
            ));
        }
        if !s.path.is_file() {
            report.push(format!(
                "sources[{i}] ({}): {} does not exist",
                s.source_id,
                s.path.display()
            ));
        }
        match (s.format, &s.target_path, s.side) {
            (SourceFormat::Plain, None, None) => {}
            (SourceFormat::Plain, _, _) => report.push(format!(
                "sources[{i}] ({}): plain sources take no target_path or side",
                s.source_id
            )),
            (SourceFormat::Tsv, None, Some(_)) => {}
            (SourceFormat::Tsv, _, _) => report.push(format!(
                "sources[{i}] ({}): tsv sources need `side` and no target_path",
                s.source_id
            )),
            (SourceFormat::Paired, Some(t), Some(_)) => {
                if !t.is_file() {
                    report.push(format!(
                        "sources[{i}] ({}): {} does not exist",
                        s.source_id,
                        t.display()
                    ));
                }
            }
            (SourceFormat::Paired, _, _) => report.push(format!(
                "sources[{i}] ({}): paired sources need `target_path` and `side`",
                s.source_id
            )),
        }
    }
    report.extend(cfg.filter.violations().into_iter().map(|v| format!("filter: {v}")));
    if let Some(split) = &cfg.split {
        if !(0.0..=1.0).contains(&split.ratio) {
            report.push(format!(
                "split: ratio {} violates SplitConfig bound 0 <= ratio <= 1",
                split.ratio
            ));
        }
        for id in split.sources.iter().flatten() {
            if !first_seen.contains_key(id.as_str()) {
                report.push(format!("split: unknown source `{id}`"));
            }
        }
    }
    if let Some(tok) = &cfg.tokenizer {
        report.extend(tok.violations().into_iter().map(|v| format!("tokenizer: {v}")));
    }
    if cfg.workers == 0 {
        report.push("workers must be at least 1".into());
    }
    if cfg.output_dir.is_file() {
        report.push(format!("output_dir {} is a file", cfg.output_dir.display()));
    } else if let Some(existing) = cfg.output_dir.ancestors().find(|a| a.exists()) {
        if fs::metadata(existing)
            .map(|m| m.permissions().readonly())
            .unwrap_or(true)
        {
            report.push(format!("output_dir {} is not writable", cfg.output_dir.display()));
        }
    }
    if cfg.dedup.chunk_keys == Some(0) {
        report.push("dedup: chunk_keys must be positive".into());
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Filter,
    Dedup,
    Split,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Ingest, Stage::Filter, Stage::Dedup, Stage::Split];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Filter => "filter",
            Stage::Dedup => "dedup",
            Stage::Split => "split",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub lines_in: u64,
    pub lines_out: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rejects: BTreeMap<String, u64>,
    #[serde(default)]
    pub duplicates_dropped: u64,
    #[serde(default)]
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_a: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_b: Option<u64>,
}

impl StageStats {
    fn reject(&mut self, reason: &str) {
        *self.rejects.entry(reason.to_string()).or_insert(0) += 1;
    }

    /// `lines_in - lines_out - rejects - duplicates`, or `None` on underflow.
    fn imbalance(&self) -> Option<i128> {
        let removed: u64 = self.rejects.values().sum::<u64>() + self.duplicates_dropped;
        let diff = self.lines_in as i128 - self.lines_out as i128 - removed as i128;
        (diff != 0).then_some(diff)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceStats {
    pub source_id: String,
    pub stages: BTreeMap<Stage, StageStats>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineStats {
    pub sources: Vec<SourceStats>,
    pub wall_time: Duration,
}

impl PipelineStats {
    pub fn stage_total(&self, stage: Stage) -> StageStats {
        let mut total = StageStats::default();
        for s in &self.sources {
            if let Some(st) = s.stages.get(&stage) {
                total.lines_in += st.lines_in;
                total.lines_out += st.lines_out;
                total.duplicates_dropped += st.duplicates_dropped;
                total.bytes += st.bytes;
                for (k, v) in &st.rejects {
                    *total.rejects.entry(k.clone()).or_insert(0) += v;
                }
                if let Some(a) = st.subset_a {
                    *total.subset_a.get_or_insert(0) += a;
                }
                if let Some(b) = st.subset_b {
                    *total.subset_b.get_or_insert(0) += b;
                }
            }
        }
        total
    }

    /// Lines read by ingestion, and lines surviving dedup.
    pub fn kept(&self) -> (u64, u64) {
        (
            self.stage_total(Stage::Ingest).lines_in,
            self.stage_total(Stage::Dedup).lines_out,
        )
    }

    /// Parses the line-delimited stats document written by [`report_stats`].
    pub fn from_jsonl(doc: &str) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut by_source: HashMap<String, SourceStats> = HashMap::new();
        for (i, line) in doc.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: StatsRecord =
                serde_json::from_str(line).map_err(|e| CorpusError::Config(format!("stats line {}: {e}", i + 1)))?;
            let entry = by_source.entry(rec.source_id.clone()).or_insert_with(|| {
                order.push(rec.source_id.clone());
                SourceStats {
                    source_id: rec.source_id.clone(),
                    stages: BTreeMap::new(),
                }
            });
            entry.stages.insert(rec.stage, rec.counts);
        }
        Ok(PipelineStats {
            sources: order
                .into_iter()
                .map(|id| by_source.remove(&id).expect("inserted"))
                .collect(),
            wall_time: Duration::ZERO,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StatsRecord {
    source_id: String,
    stage: Stage,
    #[serde(flatten)]
    counts: StageStats,
}

/// Rendered statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsReport {
    /// One JSON record per source and stage.
    pub jsonl: String,
    /// Fixed-width table for people.
    pub summary: String,
}

/// Checks the conservation invariant and renders the report.
///
/// Every stage must satisfy `lines_in = lines_out + rejects + duplicates`,
/// and each stage must consume exactly what the previous stage produced.
pub fn report_stats(stats: &PipelineStats) -> Result<StatsReport> {
    for s in &stats.sources {
        let mut prev_out: Option<(Stage, u64)> = None;
        for (&stage, st) in &s.stages {
            if let Some(diff) = st.imbalance() {
                return Err(CorpusError::Conservation(format!(
                    "{}/{}: lines_in {} != lines_out {} + rejects + duplicates_dropped (off by {diff})",
                    s.source_id,
                    stage.name(),
                    st.lines_in,
                    st.lines_out
                )));
            }
            if let (Some(a), Some(b)) = (st.subset_a, st.subset_b) {
                if a + b != st.lines_out {
                    return Err(CorpusError::Conservation(format!(
                        "{}/{}: subset_a {a} + subset_b {b} != lines_out {}",
                        s.source_id,
                        stage.name(),
                        st.lines_out
                    )));
                }
            }
            if let Some((prev, out)) = prev_out {
                if out != st.lines_in {
                    return Err(CorpusError::Conservation(format!(
                        "{}: {} lines_out {out} != {} lines_in {}",
                        s.source_id,
                        prev.name(),
                        stage.name(),
                        st.lines_in
                    )));
                }
            }
            prev_out = Some((stage, st.lines_out));
        }
    }

    let mut jsonl = String::new();
    for s in &stats.sources {
        for (&stage, st) in &s.stages {
            let rec = StatsRecord {
                source_id: s.source_id.clone(),
                stage,
                counts: st.clone(),
            };
            jsonl.push_str(&serde_json::to_string(&rec).expect("stats serialize"));
            jsonl.push('\n');
        }
    }

    let reasons = ["Empty", "NonLatin", "Length", "PunctRun", "AvgWordLen", "Html"];
    let mut summary = format!("{:<16}{:>10}", "source", "read");
    for r in reasons {
        summary.push_str(&format!("{r:>11}"));
    }
    summary.push_str(&format!("{:>10}{:>10}\n", "dup", "kept"));
    let mut row = |label: &str, stages: &BTreeMap<Stage, StageStats>| {
        let get = |st: Stage| stages.get(&st).cloned().unwrap_or_default();
        let (ingest, filter, dedup) = (get(Stage::Ingest), get(Stage::Filter), get(Stage::Dedup));
        summary.push_str(&format!("{label:<16}{:>10}", ingest.lines_in));
        for r in reasons {
            let n = ingest
                .rejects
                .get(r)
                .or_else(|| filter.rejects.get(r))
                .copied()
                .unwrap_or(0);
            summary.push_str(&format!("{n:>11}"));
        }
        summary.push_str(&format!("{:>10}{:>10}\n", dedup.duplicates_dropped, dedup.lines_out));
    };
    for s in &stats.sources {
        row(&s.source_id, &s.stages);
    }
    let totals: BTreeMap<Stage, StageStats> = Stage::ALL.iter().map(|&st| (st, stats.stage_total(st))).collect();
    row("TOTAL", &totals);
    let (read, kept) = stats.kept();
    let pct = if read == 0 {
        0.0
    } else {
        100.0 * kept as f64 / read as f64
    };
    summary.push_str(&format!("kept {kept} / {read} ({pct:.1}%)\n"));
    if let Some(split) = totals.get(&Stage::Split).filter(|s| s.subset_a.is_some()) {
        summary.push_str(&format!(
            "split: subset_a {} / subset_b {}\n",
            split.subset_a.unwrap_or(0),
            split.subset_b.unwrap_or(0)
        ));
    }
    Ok(StatsReport { jsonl, summary })
}

/// Names of the files a build leaves in `output_dir`.
pub mod outputs {
    pub const CORPUS: &str = "corpus.txt";
    pub const REJECTS: &str = "rejects.tsv";
    pub const SUBSET_A: &str = "subset_a.txt";
    pub const SUBSET_B: &str = "subset_b.txt";
    pub const TOKENIZER_DIR: &str = "tokenizer";
    pub const STATS: &str = "stats.jsonl";
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CorpusError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CorpusError::io(path, e))
}

fn write_line(w: &mut impl Write, path: &Path, line: &str) -> Result<()> {
    w.write_all(line.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .map_err(|e| CorpusError::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CorpusError::io(path, e))
}

/// Intermediate record format: `source_id \t doc_no \t line_no \t text`.
fn stage_line(r: &SentenceRecord) -> String {
    format!("{}\t{}\t{}\t{}", r.source_id, r.doc_no, r.line_no, r.text)
}

fn read_staged(path: &Path) -> Result<impl Iterator<Item = Result<SentenceRecord>>> {
    let reader = open(path)?;
    let path = path.to_path_buf();
    let mut ids: HashMap<String, Arc<str>> = HashMap::new();
    Ok(reader.lines().enumerate().map(move |(i, line)| {
        let line = line.map_err(|e| CorpusError::io(&path, e))?;
        let bad = || CorpusError::Malformed {
            source_id: path.display().to_string(),
            line_no: i as u64 + 1,
            message: "corrupt staging record".into(),
        };
        let mut cols = line.splitn(4, '\t');
        let (Some(src), Some(doc), Some(ln), Some(text)) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
            return Err(bad());
        };
        let source_id = ids.entry(src.to_string()).or_insert_with(|| Arc::from(src)).clone();
        Ok(SentenceRecord {
            text: text.to_string(),
            source_id,
            line_no: ln.parse().map_err(|_| bad())?,
            doc_no: doc.parse().map_err(|_| bad())?,
        })
    }))
}

struct SourceResult {
    ingest: StageStats,
    filter: StageStats,
    staged: PathBuf,
    rejects: PathBuf,
}

fn ingest_and_filter(spec: &SourceSpec, filters: &FilterSet, staging: &Path, idx: usize) -> Result<SourceResult> {
    let staged = staging.join(format!("filtered-{idx:04}.tsv"));
    let rejects = staging.join(format!("rejects-{idx:04}.tsv"));
    let mut out = create(&staged)?;
    let mut rej = create(&rejects)?;
    let mut ingest = StageStats::default();
    let mut filter = StageStats::default();

    let mut sink = |rec: SentenceRecord| -> Result<()> {
        filter.lines_in += 1;
        filter.bytes += rec.text.len() as u64;
        match filters.check(&rec.text) {
            FilterVerdict::Pass => {
                filter.lines_out += 1;
                write_line(&mut out, &staged, &stage_line(&rec))
            }
            FilterVerdict::Reject(reason) => {
                filter.reject(reason.as_str());
                write_line(
                    &mut rej,
                    &rejects,
                    &format!("{reason}\t{}:{}\t{}", rec.source_id, rec.line_no, rec.text),
                )
            }
        }
    };

    let id = spec.source_id.as_str();
    match spec.format {
        SourceFormat::Plain => {
            let mut reader = read_plain_corpus(open(&spec.path)?, id);
            for rec in reader.by_ref() {
                sink(rec?)?;
            }
            ingest.lines_in = reader.lines_read();
            ingest.bytes = reader.bytes_read();
            if reader.skipped() > 0 {
                ingest.rejects.insert("Empty".into(), reader.skipped());
            }
        }
        SourceFormat::Tsv | SourceFormat::Paired => {
            let side = spec.side.unwrap_or(Side::Target);
            let pairs: Box<dyn Iterator<Item = Result<_>>> = if spec.format == SourceFormat::Tsv {
                Box::new(read_tsv_bitext(open(&spec.path)?, id))
            } else {
                let target = spec
                    .target_path
                    .as_deref()
                    .ok_or_else(|| CorpusError::Config(format!("{id}: missing target_path")))?;
                Box::new(read_paired_bitext(open(&spec.path)?, open(target)?, id))
            };
            let mut ex = extract_bitext_side(pairs, side, id);
            for rec in ex.by_ref() {
                let rec = rec?;
                ingest.bytes += rec.text.len() as u64;
                sink(rec)?;
            }
            ingest.lines_in = ex.pairs_seen();
            if ex.skipped() > 0 {
                ingest.rejects.insert("Empty".into(), ex.skipped());
            }
        }
    }
    ingest.lines_out = filter.lines_in;
    finish(out, &staged)?;
    finish(rej, &rejects)?;
    Ok(SourceResult {
        ingest,
        filter,
        staged,
        rejects,
    })
}

#[cfg(feature = "parallel")]
fn run_sources(cfg: &PipelineConfig, filters: &FilterSet, staging: &Path) -> Vec<Result<SourceResult>> {
    use rayon::prelude::*;
    let work = || {
        cfg.sources
            .par_iter()
            .enumerate()
            .map(|(i, s)| ingest_and_filter(s, filters, staging, i))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(cfg.workers.max(1)).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_sources(cfg: &PipelineConfig, filters: &FilterSet, staging: &Path) -> Vec<Result<SourceResult>> {
    cfg.sources
        .iter()
        .enumerate()
        .map(|(i, s)| ingest_and_filter(s, filters, staging, i))
        .collect()
}

struct Staging {
    path: PathBuf,
    keep: bool,
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.keep {
            let _ = fs::remove_dir_all(&self.path);
        }
    }
}

fn tagged(stage: &'static str) -> impl Fn(CorpusError) -> CorpusError {
    move |e| e.in_stage(stage)
}

/// Runs the whole build. Prior outputs in `output_dir` survive any failure.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineStats> {
    let started = Instant::now();
    let problems = validate_config(cfg);
    if !problems.is_empty() {
        return Err(CorpusError::Config(problems.join("; ")));
    }
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CorpusError::io(&cfg.output_dir, e))?;
    let staging = Staging {
        path: cfg.output_dir.join(format!(".staging-{}", std::process::id())),
        keep: false,
    };
    if staging.path.exists() {
        fs::remove_dir_all(&staging.path).map_err(|e| CorpusError::io(&staging.path, e))?;
    }
    fs::create_dir_all(&staging.path).map_err(|e| CorpusError::io(&staging.path, e))?;
    let stage_dir = staging.path.as_path();

    // ingest + filter, one worker per source
    let filters = FilterSet::new(cfg.filter.clone());
    let mut per_source = Vec::with_capacity(cfg.sources.len());
    for r in run_sources(cfg, &filters, stage_dir) {
        per_source.push(r.map_err(tagged("ingest/filter"))?);
    }
    let mut stats = PipelineStats {
        sources: cfg
            .sources
            .iter()
            .zip(&per_source)
            .map(|(s, r)| SourceStats {
                source_id: s.source_id.clone(),
                stages: BTreeMap::from([(Stage::Ingest, r.ingest.clone()), (Stage::Filter, r.filter.clone())]),
            })
            .collect(),
        wall_time: Duration::ZERO,
    };
    let slot: HashMap<String, usize> = cfg
        .sources
        .iter()
        .enumerate()
        .map(|(i, s)| (s.source_id.clone(), i))
        .collect();

    let rejects_path = stage_dir.join(outputs::REJECTS);
    let mut rejects = create(&rejects_path)?;
    for r in &per_source {
        let mut src = open(&r.rejects)?;
        std::io::copy(&mut src, &mut rejects).map_err(|e| CorpusError::io(&rejects_path, e))?;
    }
    finish(rejects, &rejects_path)?;

    // global dedup in source order
    let deduped = stage_dir.join("deduped.tsv");
    let mut dedup_stats = vec![StageStats::default(); cfg.sources.len()];
    for (d, r) in dedup_stats.iter_mut().zip(&per_source) {
        d.lines_in = r.filter.lines_out;
    }
    {
        let mut out = create(&deduped)?;
        let mut keep = |rec: SentenceRecord| -> Result<()> {
            let d = &mut dedup_stats[slot[&*rec.source_id]];
            d.lines_out += 1;
            d.bytes += rec.text.len() as u64;
            write_line(&mut out, &deduped, &stage_line(&rec))
        };
        let staged: Vec<PathBuf> = per_source.iter().map(|r| r.staged.clone()).collect();
        let counts: DedupCounts = if cfg.dedup.external_sort {
            let tmp = cfg.dedup.tmp_dir.clone().unwrap_or_else(|| stage_dir.to_path_buf());
            let ext =
                ExternalDedup::new(tmp).chunk_keys(cfg.dedup.chunk_keys.unwrap_or(ExternalDedup::DEFAULT_CHUNK_KEYS));
            ext.run(
                || {
                    let readers = staged.iter().map(|p| read_staged(p)).collect::<Result<Vec<_>>>()?;
                    Ok(readers.into_iter().flatten())
                },
                &mut keep,
            )
        } else {
            let mut deduper = Deduper::new();
            for p in &staged {
                for rec in read_staged(p)? {
                    let rec = rec?;
                    if deduper.admit(&rec.text) {
                        keep(rec)?;
                    }
                }
            }
            Ok(deduper.counts())
        }
        .map_err(tagged("dedup"))?;
        finish(out, &deduped)?;
        debug_assert_eq!(counts.kept, dedup_stats.iter().map(|d| d.lines_out).sum::<u64>());
    }
    for (d, s) in dedup_stats.iter_mut().zip(stats.sources.iter_mut()) {
        d.duplicates_dropped = d.lines_in - d.lines_out;
        s.stages.insert(Stage::Dedup, d.clone());
    }

    // corpus (and optional split)
    let corpus_path = stage_dir.join(outputs::CORPUS);
    let mut corpus = create(&corpus_path)?;
    let split_cfg = cfg.split_config();
    let mut tokenizer_input = corpus_path.clone();
    if let (Some(split_cfg), Some(section)) = (&split_cfg, &cfg.split) {
        let in_scope: Option<HashSet<&str>> = section.sources.as_ref().map(|v| v.iter().map(String::as_str).collect());
        let applies = |id: &str| in_scope.as_ref().is_none_or(|s| s.contains(id));
        let mut keys = Vec::new();
        for rec in read_staged(&deduped)? {
            let rec = rec?;
            if applies(&rec.source_id) {
                keys.push(UnitKey::of(&rec, split_cfg.unit));
            }
        }
        let chosen = assign_units(keys, split_cfg, cfg.workers);

        let a_path = stage_dir.join(outputs::SUBSET_A);
        let b_path = stage_dir.join(outputs::SUBSET_B);
        let (mut a, mut b) = (create(&a_path)?, create(&b_path)?);
        let mut last_doc: [Option<(Arc<str>, u64)>; 2] = [None, None];
        let separate = split_cfg.unit == SplitUnit::Document;
        let mut split_stats = vec![StageStats::default(); cfg.sources.len()];
        for rec in read_staged(&deduped)? {
            let rec = rec?;
            write_line(&mut corpus, &corpus_path, &rec.text)?;
            let to_a = !applies(&rec.source_id) || chosen.contains(&UnitKey::of(&rec, split_cfg.unit));
            let side = if to_a { 0 } else { 1 };
            let st = &mut split_stats[slot[&*rec.source_id]];
            st.lines_in += 1;
            st.lines_out += 1;
            st.bytes += rec.text.len() as u64;
            *if to_a {
                st.subset_a.get_or_insert(0)
            } else {
                st.subset_b.get_or_insert(0)
            } += 1;
            let (w, p) = if to_a { (&mut a, &a_path) } else { (&mut b, &b_path) };
            let doc = (rec.source_id.clone(), rec.doc_no);
            if separate && last_doc[side].as_ref().is_some_and(|d| *d != doc) {
                write_line(w, p, "")?;
            }
            last_doc[side] = Some(doc);
            write_line(w, p, &rec.text)?;
        }
        finish(a, &a_path)?;
        finish(b, &b_path)?;
        for (st, s) in split_stats.iter_mut().zip(stats.sources.iter_mut()) {
            st.subset_a.get_or_insert(0);
            st.subset_b.get_or_insert(0);
            s.stages.insert(Stage::Split, st.clone());
        }
        tokenizer_input = a_path;
    } else {
        for rec in read_staged(&deduped)? {
            write_line(&mut corpus, &corpus_path, &rec?.text)?;
        }
    }
    finish(corpus, &corpus_path)?;

    if let Some(tok_cfg) = &cfg.tokenizer {
        let mut counts = WordCounts::new();
        for line in open(&tokenizer_input)?.lines() {
            counts.add_text(&line.map_err(|e| CorpusError::io(&tokenizer_input, e))?);
        }
        let model = learn_bpe_from_counts(&counts, tok_cfg).map_err(tagged("train-bpe"))?;
        model.save(&stage_dir.join(outputs::TOKENIZER_DIR))?;
    }

    let report = report_stats(&stats).map_err(tagged("stats"))?;
    let stats_path = stage_dir.join(outputs::STATS);
    fs::write(&stats_path, &report.jsonl).map_err(|e| CorpusError::io(&stats_path, e))?;

    // publish
    let mut names = vec![outputs::CORPUS, outputs::REJECTS, outputs::STATS];
    if split_cfg.is_some() {
        names.extend([outputs::SUBSET_A, outputs::SUBSET_B]);
    }
    if cfg.tokenizer.is_some() {
        names.push(outputs::TOKENIZER_DIR);
    }
    for name in names {
        let from = stage_dir.join(name);
        let to = cfg.output_dir.join(name);
        if to.is_dir() {
            fs::remove_dir_all(&to).map_err(|e| CorpusError::io(&to, e))?;
        }
        fs::rename(&from, &to).map_err(|e| CorpusError::io(&to, e))?;
    }
    drop(staging);

    stats.wall_time = started.elapsed();
    Ok(stats)
}
