use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use filcorpus::bench::{
    encode_dengue_labels, make_nli_pairs, parse_articles, preprocess_tweet, DengueLabelVector, PremiseSide,
    TweetPrepConfig,
};
use filcorpus::bpe::{learn_bpe_from_counts, BpeModel, TokenizerConfig, WordCounts};
use filcorpus::dedup::{dedup_stream, ExternalDedup};
use filcorpus::filters::{FilterConfig, FilterSet, FilterVerdict, RejectReason};
use filcorpus::ingest::{
    extract_bitext_side, read_paired_bitext, read_plain_corpus, read_tsv_bitext, split_corpus_with_workers, Side,
    SplitConfig, SplitUnit,
};
use filcorpus::pipeline::{report_stats, run_pipeline, PipelineConfig, PipelineStats};
use filcorpus::SentenceRecord;

use crate::{Command, Format, PremiseArg, SideArg, UnitArg};

pub fn run(cmd: Command) -> Result<()> {
    let stage = stage_name(&cmd);
    dispatch(cmd).with_context(|| format!("[{stage}]"))
}

fn stage_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Ingest { .. } => "ingest",
        Command::Filter { .. } => "filter",
        Command::Dedup { .. } => "dedup",
        Command::Split { .. } => "split",
        Command::TrainBpe { .. } => "train-bpe",
        Command::Encode { .. } => "encode",
        Command::PrepTweets { .. } => "prep-tweets",
        Command::EncodeLabels { .. } => "encode-labels",
        Command::MakeNli { .. } => "make-nli",
        Command::Build { .. } => "build",
        Command::Stats { .. } => "stats",
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn source_id_of(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn read_records(paths: &[PathBuf]) -> Result<Vec<SentenceRecord>> {
    let mut out = Vec::new();
    for p in paths {
        for rec in read_plain_corpus(open(p)?, &p.display().to_string()) {
            out.push(rec?);
        }
    }
    Ok(out)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest {
            format,
            side,
            input,
            target_in,
            source_id,
            out,
        } => ingest(format, side, &input, target_in.as_deref(), source_id, &out),
        Command::Filter {
            config,
            input,
            out,
            rejects,
        } => filter(config.as_deref(), &input, &out, rejects.as_deref()),
        Command::Dedup {
            input,
            out,
            external_sort,
            tmp,
            chunk_keys,
        } => dedup(
            &input,
            &out,
            external_sort.then(|| tmp.unwrap_or_else(std::env::temp_dir)),
            chunk_keys,
        ),
        Command::Split {
            input,
            ratio,
            seed,
            unit,
            out_a,
            out_b,
            workers,
        } => {
            let unit = match unit {
                UnitArg::Line => SplitUnit::Line,
                UnitArg::Document => SplitUnit::Document,
            };
            split(&input, SplitConfig::new(ratio, seed, unit)?, &out_a, &out_b, workers)
        }
        Command::TrainBpe {
            input,
            vocab_size,
            coverage,
            out,
        } => train_bpe(&input, vocab_size, coverage, &out),
        Command::Encode {
            model,
            input,
            out,
            add_special,
            decode,
        } => encode(&model, &input, &out, &add_special, decode),
        Command::PrepTweets { input, out } => prep_tweets(&input, &out),
        Command::EncodeLabels { input, out } => encode_labels(&input, &out),
        Command::MakeNli {
            input,
            seed,
            out,
            premise,
        } => {
            let premise = match premise {
                PremiseArg::Earlier => PremiseSide::Earlier,
                PremiseArg::Later => PremiseSide::Later,
            };
            make_nli(&input, seed, &out, premise)
        }
        Command::Build { config, workers } => build(&config, workers),
        Command::Stats { input } => stats(&input),
    }
}

fn ingest(
    format: Format,
    side: SideArg,
    input: &Path,
    target_in: Option<&Path>,
    source_id: Option<String>,
    out: &Path,
) -> Result<()> {
    let id = source_id.unwrap_or_else(|| source_id_of(input));
    let side = match side {
        SideArg::Source => Side::Source,
        SideArg::Target => Side::Target,
    };
    let mut w = create(out)?;
    let (read, kept, skipped) = match format {
        Format::Plain => {
            let mut rd = read_plain_corpus(open(input)?, &id);
            let mut kept = 0u64;
            for rec in rd.by_ref() {
                writeln!(w, "{}", rec?.text)?;
                kept += 1;
            }
            (rd.lines_read(), kept, rd.skipped())
        }
        Format::Tsv | Format::Paired => {
            let pairs: Box<dyn Iterator<Item = filcorpus::Result<_>>> = match format {
                Format::Tsv => Box::new(read_tsv_bitext(open(input)?, &id)),
                _ => {
                    let target = target_in.ok_or_else(|| anyhow!("--format paired needs --target-in"))?;
                    Box::new(read_paired_bitext(open(input)?, open(target)?, &id))
                }
            };
            let mut ex = extract_bitext_side(pairs, side, &id);
            let mut kept = 0u64;
            for rec in ex.by_ref() {
                writeln!(w, "{}", rec?.text)?;
                kept += 1;
            }
            (ex.pairs_seen(), kept, ex.skipped())
        }
    };
    w.flush()?;
    println!("read={read} kept={kept} skipped={skipped}");
    Ok(())
}

fn filter(config: Option<&Path>, input: &Path, out: &Path, rejects: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(p) => FilterConfig::from_toml(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("in {}", p.display()))?,
        None => FilterConfig::default(),
    };
    let set = FilterSet::new(cfg);
    let mut w = create(out)?;
    let mut rej = rejects.map(create).transpose()?;
    let mut counts = [0u64; 5];
    let mut kept = 0u64;
    for rec in read_plain_corpus(open(input)?, &source_id_of(input)) {
        let rec = rec?;
        match set.check(&rec.text) {
            FilterVerdict::Pass => {
                writeln!(w, "{}", rec.text)?;
                kept += 1;
            }
            FilterVerdict::Reject(reason) => {
                counts[reason as usize] += 1;
                if let Some(r) = rej.as_mut() {
                    writeln!(r, "{reason}\t{}:{}\t{}", rec.source_id, rec.line_no, rec.text)?;
                }
            }
        }
    }
    w.flush()?;
    if let Some(mut r) = rej {
        r.flush()?;
    }
    let detail: Vec<String> = RejectReason::ALL
        .iter()
        .map(|r| format!("{r}={}", counts[*r as usize]))
        .collect();
    println!("kept={kept} {}", detail.join(" "));
    Ok(())
}

fn dedup(inputs: &[PathBuf], out: &Path, external: Option<PathBuf>, chunk_keys: usize) -> Result<()> {
    let mut w = create(out)?;
    let counts = match external {
        Some(tmp) => ExternalDedup::new(tmp).chunk_keys(chunk_keys).run(
            || {
                let mut readers = Vec::new();
                for p in inputs {
                    let file = File::open(p).map_err(filcorpus::CorpusError::RawIo)?;
                    readers.push(read_plain_corpus(BufReader::new(file), &p.display().to_string()));
                }
                Ok(readers.into_iter().flatten())
            },
            |rec| writeln!(w, "{}", rec.text).map_err(Into::into),
        )?,
        None => {
            let mut stream = dedup_stream(read_records(inputs)?);
            for rec in stream.by_ref() {
                writeln!(w, "{}", rec.text)?;
            }
            stream.counts()
        }
    };
    w.flush()?;
    println!("{counts}");
    Ok(())
}

fn write_subset(path: &Path, records: &[SentenceRecord], separate_docs: bool) -> Result<()> {
    let mut w = create(path)?;
    let mut last: Option<(&str, u64)> = None;
    for r in records {
        let doc = (&*r.source_id, r.doc_no);
        if separate_docs && last.is_some_and(|d| d != doc) {
            writeln!(w)?;
        }
        last = Some(doc);
        writeln!(w, "{}", r.text)?;
    }
    w.flush()?;
    Ok(())
}

fn split(inputs: &[PathBuf], cfg: SplitConfig, out_a: &Path, out_b: &Path, workers: usize) -> Result<()> {
    let records = read_records(inputs)?;
    let (a, b) = split_corpus_with_workers(records, &cfg, workers);
    let docs = cfg.unit == SplitUnit::Document;
    write_subset(out_a, &a, docs)?;
    write_subset(out_b, &b, docs)?;
    println!("subset_a={} subset_b={}", a.len(), b.len());
    Ok(())
}

fn train_bpe(inputs: &[PathBuf], vocab_size: usize, coverage: f64, out: &Path) -> Result<()> {
    let cfg = TokenizerConfig {
        vocab_size,
        character_coverage: coverage,
        ..TokenizerConfig::default()
    };
    let mut counts = WordCounts::new();
    for p in inputs {
        for rec in read_plain_corpus(open(p)?, &p.display().to_string()) {
            counts.add_text(&rec?.text);
        }
    }
    let model = learn_bpe_from_counts(&counts, &cfg)?;
    model.save(out)?;
    println!(
        "vocab={} merges={} words={}",
        model.vocab_size(),
        model.merge_count(),
        counts.distinct_words()
    );
    Ok(())
}

fn encode(model_dir: &Path, input: &Path, out: &Path, extra: &[String], decode: bool) -> Result<()> {
    let mut model = BpeModel::load(model_dir)?;
    if !extra.is_empty() {
        model = model.add_special_tokens(extra)?;
    }
    let mut w = create(out)?;
    for (i, line) in open(input)?.lines().enumerate() {
        let line = line?;
        if decode {
            let ids = line
                .split_whitespace()
                .map(str::parse::<u32>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .with_context(|| format!("line {}: ids must be integers", i + 1))?;
            writeln!(w, "{}", model.decode(&ids).with_context(|| format!("line {}", i + 1))?)?;
        } else {
            let ids: Vec<String> = model.encode(&line).iter().map(u32::to_string).collect();
            writeln!(w, "{}", ids.join(" "))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn prep_tweets(input: &Path, out: &Path) -> Result<()> {
    let cfg = TweetPrepConfig::default();
    let mut w = create(out)?;
    let mut n = 0u64;
    for line in open(input)?.lines() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        match line.rsplit_once('\t') {
            Some((text, label)) => writeln!(w, "{}\t{label}", preprocess_tweet(text, &cfg))?,
            None => writeln!(w, "{}", preprocess_tweet(line, &cfg))?,
        }
        n += 1;
    }
    w.flush()?;
    println!("lines={n}");
    Ok(())
}

fn parse_flags(line: &str) -> Option<[bool; 5]> {
    let cells: Vec<&str> = line.split(',').map(str::trim).collect();
    let cells: [&str; 5] = cells.try_into().ok()?;
    let mut flags = [false; 5];
    for (f, c) in flags.iter_mut().zip(cells) {
        *f = match c {
            "0" => false,
            "1" => true,
            _ => return None,
        };
    }
    Some(flags)
}

fn encode_labels(input: &Path, out: &Path) -> Result<()> {
    let mut w = create(out)?;
    let mut n = 0u64;
    for (i, line) in open(input)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_flags(&line) {
            Some(flags) => {
                writeln!(w, "{}", encode_dengue_labels(DengueLabelVector(flags)))?;
                n += 1;
            }
            None if i == 0 => writeln!(w, "label")?,
            None => bail!("line {}: expected five comma-separated 0/1 values, got {line:?}", i + 1),
        }
    }
    w.flush()?;
    println!("rows={n}");
    Ok(())
}

fn make_nli(input: &Path, seed: u64, out: &Path, premise: PremiseSide) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let articles = parse_articles(&text);
    let result = make_nli_pairs(&articles, seed, premise);
    let mut w = create(out)?;
    writeln!(w, "premise\thypothesis\tlabel")?;
    let clean = |s: &str| s.replace('\t', " ");
    for p in &result.pairs {
        writeln!(w, "{}\t{}\t{}", clean(&p.premise), clean(&p.hypothesis), p.label)?;
    }
    w.flush()?;
    println!(
        "articles={} pairs={} skipped_articles={} unmatched={}",
        articles.len(),
        result.pairs.len(),
        result.skipped_articles,
        result.unmatched
    );
    if result.contradictions_impossible {
        eprintln!("warning: fewer than two usable articles; no contradiction pairs could be drawn");
    }
    Ok(())
}

fn build(config: &Path, workers: Option<usize>) -> Result<()> {
    let mut cfg = PipelineConfig::from_path(config)?;
    if let Some(n) = workers {
        cfg.workers = n;
    }
    let problems = filcorpus::pipeline::validate_config(&cfg);
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("config: {p}");
        }
        bail!("{} configuration problem(s) in {}", problems.len(), config.display());
    }
    let stats = run_pipeline(&cfg)?;
    print!("{}", report_stats(&stats)?.summary);
    println!("wall time: {:.2?}", stats.wall_time);
    Ok(())
}

fn stats(input: &Path) -> Result<()> {
    let doc = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let stats = PipelineStats::from_jsonl(&doc)?;
    print!("{}", report_stats(&stats)?.summary);
    Ok(())
}
