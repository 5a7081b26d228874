use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(
    name = "filcorpus",
    version,
    about = "Build and clean low-resource pretraining corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Plain,
    Tsv,
    Paired,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Source,
    Target,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitArg {
    Line,
    Document,
}

#[derive(Clone, Copy, ValueEnum)]
enum PremiseArg {
    Earlier,
    Later,
}

#[derive(Subcommand)]
enum Command {
    /// Read a plain or bitext corpus and write one sentence per line.
    Ingest {
        #[arg(long, value_enum, default_value = "plain")]
        format: Format,
        #[arg(long, value_enum, default_value = "target")]
        side: SideArg,
        #[arg(long = "in")]
        input: PathBuf,
        /// Target-language file for `--format paired`.
        #[arg(long)]
        target_in: Option<PathBuf>,
        /// Defaults to the input file name.
        #[arg(long)]
        source_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the five quality filters.
    Filter {
        /// Flat TOML file with FilterConfig keys; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Audit file of `reason<TAB>source:line<TAB>text` lines.
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
    /// Keep the first occurrence of every distinct line.
    Dedup {
        #[arg(long = "in", num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        external_sort: bool,
        #[arg(long, requires = "external_sort")]
        tmp: Option<PathBuf>,
        #[arg(long, default_value_t = 1 << 20)]
        chunk_keys: usize,
    },
    /// Partition a corpus into two subsets by seeded hash quota.
    Split {
        #[arg(long = "in", num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        ratio: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "document")]
        unit: UnitArg,
        #[arg(long)]
        out_a: PathBuf,
        #[arg(long)]
        out_b: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Learn a BPE vocabulary and write merges.txt / vocab.txt.
    TrainBpe {
        #[arg(long = "in", num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 32_000)]
        vocab_size: usize,
        #[arg(long, default_value_t = 1.0)]
        coverage: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode lines to space-separated ids (or decode with --decode).
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Extra atomic tokens appended to the vocabulary before encoding.
        #[arg(long, value_delimiter = ',')]
        add_special: Vec<String>,
        #[arg(long)]
        decode: bool,
    },
    /// Normalize a `text<TAB>label` tweet file.
    PrepTweets {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pack five binary label columns into one integer in 0..=31.
    EncodeLabels {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate entailment/contradiction pairs from blank-line separated articles.
    MakeNli {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "earlier")]
        premise: PremiseArg,
    },
    /// Run the full pipeline from a TOML config.
    Build {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `workers` in the config.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Check and summarise a stats.jsonl file.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
