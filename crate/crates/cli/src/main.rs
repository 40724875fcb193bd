mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use swe_audit::EmbeddingFormat;

#[derive(Parser, Debug)]
#[command(name = "swe-audit", version, about = "Group-association audits for static word embeddings")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SWE_AUDIT_THREADS")]
    pub threads: Option<usize>,

    /// Storage precision for embedding components.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Top-k words by mean cosine to the target group.
    Scan(ScanArgs),
    /// SC-WEAT of one word against every reference group.
    Scweat(ScweatArgs),
    /// Words uniquely associated with the target against every reference.
    Unique(UniqueArgs),
    /// k-means over embedding vectors of a word list.
    Cluster(ClusterArgs),
    /// k-means over valence/arousal/dominance vectors of a word list.
    VadCluster(VadClusterArgs),
    /// Correlate trait ratings with embedding associations.
    Correlate(CorrelateArgs),
    /// Check a continuation corpus against a prompt set and decode profile.
    ValidateCorpus(ValidateArgs),
    /// Count codes per model over a coded continuation corpus.
    Tally(TallyArgs),
    /// Two-component PCA coordinates of a word list, for plotting.
    ExportPca(PcaArgs),
}

#[derive(Args, Debug)]
pub struct EmbeddingArgs {
    /// Embedding text file.
    #[arg(long)]
    pub embedding: PathBuf,
    #[arg(long, value_parser = parse_format)]
    pub format: EmbeddingFormat,
    /// Vector dimension, for glove-text files whose first token has a space.
    #[arg(long)]
    pub dim: Option<usize>,
}

fn parse_format(s: &str) -> Result<EmbeddingFormat, String> {
    s.parse().map_err(|e: swe_audit::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// TOML audit config (default: English age groups).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PermutationArgs {
    #[arg(long)]
    pub d_min: Option<f64>,
    #[arg(long)]
    pub p_max: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Permutations per test in sampled mode.
    #[arg(long)]
    pub n_samples: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Sampled,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Keep the target tokens in the ranking.
    #[arg(long)]
    pub no_exclude_target: bool,
    /// CSV `token,rank,s`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScweatArgs {
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub permutation: PermutationArgs,
    #[arg(long)]
    pub word: String,
    /// JSON results, one per reference group.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct UniqueArgs {
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub permutation: PermutationArgs,
    /// How many uniquely associated words to keep, by frequency rank.
    #[arg(long)]
    pub select: Option<usize>,
    /// CSV `token,rank,d_B1,p_B1,...` of the selected words.
    #[arg(long)]
    pub out: PathBuf,
    /// Same columns for every uniquely associated word.
    #[arg(long)]
    pub all_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct KArgs {
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Extra k-means runs per k; the lowest objective is kept.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub k: KArgs,
    /// Word list: one token per line, or a CSV with a `token` column.
    #[arg(long)]
    pub words: PathBuf,
    /// JSON cluster report.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV `token,cluster`.
    #[arg(long)]
    pub membership_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VadClusterArgs {
    /// TSV `term, valence, arousal, dominance`.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// TSV `from, to` spelling substitutions applied before lookup.
    #[arg(long)]
    pub substitutions: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub k: KArgs,
    #[arg(long)]
    pub words: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub membership_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// CSV `participant,trait1,...` with ratings 1 (most similar) to 5.
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long, value_enum, default_value_t = OrientationArg::Inverted)]
    pub orientation: OrientationArg,
    /// JSON alignment report.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV `trait,mean_rating,score,cosine`.
    #[arg(long)]
    pub table_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OrientationArg {
    Raw,
    Inverted,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// JSONL continuation corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Prompt JSON (default: the shipped English set).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// gpt2-xl, llama2-7b, distilgpt2-ne, or a JSON file of decode parameters.
    #[arg(long, default_value = "gpt2-xl")]
    pub profile: String,
    /// Exit nonzero when any deviation is found.
    #[arg(long)]
    pub strict: bool,
    /// JSON validation report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TallyArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// CSV `model_id,prompt_id,sample_index,code` merged onto the records.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// One row per (code, model) pair. This is the only layout and the flag
    /// is accepted for clarity.
    #[arg(long)]
    pub by_code: bool,
    /// Treat `Parent/Child` codes as subcodes.
    #[arg(long)]
    pub subcodes: bool,
    /// CSV `code,model_id,count,total,pct`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PcaArgs {
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    #[arg(long)]
    pub words: PathBuf,
    /// CSV `token,pc1,pc2`.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
