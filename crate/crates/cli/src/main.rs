mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Ctx;
use config::{split_overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] dcbm::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Core(e) => match e.class() {
                dcbm::ErrorClass::Numeric => 4,
                _ => 3,
            },
        }
    }
}

/// Data-efficient concept bottleneck models over precomputed embeddings.
///
/// Any configuration key can be overridden as `--section.key value`.
#[derive(Parser)]
#[command(name = "dcbm", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the report as JSON instead of a table.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground-truth concepts.
    Synth,
    /// Build the concept bank from proposal embeddings.
    Cluster,
    /// Fit PCA and project embedding files into the reduced space.
    Pca {
        /// Matrix to fit on; defaults to the proposals.
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Files to project; each is written as `<stem>.pca.emb`.
        inputs: Vec<PathBuf>,
    },
    /// Train the sparse concept-to-class layer.
    Train,
    /// Predict classes for an image embedding file.
    Predict {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Show the concepts contributing most to one prediction.
    Explain {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Row id or row index.
        #[arg(long)]
        row: String,
        /// Class to explain; defaults to the predicted class.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Name each concept after its nearest vocabulary embedding.
    Name {
        /// Output bank; defaults to overwriting the input bank.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drop concepts similar to a query embedding.
    Remove {
        /// Embedding file; every row is a query.
        #[arg(long, conflicts_with = "concept")]
        query: Option<PathBuf>,
        /// Use an existing concept's centroid as the query.
        #[arg(long)]
        concept: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test accuracy, per-class accuracy and weight sparsity.
    Eval,
    /// Aggregate localisation scores from a JSON-lines sample file.
    Gpg { samples: PathBuf },
    /// Normalised mutual information between two cluster assignments.
    Nmi { a: PathBuf, b: PathBuf },
    /// Check embedding or sample files for problems.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("DCBM_NUM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("DCBM_NUM_THREADS={raw:?}: expected a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run() -> Result<ExitCode, CliError> {
    let (args, overrides) = split_overrides(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    init_threads()?;
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let ctx = Ctx { cfg, json: cli.json };
    match cli.command {
        Command::Synth => commands::synth(&ctx)?,
        Command::Cluster => commands::cluster(&ctx)?,
        Command::Pca { fit, inputs } => commands::pca(&ctx, fit, &inputs)?,
        Command::Train => commands::train(&ctx)?,
        Command::Predict { input } => commands::predict(&ctx, input)?,
        Command::Explain { input, row, class, top } => commands::explain(&ctx, input, &row, class, top)?,
        Command::Name { out } => commands::name(&ctx, out)?,
        Command::Remove { query, concept, tau, out } => commands::remove(&ctx, query, concept, tau, out)?,
        Command::Eval => commands::eval(&ctx)?,
        Command::Gpg { samples } => commands::gpg(&ctx, &samples)?,
        Command::Nmi { a, b } => commands::nmi(&ctx, &a, &b)?,
        Command::Validate { files } => {
            if !commands::validate(&ctx, &files)? {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("dcbm: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
