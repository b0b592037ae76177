use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod bench;
mod commands;
mod common;

#[derive(Parser, Debug)]
#[command(name = "patchbank", version, about = "Few-shot and zero-shot patch nearest-neighbor anomaly detection")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "PATCHBANK_THREADS")]
    threads: Option<usize>,

    /// JSON pipeline config; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct PipelineArgs {
    /// toy | file:<dir> | extern:<command>
    #[arg(long)]
    pub backbone: Option<String>,
    /// Target length of the smaller image edge (multiple of 14).
    #[arg(long)]
    pub resolution: Option<u32>,
    /// agnostic | informed | off
    #[arg(long)]
    pub rotations: Option<String>,
    /// Comma-separated clockwise angles in degrees.
    #[arg(long, value_delimiter = ',')]
    pub angles: Option<Vec<f64>>,
    /// auto | on | off
    #[arg(long)]
    pub masking: Option<String>,
    /// mean-top:<fraction> | max-patch | max-map
    #[arg(long)]
    pub agg: Option<String>,
    /// Gaussian sigma for anomaly maps, in pixels.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Fit the masking direction on the references rather than per image.
    #[arg(long)]
    pub shared_pca: bool,
    /// Drop background patches of the references too before building the bank.
    #[arg(long)]
    pub mask_references: bool,
    /// Treat these categories as textures (never masked).
    #[arg(long = "texture", value_name = "CATEGORY")]
    pub textures: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a memory bank from nominal reference images.
    BuildBank(commands::BuildBankArgs),
    /// Score images against a memory bank.
    Score(commands::ScoreArgs),
    /// Run the k-shot protocol over an MVTec-AD or VisA style dataset.
    Eval(commands::EvalArgs),
    /// Zero-shot scoring of a batch by mutual comparison.
    Batched(commands::BatchedArgs),
    /// Measure bank-build time and per-sample latency.
    Bench(bench::BenchArgs),
    /// Run the masking test on one reference image.
    MaskTest(commands::MaskTestArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<patchbank::Error>() {
            return match e.kind() {
                patchbank::ErrorKind::Config => 2,
                patchbank::ErrorKind::Io => 3,
                patchbank::ErrorKind::DataFormat => 4,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::BuildBank(a) => commands::build_bank(a, config),
        Command::Score(a) => commands::score(a, config),
        Command::Eval(a) => commands::eval(a, config),
        Command::Batched(a) => commands::batched(a, config),
        Command::Bench(a) => bench::run(a, config),
        Command::MaskTest(a) => commands::mask_test(a, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
