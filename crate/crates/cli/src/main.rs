mod commands;
mod extents;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use liteseg::graph::FlopConvention;

use extents::Extents;

#[derive(Debug, Parser)]
#[command(name = "liteseg", version, about = "Build, cost, run and toy-train LiteSeg segmentation networks")]
struct Cli {
    /// Model configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Weights file in LSW format. Random initialization when absent.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-layer shapes, parameters and FLOPs with totals.
    Summarize {
        #[arg(long, default_value = "512x1024")]
        input: Extents,
        #[arg(long, default_value = "mac")]
        convention: FlopConvention,
    },
    /// Per-layer and total GFLOPs.
    Flops {
        #[arg(long, default_value = "512x1024")]
        input: Extents,
        #[arg(long, default_value = "mac")]
        convention: FlopConvention,
        /// Emit CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
        /// Print published GFLOPs beside the computed ones.
        #[arg(long)]
        compare_paper: bool,
    },
    /// Segment a PPM image into a PGM label map.
    Infer(InferArgs),
    /// Overfit the synthetic 3-class dataset and emit the loss history.
    TrainToy(TrainArgs),
    /// Time inference with burn-in and report FPS and latency percentiles.
    Bench {
        /// Input extents; repeat for several. Padded to a multiple of 32.
        #[arg(long = "input", default_values = ["360x640", "1024x2048"])]
        inputs: Vec<Extents>,
        #[arg(long, default_value_t = 200)]
        burn_in: usize,
        #[arg(long, default_value_t = 200)]
        runs: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Finite-difference check of end-to-end gradients.
    Gradcheck {
        #[arg(long, default_value_t = 32)]
        samples: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write a palette-colored PPM.
    #[arg(long)]
    color: Option<PathBuf>,
    /// `classid R G B` per line. Defaults to the Cityscapes colors.
    #[arg(long, requires = "color")]
    palette: Option<PathBuf>,
    /// Reflect-pad to a multiple of 32 and crop the result back.
    #[arg(long)]
    pad: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = liteseg::train::ToyConfig::EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    images: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Comma-separated `HxW` scales sampled once per epoch.
    #[arg(long, value_delimiter = ',')]
    multiscale: Vec<Extents>,
    /// Write the history CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    save_weights: Option<PathBuf>,
}

/// One-line failure printed as `error: <kind>: <detail>`.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub detail: String,
}

impl Failure {
    pub fn new(kind: &'static str, detail: impl Into<String>) -> Self {
        Failure {
            kind,
            detail: detail.into(),
        }
    }
}

impl From<liteseg::Error> for Failure {
    fn from(e: liteseg::Error) -> Self {
        use liteseg::Error as E;
        let detail = match &e {
            E::Usage(s) | E::Domain(s) | E::Load(s) | E::Format(s) | E::Unsupported(s) | E::InvalidShape(s) | E::Shape(s) => {
                s.clone()
            }
            E::Parse { line, detail } => format!("line {line}: {detail}"),
            E::Io(io) => io.to_string(),
            other => other.to_string(),
        };
        Failure::new(e.kind(), detail)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let ctx = commands::Context::load(cli.config.as_deref(), cli.weights, cli.seed)?;
    match cli.command {
        Command::Summarize { input, convention } => commands::summarize(&ctx, input, convention),
        Command::Flops {
            input,
            convention,
            csv,
            compare_paper,
        } => commands::flops(&ctx, input, convention, csv, compare_paper),
        Command::Infer(a) => commands::infer(&ctx, &a),
        Command::TrainToy(a) => commands::train_toy(&ctx, &a),
        Command::Bench {
            inputs,
            burn_in,
            runs,
            csv,
        } => commands::bench(&ctx, &inputs, burn_in, runs, csv.as_deref()),
        Command::Gradcheck { samples, batch, size } => commands::gradcheck(&ctx, samples, batch, size),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.kind, f.detail.replace('\n', " "));
            ExitCode::from(if f.kind == "usage" { 2 } else { 1 })
        }
    }
}
