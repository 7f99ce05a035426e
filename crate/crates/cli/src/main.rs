//! Command-line interface: synthesize datasets, corrupt labels, train,
//! evaluate and report.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use noisyseg::dataset::{corrupt_dataset, write_dataset};
use noisyseg::morph::JedSpec;
use noisyseg::synth::SynthSpec;
use noisyseg::train::{
    evaluate_checkpoint, histogram_report, runs_report, train, EvalSummary, TrainConfig,
};

#[derive(Parser)]
#[command(name = "noisyseg", about = "Segmentation with noisy labels: data synthesis, label corruption, dual-stream training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic segmentation dataset.
    Synth(SynthArgs),
    /// Corrupt a dataset's training labels with erosion/dilation noise.
    Corrupt(CorruptArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a dataset's clean labels.
    Eval(EvalArgs),
    /// Summarize datasets or completed runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of images.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Image height and width.
    #[arg(long, default_value_t = 128)]
    hw: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability that a sample has no cup annotation.
    #[arg(long, default_value_t = 0.1)]
    cup_missing_prob: f64,
    /// Comma-separated target category fractions (must sum to 1).
    #[arg(long)]
    fractions: Option<String>,
}

#[derive(Args)]
struct CorruptArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    kernel_min: usize,
    #[arg(long, default_value_t = 5)]
    kernel_max: usize,
    #[arg(long, default_value_t = 3)]
    iter_min: usize,
    #[arg(long, default_value_t = 8)]
    iter_max: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's ablation mode.
    #[arg(long)]
    ablation: Option<String>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's data directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 6)]
    batch: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of run outputs to aggregate.
    #[arg(long)]
    runs: Option<PathBuf>,
    /// Emit the pre/post balanced-sampling category histogram.
    #[arg(long, default_value_t = false)]
    histogram: bool,
    /// Dataset directory (required with --histogram).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn print_summary(summary: &EvalSummary) {
    println!("{:<10} {:>8} {:>8}", "category", "IoU %", "Dice %");
    for s in &summary.per_category {
        println!("{:<10} {:>8.2} {:>8.2}", s.category, s.iou * 100.0, s.dice * 100.0);
    }
    println!(
        "{:<10} {:>8.2} {:>8.2}",
        "fg avg",
        summary.foreground_iou * 100.0,
        summary.foreground_dice * 100.0
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let mut spec = SynthSpec::new(args.n, args.hw, args.hw, args.seed);
            spec.cup_missing_prob = args.cup_missing_prob;
            if let Some(f) = &args.fractions {
                spec.target_fractions = f
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().context("bad fraction"))
                    .collect::<Result<_>>()?;
                spec.num_categories = spec.target_fractions.len();
            }
            write_dataset(&spec, &args.out)?;
            println!("wrote {} images of {}x{} to {}", args.n, args.hw, args.hw, args.out.display());
        }
        Command::Corrupt(args) => {
            let spec = JedSpec::new(args.kernel_min, args.kernel_max, args.iter_min, args.iter_max, args.seed)?;
            let report = corrupt_dataset(&args.input, &args.out, &spec)?;
            println!(
                "corrupted {} label maps ({:.2}% of pixels changed, {} without foreground) into {}",
                report.num_images,
                report.changed_fraction * 100.0,
                report.num_no_foreground,
                args.out.display()
            );
        }
        Command::Train(args) => {
            let text = std::fs::read_to_string(&args.config)
                .with_context(|| format!("reading {}", args.config.display()))?;
            let mut cfg = TrainConfig::parse(&text)?;
            if let Some(mode) = &args.ablation {
                cfg.set("ablation", mode).map_err(anyhow::Error::msg)?;
            }
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if let Some(data) = args.data {
                cfg.data_dir = data;
            }
            if let Some(out) = args.out {
                cfg.out_dir = out;
            }
            let outcome = train(&cfg)?;
            println!("run complete: {} epochs, outputs in {}", outcome.epochs_run, outcome.out_dir.display());
            print_summary(&outcome.final_eval);
        }
        Command::Eval(args) => {
            let summary = evaluate_checkpoint(&args.ckpt, &args.data, args.batch)?;
            print_summary(&summary);
        }
        Command::Report(args) => {
            if args.histogram {
                let data = args.data.context("--histogram needs --data DIR")?;
                print!("{}", histogram_report(&data, args.rho, args.seed)?);
            } else if let Some(runs) = &args.runs {
                print!("{}", runs_report(runs)?);
            } else {
                bail!("report needs --runs DIR or --histogram --data DIR");
            }
        }
    }
    Ok(())
}

fn main() {
    noisyseg::train::init_threads_from_env();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let msg = format!("{e:#}").replace('\n', "; ");
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}
