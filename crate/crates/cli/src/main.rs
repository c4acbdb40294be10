mod commands;
mod config;
mod layout;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{CategoryModels, CategorySel, Fuser, Stage};
use config::{load_strategy, load_taxonomy, Loaded};

/// Category-wise semantic segmentation toolkit.
#[derive(Parser)]
#[command(name = "dec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a run config or a strategy against a taxonomy.
    Validate {
        #[arg(long, conflicts_with_all = ["taxonomy", "strategy"])]
        config: Option<PathBuf>,
        /// `cityscapes19` or a taxonomy TOML file.
        #[arg(long)]
        taxonomy: Option<String>,
        /// Preset name or strategy TOML file.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Generate a synthetic labeled dataset.
    Toygen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// `source` or `target` appearance.
        #[arg(long, default_value = "source")]
        domain: String,
        #[arg(long, env = config::SEED_ENV)]
        seed: Option<u64>,
        /// Scene spec TOML; flags override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_parser = parse_size)]
        size: Option<(u32, u32)>,
        #[arg(long, default_value = "cityscapes19")]
        taxonomy: String,
    },
    /// Write per-category label sets for every source dataset.
    Remap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "all")]
        category: CategorySel,
    },
    /// Train one stage of the pipeline.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// category-sl, category-uda, ensemble, monolithic-sl, monolithic-uda or pipeline.
        #[arg(long)]
        stage: Stage,
        #[arg(long, default_value = "all")]
        category: CategorySel,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Predict global label maps.
    Infer {
        #[arg(long)]
        config: PathBuf,
        /// Dataset root or directory of PNG images.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "ensemble")]
        fuser: Fuser,
        #[arg(long, value_enum, default_value = "uda")]
        models: CategoryModels,
        /// Also write colour renderings under `out/color`.
        #[arg(long)]
        color: bool,
        /// Fuse precomputed category masks instead of running category models.
        #[arg(long)]
        masks_from_dir: Option<PathBuf>,
    },
    /// Score predicted label maps against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Dataset root or directory of label PNGs.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "cityscapes19")]
        taxonomy: String,
        #[arg(long, default_value = "run")]
        run: String,
    },
    /// Measure parameter counts and forward throughput.
    Bench {
        #[arg(long, default_value = "cityscapes19")]
        taxonomy: String,
        #[arg(long, default_value = "B+V+H+T")]
        strategy: String,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let parse = |v: &str| v.parse::<u32>().map_err(|_| format!("bad size `{s}`"));
    Ok((parse(w)?, parse(h)?))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate {
            config,
            taxonomy,
            strategy,
        } => commands::validate(config.as_deref(), taxonomy.as_deref(), strategy.as_deref()),
        Command::Toygen {
            out,
            n,
            domain,
            seed,
            spec,
            size,
            taxonomy,
        } => commands::toygen(commands::ToygenArgs {
            out,
            n,
            domain,
            seed,
            spec,
            size,
            taxonomy,
        }),
        Command::Remap { config, category } => commands::remap(&Loaded::open(&config)?, category),
        Command::Train {
            config,
            stage,
            category,
            iterations,
        } => commands::train(&Loaded::open(&config)?, stage, category, iterations),
        Command::Infer {
            config,
            images,
            out,
            fuser,
            models,
            color,
            masks_from_dir,
        } => commands::infer(
            &Loaded::open(&config)?,
            commands::InferArgs {
                images,
                out,
                fuser,
                models,
                color,
                masks_from_dir,
            },
        ),
        Command::Eval {
            pred,
            gt,
            out,
            taxonomy,
            run,
        } => commands::eval(&pred, &gt, &out, &load_taxonomy(&taxonomy, Path::new("."))?, &run),
        Command::Bench {
            taxonomy,
            strategy,
            height,
            width,
            batch,
            reps,
            out,
        } => {
            let tax = load_taxonomy(&taxonomy, Path::new("."))?;
            let strategy = load_strategy(&strategy, Path::new("."), &tax)?;
            commands::bench_cmd(
                &tax,
                &strategy,
                commands::BenchArgs {
                    height,
                    width,
                    batch,
                    repetitions: reps,
                    out,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
