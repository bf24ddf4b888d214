use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fixbi::data::{load_csv, save_csv, BlobsShift, MoonsShift};
use fixbi::harness::{classwise_accuracy, parse_seed_range, run_config, run_seeds, TrainConfig};
use fixbi::models::{accuracy, ensemble_predict, ClassifierModel};

#[derive(Parser)]
#[command(name = "fixbi", version, about = "Dual-model domain adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run baseline pretraining and dual-model training from a config file.
    Run {
        config: PathBuf,
        out_dir: PathBuf,
        /// Inclusive seed range such as `1..5`; each seed gets its own subdirectory.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Evaluate a checkpoint (or a two-model ensemble) on a labeled CSV.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Second checkpoint; predictions become the ensemble of both.
        #[arg(long)]
        with: Option<PathBuf>,
    },
    /// Generate a synthetic source/target pair.
    Gen {
        generator: Generator,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Source CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Target CSV path; defaults to `<out stem>-target.csv`.
        #[arg(long)]
        target_out: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 50.0)]
        rotation: f64,
        /// Comma-separated target shift, one value per leading dimension.
        #[arg(long, value_delimiter = ',')]
        translation: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    Blobs,
    Moons,
}

fn default_target_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    out.with_file_name(format!("{stem}-target.csv"))
}

fn run(config: &Path, out_dir: &Path, seeds: Option<&str>) -> Result<()> {
    let cfg = TrainConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    match seeds {
        None => {
            let exp = run_config(&cfg, out_dir)?;
            println!("{}", exp.summary.to_json().trim_end());
        }
        Some(range) => {
            let mut failed = false;
            for (seed, result) in run_seeds(&cfg, parse_seed_range(range)?, out_dir) {
                match result {
                    Ok(s) => println!("seed {seed}: target_acc {}", s.target_acc),
                    Err(e) => {
                        eprintln!("seed {seed}: {e}");
                        failed = true;
                    }
                }
            }
            if failed {
                bail!("one or more seeds failed");
            }
        }
    }
    Ok(())
}

fn eval(checkpoint: &Path, dataset: &Path, with: Option<&Path>) -> Result<()> {
    let model = ClassifierModel::load(checkpoint)?;
    let data = load_csv(dataset)?;
    let Some(truth) = data.eval_labels() else {
        bail!("{} has no labels to evaluate against", dataset.display());
    };
    let pred = match with {
        Some(other) => ensemble_predict(&model, &ClassifierModel::load(other)?, data.features())?,
        None => model.predict(data.features())?,
    };
    println!("accuracy {}", accuracy(&pred, &truth));
    for (c, acc) in classwise_accuracy(&pred, &truth, data.num_classes())?
        .iter()
        .enumerate()
    {
        match acc {
            Some(a) => println!("class {c} {a}"),
            None => println!("class {c} undefined"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out_dir, seeds } => run(&config, &out_dir, seeds.as_deref()),
        Command::Eval {
            checkpoint,
            dataset,
            with,
        } => eval(&checkpoint, &dataset, with.as_deref()),
        Command::Gen {
            generator,
            seed,
            out,
            target_out,
            classes,
            per_class,
            dim,
            rotation,
            translation,
            noise,
        } => (|| {
            let (source, target) = match generator {
                Generator::Blobs => BlobsShift {
                    num_classes: classes,
                    per_class,
                    dim,
                    rotation_deg: rotation,
                    translation,
                    noise_sigma: noise,
                    seed,
                }
                .generate()?,
                Generator::Moons => MoonsShift {
                    per_class,
                    rotation_deg: rotation,
                    noise_sigma: noise,
                    seed,
                }
                .generate()?,
            };
            let target_out = target_out.unwrap_or_else(|| default_target_path(&out));
            save_csv(&source, &out)?;
            save_csv(&target, &target_out)?;
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
