use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use lrl::harness::{self, train, RunConfig, SplitKind, SyntheticSpec};

#[derive(Parser)]
#[command(name = "lrl", about = "Point-cloud classifier with learnable local regions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Gen {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, value_enum, default_value = "off")]
        clutter: Toggle,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes metrics.csv, config.txt and model.ckpt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split of a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Defaults to the config.txt stored beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the all-off baseline and every grid entry, then compare.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write shifted centers and updated radii of one cloud.
    DumpRegions {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cloud: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(explicit: Option<PathBuf>, checkpoint: &std::path::Path) -> Result<RunConfig> {
    Ok(match explicit {
        Some(p) => RunConfig::load(&p).with_context(|| format!("reading {}", p.display()))?,
        None => train::config_beside(checkpoint)?,
    })
}

fn prepare(cfg: &RunConfig) -> Result<harness::Dataset> {
    let (dataset, warnings) = train::prepare_dataset(cfg)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(dataset)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen {
            classes,
            per_class,
            points,
            noise,
            clutter,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                classes,
                per_class,
                points,
                noise,
                clutter: matches!(clutter, Toggle::On),
            };
            let d = harness::generate_synthetic(&spec, seed)?;
            harness::save_dataset(&d, &out)?;
            println!("wrote {} clouds to {}", d.clouds.len(), out.display());
        }
        Command::Train { config, out } => {
            let mut cfg = RunConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            if out.is_some() {
                cfg.out = out;
            }
            let Some(dir) = cfg.out.clone() else {
                bail!("no output directory: pass --out or set `out` in the config");
            };
            let dataset = prepare(&cfg)?;
            let outcome = harness::train(&cfg, &dataset, Some(&dir))?;
            for m in &outcome.history {
                println!("{}", m.csv_row());
            }
            println!("checkpoint: {}", dir.join(train::CHECKPOINT_FILE).display());
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            config,
        } => {
            let mut cfg = load_config(config, &checkpoint)?;
            cfg.data = harness::DataSource::File(data);
            let dataset = prepare(&cfg)?;
            let (model, store) = train::load_model(&cfg, dataset.num_classes(), &checkpoint)?;
            let split = match split {
                SplitArg::Train => SplitKind::Train,
                SplitArg::Test => SplitKind::Test,
            };
            let e = harness::evaluate(&model, &store, &dataset, split, cfg.seed)?;
            println!("acc {:.4}", e.acc);
            println!("macc {:.4}", e.macc);
            println!("confusion (rows: true class, columns: predicted)");
            for (name, row) in dataset.class_names.iter().zip(&e.confusion) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
                println!("{name:>10} {}", cells.join(""));
            }
        }
        Command::Ablate { config, grid, out } => {
            let cfg = RunConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            let entries = harness::parse_grid(&std::fs::read_to_string(&grid)?)?;
            let dataset = prepare(&cfg)?;
            let table = harness::ablation_grid(&cfg, &entries, &dataset, Some(&out))?;
            print!("{}", table.to_text());
        }
        Command::DumpRegions {
            checkpoint,
            cloud,
            out,
            config,
        } => {
            let cfg = load_config(config, &checkpoint)?;
            let dataset = prepare(&cfg)?;
            let (model, store) = train::load_model(&cfg, dataset.num_classes(), &checkpoint)?;
            let records = train::region_records(&model, &store, &dataset, cloud, cfg.seed)?;
            std::fs::write(&out, train::dump_text(&records))?;
            println!(
                "wrote {} regions to {}",
                records.iter().map(|r| r.centers.len()).sum::<usize>(),
                out.display()
            );
        }
    }
    Ok(())
}
