//! Trains the classifier on generated shapes and reports per-epoch metrics.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [config file] [output dir]
//! ```
//!
//! Without a config file a small setup is used that finishes in well under
//! a minute: three classes, 256 points per cloud, a center shift in the
//! second layer and 30 epochs.

use std::path::PathBuf;

use lrl::harness::{evaluate, prepare_dataset, train, RunConfig, SplitKind, METRICS_HEADER};

const SMALL: &str = "
seed = 1
epochs = 30
batch_size = 8
lr = 0.005
optimizer = adam
points = 256
synthetic.classes = 3
synthetic.per_class = 30
layer1.centers = 32
layer1.radius = 0.25
layer1.mlp = 16,32
layer2.centers = 8
layer2.radius = 0.5
layer2.k = 8
layer2.mlp = 32,64
layer2.csm = csm1
global.mlp = 64
head.mlp = 32
";

fn main() -> lrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::parse(SMALL)?,
    };
    let out = args.next().map(PathBuf::from);

    let (data, warnings) = prepare_dataset(&cfg)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} clouds, {} classes ({} train / {} test)",
        data.clouds.len(),
        data.num_classes(),
        data.split.train.len(),
        data.split.test.len()
    );
    println!("{METRICS_HEADER}");
    let outcome = train(&cfg, &data, out.as_deref())?;
    for m in &outcome.history {
        println!("{}", m.csv_row());
    }

    let test = evaluate(&outcome.model, &outcome.store, &data, SplitKind::Test, cfg.seed)?;
    println!("final test accuracy {:.3}, class-mean {:.3}", test.acc, test.macc);
    println!("confusion (rows true, columns predicted):");
    for (name, row) in data.class_names.iter().zip(&test.confusion) {
        println!("  {name:>10} {row:?}");
    }
    if let Some(ckpt) = &outcome.checkpoint {
        println!("checkpoint written to {}", ckpt.display());
    }
    Ok(())
}
