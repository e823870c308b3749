//! Trains briefly with both modules on, then prints where the regions of
//! one cloud ended up: shifted centers, shifts, radii and radius updates.
//!
//! ```text
//! cargo run --release --example dump_regions -- [cloud index]
//! ```

use lrl::geometry::norm;
use lrl::harness::train::{dump_text, region_records};
use lrl::harness::{prepare_dataset, train, RunConfig};

const CONFIG: &str = "
seed = 2
epochs = 5
batch_size = 8
lr = 0.005
optimizer = adam
points = 256
synthetic.classes = 3
synthetic.per_class = 10
layer1.centers = 32
layer1.radius = 0.25
layer1.mlp = 16,32
layer1.rum = rum1-max
layer2.centers = 8
layer2.radius = 0.5
layer2.k = 8
layer2.mlp = 32,64
layer2.csm = csm1
global.mlp = 64
head.mlp = 32
";

fn main() -> lrl::Result<()> {
    let cloud: usize = std::env::args().nth(1).map_or(0, |s| s.parse().expect("cloud index"));
    let cfg = RunConfig::parse(CONFIG)?;
    let (data, _) = prepare_dataset(&cfg)?;
    let outcome = train(&cfg, &data, None)?;
    let records = region_records(&outcome.model, &outcome.store, &data, cloud, cfg.seed)?;

    for r in &records {
        let shift = r.shifts.iter().map(norm).fold(0.0, f64::max);
        let (lo, hi) = r
            .radii
            .iter()
            .fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        println!(
            "# layer {}: {} regions, largest shift {shift:.4}, radii {lo:.4}..{hi:.4}, {} empty",
            r.layer,
            r.centers.len(),
            r.fallbacks
        );
    }
    print!("{}", dump_text(&records));
    Ok(())
}
