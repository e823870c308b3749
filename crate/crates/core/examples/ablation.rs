//! Switches the center shift and radius update modules on one at a time and
//! compares final test accuracy against the all-off baseline.
//!
//! ```text
//! cargo run --release --example ablation -- [config file] [grid file] [output dir]
//! ```
//!
//! A grid file lists one entry per line: a name followed by `key=value`
//! overrides of the base config, for example `csm1-2nd layer2.csm=csm1`.

use std::path::PathBuf;

use lrl::harness::{ablation_grid, parse_grid, prepare_dataset, RunConfig};

const BASE: &str = "
seed = 3
epochs = 20
batch_size = 8
lr = 0.005
optimizer = adam
points = 256
synthetic.classes = 3
synthetic.per_class = 24
layer1.centers = 32
layer1.radius = 0.25
layer1.mlp = 16,32
layer2.centers = 8
layer2.radius = 0.5
layer2.k = 8
layer2.mlp = 32,64
global.mlp = 64
head.mlp = 32
";

const GRID: &str = "
csm1-2nd        layer2.csm=csm1
csm3-2nd        layer2.csm=csm3-2
rum1max-2nd     layer2.rum=rum1-max
rum2cum-1st     layer1.rum=rum2-cum
csm1+rum1max    layer2.csm=csm1 layer2.rum=rum1-max
";

fn main() -> lrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let base = match args.next() {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => RunConfig::parse(BASE)?,
    };
    let grid = match args.next() {
        Some(path) => parse_grid(&std::fs::read_to_string(path)?)?,
        None => parse_grid(GRID)?,
    };
    let out = args.next().map(PathBuf::from);

    let (data, _) = prepare_dataset(&base)?;
    let table = ablation_grid(&base, &grid, &data, out.as_deref())?;
    print!("{}", table.to_text());
    Ok(())
}
