//! Radius update variants in the second layer of a small network.
//!
//! Weights are random (trained models start from a zeroed update head, so a
//! fresh module keeps every radius at `r`). For each variant the example
//! prints the spread of the per-region radii, how many distinct points the
//! resized balls collect, how many came out empty and the hinge penalty on the updates.
//!
//! ```text
//! cargo run --example radius_update
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lrl::abstraction::{classify, LayerConfig, Model, ModelConfig, RumSetting, SampleStreams};
use lrl::harness::{generate_synthetic, SyntheticSpec};
use lrl::param::ParamStore;
use lrl::rum::{RumKind, DEFAULT_NEIGHBOR_CAP};
use lrl::Tape;

fn main() -> lrl::Result<()> {
    let spec = SyntheticSpec {
        per_class: 1,
        points: 512,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec, 5)?;
    let cloud = data.clouds[1].points.positions();
    let radius = 0.3;

    println!(
        "{:<10} {:>6} {:>8} {:>8} {:>8} {:>10} {:>6} {:>9}",
        "variant", "shells", "min r̂", "mean r̂", "max r̂", "distinct", "empty", "rum loss"
    );
    for name in ["rum1-cum", "rum1-max", "rum2-cum", "rum2-max"] {
        for shells in [1, 4] {
            let kind: RumKind = name.parse()?;
            let layer = |n_centers, radius, mlp, rum| LayerConfig {
                n_centers,
                radius,
                k: 16,
                mlp,
                csm: None,
                rum,
            };
            let config = ModelConfig {
                layers: vec![
                    layer(128, 0.15, vec![32], None),
                    layer(
                        32,
                        radius,
                        vec![64],
                        Some(RumSetting {
                            kind,
                            shells,
                            neighbor_cap: DEFAULT_NEIGHBOR_CAP,
                            scale_by_radius: true,
                        }),
                    ),
                ],
                global_mlp: vec![32],
                head: vec![],
                classes: data.num_classes(),
            };
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let model = Model::new(config, &mut store, &mut rng)?;
            for block in store.blocks_mut() {
                for v in block.tensor.data_mut() {
                    *v = rng.random_range(-0.5..0.5);
                }
            }
            let tape = Tape::new();
            let fwd = classify(&tape, &store, &model, cloud, &SampleStreams::new(5, 0, 1))?;
            let rec = &fwd.layers[1].record;
            let (lo, hi) = rec
                .radii
                .iter()
                .fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
            let mean = rec.radii.iter().sum::<f64>() / rec.radii.len() as f64;
            let distinct: f64 = rec
                .groups
                .iter()
                .map(|g| {
                    let mut g = g.clone();
                    g.sort_unstable();
                    g.dedup();
                    g.len() as f64
                })
                .sum::<f64>()
                / rec.groups.len() as f64;
            let rum = fwd.loss_parts(&model, data.clouds[1].label)?.rum[0].item();
            println!(
                "{name:<10} {shells:>6} {lo:>8.4} {mean:>8.4} {hi:>8.4} {distinct:>10.2} {:>6} {rum:>9.5}",
                rec.fallbacks
            );
        }
    }
    println!("layer radius r = {radius}; every r̂ stays inside (0, 2r)");
    Ok(())
}
