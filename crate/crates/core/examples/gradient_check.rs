//! Compares reverse-mode gradients of the full training loss with central
//! finite differences, for a small network with both modules switched on.
//!
//! The radius update reaches the loss only through which points are grouped
//! and through its hinge penalty, which is flat while `|Δr| ≤ r`; its head
//! therefore shows zero gradient on both sides.
//!
//! ```text
//! cargo run --example gradient_check -- [entries per block]
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lrl::abstraction::{classify, CsmSetting, LayerConfig, Model, ModelConfig, RumSetting, SampleStreams};
use lrl::geometry::Point;
use lrl::harness::{generate_synthetic, SyntheticSpec};
use lrl::param::ParamStore;
use lrl::Tape;

const STEP: f64 = 1e-5;

fn loss(model: &Model, store: &ParamStore, cloud: &[Point], label: usize) -> lrl::Result<f64> {
    let tape = Tape::new();
    let fwd = classify(&tape, store, model, cloud, &SampleStreams::new(1, 0, 0))?;
    Ok(fwd.loss_parts(model, label)?.total(0.01, 0.01)?.item())
}

fn main() -> lrl::Result<()> {
    let per_block: usize = std::env::args()
        .nth(1)
        .map_or(3, |s| s.parse().expect("entries per block"));
    let spec = SyntheticSpec {
        per_class: 1,
        points: 64,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec, 4)?;
    let (cloud, label) = (data.clouds[2].points.positions(), data.clouds[2].label);

    let config = ModelConfig {
        layers: vec![
            LayerConfig {
                n_centers: 16,
                radius: 0.3,
                k: 8,
                mlp: vec![8],
                csm: Some(CsmSetting {
                    variant: "csm1".parse()?,
                    k: 8,
                }),
                rum: Some(RumSetting {
                    kind: "rum1-max".parse()?,
                    shells: 2,
                    neighbor_cap: 16,
                    scale_by_radius: true,
                }),
            },
            LayerConfig {
                n_centers: 4,
                radius: 0.6,
                k: 4,
                mlp: vec![8],
                csm: None,
                rum: None,
            },
        ],
        global_mlp: vec![8],
        head: vec![8],
        classes: data.num_classes(),
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(config, &mut store, &mut rng)?;
    // Move the zero-initialised heads off zero so every path carries gradient.
    for block in store.blocks_mut() {
        for v in block.tensor.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }

    let tape = Tape::new();
    let fwd = classify(&tape, &store, &model, cloud, &SampleStreams::new(1, 0, 0))?;
    let total = fwd.loss_parts(&model, label)?.total(0.01, 0.01)?;
    println!("loss {:.6}", total.item());
    let grads = tape.backward(total)?;
    let mut analytic: Vec<_> = grads.param_grads().map(|(id, g)| (id, g.clone())).collect();
    analytic.sort_by(|a, b| store.get(a.0).name.cmp(&store.get(b.0).name));

    let mut worst = 0.0f64;
    println!(
        "{:<34} {:>5} {:>14} {:>14} {:>9}",
        "parameter", "entry", "analytic", "numeric", "rel err"
    );
    for (id, g) in &analytic {
        let n = g.data().len();
        for e in (0..n).step_by((n / per_block).max(1)).take(per_block) {
            let original = store.get(*id).tensor.data()[e];
            store.get_mut(*id).tensor.data_mut()[e] = original + STEP;
            let up = loss(&model, &store, cloud, label)?;
            store.get_mut(*id).tensor.data_mut()[e] = original - STEP;
            let down = loss(&model, &store, cloud, label)?;
            store.get_mut(*id).tensor.data_mut()[e] = original;
            let numeric = (up - down) / (2.0 * STEP);
            let a = g.data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            println!(
                "{:<34} {e:>5} {a:>14.6e} {numeric:>14.6e} {rel:>9.1e}",
                store.get(*id).name
            );
        }
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
