//! Every center shift variant in the second layer of a small network,
//! on the same cloud and with random weights.
//!
//! Trained models start from zeroed shift heads, so a fresh module does not
//! move anything; random weights show the range of shifts each variant can
//! produce.
//!
//! Prints the size of the shifts relative to the layer radius, how many
//! centers moved outside the radius, and the two regularisers that keep
//! shifted centers on the surface and within range.
//!
//! ```text
//! cargo run --example center_shift
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lrl::abstraction::{classify, CsmSetting, LayerConfig, Model, ModelConfig, SampleStreams};
use lrl::csm::CsmVariant;
use lrl::geometry::norm;
use lrl::harness::{generate_synthetic, SyntheticSpec};
use lrl::param::ParamStore;
use lrl::Tape;

const VARIANTS: [&str; 10] = [
    "csm1",
    "csm2-sub",
    "csm2-sum",
    "csm2-cat",
    "csm2-dot",
    "csm2-hadamard",
    "csm3-1",
    "csm3-2",
    "csm4",
    "csm5",
];

fn main() -> lrl::Result<()> {
    let spec = SyntheticSpec {
        per_class: 1,
        points: 512,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec, 11)?;
    let cloud = data.clouds[0].points.positions();
    let radius = 0.25;

    println!(
        "{:<14} {:>10} {:>10} {:>8} {:>9} {:>9}",
        "variant", "mean|Δc|", "max|Δc|", "beyond r", "fit", "range"
    );
    for name in VARIANTS {
        let variant: CsmVariant = name.parse()?;
        let config = ModelConfig {
            layers: vec![
                LayerConfig {
                    n_centers: 128,
                    radius: 0.15,
                    k: 16,
                    mlp: vec![32],
                    csm: None,
                    rum: None,
                },
                LayerConfig {
                    n_centers: 32,
                    radius,
                    k: 16,
                    mlp: vec![64],
                    csm: Some(CsmSetting { variant, k: 16 }),
                    rum: None,
                },
            ],
            global_mlp: vec![32],
            head: vec![],
            classes: data.num_classes(),
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::new(config, &mut store, &mut rng)?;
        for block in store.blocks_mut() {
            for v in block.tensor.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let tape = Tape::new();
        let fwd = classify(&tape, &store, &model, cloud, &SampleStreams::new(11, 0, 0))?;
        let record = &fwd.layers[1].record;
        let norms: Vec<f64> = record.shifts.iter().map(norm).collect();
        let beyond = norms.iter().filter(|&&n| n > radius).count();
        let parts = fwd.loss_parts(&model, data.clouds[0].label)?;
        println!(
            "{name:<14} {:>10.4} {:>10.4} {:>8} {:>9.5} {:>9.5}",
            norms.iter().sum::<f64>() / norms.len() as f64,
            norms.iter().copied().fold(0.0, f64::max),
            beyond,
            parts.fit[0].item(),
            parts.range[0].item(),
        );
    }
    println!("layer radius r = {radius}");
    Ok(())
}
