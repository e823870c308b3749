//! Farthest point sampling and ball grouping on one synthetic cloud.
//!
//! ```text
//! cargo run --example fps_ball_query -- [centers] [radius] [k]
//! ```

use lrl::abstraction::{Purpose, SampleStreams};
use lrl::geometry::{ball_query_or_nearest, farthest_point_sample, points_within};
use lrl::harness::{generate_synthetic, SyntheticSpec};

fn main() -> lrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let m: usize = args.next().map_or(32, |s| s.parse().expect("centers"));
    let radius: f64 = args.next().map_or(0.2, |s| s.parse().expect("radius"));
    let k: usize = args.next().map_or(16, |s| s.parse().expect("k"));

    let spec = SyntheticSpec {
        per_class: 1,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec, 7)?;
    let cloud = data.clouds[0].points.positions();
    println!(
        "cloud of class {:?}: {} points",
        data.class_names[data.clouds[0].label],
        cloud.len()
    );

    let centers = farthest_point_sample(cloud, m, 0)?;
    let streams = SampleStreams::new(7, 0, 0);
    let mut sizes = Vec::with_capacity(m);
    let mut fallbacks = 0;
    println!("{:>6} {:>28} {:>7} {:>9}", "center", "position", "inside", "distinct");
    for (j, &c) in centers.iter().enumerate() {
        let inside = points_within(cloud, &cloud[c], radius).len();
        let mut rng = streams.rng(1, j, Purpose::Group);
        let (group, fell_back) = ball_query_or_nearest(cloud, &cloud[c], radius, k, &mut rng)?;
        fallbacks += usize::from(fell_back);
        let mut distinct = group.clone();
        distinct.sort_unstable();
        distinct.dedup();
        sizes.push(inside);
        let p = cloud[c];
        println!(
            "{j:>6} ({:>7.3}, {:>7.3}, {:>7.3}) {inside:>7} {:>9}",
            p[0],
            p[1],
            p[2],
            distinct.len()
        );
    }
    let mean = sizes.iter().sum::<usize>() as f64 / m as f64;
    println!("mean ball population {mean:.1}, {fallbacks} empty balls");
    Ok(())
}
