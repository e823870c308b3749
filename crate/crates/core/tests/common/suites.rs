//! Property suites shared by the focused test files and the acceptance
//! report. Each returns one [`Outcome`] per checked item.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lrl::abstraction::{self, CsmSetting, LayerConfig, Model, ModelConfig, RegionRecord, RumSetting, SampleStreams};
use lrl::csm::{self, CsmParams, CsmVariant, Neighborhoods, Similarity};
use lrl::geometry::{self, Point};
use lrl::loss;
use lrl::param::ParamStore;
use lrl::rum::{self, RumKind, RumParams, ShellNeighborhoods};
use lrl::{Tape, Tensor};

use super::*;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn assert_all(outcomes: &[Outcome]) {
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.passed).collect();
    assert!(failed.is_empty(), "failed checks: {failed:#?}");
}

// ---------------------------------------------------------------------------
// Gradients.

pub const GRAD_TOL: f64 = 1e-4;
pub const E2E_TOL: f64 = 1e-3;
pub const INSTANCES: usize = 20;

/// Runs `draw` until `INSTANCES` instances clear the kink margin, and
/// reports the worst relative error among them.
fn gradient_instances(
    name: &str,
    tol: f64,
    seed: u64,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Option<GradCheck>,
) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut accepted, mut redrawn, mut worst, mut entries) = (0, 0, 0.0f64, 0);
    let mut where_worst = String::new();
    while accepted < INSTANCES {
        match draw(&mut rng) {
            Some(c) if c.kink >= KINK_MARGIN => {
                if c.max_rel >= worst {
                    worst = c.max_rel;
                    where_worst = c.worst;
                }
                entries += c.checked;
                accepted += 1;
            }
            _ => {
                redrawn += 1;
                assert!(redrawn < 50 * INSTANCES, "{name}: too many instances near kinks");
            }
        }
    }
    Outcome::new(
        name,
        worst <= tol,
        format!("{accepted} instances, {entries} entries, max rel err {worst:.2e} (tol {tol:.0e}), {redrawn} redrawn; worst at {where_worst}"),
    )
}

fn distinct_groups<R: Rng>(m: usize, k: usize, n: usize, rng: &mut R) -> Vec<Vec<usize>> {
    (0..m)
        .map(|_| {
            let all: Vec<usize> = (0..n).collect();
            geometry::select_k(&all, k, rng)
        })
        .collect()
}

pub fn csm_variants() -> Vec<CsmVariant> {
    vec![
        CsmVariant::I,
        CsmVariant::II(Similarity::Sub),
        CsmVariant::II(Similarity::Sum),
        CsmVariant::II(Similarity::Cat),
        CsmVariant::II(Similarity::Dot),
        CsmVariant::II(Similarity::Hadamard),
        CsmVariant::III { u: 1 },
        CsmVariant::III { u: 2 },
        CsmVariant::IV,
        CsmVariant::V,
    ]
}

/// `‖Δc‖²` gradients w.r.t. every parameter, the neighbour positions and
/// features, the centers and the center features.
pub fn csm_gradient(variant: CsmVariant, seed: u64) -> Outcome {
    gradient_instances(&format!("gradient {variant}"), GRAD_TOL, seed, |rng| {
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=4);
        let m = 3;
        let n = k + rng.random_range(0..3);
        let mut store = ParamStore::new();
        let params = CsmParams::new(&mut store, "c", variant, d, rng).unwrap();
        randomize(&mut store, 0.8, rng);
        let groups = distinct_groups(m, k, n, rng);
        let inputs = vec![
            random_rows(m, 3, rng),
            random_rows(m, d, rng),
            random_rows(n, 3, rng),
            random_rows(n, d, rng),
        ];
        let f = objective(move |tape, store, v| {
            let _ = tape;
            let nb = Neighborhoods::gather(v[0], v[1], v[2], v[3], &groups)?;
            let delta = csm::shift(tape, store, &params, &nb)?.delta;
            Ok(delta.mul(delta)?.sum())
        });
        Some(grad_check(&store, &inputs, &f))
    })
}

pub fn rum_kinds() -> Vec<RumKind> {
    ["rum1-cum", "rum1-max", "rum2-cum", "rum2-max"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect()
}

/// `Δr²` gradients w.r.t. every parameter and the (center and neighbour)
/// features, `T ≤ 2`, `D ≤ 4` so `E ≤ 2`.
pub fn rum_gradient(kind: RumKind, seed: u64) -> Outcome {
    gradient_instances(&format!("gradient {kind}"), GRAD_TOL, seed, |rng| {
        let d = rng.random_range(1..=4);
        let t = rng.random_range(1..=2);
        let m = 2;
        let r = 0.5;
        let mut store = ParamStore::new();
        let params = RumParams::new(&mut store, "r", kind, d, t, rng).unwrap();
        randomize(&mut store, 0.8, rng);
        let centers: Vec<Point> = random_points(m, rng)
            .iter()
            .map(|p| [p[0] * 0.3, p[1] * 0.3, p[2] * 0.3])
            .collect();
        // Neighbours scattered inside each 2r ball.
        let mut points = Vec::new();
        let mut lists = Vec::new();
        for c in &centers {
            let s = rng.random_range(1..=5);
            let mut list = Vec::new();
            for _ in 0..s {
                let dir = random_points(1, rng)[0];
                let len = geometry::norm(&dir).max(1e-3);
                let dist = rng.random_range(0.0..2.0 * r);
                list.push(points.len());
                points.push([
                    c[0] + dir[0] / len * dist,
                    c[1] + dir[1] / len * dist,
                    c[2] + dir[2] / len * dist,
                ]);
            }
            lists.push(list);
        }
        let positions = Tensor::from_rows(&points).unwrap();
        let inputs = vec![random_rows(m, d, rng), random_rows(points.len(), d, rng)];
        let f = objective(move |tape, store, v| {
            let nb = ShellNeighborhoods::gather(v[0], &positions, v[1], &centers, &lists, r, t)?;
            let dr = rum::radius_delta(tape, store, &params, &nb)?;
            Ok(dr.mul(dr)?.sum())
        });
        Some(grad_check(&store, &inputs, &f))
    })
}

/// Each loss term and the weighted total, w.r.t. their inputs.
pub fn loss_gradients(seed: u64) -> Vec<Outcome> {
    let r = 0.3;
    let no_params = ParamStore::new();
    let mut out = Vec::new();
    out.push(gradient_instances("gradient fit_loss", GRAD_TOL, seed, |rng| {
        let inputs = vec![random_rows(3, 3, rng), random_rows(5, 3, rng)];
        Some(grad_check(&no_params, &inputs, &|_, _, v| loss::fit_loss(v[0], v[1])))
    }));
    out.push(gradient_instances("gradient range_loss", GRAD_TOL, seed + 1, |rng| {
        let inputs = vec![random_rows(4, 3, rng)];
        Some(grad_check(&no_params, &inputs, &|_, _, v| loss::range_loss(v[0], r)))
    }));
    out.push(gradient_instances("gradient rum_loss", GRAD_TOL, seed + 2, |rng| {
        let data = (0..4).map(|_| rng.random_range(-2.0 * r..2.0 * r)).collect();
        let inputs = vec![Tensor::new(vec![4, 1], data).unwrap()];
        Some(grad_check(&no_params, &inputs, &|_, _, v| loss::rum_loss(v[0], r)))
    }));
    out.push(gradient_instances(
        "gradient cross_entropy",
        GRAD_TOL,
        seed + 3,
        |rng| {
            let c = rng.random_range(2..=5);
            let label = rng.random_range(0..c);
            let inputs = vec![random_rows(1, c, rng)];
            Some(grad_check(&no_params, &inputs, &move |_, _, v| {
                loss::cross_entropy(v[0], label)
            }))
        },
    ));
    out.push(gradient_instances("gradient total_loss", GRAD_TOL, seed + 4, |rng| {
        let label = rng.random_range(0..3);
        let deltas = (0..3).map(|_| rng.random_range(-2.0 * r..2.0 * r)).collect();
        let inputs = vec![
            random_rows(1, 3, rng),
            random_rows(3, 3, rng),
            random_rows(5, 3, rng),
            random_rows(3, 3, rng),
            Tensor::new(vec![3, 1], deltas).unwrap(),
        ];
        Some(grad_check(&no_params, &inputs, &move |_, _, v| {
            let parts = loss::LossParts {
                ce: loss::cross_entropy(v[0], label)?,
                fit: vec![loss::fit_loss(v[1], v[2])?],
                range: vec![loss::range_loss(v[3], r)?],
                rum: vec![loss::rum_loss(v[4], r)?],
            };
            parts.total(0.01, 0.01)
        }))
    }));
    out
}

/// Smallest gap between a point's distance to a region center and any
/// radius the forward pass thresholds on. Perturbations smaller than this
/// cannot change group membership.
fn geometry_margin(cloud: &[Point], records: &[RegionRecord], model: &Model) -> f64 {
    let mut margin = f64::INFINITY;
    let mut source: Vec<Point> = cloud.to_vec();
    for (rec, layer) in records.iter().zip(&model.config.layers) {
        let shifted = rec.shifted_centers();
        let r = layer.radius;
        for (j, c) in rec.centers.iter().enumerate() {
            for p in &source {
                let d0 = geometry::dist(p, c);
                let d1 = geometry::dist(p, &shifted[j]);
                margin = margin.min((d0 - 2.0 * r).abs()).min((d1 - rec.radii[j]).abs());
                if let Some(rs) = &layer.rum {
                    for t in 1..=rs.shells {
                        margin = margin.min((d1 - 2.0 * r * t as f64 / rs.shells as f64).abs());
                    }
                }
            }
        }
        source = shifted;
    }
    margin
}

fn tiny_layers(csm: Option<CsmVariant>, rum: Option<RumKind>, single: bool) -> Vec<LayerConfig> {
    let setting = |l: usize| LayerConfig {
        n_centers: if single || l == 1 { 2 } else { 4 },
        radius: if l == 0 && !single { 0.5 } else { 0.8 },
        k: 4,
        mlp: vec![4],
        csm: csm.map(|variant| CsmSetting { variant, k: 4 }),
        rum: rum.map(|kind| RumSetting {
            kind,
            shells: 2,
            neighbor_cap: 8,
            scale_by_radius: true,
        }),
    };
    if single {
        vec![setting(1)]
    } else {
        vec![setting(0), setting(1)]
    }
}

/// Total loss of the whole network w.r.t. every parameter on a 16-point
/// cloud, K = 4, with modules in every layer.
pub fn end_to_end_gradient(seed: u64) -> Outcome {
    end_to_end_with(seed, &end_to_end_combos(), None)
}

pub fn end_to_end_combos() -> Vec<(Option<CsmVariant>, Option<RumKind>)> {
    let combos: Vec<(Option<CsmVariant>, Option<RumKind>)> = vec![
        (None, None),
        (Some(CsmVariant::I), None),
        (None, Some("rum1-max".parse().unwrap())),
        (Some(CsmVariant::I), Some("rum1-max".parse().unwrap())),
        (Some(CsmVariant::II(Similarity::Cat)), Some("rum2-cum".parse().unwrap())),
        (Some(CsmVariant::III { u: 1 }), Some("rum2-max".parse().unwrap())),
        (Some(CsmVariant::IV), Some("rum1-cum".parse().unwrap())),
        (Some(CsmVariant::V), None),
    ];
    combos
}

pub fn end_to_end_with(
    seed: u64,
    combos: &[(Option<CsmVariant>, Option<RumKind>)],
    single_only: Option<bool>,
) -> Outcome {
    let mut case = 0usize;
    gradient_instances("gradient end-to-end", E2E_TOL, seed, |rng| {
        let (csm, rum) = combos[case % combos.len()];
        let single = single_only.unwrap_or(case % 3 == 2);
        case += 1;
        let config = ModelConfig {
            layers: tiny_layers(csm, rum, single),
            global_mlp: vec![6],
            head: vec![5],
            classes: 3,
        };
        let mut store = ParamStore::new();
        let model = Model::new(config, &mut store, rng).unwrap();
        randomize(&mut store, 0.6, rng);
        let cloud: Vec<Point> = random_points(16, rng);
        let label = rng.random_range(0..3);
        let streams = SampleStreams::new(rng.random(), 1, 0);
        let base = {
            let tape = Tape::new();
            let fwd = abstraction::classify(&tape, &store, &model, &cloud, &streams).unwrap();
            fwd.records()
        };
        if geometry_margin(&cloud, &base, &model) < 1e-3 {
            return None;
        }
        let moved = RefCell::new(false);
        let f = objective(|tape, store, _| {
            let fwd = abstraction::classify(tape, store, &model, &cloud, &streams)?;
            let recs = fwd.records();
            if recs.iter().zip(&base).any(|(a, b)| a.groups != b.groups) {
                *moved.borrow_mut() = true;
            }
            fwd.loss_parts(&model, label)?.total(0.01, 0.01)
        });
        let check = grad_check(&store, &[], &f);
        (!moved.into_inner()).then_some(check)
    })
}

/// `Σ op(x) ⊙ W` for a fixed random `W`, so that every output entry gets
/// its own weight.
fn weighted_sum<'t>(y: Var<'t>, salt: u64) -> lrl::Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(salt);
    let w = random_rows(y.rows(), y.cols(), &mut rng);
    Ok(y.mul(y.tape().constant(w))?.sum())
}

type OpCase = (&'static str, Vec<(usize, usize)>, Box<Objective<'static>>);

fn op_cases() -> Vec<OpCase> {
    use lrl::autodiff::Reduce;
    fn case(
        name: &'static str,
        shapes: &[(usize, usize)],
        f: impl for<'t> Fn(&'t Tape, &ParamStore, &[Var<'t>]) -> lrl::Result<Var<'t>> + 'static,
    ) -> OpCase {
        (name, shapes.to_vec(), Box::new(f))
    }
    vec![
        case("matmul", &[(3, 4), (4, 2)], |_, _, v| {
            weighted_sum(v[0].matmul(v[1])?, 1)
        }),
        case("add", &[(3, 2), (3, 2)], |_, _, v| weighted_sum(v[0].add(v[1])?, 2)),
        case("sub", &[(3, 2), (3, 2)], |_, _, v| weighted_sum(v[0].sub(v[1])?, 3)),
        case("hadamard", &[(3, 2), (3, 2)], |_, _, v| {
            weighted_sum(v[0].mul(v[1])?, 4)
        }),
        case("add_row", &[(3, 2), (1, 2)], |_, _, v| {
            weighted_sum(v[0].add_row(v[1])?, 5)
        }),
        case("mul_col", &[(3, 2), (3, 1)], |_, _, v| {
            weighted_sum(v[0].mul_col(v[1])?, 6)
        }),
        case("scale and add_scalar", &[(2, 3)], |_, _, v| {
            weighted_sum(v[0].scale(-1.7).add_scalar(0.3), 7)
        }),
        case("relu", &[(3, 3)], |_, _, v| weighted_sum(v[0].relu(), 8)),
        case("tanh", &[(3, 3)], |_, _, v| weighted_sum(v[0].tanh(), 9)),
        case("recip", &[(3, 1)], |_, _, v| {
            weighted_sum(v[0].add_scalar(2.5).recip(), 10)
        }),
        case("gather_rows", &[(3, 2)], |_, _, v| {
            weighted_sum(v[0].gather_rows(&[2, 0, 2, 1, 2])?, 11)
        }),
        case("concat_cols", &[(3, 2), (3, 1)], |_, _, v| {
            weighted_sum(v[0].concat_cols(v[1])?, 12)
        }),
        case("reshape", &[(2, 6)], |_, _, v| weighted_sum(v[0].reshape(&[4, 3])?, 13)),
        case("segment sum", &[(5, 2)], |_, _, v| {
            weighted_sum(v[0].segment(&[0, 2, 2, 5], Reduce::Sum)?, 14)
        }),
        case("segment mean", &[(5, 2)], |_, _, v| {
            weighted_sum(v[0].segment(&[0, 1, 5, 5], Reduce::Mean)?, 15)
        }),
        case("segment max", &[(5, 2)], |_, _, v| {
            weighted_sum(v[0].segment(&[0, 3, 5], Reduce::Max)?, 16)
        }),
        case("group max", &[(6, 2)], |_, _, v| {
            weighted_sum(v[0].group_reduce(3, Reduce::Max)?, 17)
        }),
        case("group mean", &[(6, 2)], |_, _, v| {
            weighted_sum(v[0].group_reduce(2, Reduce::Mean)?, 18)
        }),
        case("sum_rows", &[(3, 4)], |_, _, v| weighted_sum(v[0].sum_rows(), 19)),
        case("mean", &[(3, 4)], |_, _, v| Ok(v[0].mul(v[0])?.mean())),
        case("softmax_rows", &[(3, 4)], |_, _, v| {
            weighted_sum(v[0].scale(3.0).softmax_rows()?, 20)
        }),
        case("row_norm", &[(4, 3)], |_, _, v| weighted_sum(v[0].row_norm(), 21)),
        case("row_matvec", &[(2, 9), (2, 3)], |_, _, v| {
            weighted_sum(v[0].row_matvec(v[1])?, 22)
        }),
        case("cross_entropy", &[(3, 4)], |_, _, v| {
            Ok(v[0].scale(2.0).cross_entropy(&[0, 3, 1])?.sum())
        }),
    ]
}

/// Every tape operation, on random inputs in `[-1, 1]`.
pub fn op_gradients(seed: u64) -> Vec<Outcome> {
    let store = ParamStore::new();
    op_cases()
        .into_iter()
        .enumerate()
        .map(|(i, (name, shapes, f))| {
            gradient_instances(&format!("gradient op {name}"), GRAD_TOL, seed + i as u64, |rng| {
                let inputs: Vec<Tensor> = shapes.iter().map(|&(r, c)| random_rows(r, c, rng)).collect();
                Some(grad_check(&store, &inputs, f.as_ref()))
            })
        })
        .collect()
}

pub fn gradient_suite(seed: u64) -> Vec<Outcome> {
    let mut out = op_gradients(seed + 400);
    for (i, v) in csm_variants().into_iter().enumerate() {
        out.push(csm_gradient(v, seed + i as u64));
    }
    for (i, k) in rum_kinds().into_iter().enumerate() {
        out.push(rum_gradient(k, seed + 100 + i as u64));
    }
    out.extend(loss_gradients(seed + 200));
    out.push(end_to_end_gradient(seed + 300));
    out
}

// ---------------------------------------------------------------------------
// Brute-force oracles.

pub const ORACLE_INSTANCES: usize = 200;

/// Half the instances snap coordinates to a coarse grid so that distance
/// ties are common.
fn oracle_cloud(rng: &mut ChaCha8Rng, instance: usize) -> Vec<Point> {
    let n = rng.random_range(1..=64);
    if instance.is_multiple_of(2) {
        random_points(n, rng)
    } else {
        (0..n)
            .map(|_| [0, 1, 2].map(|_| rng.random_range(-3..=3) as f64 * 0.25))
            .collect()
    }
}

fn oracle_check(
    name: &str,
    seed: u64,
    mut check: impl FnMut(&mut ChaCha8Rng, usize) -> std::result::Result<(), String>,
) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..ORACLE_INSTANCES {
        if let Err(e) = check(&mut rng, i) {
            return Outcome::new(name, false, format!("instance {i}: {e}"));
        }
    }
    Outcome::new(name, true, format!("{ORACLE_INSTANCES} instances match exactly"))
}

fn same<T: PartialEq + std::fmt::Debug>(got: T, want: T) -> std::result::Result<(), String> {
    if got == want {
        Ok(())
    } else {
        Err(format!("got {got:?}, oracle {want:?}"))
    }
}

pub fn oracle_suite(seed: u64) -> Vec<Outcome> {
    vec![
        oracle_check("oracle farthest_point_sample", seed, |rng, i| {
            let pts = oracle_cloud(rng, i);
            let m = rng.random_range(1..=pts.len());
            let start = rng.random_range(0..pts.len());
            same(
                geometry::farthest_point_sample(&pts, m, start).unwrap(),
                fps_oracle(&pts, m, start),
            )
        }),
        oracle_check("oracle ball_query", seed + 1, |rng, i| {
            let pts = oracle_cloud(rng, i);
            let c = random_points(1, rng)[0];
            let r = rng.random_range(0.05..1.5);
            let k = rng.random_range(1..=16);
            let mut inside = geometry::points_within(&pts, &c, r);
            inside.sort_unstable();
            same(inside, within_oracle(&pts, &c, r))?;
            let stream: u64 = rng.random();
            let (got, _) =
                geometry::ball_query_or_nearest(&pts, &c, r, k, &mut ChaCha8Rng::seed_from_u64(stream)).unwrap();
            let want = reference_group(&pts, &c, r, k, &mut ChaCha8Rng::seed_from_u64(stream));
            same(got, want)
        }),
        oracle_check("oracle k_nearest_centers", seed + 2, |rng, i| {
            let pts = oracle_cloud(rng, i);
            if pts.len() < 2 {
                return Ok(());
            }
            let j = rng.random_range(0..pts.len());
            let u = rng.random_range(1..pts.len());
            same(geometry::k_nearest_centers(&pts, j, u).unwrap(), knn_oracle(&pts, j, u))
        }),
        oracle_check("oracle shell_partition", seed + 3, |rng, i| {
            let pts = oracle_cloud(rng, i);
            let c = if i % 4 == 1 { pts[0] } else { random_points(1, rng)[0] };
            let r_outer = if i % 2 == 1 { 1.0 } else { rng.random_range(0.1..2.0) };
            let t = rng.random_range(1..=4);
            let nb = within_oracle(&pts, &c, r_outer);
            let part = geometry::shell_partition(&pts, &nb, &c, r_outer, t).unwrap();
            let want: Vec<usize> = nb
                .iter()
                .map(|&n| shell_oracle(geometry::dist(&pts[n], &c), r_outer, t))
                .collect();
            let mut counts = vec![0; t];
            want.iter().for_each(|&s| counts[s - 1] += 1);
            same(part.shell_of, want)?;
            same(part.counts, counts)
        }),
        oracle_check("oracle fit_loss nearest point", seed + 4, |rng, i| {
            let pts = oracle_cloud(rng, i);
            let queries = if i % 2 == 1 {
                oracle_cloud(rng, i)
            } else {
                random_points(8, rng)
            };
            let got = loss::nearest_rows(&Tensor::from_rows(&queries).unwrap(), &Tensor::from_rows(&pts).unwrap());
            let want: Vec<usize> = queries.iter().map(|q| nearest_oracle(&pts, q)).collect();
            same(got, want)
        }),
    ]
}

// ---------------------------------------------------------------------------
// Invariants.

pub const SUM_TOL: f64 = 1e-12;

fn check_rows_sum_to_one(w: &Tensor, worst: &mut f64) {
    for i in 0..w.rows() {
        let s: f64 = w.row(i).iter().sum();
        *worst = worst.max((s - 1.0).abs());
    }
}

struct CsmInstance {
    store: ParamStore,
    params: CsmParams,
    centers: Tensor,
    center_features: Tensor,
    points: Tensor,
    features: Tensor,
    groups: Vec<Vec<usize>>,
}

fn csm_instance(variant: CsmVariant, scale: f64, rng: &mut ChaCha8Rng) -> CsmInstance {
    let d = rng.random_range(1..=6);
    let k = rng.random_range(1..=6);
    let m = rng.random_range(3..=5);
    let n = k + rng.random_range(0..6);
    let mut store = ParamStore::new();
    let params = CsmParams::new(&mut store, "c", variant, d, rng).unwrap();
    randomize(&mut store, scale, rng);
    CsmInstance {
        params,
        store,
        centers: random_rows(m, 3, rng),
        center_features: random_rows(m, d, rng),
        points: random_rows(n, 3, rng),
        features: random_rows(n, d, rng),
        groups: distinct_groups(m, k, n, rng),
    }
}

impl CsmInstance {
    fn run<'t>(&self, tape: &'t Tape, groups: &[Vec<usize>]) -> csm::Shift<'t> {
        let nb = Neighborhoods::gather(
            tape.constant(self.centers.clone()),
            tape.constant(self.center_features.clone()),
            tape.constant(self.points.clone()),
            tape.constant(self.features.clone()),
            groups,
        )
        .unwrap();
        csm::shift(tape, &self.store, &self.params, &nb).unwrap()
    }
}

/// Every softmax row, and every attention weight row of CSM and RUM-II,
/// sums to one.
pub fn softmax_sums(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for _ in 0..50 {
        let tape = Tape::new();
        let r = rng.random_range(1..6);
        let c = rng.random_range(1..9);
        let scale = [1.0, 30.0, 700.0][rng.random_range(0..3)];
        let x = tape.constant(random_rows(r, c, &mut rng));
        let w = x.scale(scale).softmax_rows().unwrap().value().clone();
        check_rows_sum_to_one(&w, &mut worst);
        rows += r;
    }
    for variant in csm_variants() {
        for _ in 0..10 {
            let inst = csm_instance(variant, 1.5, &mut rng);
            let tape = Tape::new();
            let shift = inst.run(&tape, &inst.groups);
            for w in [shift.weights, shift.center_weights].into_iter().flatten() {
                check_rows_sum_to_one(&w.value(), &mut worst);
                rows += w.rows();
            }
        }
    }
    for kind in rum_kinds().into_iter().filter(|k| k.variant == rum::RumVariant::II) {
        for _ in 0..10 {
            let (store, params, ctx) = rum_instance(kind, 1.5, &mut rng);
            let tape = Tape::new();
            let nb = ctx.record(&tape).unwrap();
            let rows_v = rum::shell_features(&tape, &store, &params, &nb, kind.agg).unwrap();
            let (_, w) = rum::shell_attention(&tape, &store, &params, rows_v).unwrap();
            check_rows_sum_to_one(&w.value(), &mut worst);
            rows += w.rows();
        }
    }
    Outcome::new(
        "softmax and attention weights sum to one",
        worst <= SUM_TOL,
        format!("{rows} rows, max |Σ−1| {worst:.1e} (tol {SUM_TOL:.0e})"),
    )
}

/// For CSM-I/II/III each shift component is at most the mean absolute
/// center-to-neighbour offset along that axis.
pub fn shift_axis_bound(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst_ratio: f64 = 0.0;
    let variants: Vec<CsmVariant> = csm_variants()
        .into_iter()
        .filter(|v| matches!(v, CsmVariant::I | CsmVariant::II(_) | CsmVariant::III { .. }))
        .collect();
    for variant in variants {
        for i in 0..20 {
            // Large weights drive tanh into saturation, the tightest case.
            let scale = if i % 2 == 0 { 1.0 } else { 25.0 };
            let inst = csm_instance(variant, scale, &mut rng);
            let tape = Tape::new();
            let delta = inst.run(&tape, &inst.groups).delta.value().clone();
            for (j, g) in inst.groups.iter().enumerate() {
                for a in 0..3 {
                    let c = inst.centers.at(j, a);
                    let bound = g.iter().map(|&p| (c - inst.points.at(p, a)).abs()).sum::<f64>() / g.len() as f64;
                    let v = delta.at(j, a).abs();
                    if bound > 0.0 {
                        worst_ratio = worst_ratio.max(v / bound);
                    } else {
                        worst_ratio = worst_ratio.max(if v > 0.0 { f64::INFINITY } else { 0.0 });
                    }
                    checked += 1;
                }
            }
        }
    }
    Outcome::new(
        "center shift per-axis bound",
        worst_ratio <= 1.0 + 1e-12,
        format!("{checked} components, max |Δc_a| / bound = {worst_ratio:.6}"),
    )
}

fn rum_instance(kind: RumKind, scale: f64, rng: &mut ChaCha8Rng) -> (ParamStore, RumParams, rum::RumContext) {
    let d = rng.random_range(1..=6);
    let t = rng.random_range(1..=4);
    let r = rng.random_range(0.05..0.5);
    let mut store = ParamStore::new();
    let params = RumParams::new(&mut store, "r", kind, d, t, rng).unwrap();
    randomize(&mut store, scale, rng);
    let center = random_points(1, rng)[0];
    let s = rng.random_range(0..=12);
    let neighbor_positions: Vec<Point> = (0..s)
        .map(|_| {
            let dir = random_points(1, rng)[0];
            let len = geometry::norm(&dir).max(1e-9);
            let dist = rng.random_range(0.0..=2.0 * r);
            [0, 1, 2].map(|a| center[a] + dir[a] / len * dist)
        })
        .filter(|p| geometry::dist(p, &center) <= 2.0 * r)
        .collect();
    let neighbor_features = (0..neighbor_positions.len())
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ctx = rum::RumContext {
        center,
        center_feature: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        neighbor_positions,
        neighbor_features,
        layer_radius: r,
        shells: t,
    };
    (store, params, ctx)
}

/// `|Δr| < r`, so `r + Δr > 0`, including saturated heads.
pub fn radius_bound(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for kind in rum_kinds() {
        for i in 0..50 {
            let scale = [1.0, 10.0, 200.0][i % 3];
            let (store, params, ctx) = rum_instance(kind, scale, &mut rng);
            let tape = Tape::new();
            let nb = ctx.record(&tape).unwrap();
            let dr = rum::radius_delta(&tape, &store, &params, &nb).unwrap().item();
            let r = ctx.layer_radius;
            ok &= dr.abs() < r && r + dr > 0.0;
            worst = worst.max(dr.abs() / r);
            checked += 1;
        }
    }
    Outcome::new(
        "radius update bound |Δr| < r",
        ok,
        format!("{checked} regions, max |Δr|/r = {worst:.17}"),
    )
}

/// Relabels the source rows with a random permutation and shuffles each
/// group; returns the permuted tensors and groups.
fn permute_sources(
    points: &Tensor,
    features: &Tensor,
    groups: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> (Tensor, Tensor, Vec<Vec<usize>>) {
    use rand::seq::SliceRandom;
    let n = points.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    // New row perm[i] holds old row i.
    let mut inv = vec![0; n];
    for (old, &new) in perm.iter().enumerate() {
        inv[new] = old;
    }
    let p = Tensor::from_rows(&(0..n).map(|i| points.row(inv[i]).to_vec()).collect::<Vec<_>>()).unwrap();
    let f = Tensor::from_rows(&(0..n).map(|i| features.row(inv[i]).to_vec()).collect::<Vec<_>>()).unwrap();
    let g = groups
        .iter()
        .map(|g| {
            let mut g: Vec<usize> = g.iter().map(|&i| perm[i]).collect();
            g.shuffle(rng);
            g
        })
        .collect();
    (p, f, g)
}

pub fn csm_permutation(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = 0;
    let mut failures = Vec::new();
    for variant in csm_variants() {
        for _ in 0..10 {
            let inst = csm_instance(variant, 1.0, &mut rng);
            let tape = Tape::new();
            let base = inst.run(&tape, &inst.groups).delta.value().clone();
            let (p, f, g) = permute_sources(&inst.points, &inst.features, &inst.groups, &mut rng);
            let permuted = CsmInstance {
                points: p,
                features: f,
                groups: g.clone(),
                store: inst.store.clone(),
                params: inst.params.clone(),
                centers: inst.centers.clone(),
                center_features: inst.center_features.clone(),
            };
            let again = permuted.run(&tape, &g).delta.value().clone();
            if again != base {
                failures.push(variant.to_string());
            }
            trials += 1;
        }
    }
    Outcome::new(
        "center shift permutation invariance (exact)",
        failures.is_empty(),
        format!("{trials} shuffles, mismatches: {failures:?}"),
    )
}

pub fn rum_permutation(seed: u64) -> Outcome {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = 0;
    let mut failures = Vec::new();
    for kind in rum_kinds() {
        for _ in 0..15 {
            let (store, params, ctx) = rum_instance(kind, 1.0, &mut rng);
            let mut order: Vec<usize> = (0..ctx.neighbor_positions.len()).collect();
            order.shuffle(&mut rng);
            let shuffled = rum::RumContext {
                neighbor_positions: order.iter().map(|&i| ctx.neighbor_positions[i]).collect(),
                neighbor_features: order.iter().map(|&i| ctx.neighbor_features[i].clone()).collect(),
                ..ctx.clone()
            };
            let tape = Tape::new();
            let eval = |c: &rum::RumContext| {
                let nb = c.record(&tape).unwrap();
                let rows = rum::shell_features(&tape, &store, &params, &nb, kind.agg)
                    .unwrap()
                    .value()
                    .clone();
                let dr = rum::radius_delta(&tape, &store, &params, &nb).unwrap().item();
                (rows, dr)
            };
            if eval(&ctx) != eval(&shuffled) {
                failures.push(kind.to_string());
            }
            trials += 1;
        }
    }
    Outcome::new(
        "radius update shell permutation invariance (exact)",
        failures.is_empty(),
        format!("{trials} shuffles, mismatches: {failures:?}"),
    )
}

/// Max pooling of a grouped MLP output, and a whole forward pass, are
/// unchanged when the input cloud is reordered (the first point, which
/// seeds farthest point sampling, stays put).
pub fn pooling_permutation(seed: u64) -> Outcome {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut trials = 0;
    for _ in 0..30 {
        let k = rng.random_range(1..8);
        let m = rng.random_range(1..4);
        let x = random_rows(m * k, 5, &mut rng);
        let mut order: Vec<usize> = Vec::new();
        for j in 0..m {
            let mut g: Vec<usize> = (j * k..(j + 1) * k).collect();
            g.shuffle(&mut rng);
            order.extend(g);
        }
        let tape = Tape::new();
        let a = tape
            .constant(x.clone())
            .group_reduce(k, lrl::autodiff::Reduce::Max)
            .unwrap()
            .value()
            .clone();
        let b = tape
            .constant(x)
            .gather_rows(&order)
            .unwrap()
            .group_reduce(k, lrl::autodiff::Reduce::Max)
            .unwrap()
            .value()
            .clone();
        if a != b {
            failures.push("group max".to_string());
        }
        trials += 1;
    }
    for (i, (csm, rum)) in end_to_end_combos().into_iter().enumerate() {
        let config = ModelConfig {
            layers: vec![
                LayerConfig {
                    n_centers: 16,
                    radius: 0.3,
                    k: 8,
                    mlp: vec![8],
                    csm: csm.map(|variant| CsmSetting { variant, k: 8 }),
                    rum: None,
                },
                LayerConfig {
                    n_centers: 4,
                    radius: 0.6,
                    k: 8,
                    mlp: vec![8],
                    csm: None,
                    rum: rum.map(|kind| RumSetting {
                        kind,
                        shells: 2,
                        neighbor_cap: 16,
                        scale_by_radius: true,
                    }),
                },
            ],
            global_mlp: vec![8],
            head: vec![],
            classes: 3,
        };
        let mut store = ParamStore::new();
        let model = Model::new(config, &mut store, &mut rng).unwrap();
        let cloud = random_points(96, &mut rng);
        let mut shuffled = cloud.clone();
        shuffled[1..].shuffle(&mut rng);
        let streams = SampleStreams::new(i as u64, 1, 0);
        let logits = |c: &[Point]| {
            let tape = Tape::new();
            let logits = abstraction::classify(&tape, &store, &model, c, &streams)
                .unwrap()
                .logits
                .value()
                .clone();
            logits
        };
        if logits(&cloud) != logits(&shuffled) {
            failures.push(format!("network {csm:?}/{rum:?}"));
        }
        trials += 1;
    }
    Outcome::new(
        "max pooling and forward pass permutation invariance (exact)",
        failures.is_empty(),
        format!("{trials} shuffles, mismatches: {failures:?}"),
    )
}

/// Random all-OFF model configurations.
fn off_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let depth = rng.random_range(1..=3);
    let mut n = 64;
    let layers = (0..depth)
        .map(|l| {
            n /= rng.random_range(2..=4);
            LayerConfig {
                n_centers: n,
                radius: 0.2 * (l + 1) as f64 + rng.random_range(0.0..0.1),
                k: rng.random_range(1..=12),
                mlp: (0..rng.random_range(1..=3)).map(|_| rng.random_range(2..=12)).collect(),
                csm: None,
                rum: None,
            }
        })
        .collect();
    ModelConfig {
        layers,
        global_mlp: (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=16)).collect(),
        head: (0..rng.random_range(0..=2)).map(|_| rng.random_range(2..=16)).collect(),
        classes: rng.random_range(2..=6),
    }
}

/// The tape-based classifier with every module off reproduces the
/// loop-based reference network bit for bit.
pub fn toggle_off_equivalence(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let trials = 30;
    for i in 0..trials {
        let config = off_config(&mut rng);
        let mut store = ParamStore::new();
        let model = Model::new(config, &mut store, &mut rng).unwrap();
        let cloud = random_points(rng.random_range(64..=160), &mut rng);
        let streams = SampleStreams::new(seed, i as u64 % 3, i as u64);
        let tape = Tape::new();
        let fwd = abstraction::classify(&tape, &store, &model, &cloud, &streams).unwrap();
        let got = fwd.logits.value().data().to_vec();
        let unshifted = fwd.records().iter().all(|r| r.shifted_centers() == r.centers);
        let label = i % model.config.classes;
        let ce = fwd.loss_parts(&model, label).unwrap().total(0.01, 0.01).unwrap().item();
        let want = reference_logits(&model, &store, &cloud, &streams);
        if got != want || !unshifted || ce != reference_ce(&want, label) {
            mismatches += 1;
        }
    }
    Outcome::new(
        "modules off equals plain baseline (bitwise)",
        mismatches == 0,
        format!("{trials} random networks, {mismatches} mismatches"),
    )
}

/// A radius update whose head is all zeros keeps every radius at `r` and
/// reproduces the grouping of the module-off network.
pub fn zero_head_grouping(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let kinds = rum_kinds();
    for (i, kind) in kinds.iter().enumerate() {
        let mut off = off_config(&mut rng);
        off.layers.truncate(2);
        let mut on = off.clone();
        for l in &mut on.layers {
            l.rum = Some(RumSetting {
                kind: *kind,
                shells: 2,
                neighbor_cap: 64,
                scale_by_radius: true,
            });
        }
        let mut store_on = ParamStore::new();
        let model_on = Model::new(on, &mut store_on, &mut rng).unwrap();
        for l in 0..model_on.layers.len() {
            for b in store_on.blocks_mut() {
                if b.name.starts_with(&format!("sa{}.rum.head", l + 1)) {
                    b.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        let mut store_off = ParamStore::new();
        let model_off = Model::new(off, &mut store_off, &mut rng).unwrap();
        let cloud = random_points(128, &mut rng);
        let streams = SampleStreams::new(seed, 2, i as u64);
        let records = |model: &Model, store: &ParamStore| {
            let tape = Tape::new();
            abstraction::classify(&tape, store, model, &cloud, &streams)
                .unwrap()
                .records()
        };
        let (a, b) = (records(&model_on, &store_on), records(&model_off, &store_off));
        let same_groups = a
            .iter()
            .zip(&b)
            .all(|(x, y)| x.groups == y.groups && x.radii == y.radii);
        if !same_groups {
            mismatches += 1;
        }
    }
    Outcome::new(
        "zero radius head keeps the module-off grouping",
        mismatches == 0,
        format!("{} networks, {mismatches} mismatches", kinds.len()),
    )
}

/// Same streams, same parameters: identical logits and regions.
pub fn forward_determinism(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for (i, (csm, rum)) in end_to_end_combos().into_iter().enumerate() {
        let config = ModelConfig {
            layers: tiny_layers(csm, rum, false),
            global_mlp: vec![8],
            head: vec![4],
            classes: 4,
        };
        let mut store = ParamStore::new();
        let model = Model::new(config, &mut store, &mut rng).unwrap();
        let cloud = random_points(32, &mut rng);
        let streams = SampleStreams::new(seed, 1, i as u64);
        let run = || {
            let tape = Tape::new();
            let fwd = abstraction::classify(&tape, &store, &model, &cloud, &streams).unwrap();
            let out = (fwd.logits.value().clone(), fwd.records());
            out
        };
        if run() != run() {
            mismatches += 1;
        }
    }
    Outcome::new(
        "forward pass determinism",
        mismatches == 0,
        format!("{mismatches} mismatches"),
    )
}

pub fn invariant_suite(seed: u64) -> Vec<Outcome> {
    vec![
        softmax_sums(seed),
        shift_axis_bound(seed + 1),
        radius_bound(seed + 2),
        csm_permutation(seed + 3),
        rum_permutation(seed + 4),
        pooling_permutation(seed + 5),
        toggle_off_equivalence(seed + 6),
        zero_head_grouping(seed + 7),
        forward_determinism(seed + 8),
    ]
}

// ---------------------------------------------------------------------------
// Loss arithmetic.

pub const HINGE_TOL: f64 = 1e-12;

fn close(name: &str, got: f64, want: f64) -> Outcome {
    let err = (got - want).abs();
    Outcome::new(
        name,
        err <= HINGE_TOL,
        format!("got {got:.15}, expected {want:.15}, |err| {err:.1e}"),
    )
}

fn shifts_of_norm<'t>(tape: &'t Tape, norms: &[f64]) -> Var<'t> {
    // Spread each norm over the axes so the norm itself is exercised.
    let rows: Vec<[f64; 3]> = norms.iter().map(|&n| [n * 0.6, 0.0, n * 0.8]).collect();
    tape.constant(Tensor::from_rows(&rows).unwrap())
}

fn column<'t>(tape: &'t Tape, v: &[f64]) -> Var<'t> {
    tape.constant(Tensor::matrix(v.len(), 1, v.to_vec()).unwrap())
}

pub fn hinge_suite() -> Vec<Outcome> {
    let tape = Tape::new();
    let r = 0.4;
    let fit = loss::fit_loss(
        tape.constant(Tensor::from_rows(&[[0.0, 0.3, 0.0], [2.0, 0.0, 0.4]]).unwrap()),
        tape.constant(Tensor::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap()),
    )
    .unwrap()
    .item();
    let mut terms = loss::LossTerms::new(1.0);
    terms.fit_per_layer = vec![0.5];
    terms.range_per_layer = vec![0.5];
    terms.rum_per_layer = vec![2.0];
    vec![
        close(
            "range_loss all within radius",
            loss::range_loss(shifts_of_norm(&tape, &[0.1, 0.2, 0.4]), r)
                .unwrap()
                .item(),
            0.0,
        ),
        close(
            "range_loss single 0.5 at r 0.2",
            loss::range_loss(shifts_of_norm(&tape, &[0.5]), 0.2).unwrap().item(),
            0.3,
        ),
        close(
            "range_loss mixed {0.1, 0.5, 0.7} at r 0.4",
            loss::range_loss(shifts_of_norm(&tape, &[0.1, 0.5, 0.7]), r)
                .unwrap()
                .item(),
            0.4 / 3.0,
        ),
        close(
            "rum_loss inside [-r, r]",
            loss::rum_loss(column(&tape, &[-r, -0.1, 0.0, r]), r).unwrap().item(),
            0.0,
        ),
        close(
            "rum_loss lower hinge -1.5r",
            loss::rum_loss(column(&tape, &[-1.5 * r]), r).unwrap().item(),
            0.5 * r,
        ),
        close(
            "rum_loss upper hinge +1.5r",
            loss::rum_loss(column(&tape, &[1.5 * r]), r).unwrap().item(),
            0.5 * r,
        ),
        close(
            "cross_entropy uniform C=4",
            loss::cross_entropy(tape.constant(Tensor::matrix(1, 4, vec![0.7; 4]).unwrap()), 2)
                .unwrap()
                .item(),
            4f64.ln(),
        ),
        close(
            "cross_entropy [1,2,3] label 2",
            loss::cross_entropy_value(&[1.0, 2.0, 3.0], 2).unwrap(),
            -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln(),
        ),
        close("fit_loss two centers three points", fit, (0.3 + 0.4) / 2.0),
        close("total loss 1 + 0.01·1 + 0.01·2", loss::total_loss(&terms), 1.03),
    ]
}
