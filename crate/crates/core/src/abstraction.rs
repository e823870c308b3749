//! Set abstraction layers and the point-cloud classifier.
//!
//! A set abstraction layer samples `N_L` centers with farthest point
//! sampling, optionally shifts them (center shift module) and resizes their
//! balls (radius update module), groups `K` points per ball, runs a shared
//! per-point MLP on `[(p − ĉ)/r̂, f]` and max-pools each group. Two such
//! layers, a global layer over all remaining points and a fully-connected
//! head form the classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Reduce, Tape, Var};
use crate::csm::{self, repeat_each, CsmParams, CsmVariant, Neighborhoods};
use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::loss::{self, LossParts};
use crate::nn::{Activation, Mlp};
use crate::param::ParamStore;
use crate::rum::{self, RumKind, RumParams, ShellNeighborhoods};
use crate::tensor::Tensor;

/// Center shift settings of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CsmSetting {
    pub variant: CsmVariant,
    /// Neighbourhood size drawn from the `2r` ball.
    pub k: usize,
}

/// Radius update settings of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RumSetting {
    pub kind: RumKind,
    pub shells: usize,
    /// At most this many neighbours from the `2r` ball feed the shells.
    pub neighbor_cap: usize,
    pub scale_by_radius: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerConfig {
    pub n_centers: usize,
    pub radius: f64,
    pub k: usize,
    /// Output widths of the per-point MLP.
    pub mlp: Vec<usize>,
    pub csm: Option<CsmSetting>,
    pub rum: Option<RumSetting>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: Vec<LayerConfig>,
    pub global_mlp: Vec<usize>,
    /// Hidden widths of the fully-connected head.
    pub head: Vec<usize>,
    pub classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::arg("need at least two classes"));
        }
        if self.global_mlp.is_empty() {
            return Err(Error::arg("global MLP needs at least one layer"));
        }
        let mut prev = usize::MAX;
        for (i, l) in self.layers.iter().enumerate() {
            if l.n_centers == 0 || l.n_centers >= prev {
                return Err(Error::arg(format!(
                    "layer {} must have fewer centers than the layer before it",
                    i + 1
                )));
            }
            prev = l.n_centers;
            if !(l.radius > 0.0) || l.k == 0 || l.mlp.is_empty() {
                return Err(Error::arg(format!(
                    "layer {} needs radius > 0, k ≥ 1 and an MLP",
                    i + 1
                )));
            }
            if let Some(c) = &l.csm {
                if c.k == 0 {
                    return Err(Error::arg(format!("layer {}: center shift k must be ≥ 1", i + 1)));
                }
                if let CsmVariant::III { u } = c.variant {
                    if u == 0 || u >= l.n_centers {
                        return Err(Error::arg(format!(
                            "layer {}: CSM-III U must lie in 1..{}",
                            i + 1,
                            l.n_centers
                        )));
                    }
                }
                if c.variant == CsmVariant::IV && l.n_centers < 2 {
                    return Err(Error::arg("CSM-IV needs at least two centers"));
                }
            }
            if let Some(r) = &l.rum {
                if r.shells == 0 || r.neighbor_cap == 0 {
                    return Err(Error::arg(format!(
                        "layer {}: shells and neighbour cap must be ≥ 1",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn min_points(&self) -> usize {
        self.layers.first().map_or(1, |l| l.n_centers)
    }
}

#[derive(Clone, Debug)]
pub struct SaLayer {
    pub config: LayerConfig,
    pub mlp: Mlp,
    pub csm: Option<CsmParams>,
    pub rum: Option<RumParams>,
}

/// Classifier parameters, held as ids into a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<SaLayer>,
    pub global: Mlp,
    pub head: Mlp,
}

/// Width of the raw per-point features (the coordinates).
pub const INPUT_FEATURES: usize = 3;

fn relu_stack(n: usize) -> Vec<Activation> {
    vec![Activation::Relu; n]
}

impl Model {
    pub fn new<R: rand::Rng + ?Sized>(config: ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut d = INPUT_FEATURES;
        let mut layers = Vec::new();
        for (i, lc) in config.layers.iter().enumerate() {
            let name = format!("sa{}", i + 1);
            let csm = lc
                .csm
                .as_ref()
                .map(|c| CsmParams::new(store, &format!("{name}.csm"), c.variant, d, rng))
                .transpose()?;
            let rum = lc
                .rum
                .as_ref()
                .map(|r| {
                    RumParams::new(store, &format!("{name}.rum"), r.kind, d, r.shells, rng).map(|mut p| {
                        p.scale_by_radius = r.scale_by_radius;
                        p
                    })
                })
                .transpose()?;
            let widths: Vec<usize> = std::iter::once(3 + d).chain(lc.mlp.iter().copied()).collect();
            let mlp = Mlp::new(store, &format!("{name}.mlp"), &widths, &relu_stack(lc.mlp.len()), rng)?;
            d = mlp.out_dim();
            layers.push(SaLayer {
                config: lc.clone(),
                mlp,
                csm,
                rum,
            });
        }
        let widths: Vec<usize> = std::iter::once(3 + d)
            .chain(config.global_mlp.iter().copied())
            .collect();
        let global = Mlp::new(store, "global.mlp", &widths, &relu_stack(config.global_mlp.len()), rng)?;
        let widths: Vec<usize> = std::iter::once(global.out_dim())
            .chain(config.head.iter().copied())
            .chain(std::iter::once(config.classes))
            .collect();
        let mut acts = relu_stack(config.head.len());
        acts.push(Activation::Identity);
        let head = Mlp::new(store, "head", &widths, &acts, rng)?;
        Ok(Model {
            config,
            layers,
            global,
            head,
        })
    }
}

/// What a random stream is used for inside a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Shift = 1,
    Radius = 2,
    Group = 3,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from a sequence of integers.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x51ED_2701_A3C4_B5D6, |h, &p| splitmix(h ^ splitmix(p)))
}

/// Identifies the random streams of one forward pass. Every region draws
/// from its own stream, so results do not depend on evaluation order or on
/// which modules are enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleStreams {
    pub seed: u64,
    pub epoch: u64,
    pub object: u64,
}

impl SampleStreams {
    pub fn new(seed: u64, epoch: u64, object: u64) -> Self {
        SampleStreams { seed, epoch, object }
    }

    pub fn rng(&self, layer: usize, region: usize, purpose: Purpose) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(&[
            self.seed,
            self.epoch,
            self.object,
            layer as u64,
            region as u64,
            purpose as u64,
        ]))
    }
}

/// Positions and features flowing between layers.
#[derive(Clone, Copy, Debug)]
pub struct LayerState<'t> {
    /// `N × 3`.
    pub positions: Var<'t>,
    /// `N × D`.
    pub features: Var<'t>,
}

impl<'t> LayerState<'t> {
    /// Raw cloud: coordinates double as the input features.
    pub fn from_cloud(tape: &'t Tape, cloud: &[Point]) -> Result<Self> {
        let positions = tape.constant(Tensor::from_rows(cloud)?);
        Ok(LayerState {
            positions,
            features: positions,
        })
    }
}

/// Plain-value record of one layer's regions.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionRecord {
    pub layer: usize,
    /// Centers before shifting.
    pub centers: Vec<Point>,
    pub shifts: Vec<Point>,
    /// Final per-center radius `r + Δr`.
    pub radii: Vec<f64>,
    pub radius_deltas: Vec<f64>,
    pub groups: Vec<Vec<usize>>,
    /// Regions that were empty and fell back to the nearest point.
    pub fallbacks: usize,
}

impl RegionRecord {
    pub fn shifted_centers(&self) -> Vec<Point> {
        self.centers
            .iter()
            .zip(&self.shifts)
            .map(|(c, d)| [c[0] + d[0], c[1] + d[1], c[2] + d[2]])
            .collect()
    }

    /// `layer,center_index,cx,cy,cz,dx,dy,dz,r,dr` lines, `c` being the
    /// shifted center.
    pub fn dump_lines(&self) -> Vec<String> {
        self.shifted_centers()
            .iter()
            .zip(&self.shifts)
            .zip(self.radii.iter().zip(&self.radius_deltas))
            .enumerate()
            .map(|(j, ((c, d), (r, dr)))| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    self.layer, j, c[0], c[1], c[2], d[0], d[1], d[2], r, dr
                )
            })
            .collect()
    }
}

pub const DUMP_HEADER: &str = "layer,center_index,cx,cy,cz,dx,dy,dz,r,dr";

/// Differentiable outputs of one set abstraction layer.
pub struct LayerOutput<'t> {
    pub state: LayerState<'t>,
    pub previous_positions: Var<'t>,
    /// `Δc`, when the center shift module is on.
    pub shift: Option<Var<'t>>,
    /// `ĉ = c + Δc`.
    pub shifted_centers: Var<'t>,
    /// `Δr`, when the radius update module is on.
    pub radius_delta: Option<Var<'t>>,
    pub record: RegionRecord,
}

fn rows_as_points(t: &Tensor) -> Vec<Point> {
    (0..t.rows()).map(|i| [t.at(i, 0), t.at(i, 1), t.at(i, 2)]).collect()
}

pub fn set_abstraction<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    layer: &SaLayer,
    layer_index: usize,
    state: LayerState<'t>,
    streams: &SampleStreams,
) -> Result<LayerOutput<'t>> {
    let cfg = &layer.config;
    let points = rows_as_points(&state.positions.value());
    let m = cfg.n_centers;
    if points.len() < m {
        return Err(Error::arg(format!(
            "layer {layer_index} needs {m} points, got {}",
            points.len()
        )));
    }
    let mut fallbacks = 0;
    let idx = geometry::farthest_point_sample(&points, m, 0)?;
    let centers = state.positions.gather_rows(&idx)?;
    let center_features = state.features.gather_rows(&idx)?;
    let center_points: Vec<Point> = idx.iter().map(|&i| points[i]).collect();

    let (shift, shifted) = match (&layer.csm, &cfg.csm) {
        (Some(params), Some(setting)) => {
            let mut groups = Vec::with_capacity(m);
            for (j, c) in center_points.iter().enumerate() {
                let mut rng = streams.rng(layer_index, j, Purpose::Shift);
                let (g, fell) = geometry::ball_query_or_nearest(&points, c, 2.0 * cfg.radius, setting.k, &mut rng)?;
                fallbacks += usize::from(fell);
                groups.push(g);
            }
            let nb = Neighborhoods::gather(centers, center_features, state.positions, state.features, &groups)?;
            let delta = csm::shift(tape, store, params, &nb)?.delta;
            (Some(delta), centers.add(delta)?)
        }
        _ => (None, centers),
    };
    let shifted_points = rows_as_points(&shifted.value());

    let (radius_delta, radii) = match (&layer.rum, &cfg.rum) {
        (Some(params), Some(setting)) => {
            let lists: Vec<Vec<usize>> = shifted_points
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let inside = geometry::points_within(&points, c, 2.0 * cfg.radius);
                    if inside.len() > setting.neighbor_cap {
                        let mut rng = streams.rng(layer_index, j, Purpose::Radius);
                        geometry::select_k(&inside, setting.neighbor_cap, &mut rng)
                    } else {
                        inside
                    }
                })
                .collect();
            let source_positions = state.positions.value().clone();
            let nb = ShellNeighborhoods::gather(
                center_features,
                &source_positions,
                state.features,
                &shifted_points,
                &lists,
                cfg.radius,
                setting.shells,
            )?;
            let delta = rum::radius_delta(tape, store, params, &nb)?;
            (Some(delta), delta.add_scalar(cfg.radius))
        }
        _ => (None, tape.constant(Tensor::full(&[m, 1], cfg.radius))),
    };
    let radius_values: Vec<f64> = radii.value().data().to_vec();

    let mut groups = Vec::with_capacity(m);
    for (j, c) in shifted_points.iter().enumerate() {
        let mut rng = streams.rng(layer_index, j, Purpose::Group);
        let (g, fell) = geometry::ball_query_or_nearest(&points, c, radius_values[j], cfg.k, &mut rng)?;
        fallbacks += usize::from(fell);
        groups.push(g);
    }
    let flat: Vec<usize> = groups.iter().flatten().copied().collect();
    let rep = repeat_each(m, cfg.k);
    let offsets = state
        .positions
        .gather_rows(&flat)?
        .sub(shifted.gather_rows(&rep)?)?
        .mul_col(radii.recip().gather_rows(&rep)?)?;
    let grouped = offsets.concat_cols(state.features.gather_rows(&flat)?)?;
    let features = layer
        .mlp
        .forward(tape, store, grouped)?
        .group_reduce(cfg.k, Reduce::Max)?;

    let shifts = match shift {
        Some(s) => rows_as_points(&s.value()),
        None => vec![[0.0; 3]; m],
    };
    let radius_deltas = match radius_delta {
        Some(d) => d.value().data().to_vec(),
        None => vec![0.0; m],
    };
    Ok(LayerOutput {
        state: LayerState {
            positions: shifted,
            features,
        },
        previous_positions: state.positions,
        shift,
        shifted_centers: shifted,
        radius_delta,
        record: RegionRecord {
            layer: layer_index,
            centers: center_points,
            shifts,
            radii: radius_values,
            radius_deltas,
            groups,
            fallbacks,
        },
    })
}

/// Midpoint of the axis-aligned bounding box.
pub fn bounding_center(points: &[Point]) -> Point {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])]
}

/// [`bounding_center`] as a `1 × 3` tape value. The midpoint moves with the
/// extreme point on each axis, so gradients reach those points.
fn bounding_center_var<'t>(tape: &'t Tape, positions: Var<'t>) -> Result<Var<'t>> {
    let points = rows_as_points(&positions.value());
    let mut extremes = vec![0usize; 6];
    for a in 0..3 {
        for (i, p) in points.iter().enumerate() {
            if p[a] < points[extremes[a]][a] {
                extremes[a] = i;
            }
            if p[a] > points[extremes[a + 3]][a] {
                extremes[a + 3] = i;
            }
        }
    }
    let mut mask = Tensor::zeros(&[6, 3]);
    for a in 0..3 {
        mask.data_mut()[a * 3 + a] = 1.0;
        mask.data_mut()[(a + 3) * 3 + a] = 1.0;
    }
    let picked = positions.gather_rows(&extremes)?.mul(tape.constant(mask))?;
    tape.constant(Tensor::full(&[1, 6], 0.5)).matmul(picked)
}

/// One region covering every point, centred on the bounding-box midpoint;
/// returns a `1 × D_out` descriptor.
pub fn global_abstraction<'t>(tape: &'t Tape, store: &ParamStore, mlp: &Mlp, state: LayerState<'t>) -> Result<Var<'t>> {
    let n = state.positions.rows();
    if n == 0 {
        return Err(Error::arg("global abstraction of an empty layer"));
    }
    let c = bounding_center_var(tape, state.positions)?.gather_rows(&vec![0; n])?;
    let grouped = state.positions.sub(c)?.concat_cols(state.features)?;
    mlp.forward(tape, store, grouped)?.group_reduce(n, Reduce::Max)
}

/// Everything a forward pass produces.
pub struct Forward<'t> {
    /// `1 × C`, pre-softmax.
    pub logits: Var<'t>,
    pub layers: Vec<LayerOutput<'t>>,
}

impl<'t> Forward<'t> {
    pub fn records(&self) -> Vec<RegionRecord> {
        self.layers.iter().map(|l| l.record.clone()).collect()
    }

    pub fn predicted(&self) -> usize {
        argmax(self.logits.value().data())
    }

    /// Cross-entropy plus the regulariser of every enabled module.
    pub fn loss_parts(&self, model: &Model, label: usize) -> Result<LossParts<'t>> {
        let mut parts = LossParts {
            ce: loss::cross_entropy(self.logits, label)?,
            fit: Vec::new(),
            range: Vec::new(),
            rum: Vec::new(),
        };
        for (out, layer) in self.layers.iter().zip(&model.layers) {
            let r = layer.config.radius;
            if let Some(shift) = out.shift {
                parts
                    .fit
                    .push(loss::fit_loss(out.shifted_centers, out.previous_positions)?);
                parts.range.push(loss::range_loss(shift, r)?);
            }
            if let Some(dr) = out.radius_delta {
                parts.rum.push(loss::rum_loss(dr, r)?);
            }
        }
        Ok(parts)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the full classifier on one cloud.
pub fn classify<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    model: &Model,
    cloud: &[Point],
    streams: &SampleStreams,
) -> Result<Forward<'t>> {
    if cloud.len() < model.config.min_points() {
        return Err(Error::arg(format!(
            "cloud has {} points, first layer samples {}",
            cloud.len(),
            model.config.min_points()
        )));
    }
    let mut state = LayerState::from_cloud(tape, cloud)?;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let out = set_abstraction(tape, store, layer, i + 1, state, streams)?;
        state = out.state;
        layers.push(out);
    }
    let descriptor = global_abstraction(tape, store, &model.global, state)?;
    let logits = model.head.forward(tape, store, descriptor)?;
    Ok(Forward { logits, layers })
}
