//! Center shift modules.
//!
//! Each variant maps the neighbourhoods of a layer's sampled centers to a
//! displacement `Δc_j ∈ R³` per center, so that the region is re-centred at
//! `ĉ_j = c_j + Δc_j`. Computations are batched over all `m` centers of a
//! layer: neighbourhood tensors hold `m·K` rows, center `j` owning rows
//! `j·K .. (j+1)·K`.
//!
//! | variant | center feature update                          | displacement                     |
//! |---------|------------------------------------------------|----------------------------------|
//! | I       | `ĝ = g + g_sa` (query/key attention)           | `mean_k γ(ĝ − f_k) ⊙ (c − p_k)`  |
//! | II      | as I, weights from position + query/key relation | as I                           |
//! | III     | `ĝ = g_sa + g_saC` over the `U` nearest centers | as I                            |
//! | IV      | as III over all centers                        | `mean_l θ(ĝ_j − ĝ_l)(c_j − c_l)` |
//! | V       | none                                           | `max_k mean_l θ(f_k − f_l)(p_k − p_l)` |

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Reduce, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::nn::{Activation, Linear, Mlp};
use crate::param::ParamStore;
use crate::tensor::Tensor;

/// Relation between query and key vectors in CSM-II.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Similarity {
    Sub,
    Sum,
    Cat,
    Dot,
    Hadamard,
}

impl Similarity {
    /// Width of `d(q, k)` for query/key width `dqk`.
    pub fn output_dim(self, dqk: usize) -> usize {
        match self {
            Similarity::Dot => 1,
            Similarity::Cat => 2 * dqk,
            _ => dqk,
        }
    }

    fn apply<'t>(self, q: Var<'t>, k: Var<'t>) -> Result<Var<'t>> {
        match self {
            Similarity::Sub => q.sub(k),
            Similarity::Sum => q.add(k),
            Similarity::Cat => q.concat_cols(k),
            Similarity::Dot => Ok(q.mul(k)?.sum_rows()),
            Similarity::Hadamard => q.mul(k),
        }
    }
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sub" => Similarity::Sub,
            "sum" => Similarity::Sum,
            "cat" => Similarity::Cat,
            "dot" => Similarity::Dot,
            "hadamard" => Similarity::Hadamard,
            other => return Err(Error::arg(format!("unknown similarity {other:?}"))),
        })
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Similarity::Sub => "sub",
            Similarity::Sum => "sum",
            Similarity::Cat => "cat",
            Similarity::Dot => "dot",
            Similarity::Hadamard => "hadamard",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsmVariant {
    I,
    II(Similarity),
    /// Uses the `u` nearest other centers.
    III {
        u: usize,
    },
    IV,
    V,
}

impl FromStr for CsmVariant {
    type Err = Error;

    /// `csm1`, `csm2-<sim>`, `csm3-<u>`, `csm4`, `csm5`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::arg(format!("unknown center shift variant {s:?}"));
        Ok(match s {
            "csm1" => CsmVariant::I,
            "csm4" => CsmVariant::IV,
            "csm5" => CsmVariant::V,
            _ => {
                if let Some(sim) = s.strip_prefix("csm2-") {
                    CsmVariant::II(sim.parse()?)
                } else if let Some(u) = s.strip_prefix("csm3-") {
                    CsmVariant::III {
                        u: u.parse().map_err(|_| bad())?,
                    }
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

impl fmt::Display for CsmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CsmVariant::I => write!(f, "csm1"),
            CsmVariant::II(sim) => write!(f, "csm2-{sim}"),
            CsmVariant::III { u } => write!(f, "csm3-{u}"),
            CsmVariant::IV => write!(f, "csm4"),
            CsmVariant::V => write!(f, "csm5"),
        }
    }
}

/// Query/key/value projections plus the output network of one attention
/// block.
#[derive(Clone, Debug)]
pub struct AttentionMaps {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    /// `dqk → D → D`, ReLU between.
    pub output: Mlp,
    pub dqk: usize,
}

impl AttentionMaps {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, dqk: usize, rng: &mut R) -> Result<Self> {
        Ok(AttentionMaps {
            query: Linear::new(store, &format!("{name}.query"), d, dqk, true, rng)?,
            key: Linear::new(store, &format!("{name}.key"), d, dqk, true, rng)?,
            value: Linear::new(store, &format!("{name}.value"), d, dqk, true, rng)?,
            output: Mlp::new(
                store,
                &format!("{name}.out"),
                &[dqk, d, d],
                &[Activation::Relu, Activation::Identity],
                rng,
            )?,
            dqk,
        })
    }
}

/// Learned transforms of one center shift module. Only the pieces the
/// variant uses are allocated.
#[derive(Clone, Debug)]
pub struct CsmParams {
    pub variant: CsmVariant,
    pub feature_dim: usize,
    /// Edge weights `γ`: `D → D/2 → D/4 → 3`, ReLU, ReLU, tanh.
    pub gamma: Option<Mlp>,
    /// Attention over a center's neighbours.
    pub local: Option<AttentionMaps>,
    /// Relative-position map `Θ: R³ → R³` (CSM-II).
    pub theta_pos: Option<Linear>,
    /// Scalar score network `ϑ` (CSM-II).
    pub score: Option<Mlp>,
    /// Attention among centers (CSM-III/IV).
    pub across: Option<AttentionMaps>,
    /// Pairwise 3×3 weighting `θ`: `D → 64 → 9` (CSM-IV/V).
    pub theta: Option<Mlp>,
}

pub const THETA_HIDDEN: usize = 64;
pub const SCORE_HIDDEN: usize = 16;

impl CsmParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        variant: CsmVariant,
        feature_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::arg("center shift needs a non-empty feature vector"));
        }
        let d = feature_dim;
        let dqk = (d / 2).max(1);
        let uses_gamma = matches!(variant, CsmVariant::I | CsmVariant::II(_) | CsmVariant::III { .. });
        let uses_local = !matches!(variant, CsmVariant::V);
        let uses_across = matches!(variant, CsmVariant::III { .. } | CsmVariant::IV);
        let uses_theta = matches!(variant, CsmVariant::IV | CsmVariant::V);

        let gamma = uses_gamma
            .then(|| {
                Mlp::new(
                    store,
                    &format!("{name}.gamma"),
                    &[d, (d / 2).max(2), (d / 4).max(2), 3],
                    &[Activation::Relu, Activation::Relu, Activation::Tanh],
                    rng,
                )
            })
            .transpose()?;
        let local = uses_local
            .then(|| AttentionMaps::new(store, &format!("{name}.local"), d, dqk, rng))
            .transpose()?;
        let (theta_pos, score) = match variant {
            CsmVariant::II(sim) => (
                Some(Linear::new(store, &format!("{name}.theta_pos"), 3, 3, false, rng)?),
                Some(Mlp::new(
                    store,
                    &format!("{name}.score"),
                    &[3 + sim.output_dim(dqk), SCORE_HIDDEN, 1],
                    &[Activation::Relu, Activation::Identity],
                    rng,
                )?),
            ),
            _ => (None, None),
        };
        let across = uses_across
            .then(|| AttentionMaps::new(store, &format!("{name}.across"), d, dqk, rng))
            .transpose()?;
        let theta = uses_theta
            .then(|| {
                Mlp::new(
                    store,
                    &format!("{name}.theta"),
                    &[d, THETA_HIDDEN, 9],
                    &[Activation::Relu, Activation::Identity],
                    rng,
                )
            })
            .transpose()?;
        Ok(CsmParams {
            variant,
            feature_dim,
            gamma,
            local,
            theta_pos,
            score,
            across,
            theta,
        })
    }
}

/// Neighbourhoods of all centers of one layer, `K` rows per center.
#[derive(Clone, Copy, Debug)]
pub struct Neighborhoods<'t> {
    /// `m × 3`.
    pub centers: Var<'t>,
    /// `m × D`.
    pub center_features: Var<'t>,
    /// `m·K × 3`.
    pub positions: Var<'t>,
    /// `m·K × D`.
    pub features: Var<'t>,
    pub k: usize,
}

/// Orders row indices by coordinates, then features, then index, so that
/// downstream sums see the same operand order for any input permutation.
pub(crate) fn canonical_order(positions: &Tensor, features: &Tensor, rows: &mut [usize]) {
    rows.sort_by(|&a, &b| {
        let pa: Point = [positions.at(a, 0), positions.at(a, 1), positions.at(a, 2)];
        let pb: Point = [positions.at(b, 0), positions.at(b, 1), positions.at(b, 2)];
        geometry::cmp_points(&pa, &pb)
            .then_with(|| {
                features
                    .row(a)
                    .iter()
                    .zip(features.row(b))
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
            .then(a.cmp(&b))
    });
}

impl<'t> Neighborhoods<'t> {
    /// Gathers `groups[j]` (all of length `K`) from the source rows.
    pub fn gather(
        centers: Var<'t>,
        center_features: Var<'t>,
        points: Var<'t>,
        features: Var<'t>,
        groups: &[Vec<usize>],
    ) -> Result<Self> {
        let m = centers.rows();
        if groups.len() != m {
            return Err(Error::shape(format!("{} groups for {m} centers", groups.len())));
        }
        let k = groups.first().map_or(0, Vec::len);
        if k == 0 || groups.iter().any(|g| g.len() != k) {
            return Err(Error::arg("every neighbourhood needs the same K ≥ 1 points"));
        }
        if center_features.rows() != m || center_features.cols() != features.cols() {
            return Err(Error::shape("center features do not match neighbour features"));
        }
        let flat: Vec<usize> = {
            let (pv, fv) = (points.value(), features.value());
            groups
                .iter()
                .flat_map(|g| {
                    let mut g = g.clone();
                    canonical_order(&pv, &fv, &mut g);
                    g
                })
                .collect()
        };
        Ok(Neighborhoods {
            centers,
            center_features,
            positions: points.gather_rows(&flat)?,
            features: features.gather_rows(&flat)?,
            k,
        })
    }

    pub fn num_centers(&self) -> usize {
        self.centers.rows()
    }

    fn repeat_index(&self) -> Vec<usize> {
        repeat_each(self.num_centers(), self.k)
    }

    /// `c_j − p_{j,k}` for every row, `m·K × 3`.
    fn relative(&self) -> Result<Var<'t>> {
        self.centers.gather_rows(&self.repeat_index())?.sub(self.positions)
    }

    fn center_values(&self) -> Vec<Point> {
        let c = self.centers.value();
        (0..c.rows()).map(|i| [c.at(i, 0), c.at(i, 1), c.at(i, 2)]).collect()
    }
}

/// `[0,0,..,1,1,..]`: every index `0..m` repeated `k` times.
pub(crate) fn repeat_each(m: usize, k: usize) -> Vec<usize> {
    (0..m).flat_map(|j| std::iter::repeat_n(j, k)).collect()
}

/// Output of an attention aggregation.
pub struct Aggregated<'t> {
    /// `m × D`.
    pub features: Var<'t>,
    /// `m × K` attention weights, rows summing to one.
    pub weights: Var<'t>,
}

/// Softmax over groups of `k` consecutive scores (`m·k × 1`), returning
/// `m × k` weights.
fn group_softmax<'t>(scores: Var<'t>, k: usize) -> Result<Var<'t>> {
    let m = scores.rows() / k;
    scores.reshape(&[m, k])?.softmax_rows()
}

/// `out(Σ_k a_k value(f_k))` for `k`-row groups.
fn weighted_values<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    maps: &AttentionMaps,
    values_src: Var<'t>,
    weights: Var<'t>,
    k: usize,
) -> Result<Var<'t>> {
    let rows = weights.rows() * k;
    let values = maps.value.forward(tape, store, values_src)?;
    let flat_w = weights.reshape(&[rows, 1])?;
    let summed = values.mul_col(flat_w)?.group_reduce(k, Reduce::Sum)?;
    maps.output.forward(tape, store, summed)
}

/// Scaled dot-product weights between one query row per group and `k` key
/// rows per group.
fn dot_weights<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    maps: &AttentionMaps,
    query_src: Var<'t>,
    key_src: Var<'t>,
    k: usize,
) -> Result<Var<'t>> {
    let m = query_src.rows();
    let q = maps.query.forward(tape, store, query_src)?;
    let q = q.gather_rows(&repeat_each(m, k))?;
    let keys = maps.key.forward(tape, store, key_src)?;
    let scores = q.mul(keys)?.sum_rows().scale(1.0 / (maps.dqk as f64).sqrt());
    group_softmax(scores, k)
}

fn local_maps(params: &CsmParams) -> Result<&AttentionMaps> {
    params
        .local
        .as_ref()
        .ok_or_else(|| Error::arg(format!("{} has no neighbour attention", params.variant)))
}

/// `g_sa = φ(Σ_k a_k ψ(f_k))` with `a = softmax(β(g)·φ_key(f)ᵀ/√d_qk)`.
pub fn attention_aggregate<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &CsmParams,
    nb: &Neighborhoods<'t>,
) -> Result<Aggregated<'t>> {
    let maps = local_maps(params)?;
    let weights = dot_weights(tape, store, maps, nb.center_features, nb.features, nb.k)?;
    let features = weighted_values(tape, store, maps, nb.features, weights, nb.k)?;
    Ok(Aggregated { features, weights })
}

/// As [`attention_aggregate`], with weights
/// `a = softmax_k ϑ([Θ(c − p_k), d(β(g), φ_key(f_k))])`.
pub fn attention_aggregate_positional<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &CsmParams,
    nb: &Neighborhoods<'t>,
    sim: Similarity,
) -> Result<Aggregated<'t>> {
    let maps = local_maps(params)?;
    let (theta_pos, score) = match (&params.theta_pos, &params.score) {
        (Some(t), Some(s)) => (t, s),
        _ => return Err(Error::arg("positional attention needs Θ and ϑ")),
    };
    if score.in_dim() != 3 + sim.output_dim(maps.dqk) {
        return Err(Error::arg(format!(
            "score network was built for a different similarity than {sim}"
        )));
    }
    let q = maps
        .query
        .forward(tape, store, nb.center_features)?
        .gather_rows(&nb.repeat_index())?;
    let keys = maps.key.forward(tape, store, nb.features)?;
    let delta = theta_pos.forward(tape, store, nb.relative()?)?;
    let input = delta.concat_cols(sim.apply(q, keys)?)?;
    let scores = score.forward(tape, store, input)?;
    let weights = group_softmax(scores, nb.k)?;
    let features = weighted_values(tape, store, maps, nb.features, weights, nb.k)?;
    Ok(Aggregated { features, weights })
}

/// `Δc_j = (1/K) Σ_k γ(ĝ_j − f_{j,k}) ⊙ (c_j − p_{j,k})`.
fn gamma_displacement<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &CsmParams,
    nb: &Neighborhoods<'t>,
    g_hat: Var<'t>,
) -> Result<Var<'t>> {
    let gamma = params
        .gamma
        .as_ref()
        .ok_or_else(|| Error::arg(format!("{} has no γ network", params.variant)))?;
    let diff = g_hat.gather_rows(&nb.repeat_index())?.sub(nb.features)?;
    let w = gamma.forward(tape, store, diff)?;
    w.mul(nb.relative()?)?.group_reduce(nb.k, Reduce::Mean)
}

/// Attention among centers: for each center `j`, aggregates the updated
/// features `ḡ` of the centers in `partners[j]` (all the same length).
fn across_centers<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &CsmParams,
    g_bar: Var<'t>,
    partners: &[Vec<usize>],
) -> Result<Aggregated<'t>> {
    let maps = params
        .across
        .as_ref()
        .ok_or_else(|| Error::arg(format!("{} has no center attention", params.variant)))?;
    let u = partners.first().map_or(0, Vec::len);
    let flat: Vec<usize> = partners.iter().flatten().copied().collect();
    let gathered = g_bar.gather_rows(&flat)?;
    let weights = dot_weights(tape, store, maps, g_bar, gathered, u)?;
    let features = weighted_values(tape, store, maps, gathered, weights, u)?;
    Ok(Aggregated { features, weights })
}

/// Result of a center shift module for one layer.
pub struct Shift<'t> {
    /// `m × 3` displacements.
    pub delta: Var<'t>,
    /// Neighbour attention weights (`m × K`), when the variant uses them.
    pub weights: Option<Var<'t>>,
    /// Center attention weights (`m × U`), CSM-III/IV.
    pub center_weights: Option<Var<'t>>,
}

pub fn csm1_shift<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &CsmParams,
    nb: &Neighborhoods<'t>,
) -> Result<Shift<'t>> {
    let agg = attention_aggregate(tape, store, params, nb)?;
    let g_hat = nb.center_features.add(agg.features)?;
    Ok(Shift {
        delta: gamma_displacement(tape, store, params, nb, g_hat)?,
        weights: Some(agg.weights),
        center_weights: None,
    })
}

pub fn csm2_shift<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &CsmParams,
    nb: &Neighborhoods<'t>,
    sim: Similarity,
) -> Result<Shift<'t>> {
    let agg = attention_aggregate_positional(tape, store, params, nb, sim)?;
    let g_hat = nb.center_features.add(agg.features)?;
    Ok(Shift {
        delta: gamma_displacement(tape, store, params, nb, g_hat)?,
        weights: Some(agg.weights),
        center_weights: None,
    })
}

/// `ĝ = g_sa + g_saC` where `g_saC` attends over `partners`.
fn center_context_features<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &CsmParams,
    nb: &Neighborhoods<'t>,
    partners: &[Vec<usize>],
) -> Result<(Var<'t>, Aggregated<'t>, Aggregated<'t>)> {
    let local = attention_aggregate(tape, store, params, nb)?;
    let g_bar = nb.center_features.add(local.features)?;
    let across = across_centers(tape, store, params, g_bar, partners)?;
    let g_hat = local.features.add(across.features)?;
    Ok((g_hat, local, across))
}

pub fn csm3_shift<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &CsmParams,
    nb: &Neighborhoods<'t>,
    u: usize,
) -> Result<Shift<'t>> {
    let centers = nb.center_values();
    let m = centers.len();
    if u == 0 || u >= m {
        return Err(Error::arg(format!(
            "CSM-III needs 1 ≤ U ≤ {} nearest centers, got {u}",
            m.saturating_sub(1)
        )));
    }
    let partners = (0..m)
        .map(|j| geometry::k_nearest_centers(&centers, j, u))
        .collect::<Result<Vec<_>>>()?;
    let (g_hat, local, across) = center_context_features(tape, store, params, nb, &partners)?;
    Ok(Shift {
        delta: gamma_displacement(tape, store, params, nb, g_hat)?,
        weights: Some(local.weights),
        center_weights: Some(across.weights),
    })
}

/// Applies `θ(a_i − b_i)` as a 3×3 matrix to `rel_i` for every row.
fn theta_pairs<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &CsmParams,
    feature_diff: Var<'t>,
    rel: Var<'t>,
) -> Result<Var<'t>> {
    let theta = params
        .theta
        .as_ref()
        .ok_or_else(|| Error::arg(format!("{} has no θ network", params.variant)))?;
    theta.forward(tape, store, feature_diff)?.row_matvec(rel)
}

pub fn csm4_shift<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &CsmParams,
    nb: &Neighborhoods<'t>,
) -> Result<Shift<'t>> {
    let m = nb.num_centers();
    if m < 2 {
        return Err(Error::arg("CSM-IV needs at least two centers"));
    }
    let everyone: Vec<Vec<usize>> = (0..m).map(|_| (0..m).collect()).collect();
    let (g_hat, local, across) = center_context_features(tape, store, params, nb, &everyone)?;
    let left = repeat_each(m, m);
    let right: Vec<usize> = (0..m).flat_map(|_| 0..m).collect();
    let diff = g_hat.gather_rows(&left)?.sub(g_hat.gather_rows(&right)?)?;
    let rel = nb.centers.gather_rows(&left)?.sub(nb.centers.gather_rows(&right)?)?;
    let delta = theta_pairs(tape, store, params, diff, rel)?.group_reduce(m, Reduce::Mean)?;
    Ok(Shift {
        delta,
        weights: Some(local.weights),
        center_weights: Some(across.weights),
    })
}

pub fn csm5_shift<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &CsmParams,
    nb: &Neighborhoods<'t>,
) -> Result<Shift<'t>> {
    let (m, k) = (nb.num_centers(), nb.k);
    let mut left = Vec::with_capacity(m * k * k);
    let mut right = Vec::with_capacity(m * k * k);
    for j in 0..m {
        for a in 0..k {
            for b in 0..k {
                left.push(j * k + a);
                right.push(j * k + b);
            }
        }
    }
    let diff = nb.features.gather_rows(&left)?.sub(nb.features.gather_rows(&right)?)?;
    let rel = nb
        .positions
        .gather_rows(&left)?
        .sub(nb.positions.gather_rows(&right)?)?;
    let per_point = theta_pairs(tape, store, params, diff, rel)?.group_reduce(k, Reduce::Mean)?;
    Ok(Shift {
        delta: per_point.group_reduce(k, Reduce::Max)?,
        weights: None,
        center_weights: None,
    })
}

/// Dispatches on the configured variant.
pub fn shift<'t>(tape: &'t Tape, store: &ParamStore, params: &CsmParams, nb: &Neighborhoods<'t>) -> Result<Shift<'t>> {
    if nb.features.cols() != params.feature_dim {
        return Err(Error::shape(format!(
            "{} built for {} features, got {}",
            params.variant,
            params.feature_dim,
            nb.features.cols()
        )));
    }
    match params.variant {
        CsmVariant::I => csm1_shift(tape, store, params, nb),
        CsmVariant::II(sim) => csm2_shift(tape, store, params, nb, sim),
        CsmVariant::III { u } => csm3_shift(tape, store, params, nb, u),
        CsmVariant::IV => csm4_shift(tape, store, params, nb),
        CsmVariant::V => csm5_shift(tape, store, params, nb),
    }
}

/// Plain-data neighbourhood of a single center.
#[derive(Clone, Debug)]
pub struct CsmContext {
    pub center: Point,
    pub center_feature: Vec<f64>,
    pub neighbor_positions: Vec<Point>,
    pub neighbor_features: Vec<Vec<f64>>,
    pub layer_radius: f64,
}

impl CsmContext {
    /// Records the context on `tape` as a one-center [`Neighborhoods`].
    pub fn record<'t>(&self, tape: &'t Tape) -> Result<Neighborhoods<'t>> {
        let k = self.neighbor_positions.len();
        if k == 0 || self.neighbor_features.len() != k {
            return Err(Error::arg("context needs K ≥ 1 neighbours with features"));
        }
        let centers = tape.constant(Tensor::from_rows(&[self.center])?);
        let center_features = tape.constant(Tensor::from_rows(std::slice::from_ref(&self.center_feature))?);
        let points = tape.constant(Tensor::from_rows(&self.neighbor_positions)?);
        let features = tape.constant(Tensor::from_rows(&self.neighbor_features)?);
        Neighborhoods::gather(centers, center_features, points, features, &[(0..k).collect()])
    }

    /// Whether every neighbour lies within twice the layer radius.
    pub fn neighbors_within_range(&self) -> bool {
        self.neighbor_positions
            .iter()
            .all(|p| geometry::dist(p, &self.center) <= 2.0 * self.layer_radius)
    }
}
