//! Radius update modules.
//!
//! For every center the ball of radius `2r` is cut into `T` concentric
//! shells. Feature differences `e_s = ζ(g − f_s)` are pooled per shell into
//! a `T × E` matrix (rows ordered from the innermost shell outwards), which a
//! tanh-terminated head maps to the signed radius change `Δr`. RUM-II first
//! lets the shell rows attend to each other.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Reduce, Tape, Var};
use crate::csm::canonical_order;
use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::nn::{Activation, Linear, Mlp};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_SHELLS: usize = 4;
pub const DEFAULT_NEIGHBOR_CAP: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShellAggregation {
    /// Mean over the shell.
    Cum,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RumVariant {
    I,
    II,
}

/// Variant and pooling, spelled `rum1-cum`, `rum1-max`, `rum2-cum`, `rum2-max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RumKind {
    pub variant: RumVariant,
    pub agg: ShellAggregation,
}

impl FromStr for RumKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (v, a) = s
            .split_once('-')
            .ok_or_else(|| Error::arg(format!("unknown radius update {s:?}")))?;
        let variant = match v {
            "rum1" => RumVariant::I,
            "rum2" => RumVariant::II,
            _ => return Err(Error::arg(format!("unknown radius update {s:?}"))),
        };
        let agg = match a {
            "cum" => ShellAggregation::Cum,
            "max" => ShellAggregation::Max,
            _ => return Err(Error::arg(format!("unknown shell aggregation in {s:?}"))),
        };
        Ok(RumKind { variant, agg })
    }
}

impl fmt::Display for RumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match self.variant {
            RumVariant::I => "rum1",
            RumVariant::II => "rum2",
        };
        let a = match self.agg {
            ShellAggregation::Cum => "cum",
            ShellAggregation::Max => "max",
        };
        write!(f, "{v}-{a}")
    }
}

#[derive(Clone, Debug)]
pub struct ShellAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

#[derive(Clone, Debug)]
pub struct RumParams {
    pub kind: RumKind,
    pub shells: usize,
    pub feature_dim: usize,
    /// Width `E` of the transformed feature differences.
    pub embed_dim: usize,
    /// `ζ: D → E`, ReLU.
    pub zeta: Mlp,
    /// `T·E → T·E/2 → 1`, ReLU then tanh.
    pub head: Mlp,
    pub attention: Option<ShellAttention>,
    /// Multiply the head output by the layer radius, keeping `|Δr| < r`.
    pub scale_by_radius: bool,
}

impl RumParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        kind: RumKind,
        feature_dim: usize,
        shells: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if feature_dim == 0 || shells == 0 {
            return Err(Error::arg("radius update needs features and at least one shell"));
        }
        let e = (feature_dim / 2).max(1);
        let zeta = Mlp::new(
            store,
            &format!("{name}.zeta"),
            &[feature_dim, e],
            &[Activation::Relu],
            rng,
        )?;
        let head = Mlp::new(
            store,
            &format!("{name}.head"),
            &[shells * e, (shells * e / 2).max(1), 1],
            &[Activation::Relu, Activation::Tanh],
            rng,
        )?;
        let attention = match kind.variant {
            RumVariant::I => None,
            RumVariant::II => Some(ShellAttention {
                query: Linear::new(store, &format!("{name}.query"), e, e, true, rng)?,
                key: Linear::new(store, &format!("{name}.key"), e, e, true, rng)?,
                value: Linear::new(store, &format!("{name}.value"), e, e, true, rng)?,
            }),
        };
        Ok(RumParams {
            kind,
            shells,
            feature_dim,
            embed_dim: e,
            zeta,
            head,
            attention,
            scale_by_radius: true,
        })
    }
}

/// Shell-sorted neighbours of all centers of a layer.
#[derive(Clone, Debug)]
pub struct ShellNeighborhoods<'t> {
    /// `m × D`.
    pub center_features: Var<'t>,
    /// Neighbour features, grouped by center then shell.
    pub features: Var<'t>,
    /// Center owning each neighbour row.
    pub owner: Vec<usize>,
    /// `m·T + 1` row offsets; segment `j·T + (t−1)` is shell `t` of center `j`.
    pub offsets: Vec<usize>,
    pub shells: usize,
    /// Base radius `r`; neighbours lie within `2r`.
    pub radius: f64,
}

impl<'t> ShellNeighborhoods<'t> {
    /// Partitions `neighbors[j]` (indices into `points`) into shells around
    /// `centers[j]`. Empty lists are allowed and yield all-zero shell rows.
    #[allow(clippy::too_many_arguments)]
    pub fn gather(
        center_features: Var<'t>,
        points: &Tensor,
        features: Var<'t>,
        centers: &[Point],
        neighbors: &[Vec<usize>],
        radius: f64,
        shells: usize,
    ) -> Result<Self> {
        if centers.len() != neighbors.len() || centers.len() != center_features.rows() {
            return Err(Error::shape("centers, features and neighbour lists disagree"));
        }
        let positions: Vec<Point> = (0..points.rows())
            .map(|i| [points.at(i, 0), points.at(i, 1), points.at(i, 2)])
            .collect();
        let mut flat = Vec::new();
        let mut owner = Vec::new();
        let mut offsets = vec![0];
        {
            let fv = features.value();
            for (j, (c, list)) in centers.iter().zip(neighbors).enumerate() {
                let part = geometry::shell_partition(&positions, list, c, 2.0 * radius, shells)?;
                for members in part.members() {
                    let mut rows: Vec<usize> = members.iter().map(|&i| list[i]).collect();
                    canonical_order(points, &fv, &mut rows);
                    owner.extend(std::iter::repeat_n(j, rows.len()));
                    flat.extend(rows);
                    offsets.push(flat.len());
                }
            }
        }
        Ok(ShellNeighborhoods {
            center_features,
            features: features.gather_rows(&flat)?,
            owner,
            offsets,
            shells,
            radius,
        })
    }

    pub fn num_centers(&self) -> usize {
        self.center_features.rows()
    }
}

/// `R̄`: pooled `ζ(g − f_s)` per shell, `m·T × E`.
pub fn shell_features<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &RumParams,
    nb: &ShellNeighborhoods<'t>,
    agg: ShellAggregation,
) -> Result<Var<'t>> {
    if nb.shells != params.shells {
        return Err(Error::shape(format!(
            "module built for {} shells, neighbourhood has {}",
            params.shells, nb.shells
        )));
    }
    let reduce = match agg {
        ShellAggregation::Cum => Reduce::Mean,
        ShellAggregation::Max => Reduce::Max,
    };
    if nb.owner.is_empty() {
        let m = nb.num_centers();
        return Ok(tape.constant(Tensor::zeros(&[m * nb.shells, params.embed_dim])));
    }
    let diff = nb.center_features.gather_rows(&nb.owner)?.sub(nb.features)?;
    let e = params.zeta.forward(tape, store, diff)?;
    e.segment(&nb.offsets, reduce)
}

fn head_delta<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &RumParams,
    rows: Var<'t>,
    nb: &ShellNeighborhoods<'t>,
) -> Result<Var<'t>> {
    let m = nb.num_centers();
    let flat = rows.reshape(&[m, params.shells * params.embed_dim])?;
    let out = params.head.forward(tape, store, flat)?;
    Ok(if params.scale_by_radius {
        // tanh rounds to ±1 for large inputs; one ulp of headroom keeps
        // |Δr| < r, and with it r + Δr > 0, in floating point too.
        out.scale(nb.radius * (1.0 - f64::EPSILON))
    } else {
        out
    })
}

/// `Δr = r · head(R̄)`, `m × 1`.
pub fn rum1_delta<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &RumParams,
    nb: &ShellNeighborhoods<'t>,
    agg: ShellAggregation,
) -> Result<Var<'t>> {
    let rows = shell_features(tape, store, params, nb, agg)?;
    head_delta(tape, store, params, rows, nb)
}

/// Shell attention `R^sa_t = Σ_v a_{t,v} ψ̂(R_v)` with
/// `a_t = softmax_v(β̂(R_t)·φ̂(R_v)/√E)`; returns `(R^sa, a)` with `a` as
/// `m·T × T`.
pub fn shell_attention<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &RumParams,
    rows: Var<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let attn = params
        .attention
        .as_ref()
        .ok_or_else(|| Error::arg("RUM-I has no shell attention"))?;
    let t = params.shells;
    let m = rows.rows() / t;
    let q = attn.query.forward(tape, store, rows)?;
    let k = attn.key.forward(tape, store, rows)?;
    let v = attn.value.forward(tape, store, rows)?;
    let mut left = Vec::with_capacity(m * t * t);
    let mut right = Vec::with_capacity(m * t * t);
    for j in 0..m {
        for a in 0..t {
            for b in 0..t {
                left.push(j * t + a);
                right.push(j * t + b);
            }
        }
    }
    let scores = q
        .gather_rows(&left)?
        .mul(k.gather_rows(&right)?)?
        .sum_rows()
        .scale(1.0 / (params.embed_dim as f64).sqrt());
    let weights = scores.reshape(&[m * t, t])?.softmax_rows()?;
    let flat_w = weights.reshape(&[m * t * t, 1])?;
    let sa = v.gather_rows(&right)?.mul_col(flat_w)?.group_reduce(t, Reduce::Sum)?;
    Ok((sa, weights))
}

/// `Δr = r · head(R + R^sa)`, `m × 1`.
pub fn rum2_delta<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &RumParams,
    nb: &ShellNeighborhoods<'t>,
    agg: ShellAggregation,
) -> Result<Var<'t>> {
    let rows = shell_features(tape, store, params, nb, agg)?;
    let (sa, _) = shell_attention(tape, store, params, rows)?;
    head_delta(tape, store, params, rows.add(sa)?, nb)
}

pub fn radius_delta<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &RumParams,
    nb: &ShellNeighborhoods<'t>,
) -> Result<Var<'t>> {
    match params.kind.variant {
        RumVariant::I => rum1_delta(tape, store, params, nb, params.kind.agg),
        RumVariant::II => rum2_delta(tape, store, params, nb, params.kind.agg),
    }
}

/// Plain-data neighbourhood of a single center.
#[derive(Clone, Debug)]
pub struct RumContext {
    pub center: Point,
    pub center_feature: Vec<f64>,
    pub neighbor_positions: Vec<Point>,
    pub neighbor_features: Vec<Vec<f64>>,
    pub layer_radius: f64,
    pub shells: usize,
}

impl RumContext {
    pub fn record<'t>(&self, tape: &'t Tape) -> Result<ShellNeighborhoods<'t>> {
        let s = self.neighbor_positions.len();
        if self.neighbor_features.len() != s {
            return Err(Error::arg("every neighbour needs a feature vector"));
        }
        let cf = tape.constant(Tensor::from_rows(std::slice::from_ref(&self.center_feature))?);
        let d = self.center_feature.len();
        let (points, features) = if s == 0 {
            (Tensor::zeros(&[0, 3]), Tensor::zeros(&[0, d]))
        } else {
            (
                Tensor::from_rows(&self.neighbor_positions)?,
                Tensor::from_rows(&self.neighbor_features)?,
            )
        };
        ShellNeighborhoods::gather(
            cf,
            &points,
            tape.constant(features),
            &[self.center],
            &[(0..s).collect()],
            self.layer_radius,
            self.shells,
        )
    }
}
