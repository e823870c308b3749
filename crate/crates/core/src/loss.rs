//! Training objective: cross-entropy plus the center-shift and
//! radius-update regularisers.
//!
//! `L = ce + α₁ Σ_L (fit_L + range_L) + α₂ Σ_L rum_L`

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::tensor::Tensor;

pub const DEFAULT_ALPHA: f64 = 0.01;

/// Scalar values of every loss component.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub ce: f64,
    pub fit_per_layer: Vec<f64>,
    pub range_per_layer: Vec<f64>,
    pub rum_per_layer: Vec<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl LossTerms {
    pub fn new(ce: f64) -> Self {
        LossTerms {
            ce,
            fit_per_layer: Vec::new(),
            range_per_layer: Vec::new(),
            rum_per_layer: Vec::new(),
            alpha1: DEFAULT_ALPHA,
            alpha2: DEFAULT_ALPHA,
        }
    }

    pub fn fit(&self) -> f64 {
        self.fit_per_layer.iter().sum()
    }

    pub fn range(&self) -> f64 {
        self.range_per_layer.iter().sum()
    }

    pub fn rum(&self) -> f64 {
        self.rum_per_layer.iter().sum()
    }
}

pub fn total_loss(terms: &LossTerms) -> f64 {
    terms.ce + terms.alpha1 * (terms.fit() + terms.range()) + terms.alpha2 * terms.rum()
}

/// `-log softmax(logits)[label]` on plain values.
pub fn cross_entropy_value(logits: &[f64], label: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::arg("cross-entropy needs at least two classes"));
    }
    if label >= logits.len() {
        return Err(Error::arg(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// Cross-entropy of a `1 × C` logit row.
pub fn cross_entropy<'t>(logits: Var<'t>, label: usize) -> Result<Var<'t>> {
    if logits.cols() < 2 || logits.rows() != 1 {
        return Err(Error::arg(format!(
            "cross-entropy needs one row of ≥ 2 logits, got {:?}",
            logits.shape()
        )));
    }
    logits.cross_entropy(&[label])
}

/// Nearest row of `prev` for every row of `centers`, ties to lowest index.
pub fn nearest_rows(centers: &Tensor, prev: &Tensor) -> Vec<usize> {
    let pts: Vec<Point> = (0..prev.rows())
        .map(|i| [prev.at(i, 0), prev.at(i, 1), prev.at(i, 2)])
        .collect();
    (0..centers.rows())
        .map(|j| geometry::nearest_point(&pts, &[centers.at(j, 0), centers.at(j, 1), centers.at(j, 2)]))
        .collect()
}

/// Mean distance from each shifted center to its nearest previous-layer
/// point. The nearest point is chosen on values and held fixed.
pub fn fit_loss<'t>(shifted_centers: Var<'t>, prev_points: Var<'t>) -> Result<Var<'t>> {
    if prev_points.rows() == 0 {
        return Err(Error::arg("fit loss needs previous-layer points"));
    }
    let idx = nearest_rows(&shifted_centers.value(), &prev_points.value());
    Ok(shifted_centers.sub(prev_points.gather_rows(&idx)?)?.row_norm().mean())
}

/// `mean_j max(0, ‖Δc_j‖ − r)`.
pub fn range_loss(shifts: Var<'_>, layer_radius: f64) -> Result<Var<'_>> {
    check_radius(layer_radius)?;
    Ok(shifts.row_norm().add_scalar(-layer_radius).relu().mean())
}

/// `mean_j |min(0, r + Δr_j)| + max(0, Δr_j − r)`.
pub fn rum_loss(deltas: Var<'_>, layer_radius: f64) -> Result<Var<'_>> {
    check_radius(layer_radius)?;
    let below = deltas.add_scalar(layer_radius).scale(-1.0).relu();
    let above = deltas.add_scalar(-layer_radius).relu();
    Ok(below.add(above)?.mean())
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0) {
        return Err(Error::arg(format!("layer radius must be positive, got {r}")));
    }
    Ok(())
}

/// Differentiable loss components of one forward pass. Layers whose module
/// is off contribute nothing.
pub struct LossParts<'t> {
    pub ce: Var<'t>,
    pub fit: Vec<Var<'t>>,
    pub range: Vec<Var<'t>>,
    pub rum: Vec<Var<'t>>,
}

impl<'t> LossParts<'t> {
    pub fn total(&self, alpha1: f64, alpha2: f64) -> Result<Var<'t>> {
        let mut total = self.ce;
        let csm: Vec<Var<'t>> = self.fit.iter().chain(&self.range).copied().collect();
        if let Some(s) = sum_all(&csm)? {
            total = total.add(s.scale(alpha1))?;
        }
        if let Some(s) = sum_all(&self.rum)? {
            total = total.add(s.scale(alpha2))?;
        }
        Ok(total)
    }

    pub fn terms(&self, alpha1: f64, alpha2: f64) -> LossTerms {
        LossTerms {
            ce: self.ce.item(),
            fit_per_layer: self.fit.iter().map(|v| v.item()).collect(),
            range_per_layer: self.range.iter().map(|v| v.item()).collect(),
            rum_per_layer: self.rum.iter().map(|v| v.item()).collect(),
            alpha1,
            alpha2,
        }
    }
}

fn sum_all<'t>(vars: &[Var<'t>]) -> Result<Option<Var<'t>>> {
    let mut it = vars.iter();
    let Some(&first) = it.next() else {
        return Ok(None);
    };
    let mut acc = first;
    for &v in it {
        acc = acc.add(v)?;
    }
    Ok(Some(acc))
}
