//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive applied to tracked values. Values are
//! addressed through lightweight [`Var`] handles borrowed from the tape;
//! [`Tape::backward`] walks the recorded nodes once, newest first, and returns
//! the adjoint of every node that depends on a tracked leaf.
//!
//! All operations work on the matrix view of their operands (see
//! [`Tensor::rows`]/[`Tensor::cols`]).

use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{self, same_shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Recip(usize),
    Gather(usize, Vec<usize>),
    ConcatCols(usize, usize),
    Reshape(usize),
    Segment {
        input: usize,
        offsets: Vec<usize>,
        kind: Reduce,
        /// Winning source row per (segment, column) for `Reduce::Max`.
        argmax: Vec<usize>,
    },
    SumRows(usize),
    SumAll(usize),
    SoftmaxRows(usize),
    RowNorm(usize),
    RowMatVec(usize, usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Records primitive operations for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, tracked });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// An untracked input. No gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A tracked input whose gradient can be read from [`Gradients::get`].
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a parameter block as a tracked leaf. Repeated calls for the same
    /// block return the same node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.bound.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let v = self.variable(store.get(id).tensor.clone());
        self.bound.borrow_mut().insert(id, v.id);
        v
    }

    fn tracked(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].tracked)
    }

    /// Smallest distance of any tracked value from a point where the
    /// recorded function is not differentiable: ReLU inputs near zero and
    /// near-ties inside max reductions. Exact ties are ignored because they
    /// come from duplicated rows, which move together. Finite-difference
    /// checks are only meaningful when this is well above the step size.
    pub fn kink_distance(&self) -> f64 {
        let nodes = self.nodes.borrow();
        let mut best = f64::INFINITY;
        for node in nodes.iter().filter(|n| n.tracked) {
            match &node.op {
                Op::Relu(i) => {
                    for x in nodes[*i].value.data() {
                        best = best.min(x.abs());
                    }
                }
                Op::Segment {
                    input,
                    offsets,
                    kind: Reduce::Max,
                    ..
                } => {
                    let a = &nodes[*input].value;
                    let c = a.cols();
                    for w in offsets.windows(2) {
                        for col in 0..c {
                            let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                            for r in w[0]..w[1] {
                                let x = a.at(r, col);
                                if x > top {
                                    second = top;
                                    top = x;
                                } else if x > second && x < top {
                                    second = x;
                                }
                            }
                            if second > f64::NEG_INFINITY {
                                best = best.min(top - second);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        best
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.tracked {
                continue;
            }
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let bound = self.bound.borrow();
        let params = bound.iter().map(|(&p, &n)| (p, n)).collect();
        Ok(Gradients { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].tracked {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let tracked = |i: usize| nodes[i].tracked;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if tracked(*a) {
                // dA = dC · Bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g.data()[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv.data()[p * n..(p + 1) * n];
                        da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                accumulate(grads, nodes, *a, Tensor::new(av.shape().to_vec(), da).unwrap());
            }
            if tracked(*b) {
                // dB = Aᵀ · dC
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g.data()[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aval = av.data()[i * k + p];
                        if aval == 0.0 {
                            continue;
                        }
                        for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += aval * gv;
                        }
                    }
                }
                accumulate(grads, nodes, *b, Tensor::new(bv.shape().to_vec(), db).unwrap());
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if tracked(*a) {
                accumulate(grads, nodes, *a, zip_map(g, bv, |x, y| x * y));
            }
            if tracked(*b) {
                accumulate(grads, nodes, *b, zip_map(g, av, |x, y| x * y));
            }
        }
        Op::AddRow(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            if tracked(*b) {
                let c = g.cols();
                let mut db = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                let shape = val(*b).shape().to_vec();
                accumulate(grads, nodes, *b, Tensor::new(shape, db).unwrap());
            }
        }
        Op::MulCol(a, s) => {
            let (av, sv) = (val(*a), val(*s));
            let c = av.cols();
            if tracked(*a) {
                let mut da = g.clone();
                for (row, &f) in da.data_mut().chunks_mut(c).zip(sv.data()) {
                    row.iter_mut().for_each(|v| *v *= f);
                }
                accumulate(grads, nodes, *a, da);
            }
            if tracked(*s) {
                let ds: Vec<f64> = g
                    .data()
                    .chunks(c)
                    .zip(av.data().chunks(c))
                    .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                    .collect();
                accumulate(grads, nodes, *s, Tensor::new(sv.shape().to_vec(), ds).unwrap());
            }
        }
        Op::Scale(a, f) => accumulate(grads, nodes, *a, g.map(|v| v * f)),
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::Relu(a) => accumulate(
            grads,
            nodes,
            *a,
            zip_map(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
        ),
        Op::Tanh(a) => accumulate(grads, nodes, *a, zip_map(g, out, |gv, y| gv * (1.0 - y * y))),
        Op::Recip(a) => accumulate(grads, nodes, *a, zip_map(g, out, |gv, y| -gv * y * y)),
        Op::Gather(a, idx) => {
            let av = val(*a);
            let c = av.cols();
            let mut da = Tensor::zeros(av.shape());
            for (row, &src) in idx.iter().enumerate() {
                let d = &mut da.data_mut()[src * c..(src + 1) * c];
                for (x, y) in d.iter_mut().zip(&g.data()[row * c..(row + 1) * c]) {
                    *x += y;
                }
            }
            accumulate(grads, nodes, *a, da);
        }
        Op::ConcatCols(a, b) => {
            let (ca, cb) = (val(*a).cols(), val(*b).cols());
            let c = ca + cb;
            if tracked(*a) {
                let d: Vec<f64> = g.data().chunks(c).flat_map(|r| r[..ca].to_vec()).collect();
                accumulate(grads, nodes, *a, Tensor::new(val(*a).shape().to_vec(), d).unwrap());
            }
            if tracked(*b) {
                let d: Vec<f64> = g.data().chunks(c).flat_map(|r| r[ca..].to_vec()).collect();
                accumulate(grads, nodes, *b, Tensor::new(val(*b).shape().to_vec(), d).unwrap());
            }
        }
        Op::Reshape(a) => {
            let shape = val(*a).shape().to_vec();
            accumulate(grads, nodes, *a, Tensor::new(shape, g.data().to_vec()).unwrap());
        }
        Op::Segment {
            input,
            offsets,
            kind,
            argmax,
        } => {
            let av = val(*input);
            let c = av.cols();
            let mut da = Tensor::zeros(av.shape());
            for s in 0..offsets.len() - 1 {
                let (lo, hi) = (offsets[s], offsets[s + 1]);
                if lo == hi {
                    continue;
                }
                let grow = &g.data()[s * c..(s + 1) * c];
                match kind {
                    Reduce::Max => {
                        for (col, &gv) in grow.iter().enumerate() {
                            da.data_mut()[argmax[s * c + col] * c + col] += gv;
                        }
                    }
                    Reduce::Sum | Reduce::Mean => {
                        let f = if *kind == Reduce::Mean {
                            1.0 / (hi - lo) as f64
                        } else {
                            1.0
                        };
                        for r in lo..hi {
                            for (d, &gv) in da.data_mut()[r * c..(r + 1) * c].iter_mut().zip(grow) {
                                *d += gv * f;
                            }
                        }
                    }
                }
            }
            accumulate(grads, nodes, *input, da);
        }
        Op::SumRows(a) => {
            let av = val(*a);
            let c = av.cols();
            let mut da = Tensor::zeros(av.shape());
            for (row, &gv) in da.data_mut().chunks_mut(c).zip(g.data()) {
                row.iter_mut().for_each(|v| *v = gv);
            }
            accumulate(grads, nodes, *a, da);
        }
        Op::SumAll(a) => {
            accumulate(grads, nodes, *a, Tensor::full(val(*a).shape(), g.item()));
        }
        Op::SoftmaxRows(a) => {
            let c = out.cols();
            let mut da = Tensor::zeros(out.shape());
            for ((d, y), gr) in da
                .data_mut()
                .chunks_mut(c)
                .zip(out.data().chunks(c))
                .zip(g.data().chunks(c))
            {
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((dv, &yv), &gv) in d.iter_mut().zip(y).zip(gr) {
                    *dv = yv * (gv - dot);
                }
            }
            accumulate(grads, nodes, *a, da);
        }
        Op::RowNorm(a) => {
            let av = val(*a);
            let c = av.cols();
            let mut da = Tensor::zeros(av.shape());
            for (i, (d, x)) in da.data_mut().chunks_mut(c).zip(av.data().chunks(c)).enumerate() {
                let norm = out.data()[i];
                if norm > 0.0 {
                    let f = g.data()[i] / norm;
                    for (dv, xv) in d.iter_mut().zip(x) {
                        *dv = f * xv;
                    }
                }
            }
            accumulate(grads, nodes, *a, da);
        }
        Op::RowMatVec(m, v) => {
            let (mv, vv) = (val(*m), val(*v));
            let d = vv.cols();
            if tracked(*m) {
                let mut dm = Tensor::zeros(mv.shape());
                for i in 0..mv.rows() {
                    for p in 0..d {
                        let gp = g.data()[i * d + p];
                        for q in 0..d {
                            dm.data_mut()[i * d * d + p * d + q] = gp * vv.data()[i * d + q];
                        }
                    }
                }
                accumulate(grads, nodes, *m, dm);
            }
            if tracked(*v) {
                let mut dv = Tensor::zeros(vv.shape());
                for i in 0..vv.rows() {
                    for q in 0..d {
                        let mut s = 0.0;
                        for p in 0..d {
                            s += mv.data()[i * d * d + p * d + q] * g.data()[i * d + p];
                        }
                        dv.data_mut()[i * d + q] = s;
                    }
                }
                accumulate(grads, nodes, *v, dv);
            }
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let c = probs.cols();
            let mut dz = probs.clone();
            for (i, (row, &label)) in dz.data_mut().chunks_mut(c).zip(labels).enumerate() {
                row[label] -= 1.0;
                let gi = g.data()[i];
                row.iter_mut().for_each(|v| *v *= gi);
            }
            let shape = val(*logits).shape().to_vec();
            accumulate(grads, nodes, *logits, Tensor::new(shape, dz.into_data()).unwrap());
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it is reachable.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Adds every bound parameter's gradient into its block.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(param, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(param).grad.add_assign(g);
            }
        }
    }

    /// Parameter gradients keyed by block id, for callers that merge them
    /// across workers.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> + '_ {
        self.params
            .iter()
            .filter_map(|&(p, n)| self.grads[n].as_ref().map(|g| (p, g)))
    }
}

/// Runs the reverse sweep and accumulates parameter gradients into `store`.
pub fn backward(loss: Var<'_>, store: &mut ParamStore) -> Result<()> {
    let grads = loss.tape.backward(loss)?;
    grads.accumulate_into(store);
    Ok(())
}

// Graph-building methods return `Result`, so the operator traits do not fit.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let tracked = self.tape.tracked(&[self.id]);
        self.tape.push(value, op, tracked)
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let tracked = self.tape.tracked(&[self.id, other.id]);
        self.tape.push(value, op, tracked)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = tensor::matmul(&self.value(), &other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    fn zip(self, other: Var<'t>, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, what)?;
        Ok(zip_map(&a, &b, f))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip(other, "sub", |x, y| x - y)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Hadamard product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.zip(other, "hadamard", |x, y| x * y)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// Adds a `1 × c` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let v = {
            let (a, b) = (self.value(), row.value());
            let c = a.cols();
            if b.len() != c {
                return Err(Error::shape(format!(
                    "add_row: row of length {} for {c} columns",
                    b.len()
                )));
            }
            let mut out = a.clone();
            for r in out.data_mut().chunks_mut(c) {
                for (x, y) in r.iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
            out
        };
        Ok(self.binary(row, v, Op::AddRow(self.id, row.id)))
    }

    /// Scales row `i` by `col[i]` (`col` is `r × 1`).
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>> {
        let v = {
            let (a, s) = (self.value(), col.value());
            if s.len() != a.rows() {
                return Err(Error::shape(format!(
                    "mul_col: {} factors for {} rows",
                    s.len(),
                    a.rows()
                )));
            }
            let c = a.cols();
            let mut out = a.clone();
            for (r, &f) in out.data_mut().chunks_mut(c).zip(s.data()) {
                r.iter_mut().for_each(|x| *x *= f);
            }
            out
        };
        Ok(self.binary(col, v, Op::MulCol(self.id, col.id)))
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        let v = self.value().map(|x| x * factor);
        self.unary(v, Op::Scale(self.id, factor))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value().map(tensor::relu);
        self.unary(v, Op::Relu(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().map(f64::tanh);
        self.unary(v, Op::Tanh(self.id))
    }

    pub fn recip(self) -> Var<'t> {
        let v = self.value().map(|x| 1.0 / x);
        self.unary(v, Op::Recip(self.id))
    }

    /// Row `i` of the result is row `indices[i]` of `self`.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t>> {
        let v = {
            let a = self.value();
            let (r, c) = (a.rows(), a.cols());
            let mut out = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                if i >= r {
                    return Err(Error::shape(format!("gather index {i} out of {r} rows")));
                }
                out.extend_from_slice(a.row(i));
            }
            Tensor::new(vec![indices.len(), c], out)?
        };
        Ok(self.unary(v, Op::Gather(self.id, indices.to_vec())))
    }

    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = {
            let (a, b) = (self.value(), other.value());
            if a.rows() != b.rows() {
                return Err(Error::shape(format!("concat_cols: {} vs {} rows", a.rows(), b.rows())));
            }
            let mut out = Vec::with_capacity(a.len() + b.len());
            for i in 0..a.rows() {
                out.extend_from_slice(a.row(i));
                out.extend_from_slice(b.row(i));
            }
            Tensor::new(vec![a.rows(), a.cols() + b.cols()], out)?
        };
        Ok(self.binary(other, v, Op::ConcatCols(self.id, other.id)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Reduces consecutive row ranges `offsets[s]..offsets[s+1]` column-wise.
    /// Empty ranges produce zero rows.
    pub fn segment(self, offsets: &[usize], kind: Reduce) -> Result<Var<'t>> {
        let (v, argmax) = {
            let a = self.value();
            let c = a.cols();
            if offsets.is_empty()
                || offsets[0] != 0
                || *offsets.last().unwrap() != a.rows()
                || offsets.windows(2).any(|w| w[0] > w[1])
            {
                return Err(Error::shape(format!("segment offsets do not cover {} rows", a.rows())));
            }
            let segs = offsets.len() - 1;
            let mut out = vec![0.0; segs * c];
            let mut argmax = Vec::new();
            if kind == Reduce::Max {
                argmax = vec![0; segs * c];
            }
            for s in 0..segs {
                let (lo, hi) = (offsets[s], offsets[s + 1]);
                if lo == hi {
                    continue;
                }
                let o = &mut out[s * c..(s + 1) * c];
                match kind {
                    Reduce::Max => {
                        o.copy_from_slice(a.row(lo));
                        let am = &mut argmax[s * c..(s + 1) * c];
                        am.iter_mut().for_each(|x| *x = lo);
                        for r in lo + 1..hi {
                            for (col, &x) in a.row(r).iter().enumerate() {
                                if x > o[col] {
                                    o[col] = x;
                                    am[col] = r;
                                }
                            }
                        }
                    }
                    Reduce::Sum | Reduce::Mean => {
                        for r in lo..hi {
                            for (x, y) in o.iter_mut().zip(a.row(r)) {
                                *x += y;
                            }
                        }
                        if kind == Reduce::Mean {
                            let n = (hi - lo) as f64;
                            o.iter_mut().for_each(|x| *x /= n);
                        }
                    }
                }
            }
            (Tensor::new(vec![segs, c], out)?, argmax)
        };
        Ok(self.unary(
            v,
            Op::Segment {
                input: self.id,
                offsets: offsets.to_vec(),
                kind,
                argmax,
            },
        ))
    }

    /// Reduces equal groups of `group` consecutive rows.
    pub fn group_reduce(self, group: usize, kind: Reduce) -> Result<Var<'t>> {
        let rows = self.rows();
        if group == 0 || !rows.is_multiple_of(group) {
            return Err(Error::shape(format!("{rows} rows do not split into groups of {group}")));
        }
        let offsets: Vec<usize> = (0..=rows / group).map(|s| s * group).collect();
        self.segment(&offsets, kind)
    }

    /// `r × c → r × 1`.
    pub fn sum_rows(self) -> Var<'t> {
        let v = {
            let a = self.value();
            let c = a.cols();
            let data = a.data().chunks(c).map(|r| r.iter().sum()).collect();
            Tensor::new(vec![a.rows(), 1], data).unwrap()
        };
        self.unary(v, Op::SumRows(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::SumAll(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Softmax of every row, max-subtracted.
    pub fn softmax_rows(self) -> Result<Var<'t>> {
        let v = {
            let a = self.value();
            if a.cols() == 0 || a.is_empty() {
                return Err(Error::shape("softmax of an empty tensor"));
            }
            let c = a.cols();
            let mut out = vec![0.0; a.len()];
            for (x, o) in a.data().chunks(c).zip(out.chunks_mut(c)) {
                tensor::softmax_slice(x, o);
            }
            Tensor::new(a.shape().to_vec(), out)?
        };
        Ok(self.unary(v, Op::SoftmaxRows(self.id)))
    }

    /// Euclidean norm of every row, `r × c → r × 1`.
    pub fn row_norm(self) -> Var<'t> {
        let v = {
            let a = self.value();
            let c = a.cols();
            let data = a
                .data()
                .chunks(c)
                .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect();
            Tensor::new(vec![a.rows(), 1], data).unwrap()
        };
        self.unary(v, Op::RowNorm(self.id))
    }

    /// Applies the `d × d` matrix stored row-major in row `i` of `self`
    /// (`r × d²`) to row `i` of `vecs` (`r × d`).
    pub fn row_matvec(self, vecs: Var<'t>) -> Result<Var<'t>> {
        let v = {
            let (m, x) = (self.value(), vecs.value());
            let d = x.cols();
            if m.rows() != x.rows() || m.cols() != d * d {
                return Err(Error::shape(format!(
                    "row_matvec: matrices {:?} with vectors {:?}",
                    m.shape(),
                    x.shape()
                )));
            }
            let mut out = vec![0.0; x.len()];
            for i in 0..x.rows() {
                let mi = &m.data()[i * d * d..(i + 1) * d * d];
                let xi = x.row(i);
                for p in 0..d {
                    let mut s = 0.0;
                    for q in 0..d {
                        s += mi[p * d + q] * xi[q];
                    }
                    out[i * d + p] = s;
                }
            }
            Tensor::new(vec![x.rows(), d], out)?
        };
        Ok(self.binary(vecs, v, Op::RowMatVec(self.id, vecs.id)))
    }

    /// Per-row `-log softmax(row)[label]`, `r × C → r × 1`, via log-sum-exp.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let (v, probs) = {
            let a = self.value();
            let c = a.cols();
            if a.rows() != labels.len() {
                return Err(Error::shape(format!(
                    "{} label(s) for {} row(s)",
                    labels.len(),
                    a.rows()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
                return Err(Error::arg(format!("label {bad} out of range for {c} classes")));
            }
            let mut probs = vec![0.0; a.len()];
            let mut losses = Vec::with_capacity(labels.len());
            for (i, (row, p)) in a.data().chunks(c).zip(probs.chunks_mut(c)).enumerate() {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                losses.push(lse - row[labels[i]]);
                tensor::softmax_slice(row, p);
            }
            (
                Tensor::new(vec![labels.len(), 1], losses)?,
                Tensor::new(a.shape().to_vec(), probs)?,
            )
        };
        Ok(self.unary(
            v,
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }
}
