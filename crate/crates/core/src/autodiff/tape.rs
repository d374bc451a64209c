use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Result, SeaError};

/// Backward rule of a custom op: `(inputs, output, output_grad) -> input_grads`.
pub type CustomBackward = Rc<dyn Fn(&[&Array2<f64>], &Array2<f64>, &Array2<f64>) -> Vec<Array2<f64>>>;

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ScaleRows(usize, Arc<[f64]>),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Relu(usize),
    SumRows(usize),
    SumAll(usize),
    GatherRows(usize, Arc<[usize]>),
    ScatterAddRows(usize, Arc<[usize]>),
    SegmentMax(usize, Vec<usize>),
    GroupSum(usize, usize),
    GroupMul(usize, usize),
    SegmentSoftmax(usize, Arc<[usize]>),
    MaskedRowSoftmax(usize),
    L1Loss(usize, Arc<[f64]>),
    BceLogits(usize, Arc<[f64]>),
    WeightedCrossEntropy(usize, Arc<[usize]>, Arc<[f64]>),
    Custom(Vec<usize>, CustomBackward),
}

struct Node {
    value: Rc<Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for reverse-mode differentiation.
///
/// One tape per forward pass. Nodes are appended in execution order, which
/// is a topological order, and backward walks them in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn shape_of(a: &Array2<f64>) -> Vec<usize> {
    a.shape().to_vec()
}

fn mismatch(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> SeaError {
    SeaError::ShapeMismatch {
        op,
        left: shape_of(a),
        right: shape_of(b),
    }
}

fn check_finite(op: &'static str, a: &Array2<f64>) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SeaError::NonFinite { op })
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

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Tensor { tape: self, id }
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Array2<f64>) -> Tensor<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Array2<f64>) -> Tensor<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn value(&self, id: usize) -> Rc<Array2<f64>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn record(
        &self,
        op_name: &'static str,
        value: Array2<f64>,
        op: Op,
        inputs: &[usize],
    ) -> Result<Tensor<'_>> {
        check_finite(op_name, &value)?;
        let rg = inputs.iter().any(|&i| self.requires_grad(i));
        Ok(self.push(value, op, rg))
    }

    /// Applies a user-supplied op with its own backward rule.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Tensor<'t>],
        forward: impl FnOnce(&[&Array2<f64>]) -> Array2<f64>,
        backward: CustomBackward,
    ) -> Result<Tensor<'t>> {
        let vals: Vec<Rc<Array2<f64>>> = inputs.iter().map(|t| t.value()).collect();
        let refs: Vec<&Array2<f64>> = vals.iter().map(|v| v.as_ref()).collect();
        let out = forward(&refs);
        let ids: Vec<usize> = inputs.iter().map(|t| t.id).collect();
        self.record("custom", out, Op::Custom(ids.clone(), backward), &ids)
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Does not modify the tape, so repeated calls give identical results.
    pub fn backward(&self, loss: Tensor<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        let root = &nodes[loss.id];
        if root.value.dim() != (1, 1) {
            return Err(SeaError::NonScalarLoss(shape_of(&root.value)));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        grads[loss.id] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let contributions = backward_rule(&nodes, &node.op, &node.value, &g);
            grads[id] = Some(g);
            for (input, gi) in contributions {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => *acc += &gi,
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.dim()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients of a scalar with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `t`; zeros when `t` does not influence the loss.
    pub fn get(&self, t: Tensor<'_>) -> Array2<f64> {
        self.grads[t.id]
            .clone()
            .unwrap_or_else(|| Array2::zeros(self.shapes[t.id]))
    }

    pub fn is_reachable(&self, t: Tensor<'_>) -> bool {
        self.grads[t.id].is_some()
    }
}

fn backward_rule(
    nodes: &[Node],
    op: &Op,
    out: &Array2<f64>,
    g: &Array2<f64>,
) -> Vec<(usize, Array2<f64>)> {
    let val = |i: usize| nodes[i].value.as_ref();
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => vec![(*a, g.dot(&val(*b).t())), (*b, val(*a).t().dot(g))],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::AddRow(a, r) => vec![(*a, g.clone()), (*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)))],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, -g)],
        Op::Mul(a, b) => vec![(*a, g * val(*b)), (*b, g * val(*a))],
        Op::Scale(a, c) => vec![(*a, g * *c)],
        Op::ScaleRows(a, f) => {
            let mut ga = g.clone();
            for (mut row, &fi) in ga.rows_mut().into_iter().zip(f.iter()) {
                row *= fi;
            }
            vec![(*a, ga)]
        }
        Op::ConcatCols(ids) => {
            let mut start = 0;
            ids.iter()
                .map(|&i| {
                    let w = val(i).ncols();
                    let part = g.slice(s![.., start..start + w]).to_owned();
                    start += w;
                    (i, part)
                })
                .collect()
        }
        Op::ConcatRows(ids) => {
            let mut start = 0;
            ids.iter()
                .map(|&i| {
                    let h = val(i).nrows();
                    let part = g.slice(s![start..start + h, ..]).to_owned();
                    start += h;
                    (i, part)
                })
                .collect()
        }
        Op::Relu(a) => {
            let mut ga = g.clone();
            Zip::from(&mut ga).and(val(*a)).for_each(|gx, &x| {
                if x <= 0.0 {
                    *gx = 0.0;
                }
            });
            vec![(*a, ga)]
        }
        Op::SumRows(a) => {
            let ga = g.broadcast(val(*a).dim()).expect("row broadcast").to_owned();
            vec![(*a, ga)]
        }
        Op::SumAll(a) => vec![(*a, Array2::from_elem(val(*a).dim(), g[(0, 0)]))],
        Op::GatherRows(a, idx) => {
            let mut ga = Array2::zeros(val(*a).dim());
            for (r, &i) in idx.iter().enumerate() {
                let mut dst = ga.row_mut(i);
                dst += &g.row(r);
            }
            vec![(*a, ga)]
        }
        Op::ScatterAddRows(a, idx) => {
            let mut ga = Array2::zeros(val(*a).dim());
            for (r, &i) in idx.iter().enumerate() {
                ga.row_mut(r).assign(&g.row(i));
            }
            vec![(*a, ga)]
        }
        Op::SegmentMax(a, argmax) => {
            let cols = out.ncols();
            let mut ga = Array2::zeros(val(*a).dim());
            for (k, &src) in argmax.iter().enumerate() {
                if src != usize::MAX {
                    let (row, col) = (k / cols, k % cols);
                    ga[(src, col)] += g[(row, col)];
                }
            }
            vec![(*a, ga)]
        }
        Op::GroupSum(a, width) => {
            let x = val(*a);
            let mut ga = Array2::zeros(x.dim());
            for (mut grow, srow) in ga.rows_mut().into_iter().zip(g.rows()) {
                for (j, gx) in grow.iter_mut().enumerate() {
                    *gx = srow[j / width];
                }
            }
            vec![(*a, ga)]
        }
        Op::GroupMul(v, w) => {
            let (vv, wv) = (val(*v), val(*w));
            let width = vv.ncols() / wv.ncols();
            let mut gv = Array2::zeros(vv.dim());
            let mut gw = Array2::zeros(wv.dim());
            for e in 0..vv.nrows() {
                for j in 0..vv.ncols() {
                    let h = j / width;
                    gv[(e, j)] = g[(e, j)] * wv[(e, h)];
                    gw[(e, h)] += g[(e, j)] * vv[(e, j)];
                }
            }
            vec![(*v, gv), (*w, gw)]
        }
        Op::SegmentSoftmax(a, seg) => {
            let cols = out.ncols();
            let num_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
            let mut dot = Array2::<f64>::zeros((num_seg, cols));
            for (r, &s) in seg.iter().enumerate() {
                for c in 0..cols {
                    dot[(s, c)] += out[(r, c)] * g[(r, c)];
                }
            }
            let mut ga = Array2::zeros(out.dim());
            for (r, &s) in seg.iter().enumerate() {
                for c in 0..cols {
                    ga[(r, c)] = out[(r, c)] * (g[(r, c)] - dot[(s, c)]);
                }
            }
            vec![(*a, ga)]
        }
        Op::MaskedRowSoftmax(a) => {
            let mut ga = Array2::zeros(out.dim());
            for r in 0..out.nrows() {
                let dot: f64 = out.row(r).iter().zip(g.row(r)).map(|(y, gy)| y * gy).sum();
                for c in 0..out.ncols() {
                    ga[(r, c)] = out[(r, c)] * (g[(r, c)] - dot);
                }
            }
            vec![(*a, ga)]
        }
        Op::L1Loss(p, t) => {
            let x = val(*p);
            let n = x.nrows() as f64;
            let scale = g[(0, 0)] / n;
            let ga = Array2::from_shape_fn(x.dim(), |(r, _)| {
                let d = x[(r, 0)] - t[r];
                if d > 0.0 {
                    scale
                } else if d < 0.0 {
                    -scale
                } else {
                    0.0
                }
            });
            vec![(*p, ga)]
        }
        Op::BceLogits(p, t) => {
            let x = val(*p);
            let n = x.nrows() as f64;
            let scale = g[(0, 0)] / n;
            let ga = Array2::from_shape_fn(x.dim(), |(r, _)| scale * (sigmoid(x[(r, 0)]) - t[r]));
            vec![(*p, ga)]
        }
        Op::WeightedCrossEntropy(p, labels, weights) => {
            let x = val(*p);
            let total: f64 = labels.iter().map(|&y| weights[y]).sum();
            let scale = g[(0, 0)] / total;
            let mut ga = Array2::zeros(x.dim());
            for (r, &y) in labels.iter().enumerate() {
                let probs = softmax_row(x.row(r).iter().copied());
                let w = weights[y] * scale;
                for (c, p) in probs.into_iter().enumerate() {
                    ga[(r, c)] = w * (p - if c == y { 1.0 } else { 0.0 });
                }
            }
            vec![(*p, ga)]
        }
        Op::Custom(ids, rule) => {
            let vals: Vec<&Array2<f64>> = ids.iter().map(|&i| val(i)).collect();
            ids.iter().copied().zip(rule(&vals, out, g)).collect()
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn softmax_row(xs: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl<'t> Tensor<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Array2<f64>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Scalar value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "item() on non-scalar tensor");
        v[(0, 0)]
    }

    fn same_tape(&self, other: &Tensor<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "tensors from different tapes");
    }

    pub fn matmul(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        if a.ncols() != b.nrows() {
            return Err(mismatch("matmul", &a, &b));
        }
        self.tape
            .record("matmul", a.dot(b.as_ref()), Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    pub fn add(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        if a.dim() != b.dim() {
            return Err(mismatch("add", &a, &b));
        }
        self.tape
            .record("add", a.as_ref() + b.as_ref(), Op::Add(self.id, other.id), &[self.id, other.id])
    }

    /// Adds a `1 x m` row to every row.
    pub fn add_row(&self, row: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.same_tape(row);
        let (a, b) = (self.value(), row.value());
        if b.nrows() != 1 || a.ncols() != b.ncols() {
            return Err(mismatch("add_row", &a, &b));
        }
        self.tape
            .record("add_row", a.as_ref() + b.as_ref(), Op::AddRow(self.id, row.id), &[self.id, row.id])
    }

    pub fn sub(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        if a.dim() != b.dim() {
            return Err(mismatch("sub", &a, &b));
        }
        self.tape
            .record("sub", a.as_ref() - b.as_ref(), Op::Sub(self.id, other.id), &[self.id, other.id])
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        if a.dim() != b.dim() {
            return Err(mismatch("mul", &a, &b));
        }
        self.tape
            .record("mul", a.as_ref() * b.as_ref(), Op::Mul(self.id, other.id), &[self.id, other.id])
    }

    pub fn scale(&self, c: f64) -> Result<Tensor<'t>> {
        let a = self.value();
        self.tape.record("scale", a.as_ref() * c, Op::Scale(self.id, c), &[self.id])
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&self, factors: Arc<[f64]>) -> Result<Tensor<'t>> {
        let a = self.value();
        if factors.len() != a.nrows() {
            return Err(SeaError::ShapeMismatch {
                op: "scale_rows",
                left: shape_of(&a),
                right: vec![factors.len()],
            });
        }
        let mut out = a.as_ref().clone();
        for (mut row, &f) in out.rows_mut().into_iter().zip(factors.iter()) {
            row *= f;
        }
        self.tape
            .record("scale_rows", out, Op::ScaleRows(self.id, factors), &[self.id])
    }

    pub fn relu(&self) -> Result<Tensor<'t>> {
        let a = self.value();
        self.tape
            .record("relu", a.mapv(|x| x.max(0.0)), Op::Relu(self.id), &[self.id])
    }

    /// Column sums as a `1 x m` row.
    pub fn sum_rows(&self) -> Result<Tensor<'t>> {
        let a = self.value();
        let out = a.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.tape.record("sum_rows", out, Op::SumRows(self.id), &[self.id])
    }

    pub fn sum_all(&self) -> Result<Tensor<'t>> {
        let a = self.value();
        self.tape
            .record("sum_all", Array2::from_elem((1, 1), a.sum()), Op::SumAll(self.id), &[self.id])
    }

    /// `out[r] = self[idx[r]]`.
    pub fn gather_rows(&self, idx: Arc<[usize]>) -> Result<Tensor<'t>> {
        let a = self.value();
        if let Some(&bad) = idx.iter().find(|&&i| i >= a.nrows()) {
            return Err(SeaError::ShapeMismatch {
                op: "gather_rows",
                left: shape_of(&a),
                right: vec![bad],
            });
        }
        let mut out = Array2::zeros((idx.len(), a.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&a.row(i));
        }
        self.tape
            .record("gather_rows", out, Op::GatherRows(self.id, idx), &[self.id])
    }

    /// `out[idx[r]] += self[r]` into `num_rows` zero rows, in row order.
    pub fn scatter_add_rows(&self, idx: Arc<[usize]>, num_rows: usize) -> Result<Tensor<'t>> {
        let a = self.value();
        if idx.len() != a.nrows() || idx.iter().any(|&i| i >= num_rows) {
            return Err(SeaError::ShapeMismatch {
                op: "scatter_add_rows",
                left: shape_of(&a),
                right: vec![idx.len(), num_rows],
            });
        }
        let mut out = Array2::zeros((num_rows, a.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            let mut dst = out.row_mut(i);
            dst += &a.row(r);
        }
        self.tape
            .record("scatter_add_rows", out, Op::ScatterAddRows(self.id, idx), &[self.id])
    }

    /// Per-column maximum over rows sharing a segment id; empty segments give 0.
    pub fn segment_max(&self, seg: &[usize], num_segments: usize) -> Result<Tensor<'t>> {
        let a = self.value();
        if seg.len() != a.nrows() || seg.iter().any(|&s| s >= num_segments) {
            return Err(SeaError::ShapeMismatch {
                op: "segment_max",
                left: shape_of(&a),
                right: vec![seg.len(), num_segments],
            });
        }
        let cols = a.ncols();
        let mut out = Array2::zeros((num_segments, cols));
        let mut argmax = vec![usize::MAX; num_segments * cols];
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..cols {
                let k = s * cols + c;
                // strict comparison keeps the first row on ties
                if argmax[k] == usize::MAX || a[(r, c)] > out[(s, c)] {
                    out[(s, c)] = a[(r, c)];
                    argmax[k] = r;
                }
            }
        }
        self.tape
            .record("segment_max", out, Op::SegmentMax(self.id, argmax), &[self.id])
    }

    /// Sums consecutive column groups of `width`: `n x (g*width) -> n x g`.
    pub fn group_sum(&self, width: usize) -> Result<Tensor<'t>> {
        let a = self.value();
        if width == 0 || a.ncols() % width != 0 {
            return Err(SeaError::ShapeMismatch {
                op: "group_sum",
                left: shape_of(&a),
                right: vec![width],
            });
        }
        let groups = a.ncols() / width;
        let mut out = Array2::zeros((a.nrows(), groups));
        for (mut orow, arow) in out.rows_mut().into_iter().zip(a.rows()) {
            for (j, x) in arow.iter().enumerate() {
                orow[j / width] += x;
            }
        }
        self.tape
            .record("group_sum", out, Op::GroupSum(self.id, width), &[self.id])
    }

    /// Scales each column group of `self` (`n x g*w`) by the matching column
    /// of `weights` (`n x g`).
    pub fn group_mul(&self, weights: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.same_tape(weights);
        let (v, w) = (self.value(), weights.value());
        if v.nrows() != w.nrows() || w.ncols() == 0 || v.ncols() % w.ncols() != 0 {
            return Err(mismatch("group_mul", &v, &w));
        }
        let width = v.ncols() / w.ncols();
        let mut out = v.as_ref().clone();
        for (mut orow, wrow) in out.rows_mut().into_iter().zip(w.rows()) {
            for (j, x) in orow.iter_mut().enumerate() {
                *x *= wrow[j / width];
            }
        }
        self.tape.record(
            "group_mul",
            out,
            Op::GroupMul(self.id, weights.id),
            &[self.id, weights.id],
        )
    }

    /// Softmax down each column within every segment of rows.
    ///
    /// Rows are scored entries (e.g. attention pairs) and `seg[r]` is the row's
    /// group; a segment with no rows simply produces nothing.
    pub fn segment_softmax(&self, seg: Arc<[usize]>) -> Result<Tensor<'t>> {
        let a = self.value();
        if seg.len() != a.nrows() {
            return Err(SeaError::ShapeMismatch {
                op: "segment_softmax",
                left: shape_of(&a),
                right: vec![seg.len()],
            });
        }
        let cols = a.ncols();
        let num_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = Array2::from_elem((num_seg, cols), f64::NEG_INFINITY);
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..cols {
                max[(s, c)] = max[(s, c)].max(a[(r, c)]);
            }
        }
        let mut out = Array2::zeros(a.dim());
        let mut sum = Array2::<f64>::zeros((num_seg, cols));
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..cols {
                let e = (a[(r, c)] - max[(s, c)]).exp();
                out[(r, c)] = e;
                sum[(s, c)] += e;
            }
        }
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..cols {
                out[(r, c)] /= sum[(s, c)];
            }
        }
        self.tape
            .record("segment_softmax", out, Op::SegmentSoftmax(self.id, seg), &[self.id])
    }

    /// Row softmax restricted to `mask`; masked entries are 0 and a row with
    /// no unmasked entry is all zeros.
    pub fn masked_row_softmax(&self, mask: &Array2<bool>) -> Result<Tensor<'t>> {
        let a = self.value();
        if mask.dim() != a.dim() {
            return Err(SeaError::ShapeMismatch {
                op: "masked_row_softmax",
                left: shape_of(&a),
                right: mask.shape().to_vec(),
            });
        }
        let mut out = Array2::zeros(a.dim());
        for r in 0..a.nrows() {
            let max = (0..a.ncols())
                .filter(|&c| mask[(r, c)])
                .map(|c| a[(r, c)])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for c in 0..a.ncols() {
                if mask[(r, c)] {
                    let e = (a[(r, c)] - max).exp();
                    out[(r, c)] = e;
                    sum += e;
                }
            }
            for c in 0..a.ncols() {
                out[(r, c)] /= sum;
            }
        }
        self.tape.record(
            "masked_row_softmax",
            out,
            Op::MaskedRowSoftmax(self.id),
            &[self.id],
        )
    }

    /// Mean absolute error of an `n x 1` prediction column.
    pub fn l1_loss(&self, target: Arc<[f64]>) -> Result<Tensor<'t>> {
        let p = self.value();
        check_column("l1_loss", &p, target.len())?;
        let loss = p.column(0).iter().zip(target.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>()
            / p.nrows() as f64;
        self.tape.record(
            "l1_loss",
            Array2::from_elem((1, 1), loss),
            Op::L1Loss(self.id, target),
            &[self.id],
        )
    }

    /// Mean logistic loss of an `n x 1` logit column against 0/1 targets.
    pub fn bce_with_logits(&self, target: Arc<[f64]>) -> Result<Tensor<'t>> {
        let p = self.value();
        check_column("bce_with_logits", &p, target.len())?;
        let loss = p
            .column(0)
            .iter()
            .zip(target.iter())
            .map(|(&x, &y)| softplus(x) - y * x)
            .sum::<f64>()
            / p.nrows() as f64;
        self.tape.record(
            "bce_with_logits",
            Array2::from_elem((1, 1), loss),
            Op::BceLogits(self.id, target),
            &[self.id],
        )
    }

    /// Class-weighted cross-entropy, normalized by the total weight.
    pub fn weighted_cross_entropy(
        &self,
        labels: Arc<[usize]>,
        class_weights: Arc<[f64]>,
    ) -> Result<Tensor<'t>> {
        let x = self.value();
        if labels.len() != x.nrows() || x.ncols() != class_weights.len() || x.nrows() == 0 {
            return Err(SeaError::ShapeMismatch {
                op: "weighted_cross_entropy",
                left: shape_of(&x),
                right: vec![labels.len(), class_weights.len()],
            });
        }
        if labels.iter().any(|&y| y >= x.ncols()) {
            return Err(SeaError::TaskMismatch("label outside class range".into()));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            num += class_weights[y] * (lse - row[y]);
            den += class_weights[y];
        }
        self.tape.record(
            "weighted_cross_entropy",
            Array2::from_elem((1, 1), num / den),
            Op::WeightedCrossEntropy(self.id, labels, class_weights),
            &[self.id],
        )
    }
}

fn check_column(op: &'static str, p: &Array2<f64>, n: usize) -> Result<()> {
    if p.ncols() != 1 || p.nrows() != n || n == 0 {
        return Err(SeaError::ShapeMismatch {
            op,
            left: shape_of(p),
            right: vec![n, 1],
        });
    }
    Ok(())
}

/// Concatenates along columns.
pub fn concat_cols<'t>(parts: &[Tensor<'t>]) -> Result<Tensor<'t>> {
    let tape = parts.first().expect("concat of nothing").tape;
    let vals: Vec<Rc<Array2<f64>>> = parts.iter().map(|t| t.value()).collect();
    let rows = vals[0].nrows();
    if let Some(bad) = vals.iter().find(|v| v.nrows() != rows) {
        return Err(mismatch("concat_cols", &vals[0], bad));
    }
    let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
    let out = ndarray::concatenate(Axis(1), &views).expect("rows checked");
    let ids: Vec<usize> = parts.iter().map(|t| t.id).collect();
    tape.record("concat_cols", out, Op::ConcatCols(ids.clone()), &ids)
}

/// Stacks along rows.
pub fn concat_rows<'t>(parts: &[Tensor<'t>]) -> Result<Tensor<'t>> {
    let tape = parts.first().expect("concat of nothing").tape;
    let vals: Vec<Rc<Array2<f64>>> = parts.iter().map(|t| t.value()).collect();
    let cols = vals[0].ncols();
    if let Some(bad) = vals.iter().find(|v| v.ncols() != cols) {
        return Err(mismatch("concat_rows", &vals[0], bad));
    }
    let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
    let out = ndarray::concatenate(Axis(0), &views).expect("cols checked");
    let ids: Vec<usize> = parts.iter().map(|t| t.id).collect();
    tape.record("concat_rows", out, Op::ConcatRows(ids.clone()), &ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn matmul_value() {
        let tape = Tape::new();
        let a = tape.leaf(arr2(&[[1.0, 2.0]]));
        let b = tape.leaf(arr2(&[[3.0], [4.0]]));
        assert_eq!(*a.matmul(&b).unwrap().value(), arr2(&[[11.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Array2::zeros((2, 3)));
        let err = a.matmul(&a).unwrap_err();
        match err {
            SeaError::ShapeMismatch { left, right, .. } => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn relu_value() {
        let tape = Tape::new();
        let a = tape.leaf(arr2(&[[-1.0, 0.0, 2.0]]));
        assert_eq!(*a.relu().unwrap().value(), arr2(&[[0.0, 0.0, 2.0]]));
    }

    #[test]
    fn scatter_add_accumulates() {
        let tape = Tape::new();
        let a = tape.leaf(arr2(&[[1.0, 2.0], [3.0, 4.0]]));
        let out = a.scatter_add_rows(Arc::from(vec![0, 0]), 2).unwrap();
        assert_eq!(*out.value(), arr2(&[[4.0, 6.0], [0.0, 0.0]]));
    }

    #[test]
    fn quadratic_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(arr2(&[[3.0]]));
        let loss = x.mul(&x).unwrap().sum_all().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x), arr2(&[[6.0]]));
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let tape = Tape::new();
        let x = tape.leaf(arr2(&[[3.0]]));
        let p = tape.leaf(arr2(&[[1.0, 2.0]]));
        let loss = x.scale(2.0).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p), Array2::<f64>::zeros((1, 2)));
        assert!(!g.is_reachable(p));
    }

    #[test]
    fn backward_repeatable() {
        let tape = Tape::new();
        let x = tape.leaf(arr2(&[[0.3, -1.2], [2.0, 0.5]]));
        let w = tape.leaf(arr2(&[[1.5], [-0.7]]));
        let loss = x.matmul(&w).unwrap().relu().unwrap().sum_all().unwrap();
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        assert_eq!(g1.get(x), g2.get(x));
        assert_eq!(g1.get(w), g2.get(w));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Array2::zeros((2, 1)));
        assert!(matches!(tape.backward(x), Err(SeaError::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_trapped() {
        let tape = Tape::new();
        let x = tape.leaf(arr2(&[[f64::MAX]]));
        assert!(matches!(x.scale(10.0), Err(SeaError::NonFinite { .. })));
    }

    #[test]
    fn masked_softmax_cases() {
        let tape = Tape::new();
        let t = |m: Array2<f64>, mask: Array2<bool>| {
            tape.leaf(m)
                .masked_row_softmax(&mask)
                .unwrap()
                .value()
                .as_ref()
                .clone()
        };
        let r = t(arr2(&[[0.0, 0.0]]), arr2(&[[true, true]]));
        assert_eq!(r, arr2(&[[0.5, 0.5]]));
        let r = t(arr2(&[[1e9, 0.0]]), arr2(&[[true, true]]));
        assert!((r[(0, 0)] - 1.0).abs() <= 1e-12 && r[(0, 1)].abs() <= 1e-12);
        let r = t(arr2(&[[5.0, 7.0, 9.0]]), arr2(&[[true, false, true]]));
        let e4 = 4f64.exp();
        assert!((r[(0, 0)] - 1.0 / (1.0 + e4)).abs() < 1e-15);
        assert_eq!(r[(0, 1)], 0.0);
        assert!((r[(0, 2)] - e4 / (1.0 + e4)).abs() < 1e-15);
        let r = t(arr2(&[[1.0, 2.0]]), arr2(&[[false, false]]));
        assert_eq!(r, arr2(&[[0.0, 0.0]]));
    }

    #[test]
    fn segment_softmax_matches_masked_dense() {
        // pairs (dst, src): (0,1), (0,2), (1,0), (2,0)
        let scores = arr2(&[[0.3], [-1.1], [2.0], [0.7]]);
        let seg: Arc<[usize]> = Arc::from(vec![0, 0, 1, 2]);
        let src = [1usize, 2, 0, 0];
        let tape = Tape::new();
        let sparse = tape.leaf(scores.clone()).segment_softmax(seg.clone()).unwrap().value();
        let mut dense = Array2::zeros((3, 3));
        let mut mask = Array2::from_elem((3, 3), false);
        for r in 0..4 {
            dense[(seg[r], src[r])] = scores[(r, 0)];
            mask[(seg[r], src[r])] = true;
        }
        let d = tape.leaf(dense).masked_row_softmax(&mask).unwrap().value();
        for r in 0..4 {
            assert!((sparse[(r, 0)] - d[(seg[r], src[r])]).abs() < 1e-15);
        }
    }

    #[test]
    fn segment_max_empty_segment_is_zero() {
        let tape = Tape::new();
        let a = tape.leaf(arr2(&[[1.0, -3.0], [2.0, -4.0]]));
        let m = a.segment_max(&[0, 0], 2).unwrap();
        assert_eq!(*m.value(), arr2(&[[2.0, -3.0], [0.0, 0.0]]));
    }

    #[test]
    fn group_ops() {
        let tape = Tape::new();
        let a = tape.leaf(arr2(&[[1.0, 2.0, 3.0, 4.0]]));
        assert_eq!(*a.group_sum(2).unwrap().value(), arr2(&[[3.0, 7.0]]));
        let w = tape.leaf(arr2(&[[10.0, -1.0]]));
        assert_eq!(*a.group_mul(&w).unwrap().value(), arr2(&[[10.0, 20.0, -3.0, -4.0]]));
    }

    #[test]
    fn losses_values() {
        let tape = Tape::new();
        let p = tape.leaf(arr2(&[[1.0], [2.0]]));
        let l = p.l1_loss(Arc::from(vec![1.0, 4.0])).unwrap();
        assert_eq!(l.item(), 1.0);
        let z = tape.leaf(arr2(&[[0.0]]));
        let b = z.bce_with_logits(Arc::from(vec![1.0])).unwrap();
        assert!((b.item() - 2f64.ln()).abs() < 1e-15);
        let x = tape.leaf(arr2(&[[0.0, 0.0], [0.0, 0.0]]));
        let ce = x
            .weighted_cross_entropy(Arc::from(vec![0, 1]), Arc::from(vec![1.0, 3.0]))
            .unwrap();
        assert!((ce.item() - 2f64.ln()).abs() < 1e-15);
    }
}
