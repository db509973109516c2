//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation appends a node to a [`Tape`] holding its forward value and
//! the recipe for its vector-Jacobian product. [`Tape::backward`] walks the
//! nodes in reverse from a 1x1 loss and accumulates gradients; parameter
//! gradients are keyed by [`ParamId`].
//!
//! The forward values are produced by [`forward_value`], which is also what
//! [`Tape::replay`] uses, so a replay reproduces every node bit for bit.

use std::collections::HashMap;

use super::matrix::{
    check_targets, cross_entropy_unchecked, l2_normalize_in_place, layer_norm_row, matmul_unchecked, softmax_in_place,
    Matrix,
};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// `a + b` with `b` of shape 1xC (row broadcast) or 1x1 (scalar broadcast).
    AddBroadcast(Var, Var),
    MulElem(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    L2NormalizeRows(Var),
    Gelu(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    CrossEntropy(Var, Vec<usize>),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Single-writer record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op) -> Var {
        let value = forward_value(&op, |v| &self.nodes[v.0].value);
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: store.get(id).clone(),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Parameters read by this tape, in first-use order.
    pub fn params_used(&self) -> Vec<ParamId> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Param(id) => Some(id),
                _ => None,
            })
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::shape("matmul", sa, sb));
        }
        Ok(self.push(Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.push(Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("add", sa, sb));
        }
        Ok(self.push(Op::Add(a, b)))
    }

    /// Adds a 1xC row (to every row) or a 1x1 scalar (to every entry).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb != (1, 1) && sb != (1, sa.1) {
            return Err(Error::shape("add_broadcast", sa, sb));
        }
        Ok(self.push(Op::AddBroadcast(a, b)))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("mul_elem", sa, sb));
        }
        Ok(self.push(Op::MulElem(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.push(Op::Scale(a, k))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        self.push(Op::SoftmaxRows(a))
    }

    /// Row-wise layer norm with 1xC gain and bias.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x);
        for s in [self.shape(gain), self.shape(bias)] {
            if s != (1, sx.1) {
                return Err(Error::shape("layer_norm", sx, s));
            }
        }
        if !(eps > 0.0) {
            return Err(Error::Argument(format!("layer_norm eps must be positive, got {eps}")));
        }
        Ok(self.push(Op::LayerNormRows { x, gain, bias, eps }))
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        self.push(Op::L2NormalizeRows(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.push(Op::Gelu(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat_rows of nothing".into()))?;
        let cols = self.shape(*first).1;
        for p in parts {
            if self.shape(*p).1 != cols {
                return Err(Error::shape("concat_rows", self.shape(*first), self.shape(*p)));
            }
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("concat_cols of nothing".into()))?;
        let rows = self.shape(*first).0;
        for p in parts {
            if self.shape(*p).0 != rows {
                return Err(Error::shape("concat_cols", self.shape(*first), self.shape(*p)));
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.0 {
            return Err(Error::Index {
                what: "slice_rows end",
                index: start + len,
                len: s.0,
            });
        }
        Ok(self.push(Op::SliceRows(a, start, len)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if start + len > s.1 {
            return Err(Error::Index {
                what: "slice_cols end",
                index: start + len,
                len: s.1,
            });
        }
        Ok(self.push(Op::SliceCols(a, start, len)))
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let rows = self.shape(table).0;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Index {
                what: "gather_rows",
                index: bad,
                len: rows,
            });
        }
        Ok(self.push(Op::GatherRows(table, indices.to_vec())))
    }

    /// Mean cross-entropy of `logits` rows against `targets`; a 1x1 node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        check_targets(self.value(logits), targets)?;
        Ok(self.push(Op::CrossEntropy(logits, targets.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    /// `x · w (+ b)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_broadcast(y, b),
            None => Ok(y),
        }
    }

    /// Recomputes every node from the recorded leaves.
    pub fn replay(&self) -> Vec<Matrix> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Constant | Op::Param(_) => node.value.clone(),
                _ => forward_value(&node.op, |v| &values[v.0]),
            };
            values.push(v);
        }
        values
    }

    /// Gradients of the 1x1 node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape("backward", self.shape(loss), (1, 1)));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut params = HashMap::new();
        for (&id, &v) in &self.params {
            if let Some(g) = grads[v.0].take() {
                params.insert(id, g);
            }
        }
        Ok(Gradients { params })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                acc(*a, matmul_unchecked(g, &val(*b).transpose()));
                acc(*b, matmul_unchecked(&val(*a).transpose(), g));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddBroadcast(a, b) => {
                acc(*a, g.clone());
                let (_, cols) = val(*b).shape();
                let mut db = Matrix::zeros(1, cols);
                for row in g.iter_rows() {
                    if cols == 1 {
                        db.data_mut()[0] += row.iter().sum::<f64>();
                    } else {
                        for (d, x) in db.data_mut().iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                }
                acc(*b, db);
            }
            Op::MulElem(a, b) => {
                acc(*a, g.zip_map(val(*b), |x, y| x * y));
                acc(*b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::Scale(a, k) => acc(*a, g.scale(*k)),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (c, out) in d.row_mut(r).iter_mut().enumerate() {
                        *out = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*a, d);
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let xv = val(*x);
                let gv = val(*gain).data();
                let (rows, cols) = xv.shape();
                let n = cols as f64;
                let mut dx = Matrix::zeros(rows, cols);
                let mut dgain = Matrix::zeros(1, cols);
                let mut dbias = Matrix::zeros(1, cols);
                let mut xhat = vec![0.0; cols];
                for r in 0..rows {
                    let xr = xv.row(r);
                    let mean = xr.iter().sum::<f64>() / n;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    for c in 0..cols {
                        xhat[c] = (xr[c] - mean) * inv_std;
                    }
                    let gr = g.row(r);
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for c in 0..cols {
                        let dxhat = gr[c] * gv[c];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat[c];
                        dgain.data_mut()[c] += gr[c] * xhat[c];
                        dbias.data_mut()[c] += gr[c];
                    }
                    mean_dxhat /= n;
                    mean_dxhat_xhat /= n;
                    for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
                        let dxhat = gr[c] * gv[c];
                        *out = inv_std * (dxhat - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                    }
                }
                acc(*x, dx);
                acc(*gain, dgain);
                acc(*bias, dbias);
            }
            Op::L2NormalizeRows(a) => {
                let xv = val(*a);
                let y = &node.value;
                let mut d = g.clone();
                for r in 0..xv.rows() {
                    let norm = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm < super::matrix::L2_NORM_FLOOR {
                        continue;
                    }
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (c, out) in d.row_mut(r).iter_mut().enumerate() {
                        *out = (gr[c] - yr[c] * dot) / norm;
                    }
                }
                acc(*a, d);
            }
            Op::Gelu(a) => {
                let d = val(*a).zip_map(g, |x, gy| {
                    let u = GELU_C * (x + GELU_A * x * x * x);
                    let th = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    gy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)
                });
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = val(*p).rows();
                    acc(*p, g.slice_rows(start, rows));
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let cols = val(*p).cols();
                    acc(*p, g.slice_cols(start, cols));
                    start += cols;
                }
            }
            Op::SliceRows(a, start, _) => {
                let (rows, cols) = val(*a).shape();
                let mut d = Matrix::zeros(rows, cols);
                d.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                acc(*a, d);
            }
            Op::SliceCols(a, start, len) => {
                let (rows, cols) = val(*a).shape();
                let mut d = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    d.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::GatherRows(table, indices) => {
                let (rows, cols) = val(*table).shape();
                let mut d = Matrix::zeros(rows, cols);
                for (k, &i) in indices.iter().enumerate() {
                    for (o, x) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                acc(*table, d);
            }
            Op::CrossEntropy(logits, targets) => {
                let lv = val(*logits);
                let scale = g.item() / targets.len() as f64;
                let mut d = super::matrix::softmax_rows(lv);
                for (r, &t) in targets.iter().enumerate() {
                    let row = d.row_mut(r);
                    row[t] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                acc(*logits, d);
            }
            Op::Sum(a) => {
                let (rows, cols) = val(*a).shape();
                acc(*a, Matrix::filled(rows, cols, g.item()));
            }
        }
    }
}

fn forward_value<'a>(op: &Op, val: impl Fn(Var) -> &'a Matrix) -> Matrix {
    match op {
        Op::Constant | Op::Param(_) => unreachable!("leaves carry their own value"),
        Op::MatMul(a, b) => matmul_unchecked(val(*a), val(*b)),
        Op::Transpose(a) => val(*a).transpose(),
        Op::Add(a, b) => val(*a).zip_map(val(*b), |x, y| x + y),
        Op::AddBroadcast(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let mut out = av.clone();
            if bv.shape() == (1, 1) {
                let s = bv.item();
                out.data_mut().iter_mut().for_each(|v| *v += s);
            } else {
                for r in 0..out.rows() {
                    for (o, x) in out.row_mut(r).iter_mut().zip(bv.data()) {
                        *o += x;
                    }
                }
            }
            out
        }
        Op::MulElem(a, b) => val(*a).zip_map(val(*b), |x, y| x * y),
        Op::Scale(a, k) => val(*a).scale(*k),
        Op::SoftmaxRows(a) => {
            let mut out = val(*a).clone();
            for r in 0..out.rows() {
                softmax_in_place(out.row_mut(r));
            }
            out
        }
        Op::LayerNormRows { x, gain, bias, eps } => {
            let (xv, gv, bv) = (val(*x), val(*gain), val(*bias));
            let mut out = Matrix::zeros(xv.rows(), xv.cols());
            for r in 0..xv.rows() {
                layer_norm_row(xv.row(r), gv.data(), bv.data(), *eps, out.row_mut(r));
            }
            out
        }
        Op::L2NormalizeRows(a) => {
            let mut out = val(*a).clone();
            for r in 0..out.rows() {
                l2_normalize_in_place(out.row_mut(r));
            }
            out
        }
        Op::Gelu(a) => val(*a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())),
        Op::ConcatRows(parts) => {
            let cols = val(parts[0]).cols();
            let mut data = Vec::new();
            for p in parts {
                data.extend_from_slice(val(*p).data());
            }
            Matrix::from_parts(data.len() / cols.max(1), cols, data)
        }
        Op::ConcatCols(parts) => {
            let rows = val(parts[0]).rows();
            let cols: usize = parts.iter().map(|p| val(*p).cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(val(*p).row(r));
                }
            }
            Matrix::from_parts(rows, cols, data)
        }
        Op::SliceRows(a, start, len) => val(*a).slice_rows(*start, *len),
        Op::SliceCols(a, start, len) => val(*a).slice_cols(*start, *len),
        Op::GatherRows(table, indices) => {
            let t = val(*table);
            let mut data = Vec::with_capacity(indices.len() * t.cols());
            for &i in indices {
                data.extend_from_slice(t.row(i));
            }
            Matrix::from_parts(indices.len(), t.cols(), data)
        }
        Op::CrossEntropy(logits, targets) => Matrix::scalar(cross_entropy_unchecked(val(*logits), targets)),
        Op::Sum(a) => Matrix::scalar(val(*a).data().iter().sum()),
    }
}

/// Parameter gradients from one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    params: HashMap<ParamId, Matrix>,
}

impl Gradients {
    /// Gradient for `id`, or `None` if the parameter did not influence the loss.
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id)
    }

    /// Gradient for `id`, materializing zeros for untouched parameters.
    pub fn get_or_zeros(&self, store: &ParamStore, id: ParamId) -> Matrix {
        self.params.get(&id).cloned().unwrap_or_else(|| {
            let (r, c) = store.get(id).shape();
            Matrix::zeros(r, c)
        })
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Matrix::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::SplitMix64;

    fn store_with(name: &str, m: Matrix) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(name, m).unwrap();
        (s, id)
    }

    #[test]
    fn square_gradient() {
        let (s, id) = store_with("x", Matrix::scalar(3.0));
        let mut t = Tape::new();
        let x = t.param(&s, id);
        let y = t.mul_elem(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(t.value(y).item(), 9.0);
        assert_eq!(g.get(id).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let (s, id) = store_with("x", Matrix::scalar(3.0));
        let mut t = Tape::new();
        let _x = t.param(&s, id);
        let c = t.constant(Matrix::scalar(5.0));
        let y = t.scale(c, 2.0);
        let g = t.backward(y).unwrap();
        assert!(g.get(id).is_none());
        assert_eq!(g.get_or_zeros(&s, id).item(), 0.0);
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = SplitMix64::new(11);
        let (s, id) = store_with("w", rng.matrix(4, 3, -1.0, 1.0));
        let mut t = Tape::new();
        let x = t.constant(rng.matrix(5, 4, -1.0, 1.0));
        let w = t.param(&s, id);
        let h = t.matmul(x, w).unwrap();
        let h = t.gelu(h);
        let p = t.softmax_rows(h);
        let n = t.l2_normalize_rows(p);
        let loss = t.cross_entropy(n, &[0, 1, 2, 0, 1]).unwrap();
        let replayed = t.replay();
        assert_eq!(replayed.len(), t.len());
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v.data(), t.nodes[i].value.data());
        }
        assert!(t.value(loss).item().is_finite());
    }

    #[test]
    fn param_leaf_is_cached() {
        let (s, id) = store_with("w", Matrix::zeros(2, 2));
        let mut t = Tape::new();
        assert_eq!(t.param(&s, id), t.param(&s, id));
        assert_eq!(t.params_used(), vec![id]);
    }

    #[test]
    fn gather_unused_rows_get_zero() {
        let (s, id) = store_with("table", Matrix::filled(4, 2, 1.0));
        let mut t = Tape::new();
        let tab = t.param(&s, id);
        let rows = t.gather_rows(tab, &[1, 1, 3]).unwrap();
        let loss = t.sum(rows);
        let g = t.backward(loss).unwrap();
        let g = g.get(id).unwrap();
        assert_eq!(g.row(0), &[0.0, 0.0]);
        assert_eq!(g.row(1), &[2.0, 2.0]);
        assert_eq!(g.row(2), &[0.0, 0.0]);
        assert_eq!(g.row(3), &[1.0, 1.0]);
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(4, 5));
        assert!(t.matmul(a, b).is_err());
        assert!(t.add(a, b).is_err());
        assert!(t.backward(a).is_err());
        assert!(t.gather_rows(a, &[2]).is_err());
    }
}
