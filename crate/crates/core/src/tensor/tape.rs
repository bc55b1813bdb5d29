use std::collections::HashMap;
use std::sync::Arc;

use super::{Array, ParamId, ParamStore, Result, Scalar, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Arc<Vec<(Var, usize)>>),
    SegmentSoftmax(Var, Arc<Vec<usize>>),
    SegmentSum(Var, Arc<Vec<usize>>),
    Sum(Var),
    Mean(Var),
    BceWithLogits(Var, Arc<Vec<S>>),
    CosineRows(Var, Var),
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: Array<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Eager computation record.
#[derive(Debug, Clone)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    params: HashMap<ParamId, Var>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }
}

/// Adjoints of every tape entry.
pub struct Grads<S> {
    grads: Vec<Option<Array<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&Array<S>> {
        self.grads[v.0].as_ref()
    }
}

const COS_EPS: f64 = 1e-12;

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softplus<S: Scalar>(x: S) -> S {
    // log(1 + e^x) without overflow.
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> TensorError {
    TensorError::Shape { op, left: a, right: b }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, name: &'static str, value: Array<S>, op: Op<S>, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input (no gradient flows back to it).
    pub fn constant(&mut self, a: Array<S>) -> Result<Var> {
        self.push("constant", a, Op::Leaf, false)
    }

    /// Input whose adjoint is wanted by [`Tape::backward_full`].
    pub fn input(&mut self, a: Array<S>) -> Result<Var> {
        self.push("input", a, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; one leaf per parameter per tape.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(&[a, b]);
        self.push("matmul", out, Op::MatMul(a, b), ng)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(&[a, b]);
        self.push("add", out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(&[a, b]);
        self.push("sub", out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(&[a, b]);
        self.push("mul", out, Op::Mul(a, b), ng)
    }

    /// Adds a 1 x c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.value(a).shape(), self.value(row).shape());
        if sr != (1, sa.1) {
            return Err(shape_err("add_row", sa, sr));
        }
        let r = self.value(row).row(0).to_vec();
        let mut out = self.value(a).clone();
        for i in 0..sa.0 {
            for (x, &b) in out.row_mut(i).iter_mut().zip(&r) {
                *x = *x + b;
            }
        }
        let ng = self.ng(&[a, row]);
        self.push("add_row", out, Op::AddRow(a, row), ng)
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.value(a).shape(), self.value(col).shape());
        if sc != (sa.0, 1) {
            return Err(shape_err("mul_col", sa, sc));
        }
        let mut out = self.value(a).clone();
        for i in 0..sa.0 {
            let s = self.value(col).get(i, 0);
            out.row_mut(i).iter_mut().for_each(|x| *x = *x * s);
        }
        let ng = self.ng(&[a, col]);
        self.push("mul_col", out, Op::MulCol(a, col), ng)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let (s, t) = (S::from_f64(scale), S::from_f64(shift));
        let out = self.value(a).map(|x| s * x + t);
        let ng = self.ng(&[a]);
        self.push("affine", out, Op::Affine(a, s), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(&[a]);
        self.push("sigmoid", out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(S::tanh);
        let ng = self.ng(&[a]);
        self.push("tanh", out, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(S::zero()));
        let ng = self.ng(&[a]);
        self.push("relu", out, Op::Relu(a), ng)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(S::abs);
        let ng = self.ng(&[a]);
        self.push("abs", out, Op::Abs(a), ng)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Empty("concat"))?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat", self.value(first).shape(), self.value(p).shape()));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Array::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        let ng = self.ng(parts);
        self.push("concat", out, Op::Concat(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(a).shape();
        if start + len > c {
            return Err(shape_err("slice_cols", (r, c), (start, len)));
        }
        let out = Array::from_fn(r, len, |i, j| self.value(a).get(i, start + j));
        let ng = self.ng(&[a]);
        self.push("slice_cols", out, Op::SliceCols(a, start), ng)
    }

    /// Stacks the referenced rows; every source must have the same width.
    pub fn gather_rows(&mut self, refs: Arc<Vec<(Var, usize)>>) -> Result<Var> {
        let &(first, _) = refs.first().ok_or(TensorError::Empty("gather_rows"))?;
        let cols = self.value(first).cols();
        let mut data = Vec::with_capacity(refs.len() * cols);
        for &(v, r) in refs.iter() {
            let a = self.value(v);
            if a.cols() != cols || r >= a.rows() {
                return Err(shape_err("gather_rows", (r, cols), a.shape()));
            }
            data.extend_from_slice(a.row(r));
        }
        let out = Array::from_vec(refs.len(), cols, data)?;
        let ng = refs.iter().any(|&(v, _)| self.nodes[v.0].needs_grad);
        self.push("gather_rows", out, Op::GatherRows(refs), ng)
    }

    /// Softmax of an n x 1 column within groups given by `seg[i]`.
    pub fn segment_softmax(&mut self, a: Var, seg: Arc<Vec<usize>>, n_seg: usize) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != (seg.len(), 1) {
            return Err(shape_err("segment_softmax", x.shape(), (seg.len(), 1)));
        }
        let mut max = vec![S::neg_infinity(); n_seg];
        for (i, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(x.get(i, 0));
        }
        let mut total = vec![S::zero(); n_seg];
        let mut e = Vec::with_capacity(seg.len());
        for (i, &s) in seg.iter().enumerate() {
            let v = (x.get(i, 0) - max[s]).exp();
            total[s] = total[s] + v;
            e.push(v);
        }
        let out = Array::from_vec(seg.len(), 1, e.iter().zip(seg.iter()).map(|(&v, &s)| v / total[s]).collect())?;
        let ng = self.ng(&[a]);
        self.push("segment_softmax", out, Op::SegmentSoftmax(a, seg), ng)
    }

    /// Row `k` of the result sums the rows `i` of `a` with `seg[i] == k`.
    pub fn segment_sum(&mut self, a: Var, seg: Arc<Vec<usize>>, n_seg: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != seg.len() || seg.iter().any(|&s| s >= n_seg) {
            return Err(shape_err("segment_sum", x.shape(), (seg.len(), n_seg)));
        }
        let mut out = Array::zeros(n_seg, x.cols());
        for (i, &s) in seg.iter().enumerate() {
            for (o, &v) in out.row_mut(s).iter_mut().zip(x.row(i)) {
                *o = *o + v;
            }
        }
        let ng = self.ng(&[a]);
        self.push("segment_sum", out, Op::SegmentSum(a, seg), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        let ng = self.ng(&[a]);
        self.push("sum", Array::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(TensorError::Empty("mean"));
        }
        let s: S = x.data().iter().copied().sum();
        let out = Array::scalar(s / S::from_f64(x.len() as f64));
        let ng = self.ng(&[a]);
        self.push("mean", out, Op::Mean(a), ng)
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let x = self.value(logits);
        if x.len() != targets.len() || x.cols() != 1 {
            return Err(shape_err("bce_with_logits", x.shape(), (targets.len(), 1)));
        }
        if x.is_empty() {
            return Err(TensorError::Empty("bce_with_logits"));
        }
        let t: Vec<S> = targets.iter().map(|&v| S::from_f64(v)).collect();
        let total: S = x.data().iter().zip(&t).map(|(&z, &y)| softplus(z) - y * z).sum();
        let out = Array::scalar(total / S::from_f64(t.len() as f64));
        let ng = self.ng(&[logits]);
        self.push("bce_with_logits", out, Op::BceWithLogits(logits, Arc::new(t)), ng)
    }

    /// Row-wise cosine similarity, n x 1.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_rows", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let eps = S::from_f64(COS_EPS);
        let out = Array::from_fn(x.rows(), 1, |i, _| {
            let (u, v) = (x.row(i), y.row(i));
            let dot: S = u.iter().zip(v).map(|(&p, &q)| p * q).sum();
            let nu = u.iter().map(|&p| p * p).sum::<S>().sqrt().max(eps);
            let nv = v.iter().map(|&q| q * q).sum::<S>().sqrt().max(eps);
            dot / (nu * nv)
        });
        let ng = self.ng(&[a, b]);
        self.push("cosine_rows", out, Op::CosineRows(a, b), ng)
    }

    /// Adjoints of every entry with respect to the 1 x 1 entry `loss`.
    pub fn backward_full(&self, loss: Var) -> Result<Grads<S>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(shape_err("backward", self.value(loss).shape(), (1, 1)));
        }
        let mut grads: Vec<Option<Array<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array::scalar(S::one()));
        for k in (0..=loss.0).rev() {
            let Some(g) = grads[k].take() else { continue };
            if !self.nodes[k].needs_grad {
                continue;
            }
            self.propagate(k, &g, &mut grads);
            grads[k] = Some(g);
        }
        Ok(Grads { grads })
    }

    /// Accumulates parameter gradients of `loss` into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<S>) -> Result<()> {
        let grads = self.backward_full(loss)?;
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.accumulate_grad(id, g);
            }
        }
        Ok(())
    }

    /// Parameter gradients of `loss`, ordered by parameter id.
    pub fn param_grads(&self, loss: Var) -> Result<Vec<(ParamId, Array<S>)>> {
        let grads = self.backward_full(loss)?;
        let mut out: Vec<(ParamId, Array<S>)> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| grads.get(v).map(|g| (id, g.clone())))
            .collect();
        out.sort_by_key(|x| x.0.index());
        Ok(out)
    }

    fn propagate(&self, k: usize, g: &Array<S>, grads: &mut [Option<Array<S>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let acc = |v: Var, d: Array<S>, grads: &mut [Option<Array<S>>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(x) => x.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        let y = &self.nodes[k].value;
        match &self.nodes[k].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    acc(*a, g.matmul_t(false, val(*b), true).expect("shapes"), grads);
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, val(*a).matmul_t(true, g, false).expect("shapes"), grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.map(|x| -x), grads);
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |d, y| d * y), grads);
                acc(*b, g.zip_map(val(*a), |d, x| d * x), grads);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone(), grads);
                let mut r = Array::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, &d) in r.row_mut(0).iter_mut().zip(g.row(i)) {
                        *o = *o + d;
                    }
                }
                acc(*row, r, grads);
            }
            Op::MulCol(a, col) => {
                let (x, c) = (val(*a), val(*col));
                let da = Array::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * c.get(i, 0));
                let dc = Array::from_fn(g.rows(), 1, |i, _| {
                    g.row(i).iter().zip(x.row(i)).map(|(&d, &v)| d * v).sum()
                });
                acc(*a, da, grads);
                acc(*col, dc, grads);
            }
            Op::Affine(a, s) => acc(*a, g.map(|d| d * *s), grads),
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |d, s| d * s * (S::one() - s)), grads),
            Op::Tanh(a) => acc(*a, g.zip_map(y, |d, t| d * (S::one() - t * t)), grads),
            Op::Relu(a) => acc(
                *a,
                g.zip_map(val(*a), |d, x| if x > S::zero() { d } else { S::zero() }),
                grads,
            ),
            Op::Abs(a) => acc(
                *a,
                g.zip_map(val(*a), |d, x| {
                    if x > S::zero() {
                        d
                    } else if x < S::zero() {
                        -d
                    } else {
                        S::zero()
                    }
                }),
                grads,
            ),
            Op::Concat(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let d = Array::from_fn(g.rows(), w, |i, j| g.get(i, c0 + j));
                    acc(p, d, grads);
                    c0 += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).shape();
                let mut d = Array::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*a, d, grads);
            }
            Op::GatherRows(refs) => {
                for (i, &(v, r)) in refs.iter().enumerate() {
                    if !self.nodes[v.0].needs_grad {
                        continue;
                    }
                    let slot = grads[v.0].get_or_insert_with(|| {
                        let (rr, cc) = val(v).shape();
                        Array::zeros(rr, cc)
                    });
                    for (o, &d) in slot.row_mut(r).iter_mut().zip(g.row(i)) {
                        *o = *o + d;
                    }
                }
            }
            Op::SegmentSoftmax(a, seg) => {
                let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![S::zero(); n_seg];
                for (i, &s) in seg.iter().enumerate() {
                    dot[s] = dot[s] + y.get(i, 0) * g.get(i, 0);
                }
                let d = Array::from_fn(seg.len(), 1, |i, _| y.get(i, 0) * (g.get(i, 0) - dot[seg[i]]));
                acc(*a, d, grads);
            }
            Op::SegmentSum(a, seg) => {
                let d = Array::from_fn(seg.len(), g.cols(), |i, j| g.get(seg[i], j));
                acc(*a, d, grads);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Array::full(r, c, g.item()), grads);
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Array::full(r, c, g.item() / S::from_f64((r * c) as f64)), grads);
            }
            Op::BceWithLogits(a, t) => {
                let x = val(*a);
                let n = S::from_f64(t.len() as f64);
                let d = Array::from_fn(x.rows(), 1, |i, _| g.item() * (sigmoid(x.get(i, 0)) - t[i]) / n);
                acc(*a, d, grads);
            }
            Op::CosineRows(a, b) => {
                let (x, z) = (val(*a), val(*b));
                let eps = S::from_f64(COS_EPS);
                let mut da = Array::zeros(x.rows(), x.cols());
                let mut db = Array::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let (u, v) = (x.row(i), z.row(i));
                    let nu = u.iter().map(|&p| p * p).sum::<S>().sqrt().max(eps);
                    let nv = v.iter().map(|&q| q * q).sum::<S>().sqrt().max(eps);
                    let c = y.get(i, 0);
                    let d = g.get(i, 0);
                    for j in 0..u.len() {
                        da.set(i, j, d * (v[j] / (nu * nv) - c * u[j] / (nu * nu)));
                        db.set(i, j, d * (u[j] / (nu * nv) - c * v[j] / (nv * nv)));
                    }
                }
                acc(*a, da, grads);
                acc(*b, db, grads);
            }
        }
    }
}
