//! Layers built from tape operations.

use std::sync::Arc;

use rand::Rng as _;

use super::{Array, ParamId, ParamStore, Result, Scalar, Tape, TensorError, Var};
use crate::rng::Rng;

/// Uniform Glorot initialization.
pub fn glorot<S: Scalar>(rng: &mut Rng, rows: usize, cols: usize) -> Array<S> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array::from_fn(rows, cols, |_, _| S::from_f64(rng.random_range(-a..a)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, inp: usize, out: usize, rng: &mut Rng) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), glorot(rng, inp, out)),
            b: store.add(format!("{name}.b"), Array::zeros(1, out)),
        }
    }

    pub fn apply<S: Scalar>(&self, t: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = t.param(store, self.w);
        let b = t.param(store, self.b);
        let y = t.matmul(x, w)?;
        t.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
}

/// Three affine layers with ReLU between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp3 {
    pub layers: [Linear; 3],
}

impl Mlp3 {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        inp: usize,
        hidden: usize,
        out: usize,
        rng: &mut Rng,
    ) -> Self {
        Mlp3 {
            layers: [
                Linear::new(store, &format!("{name}.l0"), inp, hidden, rng),
                Linear::new(store, &format!("{name}.l1"), hidden, hidden, rng),
                Linear::new(store, &format!("{name}.l2"), hidden, out, rng),
            ],
        }
    }

    /// Pre-activation output of the last layer.
    pub fn logits<S: Scalar>(&self, t: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let h = self.layers[0].apply(t, store, x)?;
        let h = t.relu(h)?;
        let h = self.layers[1].apply(t, store, h)?;
        let h = t.relu(h)?;
        self.layers[2].apply(t, store, h)
    }
}

pub fn mlp3<S: Scalar>(t: &mut Tape<S>, store: &ParamStore<S>, m: &Mlp3, x: Var, act: Activation) -> Result<Var> {
    let z = m.logits(t, store, x)?;
    match act {
        Activation::Identity => Ok(z),
        Activation::Sigmoid => t.sigmoid(z),
    }
}

/// GRU with gates packed as `[r, z, n]` along the columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gru {
    pub wi: ParamId,
    pub wh: ParamId,
    pub bi: ParamId,
    pub bh: ParamId,
    pub dim: usize,
}

impl Gru {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, inp: usize, dim: usize, rng: &mut Rng) -> Self {
        Gru {
            wi: store.add(format!("{name}.wi"), glorot(rng, inp, 3 * dim)),
            wh: store.add(format!("{name}.wh"), glorot(rng, dim, 3 * dim)),
            bi: store.add(format!("{name}.bi"), Array::zeros(1, 3 * dim)),
            bh: store.add(format!("{name}.bh"), Array::zeros(1, 3 * dim)),
            dim,
        }
    }
}

/// `r = σ(x Wir + h Whr)`, `z = σ(x Wiz + h Whz)`,
/// `n = tanh(x Win + r ⊙ (h Whn))` (biases included), returning
/// `(1 - z) ⊙ n + z ⊙ h`.
pub fn gru_cell<S: Scalar>(t: &mut Tape<S>, store: &ParamStore<S>, p: &Gru, x: Var, h: Var) -> Result<Var> {
    let d = p.dim;
    if t.value(h).cols() != d {
        return Err(TensorError::Shape {
            op: "gru_cell",
            left: t.value(h).shape(),
            right: (t.value(x).rows(), d),
        });
    }
    let (wi, wh, bi, bh) = (
        t.param(store, p.wi),
        t.param(store, p.wh),
        t.param(store, p.bi),
        t.param(store, p.bh),
    );
    let xi = t.matmul(x, wi)?;
    let xi = t.add_row(xi, bi)?;
    let hh = t.matmul(h, wh)?;
    let hh = t.add_row(hh, bh)?;
    let (xr, xz, xn) = (t.slice_cols(xi, 0, d)?, t.slice_cols(xi, d, d)?, t.slice_cols(xi, 2 * d, d)?);
    let (hr, hz, hn) = (t.slice_cols(hh, 0, d)?, t.slice_cols(hh, d, d)?, t.slice_cols(hh, 2 * d, d)?);
    let r = t.add(xr, hr)?;
    let r = t.sigmoid(r)?;
    let z = t.add(xz, hz)?;
    let z = t.sigmoid(z)?;
    let rn = t.mul(r, hn)?;
    let n = t.add(xn, rn)?;
    let n = t.tanh(n)?;
    let keep = t.mul(z, h)?;
    let omz = t.affine(z, -1.0, 1.0)?;
    let upd = t.mul(omz, n)?;
    t.add(upd, keep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attention {
    /// Scores the receiving node's previous state (`state_dim x 1`).
    pub w1: ParamId,
    /// Scores each predecessor feature (`feat_dim x 1`).
    pub w2: ParamId,
}

impl Attention {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        state_dim: usize,
        feat_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        Attention {
            w1: store.add(format!("{name}.w1"), glorot(rng, state_dim, 1)),
            w2: store.add(format!("{name}.w2"), glorot(rng, feat_dim, 1)),
        }
    }
}

/// Attention-weighted sum of predecessor features.
///
/// `prev` holds one receiving node per row, `feats` one edge per row, and
/// `seg[e]` names the receiving row of edge `e`. Every receiver needs at
/// least one edge.
pub fn attn_aggregate<S: Scalar>(
    t: &mut Tape<S>,
    store: &ParamStore<S>,
    p: &Attention,
    prev: Var,
    feats: Var,
    seg: Arc<Vec<usize>>,
) -> Result<Var> {
    let n = t.value(prev).rows();
    let mut seen = vec![false; n];
    for &s in seg.iter() {
        if s >= n {
            return Err(TensorError::Invalid(format!("edge targets row {s} of {n}")));
        }
        seen[s] = true;
    }
    if seen.iter().any(|&x| !x) {
        return Err(TensorError::Empty("attn_aggregate"));
    }
    let w1 = t.param(store, p.w1);
    let w2 = t.param(store, p.w2);
    let self_score = t.matmul(prev, w1)?;
    let per_edge = t.gather_rows(Arc::new(seg.iter().map(|&s| (self_score, s)).collect()))?;
    let edge_score = t.matmul(feats, w2)?;
    let score = t.add(per_edge, edge_score)?;
    let alpha = t.segment_softmax(score, seg.clone(), n)?;
    let weighted = t.mul_col(feats, alpha)?;
    t.segment_sum(weighted, seg, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::tensor::tape::tests::check_params;

    fn zero_all<S: Scalar>(store: &mut ParamStore<S>) {
        for id in store.ids().collect::<Vec<_>>() {
            let (r, c) = store.value(id).shape();
            *store.value_mut(id) = Array::zeros(r, c);
        }
    }

    #[test]
    fn zero_mlp_sigmoid_is_half() {
        let mut store = ParamStore::<f32>::new();
        let m = Mlp3::new(&mut store, "h", 4, 8, 1, &mut rng_from(0));
        zero_all(&mut store);
        let mut t = Tape::new();
        let x = t.constant(Array::full(3, 4, 0.7)).unwrap();
        let y = mlp3(&mut t, &store, &m, x, Activation::Sigmoid).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn scalar_chain_by_hand() {
        let mut store = ParamStore::<f64>::new();
        let m = Mlp3::new(&mut store, "h", 1, 1, 1, &mut rng_from(0));
        let set = |s: &mut ParamStore<f64>, id, v| *s.value_mut(id) = Array::scalar(v);
        set(&mut store, m.layers[0].w, 2.0);
        set(&mut store, m.layers[0].b, -1.0);
        set(&mut store, m.layers[1].w, -3.0);
        set(&mut store, m.layers[1].b, 4.0);
        set(&mut store, m.layers[2].w, 0.5);
        set(&mut store, m.layers[2].b, 0.25);
        for (x, want) in [(1.0, 0.5 * 1.0 + 0.25), (0.0, 0.5 * 4.0 + 0.25), (3.0, 0.25)] {
            // relu(-3 * relu(2x - 1) + 4) * 0.5 + 0.25
            let mut t = Tape::new();
            let xv = t.constant(Array::scalar(x)).unwrap();
            let y = mlp3(&mut t, &store, &m, xv, Activation::Identity).unwrap();
            assert_eq!(t.value(y).item(), want, "x={x}");
        }
    }

    #[test]
    fn gru_pass_through_and_candidate() {
        let mut store = ParamStore::<f64>::new();
        let g = Gru::new(&mut store, "g", 3, 2, &mut rng_from(1));
        let x = Array::from_vec(1, 3, vec![0.2, -0.4, 0.9]).unwrap();
        let h = Array::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let run = |store: &ParamStore<f64>| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone()).unwrap();
            let hv = t.constant(h.clone()).unwrap();
            let y = gru_cell(&mut t, store, &g, xv, hv).unwrap();
            t.value(y).clone()
        };
        let mut open = store.clone();
        let mut bi = Array::zeros(1, 6);
        bi.set(0, 2, 30.0);
        bi.set(0, 3, 30.0);
        *open.value_mut(g.bi) = bi;
        let y = run(&open);
        assert!((y.get(0, 0) - 0.3).abs() < 1e-9 && (y.get(0, 1) + 0.7).abs() < 1e-9);

        let mut cand = store.clone();
        *cand.value_mut(g.wh) = Array::zeros(2, 6);
        let mut bi = Array::zeros(1, 6);
        bi.set(0, 0, 30.0);
        bi.set(0, 1, 30.0);
        bi.set(0, 2, -30.0);
        bi.set(0, 3, -30.0);
        bi.set(0, 4, 0.1);
        bi.set(0, 5, -0.2);
        *cand.value_mut(g.bi) = bi;
        let y = run(&cand);
        let wi = cand.value(g.wi).clone();
        for j in 0..2 {
            let pre: f64 = (0..3).map(|k| x.get(0, k) * wi.get(k, 4 + j)).sum::<f64>() + [0.1, -0.2][j];
            assert!((y.get(0, j) - pre.tanh()).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_attention_is_mean() {
        let mut store = ParamStore::<f64>::new();
        let a = Attention::new(&mut store, "a", 2, 3, &mut rng_from(0));
        zero_all(&mut store);
        let mut t = Tape::new();
        let prev = t.constant(Array::zeros(1, 2)).unwrap();
        let feats = t.constant(Array::from_vec(2, 3, vec![1., 2., 3., 5., 6., 7.]).unwrap()).unwrap();
        let m = attn_aggregate(&mut t, &store, &a, prev, feats, Arc::new(vec![0, 0])).unwrap();
        assert_eq!(t.value(m).data(), &[3., 4., 5.]);
    }

    #[test]
    fn single_predecessor_passes_through() {
        let mut store = ParamStore::<f64>::new();
        let a = Attention::new(&mut store, "a", 2, 3, &mut rng_from(5));
        let mut t = Tape::new();
        let prev = t.constant(Array::full(1, 2, 0.4)).unwrap();
        let f = Array::from_vec(1, 3, vec![0.1, -2.0, 9.0]).unwrap();
        let feats = t.constant(f.clone()).unwrap();
        let m = attn_aggregate(&mut t, &store, &a, prev, feats, Arc::new(vec![0])).unwrap();
        assert_eq!(t.value(m), &f);
        let err = attn_aggregate(&mut t, &store, &a, prev, feats, Arc::new(vec![]));
        assert_eq!(err, Err(TensorError::Empty("attn_aggregate")));
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = rng_from(3);
        let mut store = ParamStore::<f64>::new();
        let gru = Gru::new(&mut store, "g", 4, 3, &mut rng);
        let att = Attention::new(&mut store, "a", 3, 4, &mut rng);
        let mlp = Mlp3::new(&mut store, "m", 3, 5, 1, &mut rng);
        let feats = glorot::<f64>(&mut rng, 3, 4);
        let prev = glorot::<f64>(&mut rng, 1, 3);
        check_params(
            &mut store,
            |t, s| {
                let f = t.constant(feats.clone()).unwrap();
                let p = t.constant(prev.clone()).unwrap();
                let m = attn_aggregate(t, s, &att, p, f, Arc::new(vec![0, 0, 0])).unwrap();
                let h = gru_cell(t, s, &gru, m, p).unwrap();
                let y = mlp3(t, s, &mlp, h, Activation::Sigmoid).unwrap();
                t.sum(y).unwrap()
            },
            1e-6,
            1e-6,
        );
    }
}
