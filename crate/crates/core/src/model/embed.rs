use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::netgraph::{CircuitGraph, NodeKind};
use crate::rng::{derive_seed, rng_from, tags, Rng};
use crate::simulate::Workload;
use crate::tensor::{Array, Scalar};

/// Per-node structure, function and sequential vectors (`n x dim` each).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState<S> {
    pub hs: Array<S>,
    pub hf: Array<S>,
    pub hseq: Array<S>,
}

impl<S: Scalar> EmbeddingState<S> {
    pub fn len(&self) -> usize {
        self.hs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.hs.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.hs.cols()
    }

    pub fn space(&self, k: usize) -> &Array<S> {
        match k {
            0 => &self.hs,
            1 => &self.hf,
            _ => &self.hseq,
        }
    }
}

fn gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `k` orthonormal vectors by Gram-Schmidt on Gaussian draws (`k <= dim`).
fn orthonormal(rng: &mut Rng, k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = gaussian(rng, dim);
        // Two passes keep the result orthogonal to double precision.
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

/// Initial embeddings.
///
/// Sources (PIs and FFs) get orthonormal structure vectors when there are
/// at most `dim` of them and random unit vectors otherwise. Every other
/// vector is random unit, except the PI function and sequential vectors,
/// which carry the workload's `p1` and `ptr` in component 0.
pub fn init_embeddings<S: Scalar>(g: &CircuitGraph, w: &Workload, dim: usize, seed: u64) -> EmbeddingState<S> {
    let n = g.len();
    let mut rng = rng_from(derive_seed(seed, tags::EMBED_INIT));
    let sources: Vec<usize> = (0..n).filter(|&v| g.is_source(v)).collect();
    let mut hs = Array::zeros(n, dim);
    let src_vecs = if sources.len() <= dim {
        orthonormal(&mut rng, sources.len(), dim)
    } else {
        (0..sources.len()).map(|_| unit(&mut rng, dim)).collect()
    };
    for (&v, x) in sources.iter().zip(&src_vecs) {
        fill(&mut hs, v, x);
    }
    for v in (0..n).filter(|&v| !g.is_source(v)) {
        fill(&mut hs, v, &unit(&mut rng, dim));
    }
    let mut hf = Array::zeros(n, dim);
    let mut hseq = Array::zeros(n, dim);
    for v in 0..n {
        if g.kind(v) == NodeKind::Pi {
            let st = w.get(v);
            let (p1, ptr) = st.map_or((0.0, 0.0), |s| (s.p1, s.ptr));
            hf.set(v, 0, S::from_f64(p1));
            hseq.set(v, 0, S::from_f64(ptr));
        } else {
            fill(&mut hf, v, &unit(&mut rng, dim));
            fill(&mut hseq, v, &unit(&mut rng, dim));
        }
    }
    EmbeddingState { hs, hf, hseq }
}

fn fill<S: Scalar>(a: &mut Array<S>, row: usize, x: &[f64]) {
    for (o, &v) in a.row_mut(row).iter_mut().zip(x) {
        *o = S::from_f64(v);
    }
}
