use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Forward, Model, ModelError, Result};
use crate::netgraph::{CircuitGraph, NodeId, NodeKind};
use crate::schedule::PropagationPlan;
use crate::supervise::LabelSet;
use crate::tensor::nn::{mlp3, Activation};
use crate::tensor::{Array, Scalar, Tape, Var};

use super::EmbeddingState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub rc: f64,
    pub lg: f64,
    pub tr: f64,
    pub f: f64,
    pub ffsim: f64,
    pub rel: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rc: 1.0,
            lg: 1.0,
            tr: 1.0,
            f: 1.0,
            ffsim: 1.0,
            rel: 1.0,
        }
    }
}

impl LossWeights {
    pub fn check(&self) -> Result<()> {
        let all = [self.rc, self.lg, self.tr, self.f, self.ffsim, self.rel];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(ModelError::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Supervision targets of one circuit, aligned for the heads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Targets {
    /// Nodes supervised by the probability heads (every non-PI node).
    pub nodes: Vec<NodeId>,
    pub p1: Vec<f64>,
    pub ptr: Vec<f64>,
    /// Fanin pairs in (min, max) order.
    pub rc: Vec<(NodeId, NodeId)>,
    pub rc_labels: Vec<f64>,
    pub f: Vec<(NodeId, NodeId)>,
    pub f_dist: Vec<f64>,
    pub ffsim: Vec<(NodeId, NodeId)>,
    pub ffsim_sim: Vec<f64>,
    /// Flip-probability targets `(node, [p01, p10])`.
    pub flips: Vec<(NodeId, [f64; 2])>,
}

fn unit(what: impl Fn() -> String, x: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(ModelError::BadLabel { what: what(), value: x })
    }
}

impl Targets {
    pub fn from_labels(g: &CircuitGraph, l: &LabelSet) -> Result<Self> {
        let n = g.len();
        if l.p1.len() != n || l.ptr.len() != n {
            return Err(ModelError::Mismatch(format!("labels cover {} nodes, graph has {n}", l.p1.len())));
        }
        let check_id = |v: NodeId| {
            if v < n {
                Ok(v)
            } else {
                Err(ModelError::Mismatch(format!("label references node {v} of {n}")))
            }
        };
        let mut t = Targets::default();
        for v in (0..n).filter(|&v| g.kind(v) != NodeKind::Pi) {
            t.nodes.push(v);
            t.p1.push(unit(|| format!("p1[{v}]"), l.p1[v])?);
            t.ptr.push(unit(|| format!("ptr[{v}]"), l.ptr[v])?);
        }
        for r in &l.rc_pairs {
            let (a, b) = (check_id(r.a)?, check_id(r.b)?);
            t.rc.push((a.min(b), a.max(b)));
            t.rc_labels.push(unit(|| format!("rc[{}]", r.gate), f64::from(r.label))?);
        }
        for p in &l.f_pairs {
            t.f.push((check_id(p.i)?, check_id(p.j)?));
            t.f_dist.push(unit(|| format!("f[{},{}]", p.i, p.j), p.distance)?);
        }
        for p in &l.ffsim_pairs {
            t.ffsim.push((check_id(p.i)?, check_id(p.j)?));
            t.ffsim_sim.push(unit(|| format!("ffsim[{},{}]", p.i, p.j), p.sim)?);
        }
        Ok(t)
    }

    /// Probability targets only, for every non-PI node.
    pub fn probabilities(g: &CircuitGraph, p1: &[f64], ptr: &[f64]) -> Result<Self> {
        let l = LabelSet {
            p1: p1.to_vec(),
            ptr: ptr.to_vec(),
            ..LabelSet::default()
        };
        Self::from_labels(g, &l)
    }

    pub fn with_flips(mut self, flips: Vec<(NodeId, [f64; 2])>) -> Result<Self> {
        for (v, [a, b]) in &flips {
            unit(|| format!("p01[{v}]"), *a)?;
            unit(|| format!("p10[{v}]"), *b)?;
        }
        self.flips = flips;
        Ok(self)
    }
}

/// Head outputs on the tape; `None` where a task has no targets.
#[derive(Debug, Clone, Default)]
pub struct Predictions {
    pub rc_logit: Option<Var>,
    pub rc: Option<Var>,
    pub lg: Option<Var>,
    pub tr: Option<Var>,
    pub f: Option<Var>,
    pub ffsim: Option<Var>,
    pub rel: Option<Var>,
}

/// Weighted loss terms (0 when inactive) and their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rc: f64,
    pub lg: f64,
    pub tr: f64,
    pub f: f64,
    pub ffsim: f64,
    pub rel: f64,
}

impl LossBreakdown {
    pub(crate) fn add(&mut self, o: &LossBreakdown) {
        self.total += o.total;
        self.rc += o.rc;
        self.lg += o.lg;
        self.tr += o.tr;
        self.f += o.f;
        self.ffsim += o.ffsim;
        self.rel += o.rel;
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for x in [
            &mut self.total,
            &mut self.rc,
            &mut self.lg,
            &mut self.tr,
            &mut self.f,
            &mut self.ffsim,
            &mut self.rel,
        ] {
            *x *= s;
        }
    }
}

/// Per-node head outputs for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePredictions {
    pub lg: Vec<f64>,
    pub tr: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel: Option<Vec<[f64; 2]>>,
}

fn rows(t: &mut Tape<impl Scalar>, src: Var, ids: impl Iterator<Item = NodeId>) -> Result<Var> {
    Ok(t.gather_rows(Arc::new(ids.map(|v| (src, v)).collect()))?)
}

impl<S: Scalar> Model<S> {
    /// Evaluates every head that has targets (and, for the flip head,
    /// exists).
    pub fn predict(&self, t: &mut Tape<S>, fw: &Forward, tg: &Targets) -> Result<Predictions> {
        let st = &self.store;
        let mut p = Predictions::default();
        if !tg.rc.is_empty() {
            let a = rows(t, fw.hs, tg.rc.iter().map(|x| x.0))?;
            let b = rows(t, fw.hs, tg.rc.iter().map(|x| x.1))?;
            let x = t.concat(&[a, b])?;
            let z = self.layers.rc.logits(t, st, x)?;
            p.rc_logit = Some(z);
            p.rc = Some(t.sigmoid(z)?);
        }
        if !tg.nodes.is_empty() {
            let hf = rows(t, fw.hf, tg.nodes.iter().copied())?;
            p.lg = Some(mlp3(t, st, &self.layers.lg, hf, Activation::Sigmoid)?);
            let hq = rows(t, fw.hseq, tg.nodes.iter().copied())?;
            p.tr = Some(mlp3(t, st, &self.layers.tr, hq, Activation::Sigmoid)?);
        }
        if !tg.f.is_empty() {
            let a = rows(t, fw.hf, tg.f.iter().map(|x| x.0))?;
            let b = rows(t, fw.hf, tg.f.iter().map(|x| x.1))?;
            let c = t.cosine_rows(a, b)?;
            p.f = Some(t.affine(c, -0.5, 0.5)?);
        }
        if !tg.ffsim.is_empty() {
            let a = rows(t, fw.hseq, tg.ffsim.iter().map(|x| x.0))?;
            let b = rows(t, fw.hseq, tg.ffsim.iter().map(|x| x.1))?;
            let c = t.cosine_rows(a, b)?;
            p.ffsim = Some(t.affine(c, 0.5, 0.5)?);
        }
        if let (Some(head), false) = (&self.layers.rel, tg.flips.is_empty()) {
            let ids: Vec<NodeId> = tg.flips.iter().map(|x| x.0).collect();
            let parts = [
                rows(t, fw.hs, ids.iter().copied())?,
                rows(t, fw.hf, ids.iter().copied())?,
                rows(t, fw.hseq, ids.iter().copied())?,
            ];
            let x = t.concat(&parts)?;
            p.rel = Some(mlp3(t, st, head, x, Activation::Sigmoid)?);
        }
        Ok(p)
    }

    /// Weighted sum of BCE (reconvergence) and L1 terms. Terms with zero
    /// weight or no targets are left out.
    pub fn loss(&self, t: &mut Tape<S>, p: &Predictions, tg: &Targets, w: &LossWeights) -> Result<(Var, LossBreakdown)> {
        w.check()?;
        let mut terms: Vec<Var> = Vec::new();
        let mut br = LossBreakdown::default();
        let l1 = |t: &mut Tape<S>, pred: Var, target: Array<S>, weight: f64| -> Result<(Var, f64)> {
            let y = t.constant(target)?;
            let d = t.sub(pred, y)?;
            let a = t.abs(d)?;
            let m = t.mean(a)?;
            let s = t.affine(m, weight, 0.0)?;
            Ok((s, t.value(s).item().to_f64()))
        };
        let col = |v: &[f64]| Array::from_fn(v.len(), 1, |i, _| S::from_f64(v[i]));
        if let (Some(z), true) = (p.rc_logit, w.rc > 0.0) {
            let b = t.bce_with_logits(z, &tg.rc_labels)?;
            let s = t.affine(b, w.rc, 0.0)?;
            br.rc = t.value(s).item().to_f64();
            terms.push(s);
        }
        if let (Some(v), true) = (p.lg, w.lg > 0.0) {
            let (s, x) = l1(t, v, col(&tg.p1), w.lg)?;
            br.lg = x;
            terms.push(s);
        }
        if let (Some(v), true) = (p.tr, w.tr > 0.0) {
            let (s, x) = l1(t, v, col(&tg.ptr), w.tr)?;
            br.tr = x;
            terms.push(s);
        }
        if let (Some(v), true) = (p.f, w.f > 0.0) {
            let (s, x) = l1(t, v, col(&tg.f_dist), w.f)?;
            br.f = x;
            terms.push(s);
        }
        if let (Some(v), true) = (p.ffsim, w.ffsim > 0.0) {
            let (s, x) = l1(t, v, col(&tg.ffsim_sim), w.ffsim)?;
            br.ffsim = x;
            terms.push(s);
        }
        if let (Some(v), true) = (p.rel, w.rel > 0.0) {
            let target = Array::from_fn(tg.flips.len(), 2, |i, j| S::from_f64(tg.flips[i].1[j]));
            let (s, x) = l1(t, v, target, w.rel)?;
            br.rel = x;
            terms.push(s);
        }
        let mut total = match terms.first() {
            Some(&x) => x,
            None => t.constant(Array::scalar(S::zero()))?,
        };
        for &x in terms.iter().skip(1) {
            total = t.add(total, x)?;
        }
        br.total = t.value(total).item().to_f64();
        Ok((total, br))
    }

    /// Probability (and flip) head outputs for every node.
    pub fn predict_nodes(
        &self,
        g: &CircuitGraph,
        plan: &PropagationPlan,
        emb: &EmbeddingState<S>,
    ) -> Result<NodePredictions> {
        let mut t = Tape::new();
        let fw = self.forward(&mut t, g, plan, emb)?;
        let lg = mlp3(&mut t, &self.store, &self.layers.lg, fw.hf, Activation::Sigmoid)?;
        let tr = mlp3(&mut t, &self.store, &self.layers.tr, fw.hseq, Activation::Sigmoid)?;
        let rel = match &self.layers.rel {
            Some(head) => {
                let x = t.concat(&[fw.hs, fw.hf, fw.hseq])?;
                let y = mlp3(&mut t, &self.store, head, x, Activation::Sigmoid)?;
                let v = t.value(y);
                Some((0..g.len()).map(|i| [v.get(i, 0).to_f64(), v.get(i, 1).to_f64()]).collect())
            }
            None => None,
        };
        let col = |x: Var| t.value(x).data().iter().map(|&v| Scalar::to_f64(v)).collect();
        Ok(NodePredictions {
            lg: col(lg),
            tr: col(tr),
            rel,
        })
    }
}
