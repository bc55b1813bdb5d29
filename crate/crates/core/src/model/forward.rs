use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{kind_slot, Batching, Direction, EmbeddingState, Model, ModelError, Result};
use crate::netgraph::{CircuitGraph, NodeId};
use crate::schedule::PropagationPlan;
use crate::tensor::nn::{attn_aggregate, gru_cell};
use crate::tensor::{Scalar, Tape, Var};

/// Where a node's current vector lives: a row of some tape entry.
type Ref = (Var, usize);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionDiagnostics {
    pub iterations: usize,
    /// Max relative change after each iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Update counters per node, as applied by one forward call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub forward_updates: Vec<u32>,
    pub region_updates: Vec<u32>,
    pub reverse_updates: Vec<u32>,
    pub regions: Vec<RegionDiagnostics>,
}

/// Final embeddings as `n x dim` tape entries.
#[derive(Debug, Clone)]
pub struct Forward {
    pub hs: Var,
    pub hf: Var,
    pub hseq: Var,
    pub diagnostics: Diagnostics,
}

impl Forward {
    pub fn space(&self, k: usize) -> Var {
        [self.hs, self.hf, self.hseq][k]
    }
}

impl<S: Scalar> Model<S> {
    /// One sweep over the plan, region re-sweeps, then the reverse layer.
    pub fn forward(
        &self,
        t: &mut Tape<S>,
        g: &CircuitGraph,
        plan: &PropagationPlan,
        emb: &EmbeddingState<S>,
    ) -> Result<Forward> {
        let n = g.len();
        if emb.len() != n || emb.dim() != self.cfg.dim || plan.node_level.len() != n {
            return Err(ModelError::Mismatch(format!(
                "embeddings {}x{} / plan {} for a {n}-node graph of dim {}",
                emb.len(),
                emb.dim(),
                plan.node_level.len(),
                self.cfg.dim
            )));
        }
        let base = [
            t.constant(emb.hs.clone())?,
            t.constant(emb.hf.clone())?,
            t.constant(emb.hseq.clone())?,
        ];
        let mut cur: Vec<[Ref; 3]> = (0..n).map(|v| [(base[0], v), (base[1], v), (base[2], v)]).collect();
        let mut diag = Diagnostics {
            forward_updates: vec![0; n],
            region_updates: vec![0; n],
            reverse_updates: vec![0; n],
            regions: Vec::new(),
        };
        let fanins = |v: NodeId| g.fanins(v);
        for level in 1..plan.depth() {
            for v in self.update(t, g, &self.layers.fwd, &fanins, &plan.levels[level], &mut cur)? {
                diag.forward_updates[v] += 1;
            }
            for region in plan.regions_ready_at(level) {
                let mut rd = RegionDiagnostics::default();
                for _ in 0..self.cfg.cycle_max_iters {
                    let before: Vec<[Vec<S>; 3]> = region
                        .nodes
                        .iter()
                        .map(|&v| std::array::from_fn(|s| row(t, cur[v][s]).to_vec()))
                        .collect();
                    for group in &region.order {
                        for v in self.update(t, g, &self.layers.fwd, &fanins, group, &mut cur)? {
                            diag.region_updates[v] += 1;
                        }
                    }
                    let mut resid: f64 = 0.0;
                    for (k, &v) in region.nodes.iter().enumerate() {
                        for (s, old) in before[k].iter().enumerate() {
                            resid = resid.max(relative_change(old, row(t, cur[v][s])));
                        }
                    }
                    rd.iterations += 1;
                    rd.residuals.push(resid);
                    if resid < self.cfg.cycle_tol {
                        rd.converged = true;
                        break;
                    }
                }
                diag.regions.push(rd);
            }
        }
        if let Some(rev) = &self.layers.rev {
            let fanouts = |v: NodeId| g.fanouts(v);
            for level in (1..plan.depth()).rev() {
                for v in self.update(t, g, rev, &fanouts, &plan.levels[level], &mut cur)? {
                    diag.reverse_updates[v] += 1;
                }
            }
        }
        let mut out = [base[0]; 3];
        for (s, o) in out.iter_mut().enumerate() {
            *o = t.gather_rows(Arc::new((0..n).map(|v| cur[v][s]).collect()))?;
        }
        Ok(Forward {
            hs: out[0],
            hf: out[1],
            hseq: out[2],
            diagnostics: diag,
        })
    }

    /// Forward pass on a private tape, returning plain values.
    pub fn embed(
        &self,
        g: &CircuitGraph,
        plan: &PropagationPlan,
        emb: &EmbeddingState<S>,
    ) -> Result<(EmbeddingState<S>, Diagnostics)> {
        let mut t = Tape::new();
        let f = self.forward(&mut t, g, plan, emb)?;
        Ok((
            EmbeddingState {
                hs: t.value(f.hs).clone(),
                hf: t.value(f.hf).clone(),
                hseq: t.value(f.hseq).clone(),
            },
            f.diagnostics,
        ))
    }

    /// Updates every eligible node of `nodes` from the current vectors of
    /// its predecessors. All reads happen before any write, so the result
    /// does not depend on the order within `nodes`. Returns the nodes that
    /// were updated.
    fn update<'g>(
        &self,
        t: &mut Tape<S>,
        g: &'g CircuitGraph,
        dir: &Direction,
        preds: &impl Fn(NodeId) -> &'g [NodeId],
        nodes: &[NodeId],
        cur: &mut [[Ref; 3]],
    ) -> Result<Vec<NodeId>> {
        let mut pending: Vec<(NodeId, usize, Ref)> = Vec::new();
        let mut touched = Vec::new();
        for &v in nodes {
            if kind_slot(g.kind(v)).is_some() && !preds(v).is_empty() {
                touched.push(v);
            }
        }
        for space in 0..3 {
            for slot in 0..3 {
                let Some(layer) = dir.layers[space][slot] else { continue };
                let members: Vec<NodeId> = touched
                    .iter()
                    .copied()
                    .filter(|&v| kind_slot(g.kind(v)) == Some(slot))
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let batches: Vec<Vec<NodeId>> = match self.cfg.batching {
                    Batching::Level => vec![members],
                    Batching::Node => members.into_iter().map(|v| vec![v]).collect(),
                };
                for batch in batches {
                    let mut seg = Vec::new();
                    let mut feat_refs: Vec<Vec<Ref>> = vec![Vec::new(); space + 1];
                    for (i, &v) in batch.iter().enumerate() {
                        for &u in preds(v) {
                            seg.push(i);
                            for (s, refs) in feat_refs.iter_mut().enumerate() {
                                refs.push(cur[u][s]);
                            }
                        }
                    }
                    let mut parts = Vec::with_capacity(space + 1);
                    for refs in feat_refs {
                        parts.push(t.gather_rows(Arc::new(refs))?);
                    }
                    let feats = if parts.len() == 1 { parts[0] } else { t.concat(&parts)? };
                    let prev = t.gather_rows(Arc::new(batch.iter().map(|&v| cur[v][space]).collect()))?;
                    let msg = attn_aggregate(t, &self.store, &layer.attn, prev, feats, Arc::new(seg))?;
                    let new = gru_cell(t, &self.store, &layer.gru, msg, prev)?;
                    for (i, &v) in batch.iter().enumerate() {
                        pending.push((v, space, (new, i)));
                    }
                }
            }
        }
        for (v, s, r) in pending {
            cur[v][s] = r;
        }
        Ok(touched)
    }
}

fn row<S: Scalar>(t: &Tape<S>, r: Ref) -> &[S] {
    t.value(r.0).row(r.1)
}

fn relative_change<S: Scalar>(old: &[S], new: &[S]) -> f64 {
    let diff: f64 = old
        .iter()
        .zip(new)
        .map(|(a, b)| {
            let d = Scalar::to_f64(*a) - Scalar::to_f64(*b);
            d * d
        })
        .sum::<f64>()
        .sqrt();
    let norm = old.iter().map(|&a| Scalar::to_f64(a).powi(2)).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_embeddings, ModelConfig};
    use crate::netgraph::{CircuitBuilder, NodeKind};
    use crate::schedule::levelize;
    use crate::simulate::Workload;
    use crate::tensor::Array;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            dim: 8,
            hidden: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn pipeline_updates_each_node_once() {
        let mut b = CircuitBuilder::new();
        let pi = b.add_pi();
        let f1 = b.add_ff(Some(pi));
        let n = b.add_not(f1);
        let f2 = b.add_ff(Some(n));
        let x = b.add_and(f2, pi);
        b.add_output(x);
        let g = b.build();
        let plan = levelize(&g).unwrap();
        let model = Model::<f32>::new(small_cfg()).unwrap();
        let emb = init_embeddings(&g, &Workload::uniform(&g, 0.5, 0.5), 8, 0);
        let (out, d) = model.embed(&g, &plan, &emb).unwrap();
        assert_eq!(d.forward_updates, vec![0, 1, 1, 1, 1]);
        assert!(d.region_updates.iter().all(|&c| c == 0));
        assert!(d.regions.is_empty());
        let (again, _) = model.embed(&g, &plan, &emb).unwrap();
        assert_eq!(out, again);
        assert_eq!(out.hs.row(pi), emb.hs.row(pi));
        assert_eq!(out.hs.row(f1), emb.hs.row(f1));
        assert_eq!(out.hf.row(pi), emb.hf.row(pi));
        assert_eq!(out.hseq.row(pi), emb.hseq.row(pi));
    }

    #[test]
    fn toggle_region_is_bounded() {
        let g = crate::simulate::tests::toggle_ff();
        let plan = levelize(&g).unwrap();
        let cfg = ModelConfig {
            cycle_tol: 0.0,
            ..small_cfg()
        };
        let model = Model::<f64>::new(cfg).unwrap();
        let emb = init_embeddings(&g, &Workload::new(), 8, 0);
        let (_, d) = model.embed(&g, &plan, &emb).unwrap();
        assert_eq!(d.regions.len(), 1);
        assert_eq!(d.regions[0].iterations, 3);
        assert_eq!(d.regions[0].residuals.len(), 3);
        assert!(!d.regions[0].converged);
        assert_eq!(d.forward_updates[0] + d.region_updates[0], 4);
    }

    #[test]
    fn chain_with_zero_attention_passes_messages() {
        let mut b = CircuitBuilder::new();
        let pi = b.add_pi();
        let n1 = b.add_not(pi);
        b.add_not(n1);
        let g = b.build();
        let plan = levelize(&g).unwrap();
        let mut model = Model::<f64>::new(ModelConfig {
            reverse_layer: false,
            ..small_cfg()
        })
        .unwrap();
        for id in model.store.ids().collect::<Vec<_>>() {
            if model.store.name(id).ends_with(".w1") || model.store.name(id).ends_with(".w2") {
                let (r, c) = model.store.value(id).shape();
                *model.store.value_mut(id) = Array::full(r, c, 0.0);
            }
        }
        let emb = init_embeddings(&g, &Workload::uniform(&g, 0.3, 0.2), 8, 0);
        let (out, _) = model.embed(&g, &plan, &emb).unwrap();
        // Recompute node 1 from a direct GRU of its single predecessor.
        let layer = model.layers.fwd.layers[1][1].unwrap();
        let mut t = Tape::new();
        let x = t.constant(Array::from_fn(1, 16, |_, c| if c < 8 { emb.hs.get(pi, c) } else { emb.hf.get(pi, c - 8) })).unwrap();
        let h = t.constant(Array::from_vec(1, 8, emb.hf.row(n1).to_vec()).unwrap()).unwrap();
        let y = gru_cell(&mut t, &model.store, &layer.gru, x, h).unwrap();
        assert_eq!(t.value(y).row(0), out.hf.row(n1));
    }

    #[test]
    fn per_node_batching_matches_level_batching() {
        let (g, _) = crate::netgraph::generate(&crate::netgraph::GenSpec {
            n_pi: 4,
            n_and: 25,
            n_not: 10,
            n_ff: 4,
            seed: 9,
            feedback_prob: 0.6,
        })
        .unwrap();
        let plan = levelize(&g).unwrap();
        let level = Model::<f64>::new(small_cfg()).unwrap();
        let mut node = level.clone();
        node.cfg.batching = Batching::Node;
        let emb = init_embeddings(&g, &Workload::uniform(&g, 0.5, 0.3), 8, 4);
        let (a, da) = level.embed(&g, &plan, &emb).unwrap();
        let (b, db) = node.embed(&g, &plan, &emb).unwrap();
        assert_eq!(da.forward_updates, db.forward_updates);
        for s in 0..3 {
            for (x, y) in a.space(s).data().iter().zip(b.space(s).data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let non_pi = (0..g.len()).filter(|&v| g.kind(v) != NodeKind::Pi).count();
        assert_eq!(da.forward_updates.iter().filter(|&&c| c == 1).count(), non_pi);
    }
}
