//! Random sequential circuit generator for desk-scale corpora.

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scc::tarjan_scc;
use super::{CircuitBuilder, CircuitGraph, NodeId, NodeKind};
use crate::rng::{derive_seed, rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_pi: usize,
    pub n_and: usize,
    pub n_not: usize,
    pub n_ff: usize,
    pub seed: u64,
    /// Probability that an FF's D input is drawn from its own fanout cone.
    pub feedback_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("at least one primary input is required")]
    NoInputs,
    #[error("feedback probability must lie in [0, 1]")]
    BadProbability,
    #[error("AND gates need at least two source nodes (have {0})")]
    TooFewSources(usize),
    #[error("{n_not} NOT gates requested but only {capacity} nodes can be inverted")]
    TooManyNots { n_not: usize, capacity: usize },
}

/// Generation report, serialized next to corpus files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub seed: u64,
    pub n_pi: usize,
    pub n_and: usize,
    pub n_not: usize,
    pub n_ff: usize,
    pub n_nodes: usize,
    pub n_outputs: usize,
    pub feedback_requested: usize,
    pub feedback_realized: usize,
    /// Flip-flops that sit on at least one cycle.
    pub ffs_on_cycles: usize,
    /// Strongly connected components with more than one node.
    pub cyclic_components: usize,
}

/// Draws gate counts whose total follows a log-normal with mean 214.35 and
/// standard deviation 92.63 nodes, split roughly 12% PI, 8% FF, 30% NOT,
/// 50% AND.
pub fn corpus_spec(seed: u64, index: u64) -> GenSpec {
    const MEAN: f64 = 214.35;
    const STD: f64 = 92.63;
    let sigma2 = (1.0 + (STD / MEAN).powi(2)).ln();
    let mu = MEAN.ln() - sigma2 / 2.0;
    let child = derive_seed(seed, index);
    let mut rng = rng_from(child);
    let total = LogNormal::new(mu, sigma2.sqrt())
        .expect("valid log-normal")
        .sample(&mut rng)
        .round()
        .max(12.0) as usize;
    let n_pi = ((total as f64 * 0.12).round() as usize).max(2);
    let n_ff = ((total as f64 * 0.08).round() as usize).max(1);
    let n_not = (total as f64 * 0.30).round() as usize;
    let n_and = total - n_pi - n_ff - n_not;
    GenSpec {
        n_pi,
        n_and,
        n_not,
        n_ff,
        seed: child,
        feedback_prob: 0.5,
    }
}

struct Gen {
    b: CircuitBuilder,
    rng: Rng,
    fanout_count: Vec<usize>,
    has_not: Vec<bool>,
}

impl Gen {
    fn push_use(&mut self, id: NodeId) {
        self.fanout_count[id] += 1;
    }

    fn new_node(&mut self, id: NodeId) {
        debug_assert_eq!(id, self.fanout_count.len());
        self.fanout_count.push(0);
        self.has_not.push(false);
    }

    /// Picks a fanin among `candidates`: unused nodes first, then recent
    /// nodes, then anything.
    fn pick(&mut self, candidates: &[NodeId]) -> NodeId {
        let unused: Vec<NodeId> = candidates
            .iter()
            .copied()
            .filter(|&c| self.fanout_count[c] == 0)
            .collect();
        let r: f64 = self.rng.random();
        if !unused.is_empty() && r < 0.5 {
            return unused[self.rng.random_range(0..unused.len())];
        }
        if r < 0.85 {
            let window = (candidates.len() / 4).max(8).min(candidates.len());
            let start = candidates.len() - window;
            return candidates[start + self.rng.random_range(0..window)];
        }
        candidates[self.rng.random_range(0..candidates.len())]
    }
}

fn reachable_from(adj: &[Vec<NodeId>], start: NodeId) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

/// Builds a random sequential netlist. NOT nodes never drive NOT nodes, no
/// node has two inverters, and every dangling gate becomes a primary output,
/// so the result survives an AIGER round trip unchanged.
pub fn generate(spec: &GenSpec) -> Result<(CircuitGraph, GenSummary), GenError> {
    if spec.n_pi == 0 {
        return Err(GenError::NoInputs);
    }
    if !(0.0..=1.0).contains(&spec.feedback_prob) {
        return Err(GenError::BadProbability);
    }
    if spec.n_and > 0 && spec.n_pi + spec.n_ff < 2 {
        return Err(GenError::TooFewSources(spec.n_pi + spec.n_ff));
    }
    let capacity = spec.n_pi + spec.n_ff + spec.n_and;
    if spec.n_not > capacity {
        return Err(GenError::TooManyNots {
            n_not: spec.n_not,
            capacity,
        });
    }

    let mut g = Gen {
        b: CircuitBuilder::new(),
        rng: rng_from(spec.seed),
        fanout_count: Vec::new(),
        has_not: Vec::new(),
    };
    for _ in 0..spec.n_pi {
        let id = g.b.add_pi();
        g.new_node(id);
    }
    let mut ffs = Vec::with_capacity(spec.n_ff);
    for _ in 0..spec.n_ff {
        let id = g.b.add_ff(None);
        g.new_node(id);
        ffs.push(id);
    }

    let mut all: Vec<NodeId> = (0..g.b.len()).collect();
    let mut invertible: Vec<NodeId> = all.clone();
    let (mut left_and, mut left_not) = (spec.n_and, spec.n_not);
    while left_and + left_not > 0 {
        let want_not = left_not > 0
            && !invertible.is_empty()
            && (left_and == 0
                || g.rng.random_range(0..left_and + left_not) < left_not);
        let id = if want_not {
            let x = g.pick(&invertible);
            invertible.retain(|&c| c != x);
            g.has_not[x] = true;
            g.push_use(x);
            left_not -= 1;
            let id = g.b.add_not(x);
            g.new_node(id);
            id
        } else {
            let a = g.pick(&all);
            let mut c = g.pick(&all);
            let mut tries = 0;
            while c == a && tries < 16 {
                c = all[g.rng.random_range(0..all.len())];
                tries += 1;
            }
            g.push_use(a);
            g.push_use(c);
            left_and -= 1;
            let id = g.b.add_and(a, c);
            g.new_node(id);
            invertible.push(id);
            id
        };
        all.push(id);
    }

    // Wire flip-flop inputs against the evolving full graph.
    let n = g.b.len();
    let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for v in 0..n {
        for &u in g.b.fanins(v) {
            adj[u].push(v);
        }
    }
    let mut feedback: Vec<bool> = ffs
        .iter()
        .map(|_| g.rng.random::<f64>() < spec.feedback_prob)
        .collect();
    if spec.feedback_prob > 0.0 && !feedback.is_empty() && !feedback.iter().any(|&f| f) {
        let last = feedback.len() - 1;
        feedback[last] = true;
    }
    let mut realized = 0;
    for (k, &ff) in ffs.iter().enumerate() {
        let reach = reachable_from(&adj, ff);
        let comb = |v: NodeId| g.b.kind(v).is_combinational();
        let looped: Vec<NodeId> = (0..n).filter(|&v| reach[v] && comb(v)).collect();
        let d = if feedback[k] && !looped.is_empty() {
            realized += 1;
            g.pick(&looped)
        } else {
            let safe: Vec<NodeId> = (0..n).filter(|&v| !reach[v] && v != ff && comb(v)).collect();
            if safe.is_empty() {
                let pis: Vec<NodeId> = (0..spec.n_pi).collect();
                g.pick(&pis)
            } else {
                g.pick(&safe)
            }
        };
        g.push_use(d);
        g.b.set_ff_input(ff, d);
        adj[d].push(ff);
    }

    for v in 0..n {
        if g.b.kind(v).is_combinational() && g.fanout_count[v] == 0 {
            g.b.add_output(v);
        }
    }
    let graph = g.b.build();
    if graph.outputs().is_empty() && n > 0 {
        // Degenerate netlists (no gates) still expose something.
        let mut b = CircuitBuilder::from(&graph);
        b.add_output(n - 1);
        return finish(spec, b.build(), feedback.iter().filter(|&&f| f).count(), realized);
    }
    finish(spec, graph, feedback.iter().filter(|&&f| f).count(), realized)
}

fn finish(
    spec: &GenSpec,
    graph: CircuitGraph,
    requested: usize,
    realized: usize,
) -> Result<(CircuitGraph, GenSummary), GenError> {
    let comps = tarjan_scc(graph.len(), |v| graph.fanouts(v));
    let mut on_cycle = vec![false; graph.len()];
    let mut cyclic = 0;
    for c in &comps {
        let self_loop = c.len() == 1 && graph.fanouts(c[0]).contains(&c[0]);
        if c.len() > 1 || self_loop {
            cyclic += usize::from(c.len() > 1);
            for &v in c {
                on_cycle[v] = true;
            }
        }
    }
    let summary = GenSummary {
        seed: spec.seed,
        n_pi: spec.n_pi,
        n_and: spec.n_and,
        n_not: spec.n_not,
        n_ff: spec.n_ff,
        n_nodes: graph.len(),
        n_outputs: graph.outputs().len(),
        feedback_requested: requested,
        feedback_realized: realized,
        ffs_on_cycles: graph.ffs().filter(|&f| on_cycle[f]).count(),
        cyclic_components: cyclic,
    };
    if summary.feedback_realized < summary.feedback_requested {
        log::debug!(
            "seed {}: {} of {} feedback loops realized",
            spec.seed,
            realized,
            requested
        );
    }
    debug_assert!(graph.kinds().iter().filter(|k| **k == NodeKind::Ff).count() == spec.n_ff);
    Ok((graph, summary))
}
