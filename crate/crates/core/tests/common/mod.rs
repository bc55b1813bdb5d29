#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqlearn_core::netgraph::{generate, GenSpec};
use seqlearn_core::{CircuitGraph, NodeId, NodeKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random small circuit: `pi` and `ff` bounded, 10-40 AND gates.
pub fn small(seed: u64, max_pi: usize, max_ff: usize, feedback: f64) -> CircuitGraph {
    let mut r = rng(seed);
    let n_and = r.random_range(10..=40);
    let spec = GenSpec {
        n_pi: r.random_range(2..=max_pi),
        n_ff: r.random_range(1..=max_ff),
        n_and,
        n_not: r.random_range(0..=n_and / 2),
        seed,
        feedback_prob: feedback,
    };
    generate(&spec).expect("spec is valid").0
}

pub fn sized(n: usize, seed: u64, feedback: f64) -> CircuitGraph {
    let spec = GenSpec {
        n_pi: (n * 12 / 100).max(2),
        n_ff: (n * 8 / 100).max(1),
        n_not: n * 30 / 100,
        n_and: n * 50 / 100,
        seed,
        feedback_prob: feedback,
    };
    generate(&spec).expect("spec is valid").0
}

/// Scalar evaluation of a combinational node; sources read `src[id]`,
/// the constant reads false.
pub fn eval(g: &CircuitGraph, v: NodeId, src: &[bool], memo: &mut [Option<bool>]) -> bool {
    if let Some(x) = memo[v] {
        return x;
    }
    let x = if g.is_constant(v) {
        false
    } else if g.is_source(v) {
        src[v]
    } else {
        let fi = g.fanins(v);
        match g.kind(v) {
            NodeKind::And => eval(g, fi[0], src, memo) && eval(g, fi[1], src, memo),
            NodeKind::Not => !eval(g, fi[0], src, memo),
            k => unreachable!("{k} is a source"),
        }
    };
    memo[v] = Some(x);
    x
}

/// The node and every node reached backward through combinational gates.
pub fn ancestors(g: &CircuitGraph, v: NodeId) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![v];
    while let Some(x) = stack.pop() {
        if !seen.insert(x) || g.is_source(x) {
            continue;
        }
        stack.extend(g.fanins(x));
    }
    seen
}

/// Free sources (driven PIs, FF outputs) of a node's combinational cone.
pub fn cone_inputs(g: &CircuitGraph, v: NodeId) -> BTreeSet<NodeId> {
    ancestors(g, v)
        .into_iter()
        .filter(|&x| g.is_source(x) && !g.is_constant(x))
        .collect()
}

/// Checks that `back` (parsed from the AIGER text of `g`) is the same AIG:
/// PIs, FFs and AND gates correspond in id order and every one of them has
/// identical simulated statistics.
pub fn same_aig(g: &CircuitGraph, back: &CircuitGraph) -> bool {
    use seqlearn_core::{simulate, SimConfig, Workload};
    let order = |x: &CircuitGraph| -> Vec<NodeId> {
        [NodeKind::Pi, NodeKind::Ff, NodeKind::And]
            .into_iter()
            .flat_map(|k| x.nodes_of(k).filter(|&v| !x.is_constant(v)).collect::<Vec<_>>())
            .collect()
    };
    let (a, b) = (order(g), order(back));
    if a.len() != b.len() || a.iter().zip(&b).any(|(&u, &v)| g.kind(u) != back.kind(v)) {
        return false;
    }
    let cfg = SimConfig {
        n_patterns: 128,
        n_cycles: 16,
        seed: 3,
        ..SimConfig::default()
    };
    let wa = Workload::random(g, 5);
    let mut wb = Workload::new();
    for (&u, &v) in a.iter().zip(&b) {
        if let Some(s) = wa.get(u) {
            wb.set(v, s.p1, s.ptr);
        }
    }
    let (sa, sb) = (simulate(g, &wa, &cfg).unwrap(), simulate(back, &wb, &cfg).unwrap());
    a.iter().zip(&b).all(|(&u, &v)| sa.p1[u] == sb.p1[v] && sa.ptr[u] == sb.ptr[v])
        && g.outputs().len() == back.outputs().len()
        && g.outputs().iter().zip(back.outputs()).all(|(&u, &v)| sa.p1[u] == sb.p1[v])
}
