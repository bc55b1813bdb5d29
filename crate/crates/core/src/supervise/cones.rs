//! Cone and support queries on the flip-flop-cut graph.

use crate::netgraph::{CircuitGraph, NodeId, NodeKind};

/// Dense bitset over node ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSet {
    words: Vec<u64>,
}

impl NodeSet {
    pub fn new(n: usize) -> Self {
        NodeSet {
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn insert(&mut self, v: NodeId) {
        self.words[v / 64] |= 1 << (v % 64);
    }

    pub fn contains(&self, v: NodeId) -> bool {
        (self.words[v / 64] >> (v % 64)) & 1 == 1
    }

    pub fn union_with(&mut self, other: &NodeSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn intersects(&self, other: &NodeSet) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn union_len(&self, other: &NodeSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.words.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(k * 64 + b)
            })
        })
    }
}

/// Combinational topological order (PIs and FFs first, as sources).
pub(crate) fn comb_order(g: &CircuitGraph) -> Vec<NodeId> {
    let n = g.len();
    let mut indeg: Vec<usize> = (0..n)
        .map(|v| {
            if g.is_source(v) {
                0
            } else {
                g.fanins(v).len()
            }
        })
        .collect();
    let mut order: Vec<NodeId> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for &w in g.fanouts(v) {
            if g.is_source(w) {
                continue;
            }
            indeg[w] -= 1;
            if indeg[w] == 0 {
                order.push(w);
            }
        }
    }
    order
}

/// Ancestor sets in the cut graph: each node plus everything reachable
/// backward through combinational nodes, stopping at PIs and FF outputs.
pub fn ancestor_sets(g: &CircuitGraph) -> Vec<NodeSet> {
    let n = g.len();
    let mut anc = vec![NodeSet::new(n); n];
    for v in comb_order(g) {
        let mut s = NodeSet::new(n);
        s.insert(v);
        if !g.is_source(v) {
            for &u in g.fanins(v) {
                s.union_with(&anc[u]);
            }
        }
        anc[v] = s;
    }
    anc
}

/// Free inputs of each node's combinational cone: driven PIs and FF outputs.
/// The constant node is not a free input.
pub fn supports(g: &CircuitGraph) -> Vec<NodeSet> {
    let n = g.len();
    let mut sup = vec![NodeSet::new(n); n];
    for v in comb_order(g) {
        let mut s = NodeSet::new(n);
        if g.is_source(v) {
            if !g.is_constant(v) {
                s.insert(v);
            }
        } else {
            for &u in g.fanins(v) {
                s.union_with(&sup[u]);
            }
        }
        sup[v] = s;
    }
    sup
}

/// Driven PIs reaching `v` through any number of FF stages.
pub fn sequential_pi_support(g: &CircuitGraph, v: NodeId) -> NodeSet {
    let n = g.len();
    let mut seen = vec![false; n];
    let mut stack = vec![v];
    seen[v] = true;
    let mut s = NodeSet::new(n);
    while let Some(x) = stack.pop() {
        if g.kind(x) == NodeKind::Pi && !g.is_constant(x) {
            s.insert(x);
        }
        for &u in g.fanins(x) {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    s
}

/// Minimum number of flip-flops on any path from a driven PI to each node,
/// counting the node itself when it is a flip-flop. `None` when unreachable.
pub fn sequential_depth(g: &CircuitGraph) -> Vec<Option<usize>> {
    let n = g.len();
    let mut dist: Vec<Option<usize>> = vec![None; n];
    let mut dq = std::collections::VecDeque::new();
    for pi in g.driven_pis() {
        dist[pi] = Some(0);
        dq.push_back(pi);
    }
    while let Some(u) = dq.pop_front() {
        let du = dist[u].expect("queued nodes have a distance");
        for &w in g.fanouts(u) {
            let cost = usize::from(g.kind(w) == NodeKind::Ff);
            let cand = du + cost;
            if dist[w].map_or(true, |d| cand < d) {
                dist[w] = Some(cand);
                if cost == 0 {
                    dq.push_front(w);
                } else {
                    dq.push_back(w);
                }
            }
        }
    }
    dist
}
