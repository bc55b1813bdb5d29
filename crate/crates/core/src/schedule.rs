//! Level-by-level propagation plan for sequential netlists.
//!
//! Flip-flop outputs are cut and act as level-0 sources; the FF node itself is
//! scheduled one level after its D input. Feedback through flip-flops is
//! captured separately as cyclic regions (strongly connected components of
//! the uncut graph) that the model re-sweeps after the main pass reaches them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::scc::tarjan_scc;
use crate::netgraph::{validate, CircuitGraph, NodeId, NodeKind, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CyclicRegion {
    /// Flip-flops of the component, ascending.
    pub triggers: Vec<NodeId>,
    /// Every node of the feedback-affected sub-circuit, ascending.
    pub nodes: Vec<NodeId>,
    /// Region nodes grouped by plan level, ascending level then id.
    pub order: Vec<Vec<NodeId>>,
    pub min_level: usize,
    /// The main sweep hands over to this region once it finished this level.
    pub ready_level: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationPlan {
    /// `levels[0]` holds the primary inputs; every other node appears in
    /// exactly one later level. Each level is sorted by id.
    pub levels: Vec<Vec<NodeId>>,
    pub node_level: Vec<usize>,
    /// Flip-flops in evaluation order.
    pub ff_update_points: Vec<NodeId>,
    /// Regions in processing order.
    pub cyclic_regions: Vec<CyclicRegion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("graph has {} invariant violation(s), first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
    #[error("combinational loop among nodes {0:?}")]
    CombinationalLoop(Vec<NodeId>),
}

impl PropagationPlan {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn is_acyclic(&self) -> bool {
        self.cyclic_regions.is_empty()
    }

    /// Regions that become ready once `level` has been processed.
    pub fn regions_ready_at(&self, level: usize) -> impl Iterator<Item = &CyclicRegion> {
        self.cyclic_regions
            .iter()
            .filter(move |r| r.ready_level == level)
    }
}

/// Level of every node with flip-flop outputs treated as level-0 sources.
fn node_levels(g: &CircuitGraph) -> Result<Vec<usize>, ScheduleError> {
    let n = g.len();
    // Cut graph: drop the out-edges of every flip-flop.
    let mut indeg = vec![0usize; n];
    for v in 0..n {
        for &u in g.fanins(v) {
            if g.kind(u) != NodeKind::Ff {
                indeg[v] += 1;
            }
        }
    }
    let mut level = vec![0usize; n];
    let mut queue: Vec<NodeId> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut head = 0;
    while head < queue.len() {
        let v = queue[head];
        head += 1;
        if g.kind(v) != NodeKind::Pi {
            let base = g
                .fanins(v)
                .iter()
                .map(|&u| if g.is_source(u) { 0 } else { level[u] })
                .max()
                .unwrap_or(0);
            level[v] = base + 1;
        }
        if g.kind(v) == NodeKind::Ff {
            continue;
        }
        for &w in g.fanouts(v) {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                queue.push(w);
            }
        }
    }
    if queue.len() != n {
        let stuck: Vec<NodeId> = (0..n).filter(|&v| indeg[v] > 0).collect();
        return Err(ScheduleError::CombinationalLoop(stuck));
    }
    Ok(level)
}

/// Builds the propagation plan, including cyclic regions.
pub fn levelize(g: &CircuitGraph) -> Result<PropagationPlan, ScheduleError> {
    let violations = validate(g);
    if let Some(Violation::CombinationalCycle { nodes }) = violations
        .iter()
        .find(|v| matches!(v, Violation::CombinationalCycle { .. }))
    {
        return Err(ScheduleError::CombinationalLoop(nodes.clone()));
    }
    if !violations.is_empty() {
        return Err(ScheduleError::Invalid(violations));
    }
    let node_level = node_levels(g)?;
    let depth = node_level.iter().copied().max().map_or(0, |m| m + 1);
    let mut levels = vec![Vec::new(); depth];
    for (v, &l) in node_level.iter().enumerate() {
        levels[l].push(v);
    }
    let mut ff_update_points: Vec<NodeId> = g.ffs().collect();
    ff_update_points.sort_by_key(|&f| (node_level[f], f));
    let cyclic_regions = regions(g, &node_level);
    Ok(PropagationPlan {
        levels,
        node_level,
        ff_update_points,
        cyclic_regions,
    })
}

/// Cyclic regions of `g`: one per strongly connected component that holds a
/// flip-flop and at least two nodes. Empty for feed-forward netlists.
pub fn detect_cycles(g: &CircuitGraph) -> Result<Vec<CyclicRegion>, ScheduleError> {
    Ok(levelize(g)?.cyclic_regions)
}

fn reach(g: &CircuitGraph, starts: &[NodeId], forward: bool) -> Vec<bool> {
    let mut seen = vec![false; g.len()];
    let mut stack: Vec<NodeId> = starts.to_vec();
    for &s in starts {
        seen[s] = true;
    }
    while let Some(v) = stack.pop() {
        let next = if forward { g.fanouts(v) } else { g.fanins(v) };
        for &w in next {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

fn regions(g: &CircuitGraph, node_level: &[usize]) -> Vec<CyclicRegion> {
    let mut out = Vec::new();
    for comp in tarjan_scc(g.len(), |v| g.fanouts(v)) {
        let triggers: Vec<NodeId> = comp
            .iter()
            .copied()
            .filter(|&v| g.kind(v) == NodeKind::Ff)
            .collect();
        if triggers.is_empty() || comp.len() < 2 {
            continue;
        }
        // Fanout cone of the triggers intersected with their fanin cone.
        let fwd = reach(g, &triggers, true);
        let bwd = reach(g, &triggers, false);
        let mut nodes: Vec<NodeId> = (0..g.len()).filter(|&v| fwd[v] && bwd[v]).collect();
        nodes.sort_unstable();
        let mut by_level = nodes.clone();
        by_level.sort_by_key(|&v| (node_level[v], v));
        let mut order: Vec<Vec<NodeId>> = Vec::new();
        let mut last = usize::MAX;
        for v in by_level {
            if node_level[v] != last {
                order.push(Vec::new());
                last = node_level[v];
            }
            order.last_mut().expect("group exists").push(v);
        }
        let min_level = nodes.iter().map(|&v| node_level[v]).min().unwrap_or(0);
        let ready_level = nodes.iter().map(|&v| node_level[v]).max().unwrap_or(0);
        out.push(CyclicRegion {
            triggers,
            nodes,
            order,
            min_level,
            ready_level,
        });
    }
    out.sort_by_key(|r| (r.min_level, r.nodes[0]));
    out
}
