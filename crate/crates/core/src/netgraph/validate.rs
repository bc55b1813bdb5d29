use std::fmt;

use serde::Serialize;

use super::scc::tarjan_scc;
use super::{CircuitGraph, NodeId, NodeKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    Arity {
        node: NodeId,
        kind: NodeKind,
        expected: usize,
        found: usize,
    },
    FaninOutOfRange {
        node: NodeId,
        fanin: NodeId,
    },
    OutputOutOfRange {
        index: usize,
        node: NodeId,
    },
    ConstantNotPi {
        node: NodeId,
    },
    /// Nodes of a cycle that does not pass through any flip-flop.
    CombinationalCycle {
        nodes: Vec<NodeId>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Arity {
                node,
                kind,
                expected,
                found,
            } => write!(f, "node {node}: {kind} needs {expected} fanin(s), has {found}"),
            Violation::FaninOutOfRange { node, fanin } => {
                write!(f, "node {node}: fanin {fanin} does not exist")
            }
            Violation::OutputOutOfRange { index, node } => {
                write!(f, "output {index}: node {node} does not exist")
            }
            Violation::ConstantNotPi { node } => {
                write!(f, "node {node}: constant must be a PI")
            }
            Violation::CombinationalCycle { nodes } => {
                write!(f, "combinational cycle through nodes {nodes:?}")
            }
        }
    }
}

/// Checks every structural invariant of `g`; an empty result means the graph
/// is well formed.
pub fn validate(g: &CircuitGraph) -> Vec<Violation> {
    let n = g.len();
    let mut out = Vec::new();

    for v in 0..n {
        let kind = g.kind(v);
        let fi = g.fanins(v);
        if fi.len() != kind.arity() {
            out.push(Violation::Arity {
                node: v,
                kind,
                expected: kind.arity(),
                found: fi.len(),
            });
        }
        for &u in fi {
            if u >= n {
                out.push(Violation::FaninOutOfRange { node: v, fanin: u });
            }
        }
    }
    for (index, &node) in g.outputs().iter().enumerate() {
        if node >= n {
            out.push(Violation::OutputOutOfRange { index, node });
        }
    }
    if let Some(c) = g.constant_node() {
        if c >= n || g.kind(c) != NodeKind::Pi {
            out.push(Violation::ConstantNotPi { node: c });
        }
    }

    // Flip-flop outputs are cut: any remaining cycle is combinational.
    let empty: &[NodeId] = &[];
    let succ = |v: usize| -> &[NodeId] {
        if g.kind(v) == NodeKind::Ff {
            empty
        } else {
            g.fanouts(v)
        }
    };
    for comp in tarjan_scc(n, succ) {
        let self_loop = comp.len() == 1 && succ(comp[0]).contains(&comp[0]);
        if comp.len() > 1 || self_loop {
            out.push(Violation::CombinationalCycle { nodes: comp });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::CircuitBuilder;

    #[test]
    fn diamond_is_clean() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let c = b.add_pi();
        let x = b.add_and(a, c);
        let y = b.add_not(a);
        let z = b.add_and(x, y);
        b.add_output(z);
        assert!(validate(&b.build()).is_empty());
    }

    #[test]
    fn and_with_one_fanin_is_reported() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let bad = b.add_node(NodeKind::And, vec![a]);
        let v = validate(&b.build());
        assert_eq!(
            v,
            vec![Violation::Arity {
                node: bad,
                kind: NodeKind::And,
                expected: 2,
                found: 1
            }]
        );
    }

    #[test]
    fn two_gate_loop_without_ff_is_reported() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        // g1 = AND(a, g2), g2 = NOT(g1)
        let g1 = b.add_node(NodeKind::And, vec![a, 2]);
        let g2 = b.add_not(g1);
        let v = validate(&b.build());
        assert_eq!(v, vec![Violation::CombinationalCycle { nodes: vec![g1, g2] }]);
    }

    #[test]
    fn loop_through_ff_is_fine() {
        let mut b = CircuitBuilder::new();
        let ff = b.add_ff(None);
        let n = b.add_not(ff);
        b.set_ff_input(ff, n);
        assert!(validate(&b.build()).is_empty());
    }

    #[test]
    fn out_of_range_fanin_and_output() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        b.add_node(NodeKind::Not, vec![7]);
        b.add_output(9);
        let v = validate(&b.build());
        assert!(v.contains(&Violation::FaninOutOfRange { node: a + 1, fanin: 7 }));
        assert!(v.contains(&Violation::OutputOutOfRange { index: 0, node: 9 }));
    }
}
