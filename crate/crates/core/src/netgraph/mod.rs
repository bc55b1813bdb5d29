//! Sequential netlist data model.
//!
//! A [`CircuitGraph`] is an and-inverter graph with explicit NOT nodes and
//! flip-flops. Node ids are dense indices; fanin order is preserved because the
//! attention aggregation downstream is order sensitive for reproducibility.

mod aiger;
mod bench;
mod generate;
mod names;
pub mod scc;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aiger::{emit_aiger, parse_aiger};
pub use bench::parse_bench;
pub use generate::{corpus_spec, generate, GenError, GenSpec, GenSummary};
pub use names::{NameMap, NetName};
pub use validate::{validate, Violation};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Pi,
    And,
    Not,
    Ff,
}

impl NodeKind {
    /// Required number of fanins.
    pub fn arity(self) -> usize {
        match self {
            NodeKind::Pi => 0,
            NodeKind::And => 2,
            NodeKind::Not | NodeKind::Ff => 1,
        }
    }

    pub fn is_combinational(self) -> bool {
        matches!(self, NodeKind::And | NodeKind::Not)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeKind::Pi => "PI",
            NodeKind::And => "AND",
            NodeKind::Not => "NOT",
            NodeKind::Ff => "FF",
        };
        f.write_str(s)
    }
}

/// Error raised by the netlist readers. Line numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            message: message.into(),
        }
    }
}

/// Immutable sequential netlist.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitGraph {
    kinds: Vec<NodeKind>,
    fanins: Vec<Vec<NodeId>>,
    fanouts: Vec<Vec<NodeId>>,
    outputs: Vec<NodeId>,
    names: NameMap,
    reset: Vec<bool>,
    constant: Option<NodeId>,
}

impl CircuitGraph {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        self.kinds[id]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn fanins(&self, id: NodeId) -> &[NodeId] {
        &self.fanins[id]
    }

    /// Consumers of `id`, one entry per fanin edge, ordered by consumer id.
    pub fn fanouts(&self, id: NodeId) -> &[NodeId] {
        &self.fanouts[id]
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn names(&self) -> &NameMap {
        &self.names
    }

    /// Name of a node, or a synthesized `n<id>` placeholder.
    pub fn display_name(&self, id: NodeId) -> String {
        self.names
            .name(id)
            .map(str::to_owned)
            .unwrap_or_else(|| format!("n{id}"))
    }

    /// Initial state of a flip-flop (false for every other node kind).
    pub fn reset_value(&self, id: NodeId) -> bool {
        self.reset[id]
    }

    /// The PI standing for AIGER constant-false, if the netlist references it.
    pub fn constant_node(&self) -> Option<NodeId> {
        self.constant
    }

    pub fn is_constant(&self, id: NodeId) -> bool {
        self.constant == Some(id)
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = NodeId> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(move |(_, k)| **k == kind)
            .map(|(i, _)| i)
    }

    /// All primary inputs, including the constant node.
    pub fn pis(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes_of(NodeKind::Pi)
    }

    /// Primary inputs driven by a workload (the constant node excluded).
    pub fn driven_pis(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.pis().filter(move |&id| !self.is_constant(id))
    }

    pub fn ffs(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes_of(NodeKind::Ff)
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.kinds.iter().filter(|k| **k == kind).count()
    }

    /// PIs and FFs: the nodes whose outputs act as sources once sequential
    /// edges are cut.
    pub fn is_source(&self, id: NodeId) -> bool {
        matches!(self.kinds[id], NodeKind::Pi | NodeKind::Ff)
    }

    /// Returns a copy with a different initial value for one flip-flop.
    pub fn with_reset(mut self, ff: NodeId, value: bool) -> Self {
        assert_eq!(self.kinds[ff], NodeKind::Ff, "node {ff} is not a flip-flop");
        self.reset[ff] = value;
        self
    }
}

/// Incremental constructor for [`CircuitGraph`]. Nothing is checked here; run
/// [`validate`] on the result.
#[derive(Debug, Default, Clone)]
pub struct CircuitBuilder {
    kinds: Vec<NodeKind>,
    fanins: Vec<Vec<NodeId>>,
    outputs: Vec<NodeId>,
    names: NameMap,
    reset: Vec<bool>,
    constant: Option<NodeId>,
}

impl CircuitBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        self.kinds[id]
    }

    pub fn fanins(&self, id: NodeId) -> &[NodeId] {
        &self.fanins[id]
    }

    pub fn add_node(&mut self, kind: NodeKind, fanins: Vec<NodeId>) -> NodeId {
        let id = self.kinds.len();
        self.kinds.push(kind);
        self.fanins.push(fanins);
        self.reset.push(false);
        id
    }

    pub fn add_pi(&mut self) -> NodeId {
        self.add_node(NodeKind::Pi, Vec::new())
    }

    pub fn add_and(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.add_node(NodeKind::And, vec![a, b])
    }

    pub fn add_not(&mut self, a: NodeId) -> NodeId {
        self.add_node(NodeKind::Not, vec![a])
    }

    /// Adds a flip-flop; the D input may be connected later with
    /// [`CircuitBuilder::set_ff_input`].
    pub fn add_ff(&mut self, d: Option<NodeId>) -> NodeId {
        self.add_node(NodeKind::Ff, d.into_iter().collect())
    }

    pub fn set_ff_input(&mut self, ff: NodeId, d: NodeId) {
        debug_assert_eq!(self.kinds[ff], NodeKind::Ff);
        self.fanins[ff] = vec![d];
    }

    pub fn set_reset(&mut self, ff: NodeId, value: bool) {
        self.reset[ff] = value;
    }

    pub fn add_output(&mut self, id: NodeId) {
        self.outputs.push(id);
    }

    pub fn set_name(&mut self, id: NodeId, name: impl Into<String>) {
        self.names.insert(id, name.into(), false);
    }

    pub(crate) fn set_synthesized_name(&mut self, id: NodeId, name: String) {
        self.names.insert(id, name, true);
    }

    /// Returns the constant-false PI, creating it on first use.
    pub fn constant(&mut self) -> NodeId {
        match self.constant {
            Some(id) => id,
            None => {
                let id = self.add_pi();
                self.constant = Some(id);
                id
            }
        }
    }

    pub fn build(self) -> CircuitGraph {
        let n = self.kinds.len();
        let mut fanouts = vec![Vec::new(); n];
        for (v, fi) in self.fanins.iter().enumerate() {
            for &u in fi {
                if u < n {
                    fanouts[u].push(v);
                }
            }
        }
        CircuitGraph {
            kinds: self.kinds,
            fanins: self.fanins,
            fanouts,
            outputs: self.outputs,
            names: self.names,
            reset: self.reset,
            constant: self.constant,
        }
    }
}

impl From<&CircuitGraph> for CircuitBuilder {
    fn from(g: &CircuitGraph) -> Self {
        CircuitBuilder {
            kinds: g.kinds.clone(),
            fanins: g.fanins.clone(),
            outputs: g.outputs.clone(),
            names: g.names.clone(),
            reset: g.reset.clone(),
            constant: g.constant,
        }
    }
}
