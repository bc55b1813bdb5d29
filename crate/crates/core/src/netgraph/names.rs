use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetName {
    pub name: String,
    /// True for names invented while lowering a gate; false for nets that
    /// exist in the source netlist.
    pub synthesized: bool,
}

/// External net name table. Several names may alias one node (BENCH buffers,
/// shared inverters); each node keeps one display name, preferring an
/// original name over a synthesized one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameMap {
    by_name: BTreeMap<String, NodeId>,
    by_id: BTreeMap<NodeId, NetName>,
}

impl NameMap {
    pub fn insert(&mut self, id: NodeId, name: String, synthesized: bool) {
        self.by_name.insert(name.clone(), id);
        match self.by_id.get(&id) {
            Some(existing) if !existing.synthesized || synthesized => {}
            _ => {
                self.by_id.insert(id, NetName { name, synthesized });
            }
        }
    }

    pub fn id(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: NodeId) -> Option<&str> {
        self.by_id.get(&id).map(|n| n.name.as_str())
    }

    /// Whether the node carries a name from the source netlist.
    pub fn is_original(&self, id: NodeId) -> bool {
        self.by_id.get(&id).is_some_and(|n| !n.synthesized)
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn original_name_wins_over_synthesized() {
        let mut m = NameMap::default();
        m.insert(3, "a$not".into(), true);
        m.insert(3, "G14".into(), false);
        m.insert(3, "x$not".into(), true);
        assert_eq!(m.name(3), Some("G14"));
        assert!(m.is_original(3));
        assert_eq!(m.id("a$not"), Some(3));
        assert_eq!(m.id("x$not"), Some(3));
    }
}
