use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::netgraph::{CircuitGraph, NodeId};
use crate::rng::{derive_seed, rng_from, tags};

const FEASIBILITY_SLACK: f64 = 1e-12;

/// Transition probabilities `(P(0→1), P(1→0))` of the two-state chain whose
/// stationary logic-1 probability is `p1` and whose per-cycle change
/// probability is `ptr`.
pub fn markov_params(p1: f64, ptr: f64) -> Result<(f64, f64), SimError> {
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&ptr) {
        return Err(SimError::InfeasibleStimulus { p1, ptr });
    }
    if ptr > 2.0 * p1.min(1.0 - p1) + FEASIBILITY_SLACK {
        return Err(SimError::InfeasibleStimulus { p1, ptr });
    }
    if p1 == 0.0 || p1 == 1.0 {
        return Ok((0.0, 0.0));
    }
    let rise = (ptr / (2.0 * (1.0 - p1))).min(1.0);
    let fall = (ptr / (2.0 * p1)).min(1.0);
    Ok((rise, fall))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiStimulus {
    pub p1: f64,
    pub ptr: f64,
}

/// Per-PI stimulus: each driven primary input follows an independent
/// stationary two-state Markov chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    #[serde(with = "entries")]
    inputs: BTreeMap<NodeId, PiStimulus>,
}

mod entries {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::PiStimulus;
    use crate::netgraph::NodeId;

    #[derive(Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Entry {
        node: NodeId,
        p1: f64,
        ptr: f64,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<NodeId, PiStimulus>, s: S) -> Result<S::Ok, S::Error> {
        m.iter()
            .map(|(&node, st)| Entry {
                node,
                p1: st.p1,
                ptr: st.ptr,
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<NodeId, PiStimulus>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v
            .into_iter()
            .map(|e| (e.node, PiStimulus { p1: e.p1, ptr: e.ptr }))
            .collect())
    }
}

impl Workload {
    pub fn new() -> Self {
        Self::default()
    }

    /// Same `(p1, ptr)` on every driven PI.
    pub fn uniform(g: &CircuitGraph, p1: f64, ptr: f64) -> Self {
        let mut w = Workload::new();
        for pi in g.driven_pis() {
            w.set(pi, p1, ptr);
        }
        w
    }

    /// Random feasible workload: `p1 ~ U(0.05, 0.95)`, `ptr` uniform over its
    /// feasible range.
    pub fn random(g: &CircuitGraph, seed: u64) -> Self {
        let mut rng = rng_from(derive_seed(seed, tags::WORKLOAD));
        let mut w = Workload::new();
        for pi in g.driven_pis() {
            let p1: f64 = rng.random_range(0.05..0.95);
            let ptr = rng.random::<f64>() * 2.0 * p1.min(1.0 - p1);
            w.set(pi, p1, ptr);
        }
        w
    }

    pub fn set(&mut self, node: NodeId, p1: f64, ptr: f64) {
        self.inputs.insert(node, PiStimulus { p1, ptr });
    }

    pub fn get(&self, node: NodeId) -> Option<PiStimulus> {
        self.inputs.get(&node).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, PiStimulus)> + '_ {
        self.inputs.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Checks coverage of every driven PI and feasibility of each entry.
    pub fn check(&self, g: &CircuitGraph) -> Result<(), SimError> {
        for pi in g.driven_pis() {
            let st = self.get(pi).ok_or(SimError::MissingInput(pi))?;
            markov_params(st.p1, st.ptr)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fair_iid_bits() {
        assert_eq!(markov_params(0.5, 0.5).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn strict_alternation() {
        assert_eq!(markov_params(0.5, 1.0).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn constant_inputs() {
        assert_eq!(markov_params(1.0, 0.0).unwrap(), (0.0, 0.0));
        assert_eq!(markov_params(0.0, 0.0).unwrap(), (0.0, 0.0));
        assert!(markov_params(1.0, 0.1).is_err());
    }

    #[test]
    fn infeasible_pairs() {
        assert!(markov_params(0.2, 0.5).is_err());
        assert!(markov_params(1.2, 0.0).is_err());
        assert!(markov_params(0.5, -0.1).is_err());
    }

    #[test]
    fn stationarity_and_change_rate_hold() {
        for &(p1, ptr) in &[(0.3, 0.2), (0.7, 0.6), (0.1, 0.05), (0.9, 0.2)] {
            let (a, b) = markov_params(p1, ptr).unwrap();
            assert!((a * (1.0 - p1) - b * p1).abs() < 1e-12);
            assert!((a * (1.0 - p1) + b * p1 - ptr).abs() < 1e-12);
        }
    }

    #[test]
    fn json_shape() {
        let mut w = Workload::new();
        w.set(3, 0.25, 0.125);
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, r#"{"inputs":[{"node":3,"p1":0.25,"ptr":0.125}]}"#);
        let back: Workload = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
    }
}
