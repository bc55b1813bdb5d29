//! Supervision labels: logic probability, transition probability,
//! reconvergence, truth-table distance and flip-flop transition similarity.

mod cones;
mod dataset;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::{CircuitGraph, NodeId, NodeKind};
use crate::rng::{derive_seed, rng_from, tags};
use crate::simulate::{simulate, FfTraces, SimConfig, SimError, Workload};

pub use cones::{ancestor_sets, sequential_depth, sequential_pi_support, supports, NodeSet};
pub use dataset::{read_dataset, write_dataset, DatasetError, DatasetRecord};

/// Largest joint support for which truth tables are enumerated.
pub const MAX_TT_SUPPORT: usize = 16;
pub const DEFAULT_FF_PAIR_TARGET: usize = 495;
const F_PAIRS_PER_REFERENCE: f64 = 543.0;
const REFERENCE_CIRCUIT_SIZE: f64 = 214.35;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuperviseError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("joint support of nodes {i} and {j} has {size} inputs (limit {MAX_TT_SUPPORT})")]
    SupportTooLarge { i: NodeId, j: NodeId, size: usize },
    #[error("node {0} is not combinational")]
    NotCombinational(NodeId),
    #[error("node {0} is not a flip-flop")]
    NotFf(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcPair {
    pub a: NodeId,
    pub b: NodeId,
    pub gate: NodeId,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FPair {
    pub i: NodeId,
    pub j: NodeId,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfPair {
    pub i: NodeId,
    pub j: NodeId,
    pub sim: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub p1: Vec<f64>,
    pub ptr: Vec<f64>,
    #[serde(rename = "rc")]
    pub rc_pairs: Vec<RcPair>,
    #[serde(rename = "f")]
    pub f_pairs: Vec<FPair>,
    #[serde(rename = "ffsim")]
    pub ffsim_pairs: Vec<FfPair>,
}

impl LabelSet {
    /// Checks that every reference fits `g` and every value is in range.
    pub fn check(&self, g: &CircuitGraph) -> Result<(), String> {
        let n = g.len();
        if self.p1.len() != n || self.ptr.len() != n {
            return Err(format!("label arrays sized {}/{} for {n} nodes", self.p1.len(), self.ptr.len()));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if let Some(v) = (0..n).find(|&v| !unit(self.p1[v]) || !unit(self.ptr[v])) {
            return Err(format!("node {v}: probability out of range"));
        }
        for r in &self.rc_pairs {
            if r.gate >= n || g.fanins(r.gate) != [r.a, r.b] || r.label > 1 {
                return Err(format!("bad rc entry for gate {}", r.gate));
            }
        }
        for p in &self.f_pairs {
            if p.i >= n || p.j >= n || !g.kind(p.i).is_combinational() || !g.kind(p.j).is_combinational() {
                return Err(format!("f pair ({}, {}) is not combinational", p.i, p.j));
            }
            if !unit(p.distance) || (p.i == p.j && p.distance != 0.0) {
                return Err(format!("f pair ({}, {}) has distance {}", p.i, p.j, p.distance));
            }
        }
        for p in &self.ffsim_pairs {
            if p.i >= n || p.j >= n || g.kind(p.i) != NodeKind::Ff || g.kind(p.j) != NodeKind::Ff {
                return Err(format!("ffsim pair ({}, {}) is not two flip-flops", p.i, p.j));
            }
            if !unit(p.sim) {
                return Err(format!("ffsim pair ({}, {}) has similarity {}", p.i, p.j, p.sim));
            }
        }
        Ok(())
    }
}

/// One entry per two-input gate: 1 iff the two fanin cones share a node.
pub fn reconvergence_pairs(g: &CircuitGraph) -> Vec<RcPair> {
    let anc = ancestor_sets(g);
    g.nodes_of(NodeKind::And)
        .map(|v| {
            let (a, b) = (g.fanins(v)[0], g.fanins(v)[1]);
            RcPair {
                a,
                b,
                gate: v,
                label: u8::from(anc[a].intersects(&anc[b])),
            }
        })
        .collect()
}

/// Output column of every node in `cone` over all assignments of `support`.
fn truth_tables(g: &CircuitGraph, support: &[NodeId], cone: &NodeSet) -> Vec<Vec<u64>> {
    let k = support.len();
    let rows = 1usize << k;
    let words = rows.div_ceil(64);
    let mask = if rows >= 64 { !0 } else { (1u64 << rows) - 1 };
    const LOW: [u64; 6] = [
        0xAAAA_AAAA_AAAA_AAAA,
        0xCCCC_CCCC_CCCC_CCCC,
        0xF0F0_F0F0_F0F0_F0F0,
        0xFF00_FF00_FF00_FF00,
        0xFFFF_0000_FFFF_0000,
        0xFFFF_FFFF_0000_0000,
    ];
    let mut vals: Vec<Vec<u64>> = vec![Vec::new(); g.len()];
    for (m, &s) in support.iter().enumerate() {
        vals[s] = (0..words)
            .map(|w| {
                if m < 6 {
                    LOW[m] & mask
                } else if (w >> (m - 6)) & 1 == 1 {
                    !0
                } else {
                    0
                }
            })
            .collect();
    }
    for v in cones::comb_order(g) {
        if !cone.contains(v) || !vals[v].is_empty() {
            continue;
        }
        let fi = g.fanins(v);
        vals[v] = match g.kind(v) {
            NodeKind::And => vals[fi[0]].iter().zip(&vals[fi[1]]).map(|(a, b)| a & b).collect(),
            NodeKind::Not => vals[fi[0]].iter().map(|a| !a & mask).collect(),
            // Only the constant can be a source outside the support.
            _ => vec![0; words],
        };
    }
    vals
}

fn joint_support(sup: &[NodeSet], i: NodeId, j: NodeId) -> Vec<NodeId> {
    let mut s = sup[i].clone();
    s.union_with(&sup[j]);
    s.iter().collect()
}

fn distance_with(g: &CircuitGraph, anc: &[NodeSet], sup: &[NodeSet], i: NodeId, j: NodeId) -> f64 {
    let support = joint_support(sup, i, j);
    let mut cone = anc[i].clone();
    cone.union_with(&anc[j]);
    let tt = truth_tables(g, &support, &cone);
    let rows = 1usize << support.len();
    let diff: u64 = tt[i]
        .iter()
        .zip(&tt[j])
        .map(|(a, b)| u64::from((a ^ b).count_ones()))
        .sum();
    diff as f64 / rows as f64
}

/// Normalized Hamming distance between the exhaustive output columns of `i`
/// and `j`, with FF outputs as free inputs.
pub fn truth_table_distance(g: &CircuitGraph, i: NodeId, j: NodeId) -> Result<f64, SuperviseError> {
    for v in [i, j] {
        if !g.kind(v).is_combinational() {
            return Err(SuperviseError::NotCombinational(v));
        }
    }
    let sup = supports(g);
    let size = sup[i].union_len(&sup[j]);
    if size > MAX_TT_SUPPORT {
        return Err(SuperviseError::SupportTooLarge { i, j, size });
    }
    Ok(distance_with(g, &ancestor_sets(g), &sup, i, j))
}

/// Default number of functional pairs for a circuit with `n_nodes` nodes.
pub fn default_f_target(n_nodes: usize) -> usize {
    (F_PAIRS_PER_REFERENCE * n_nodes as f64 / REFERENCE_CIRCUIT_SIZE).round() as usize
}

/// Uniform sample without replacement of distinct combinational pairs whose
/// joint support fits [`MAX_TT_SUPPORT`], with their distances.
pub fn sample_f_pairs(g: &CircuitGraph, target: usize, seed: u64) -> Vec<FPair> {
    let sup = supports(g);
    let comb: Vec<NodeId> = (0..g.len()).filter(|&v| g.kind(v).is_combinational()).collect();
    let mut eligible = Vec::new();
    for (x, &i) in comb.iter().enumerate() {
        for &j in &comb[x + 1..] {
            if sup[i].union_len(&sup[j]) <= MAX_TT_SUPPORT {
                eligible.push((i, j));
            }
        }
    }
    let mut rng = rng_from(derive_seed(seed, tags::F_PAIRS));
    let (chosen, _) = eligible.partial_shuffle(&mut rng, target);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    let anc = ancestor_sets(g);
    chosen
        .into_iter()
        .map(|(i, j)| FPair {
            i,
            j,
            distance: distance_with(g, &anc, &sup, i, j),
        })
        .collect()
}

/// Flip-flops are comparable when driven by the same PIs (through any number
/// of FF stages) and at the same sequential depth.
pub fn ff_pair_eligible(g: &CircuitGraph, i: NodeId, j: NodeId) -> Result<bool, SuperviseError> {
    for v in [i, j] {
        if g.kind(v) != NodeKind::Ff {
            return Err(SuperviseError::NotFf(v));
        }
    }
    let depth = sequential_depth(g);
    Ok(eligible_with(g, &depth, i, j))
}

fn eligible_with(g: &CircuitGraph, depth: &[Option<usize>], i: NodeId, j: NodeId) -> bool {
    if depth[i].is_none() || depth[i] != depth[j] {
        return false;
    }
    let si = sequential_pi_support(g, i);
    !si.is_empty() && si == sequential_pi_support(g, j)
}

/// Indicator sums of the state-transition similarity for traced FFs at
/// positions `ki` and `kj`: `(Σ same state at t-1, Σ same state at t-1 and t)`.
pub fn ff_similarity_counts(tr: &FfTraces, ki: usize, kj: usize) -> (u64, u64) {
    let wpr = tr.words_per_row();
    let mut state = 0u64;
    let mut trans = 0u64;
    for w in 0..wpr {
        let width = (tr.n_patterns - w * 64).min(64);
        let mask = if width == 64 { !0 } else { (1u64 << width) - 1 };
        for t in 1..tr.n_cycles {
            let same_prev = !(tr.word(ki, t - 1, w) ^ tr.word(kj, t - 1, w)) & mask;
            let same_now = !(tr.word(ki, t, w) ^ tr.word(kj, t, w)) & mask;
            state += u64::from(same_prev.count_ones());
            trans += u64::from((same_prev & same_now).count_ones());
        }
    }
    (state, trans)
}

/// Ratio of matching state transitions among cycles where the two FFs held
/// the same state. `None` when they never did.
pub fn ff_similarity(tr: &FfTraces, ki: usize, kj: usize) -> Option<f64> {
    let (state, trans) = ff_similarity_counts(tr, ki, kj);
    (state > 0).then(|| trans as f64 / state as f64)
}

/// Samples up to `target` eligible FF pairs with defined similarity.
pub fn sample_ff_pairs(g: &CircuitGraph, tr: &FfTraces, target: usize, seed: u64) -> (Vec<FfPair>, usize) {
    let depth = sequential_depth(g);
    let mut eligible = Vec::new();
    for a in 0..tr.ffs.len() {
        for b in a + 1..tr.ffs.len() {
            if eligible_with(g, &depth, tr.ffs[a], tr.ffs[b]) {
                eligible.push((a, b));
            }
        }
    }
    let mut rng = rng_from(derive_seed(seed, tags::FF_PAIRS));
    eligible.shuffle(&mut rng);
    let mut out = Vec::new();
    let mut skipped = 0;
    for (a, b) in eligible {
        if out.len() == target {
            break;
        }
        match ff_similarity(tr, a, b) {
            Some(sim) => out.push(FfPair {
                i: tr.ffs[a],
                j: tr.ffs[b],
                sim,
            }),
            None => {
                log::debug!("skipping FF pair ({}, {}): never in the same state", tr.ffs[a], tr.ffs[b]);
                skipped += 1;
            }
        }
    }
    out.sort_by_key(|p| (p.i, p.j));
    (out, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub sim: SimConfig,
    /// Functional pairs per circuit; scaled with circuit size when unset.
    pub f_target: Option<usize>,
    pub ff_target: usize,
    pub seed: u64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            sim: SimConfig::default(),
            f_target: None,
            ff_target: DEFAULT_FF_PAIR_TARGET,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelDiagnostics {
    pub f_target: usize,
    pub ff_pairs_skipped: usize,
}

/// Simulates `g` under `w` and derives every label.
pub fn build_labelset(
    g: &CircuitGraph,
    w: &Workload,
    cfg: &LabelConfig,
) -> Result<(LabelSet, LabelDiagnostics), SuperviseError> {
    let stats = simulate(g, w, &cfg.sim)?;
    let f_target = cfg.f_target.unwrap_or_else(|| default_f_target(g.len()));
    let (ffsim_pairs, skipped) = sample_ff_pairs(g, &stats.traces, cfg.ff_target, cfg.seed);
    let labels = LabelSet {
        p1: stats.p1,
        ptr: stats.ptr,
        rc_pairs: reconvergence_pairs(g),
        f_pairs: sample_f_pairs(g, f_target, cfg.seed),
        ffsim_pairs,
    };
    Ok((
        labels,
        LabelDiagnostics {
            f_target,
            ff_pairs_skipped: skipped,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::CircuitBuilder;

    #[test]
    fn independent_inputs_do_not_reconverge() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let c = b.add_pi();
        let x = b.add_and(a, c);
        let rc = reconvergence_pairs(&b.build());
        assert_eq!(rc, vec![RcPair { a, b: c, gate: x, label: 0 }]);
    }

    #[test]
    fn diamond_reconverges() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let x = b.add_not(a);
        let n1 = b.add_not(a);
        let y = b.add_not(n1);
        b.add_and(x, y);
        assert_eq!(reconvergence_pairs(&b.build())[0].label, 1);
    }

    #[test]
    fn same_fanin_twice_reconverges() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        b.add_and(a, a);
        assert_eq!(reconvergence_pairs(&b.build())[0].label, 1);
    }

    #[test]
    fn ff_output_stops_cones() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let f = b.add_ff(Some(a));
        let c = b.add_pi();
        b.add_and(f, a);
        b.add_and(c, a);
        let rc = reconvergence_pairs(&b.build());
        assert_eq!(rc[0].label, 0);
        assert_eq!(rc[1].label, 0);
    }

    fn and_or() -> (CircuitGraph, NodeId, NodeId, NodeId, NodeId) {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let c = b.add_pi();
        let and = b.add_and(a, c);
        let na = b.add_not(a);
        let nc = b.add_not(c);
        let nor = b.add_and(na, nc);
        let or = b.add_not(nor);
        let nand = b.add_not(and);
        let dup = b.add_and(a, c);
        (b.build(), and, or, nand, dup)
    }

    #[test]
    fn truth_table_examples() {
        let (g, and, or, nand, dup) = and_or();
        assert_eq!(truth_table_distance(&g, and, dup).unwrap(), 0.0);
        assert_eq!(truth_table_distance(&g, and, nand).unwrap(), 1.0);
        assert_eq!(truth_table_distance(&g, and, or).unwrap(), 0.5);
        assert_eq!(truth_table_distance(&g, or, and).unwrap(), 0.5);
        assert_eq!(truth_table_distance(&g, and, and).unwrap(), 0.0);
        assert!(matches!(truth_table_distance(&g, 0, and), Err(SuperviseError::NotCombinational(0))));
    }

    #[test]
    fn wide_support_is_rejected() {
        let mut b = CircuitBuilder::new();
        let pis: Vec<_> = (0..18).map(|_| b.add_pi()).collect();
        let mut acc = b.add_and(pis[0], pis[1]);
        for &p in &pis[2..] {
            acc = b.add_and(acc, p);
        }
        let small = b.add_not(pis[0]);
        let g = b.build();
        assert!(matches!(
            truth_table_distance(&g, acc, small),
            Err(SuperviseError::SupportTooLarge { size: 18, .. })
        ));
        assert!(sample_f_pairs(&g, 10_000, 0).iter().all(|p| p.i != acc && p.j != acc));
    }

    #[test]
    fn large_support_uses_multiword_tables() {
        let mut b = CircuitBuilder::new();
        let pis: Vec<_> = (0..8).map(|_| b.add_pi()).collect();
        let mut acc = b.add_and(pis[0], pis[1]);
        for &p in &pis[2..] {
            acc = b.add_and(acc, p);
        }
        let n = b.add_not(pis[7]);
        let g = b.build();
        let d = truth_table_distance(&g, acc, n).unwrap();
        let mut diff = 0;
        for r in 0..256u32 {
            let and = r == 255;
            let not = (r >> 7) & 1 == 0;
            diff += u32::from(and != not);
        }
        assert_eq!(d, f64::from(diff) / 256.0);
    }

    #[test]
    fn single_and_has_no_pairs() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let c = b.add_pi();
        b.add_and(a, c);
        assert!(sample_f_pairs(&b.build(), 543, 1).is_empty());
    }

    #[test]
    fn exhaustive_sampling_finds_duplicates() {
        let (g, and, _, _, dup) = and_or();
        let pairs = sample_f_pairs(&g, usize::MAX, 4);
        let comb = (0..g.len()).filter(|&v| g.kind(v).is_combinational()).count();
        assert_eq!(pairs.len(), comb * (comb - 1) / 2);
        let p = pairs.iter().find(|p| p.i == and && p.j == dup).unwrap();
        assert_eq!(p.distance, 0.0);
        assert_eq!(sample_f_pairs(&g, 5, 9), sample_f_pairs(&g, 5, 9));
    }

    #[test]
    fn ff_eligibility_examples() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let c = b.add_pi();
        let na = b.add_not(a);
        let f1 = b.add_ff(Some(a));
        let f2 = b.add_ff(Some(na));
        let f3 = b.add_ff(Some(c));
        let f4 = b.add_ff(Some(f1));
        let g = b.build();
        assert!(ff_pair_eligible(&g, f1, f2).unwrap());
        assert!(!ff_pair_eligible(&g, f1, f3).unwrap());
        assert!(!ff_pair_eligible(&g, f1, f4).unwrap());
        assert!(ff_pair_eligible(&g, a, f1).is_err());
    }

    #[test]
    fn eq1_hand_example() {
        let mut tr = FfTraces::new(vec![0, 1], 1, 4);
        for (t, (x, y)) in [(false, false), (true, true), (true, false), (false, false)]
            .into_iter()
            .enumerate()
        {
            tr.set(0, 0, t, x);
            tr.set(1, 0, t, y);
        }
        assert_eq!(ff_similarity_counts(&tr, 0, 1), (2, 1));
        assert_eq!(ff_similarity(&tr, 0, 1), Some(0.5));
        assert_eq!(ff_similarity(&tr, 1, 0), Some(0.5));
        assert_eq!(ff_similarity(&tr, 0, 0), Some(1.0));
    }

    #[test]
    fn complementary_traces_are_undefined() {
        let mut tr = FfTraces::new(vec![0, 1], 3, 5);
        for p in 0..3 {
            for t in 0..5 {
                let v = (p + t) % 2 == 0;
                tr.set(0, p, t, v);
                tr.set(1, p, t, !v);
            }
        }
        assert_eq!(ff_similarity(&tr, 0, 1), None);
    }

    #[test]
    fn toggle_ff_labels() {
        let g = crate::simulate::tests::toggle_ff();
        let (l, _) = build_labelset(&g, &Workload::new(), &LabelConfig::default()).unwrap();
        assert_eq!(l.ptr[0], 1.0);
        assert!(l.ffsim_pairs.is_empty());
        l.check(&g).unwrap();
    }

    #[test]
    fn twin_toggle_ffs_are_fully_similar() {
        let mut b = CircuitBuilder::new();
        let en = b.add_pi();
        let mut ffs = Vec::new();
        for _ in 0..2 {
            let f = b.add_ff(None);
            let nf = b.add_not(f);
            let d = b.add_and(nf, en);
            b.set_ff_input(f, d);
            ffs.push(f);
        }
        let g = b.build();
        let w = Workload::uniform(&g, 0.5, 0.5);
        let (l, _) = build_labelset(&g, &w, &LabelConfig::default()).unwrap();
        assert_eq!(l.ffsim_pairs, vec![FfPair { i: ffs[0], j: ffs[1], sim: 1.0 }]);
    }
}
