//! Paired fault-free / faulty simulation with random bit flips.

use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DownstreamError, Result};
use crate::netgraph::{CircuitGraph, NodeId};
use crate::rng::{derive_seed, stream, tags, Rng};
use crate::simulate::{block_mask, blocks, BlockStimulus, FfTraces, Program, SimConfig, SimError, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultConfig {
    /// Probability that a node's value flips at one evaluation.
    pub flip_prob: f64,
    pub n_patterns: usize,
    pub n_cycles: usize,
    pub seed: u64,
    pub reset: Option<bool>,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            flip_prob: 0.0005,
            n_patterns: 1000,
            n_cycles: 100,
            seed: 0,
            reset: None,
        }
    }
}

impl FaultConfig {
    pub fn check(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.flip_prob) {
            return Err(DownstreamError::Config("flip_prob must be in [0, 1)".into()));
        }
        self.sim_config().check()?;
        Ok(())
    }

    /// The fault-free simulation this run pairs with.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_patterns: self.n_patterns,
            n_cycles: self.n_cycles,
            seed: self.seed,
            reset: self.reset,
            pattern_moments: false,
        }
    }
}

/// Per-node flip probabilities. `n0[v]` and `n1[v]` count evaluations where
/// the fault-free value was 0 and 1; when one is zero the matching
/// probability is reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipLabels {
    pub p01: Vec<f64>,
    pub p10: Vec<f64>,
    pub n0: Vec<u64>,
    pub n1: Vec<u64>,
}

impl FlipLabels {
    pub fn len(&self) -> usize {
        self.p01.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p01.is_empty()
    }

    /// `(p01 undefined, p10 undefined)` for node `v`.
    pub fn undefined(&self, v: NodeId) -> (bool, bool) {
        (self.n0[v] == 0, self.n1[v] == 0)
    }

    pub fn pairs(&self) -> Vec<(NodeId, [f64; 2])> {
        (0..self.len()).map(|v| (v, [self.p01[v], self.p10[v]])).collect()
    }

    pub fn records(&self, g: &CircuitGraph) -> Vec<FlipRecord> {
        (0..self.len())
            .map(|v| FlipRecord {
                node: v,
                name: g.names().name(v).map(str::to_owned),
                p01: self.p01[v],
                p10: self.p10[v],
                n0: self.n0[v],
                n1: self.n1[v],
            })
            .collect()
    }
}

/// One line of a reliability label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRecord {
    pub node: NodeId,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub name: Option<String>,
    pub p01: f64,
    pub p10: f64,
    pub n0: u64,
    pub n1: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultRun {
    pub labels: FlipLabels,
    /// Flip-flop values of the faulty run.
    pub faulty_traces: FfTraces,
}

/// Flip positions of one block, drawn as geometric gaps over the flattened
/// (cycle, node, lane) index space.
struct FlipSource {
    rng: Rng,
    geo: Option<Geometric>,
    next: u64,
}

impl FlipSource {
    fn new(seed: u64, block: usize, q: f64) -> Self {
        let mut rng = stream(derive_seed(seed, tags::FAULTS), block as u64);
        let geo = (q > 0.0).then(|| Geometric::new(q).expect("flip probability in (0, 1)"));
        let next = match &geo {
            Some(g) => g.sample(&mut rng),
            None => u64::MAX,
        };
        FlipSource { rng, geo, next }
    }

    /// Lanes of `[base, base + width)` that flip.
    #[inline]
    fn take(&mut self, base: u64, width: u64) -> u64 {
        let mut m = 0u64;
        while self.next < base + width {
            m |= 1 << (self.next - base);
            let gap = self.geo.as_ref().map_or(u64::MAX, |g| g.sample(&mut self.rng));
            self.next = self.next.saturating_add(gap).saturating_add(1);
        }
        m
    }
}

struct BlockCounts {
    n0: Vec<u64>,
    n1: Vec<u64>,
    f01: Vec<u64>,
    f10: Vec<u64>,
    ff_words: Vec<Vec<u64>>,
}

fn run_block(prog: &Program, fc: &FaultConfig, faultable: &[bool], first: usize, width: usize) -> BlockCounts {
    let n = prog.n;
    let mask = block_mask(width);
    let mut stim = BlockStimulus::new(prog, fc.seed, first, width);
    let mut flips = FlipSource::new(fc.seed, first / 64, fc.flip_prob);
    let mut state = prog.reset_state(mask);
    let mut fstate = state.clone();
    let mut good = vec![0u64; n];
    let mut bad = vec![0u64; n];
    let mut fmask = vec![0u64; n];
    let mut c = BlockCounts {
        n0: vec![0; n],
        n1: vec![0; n],
        f01: vec![0; n],
        f10: vec![0; n],
        ff_words: vec![vec![0u64; fc.n_cycles]; prog.ffs.len()],
    };
    let w = width as u64;
    for t in 0..fc.n_cycles {
        if t > 0 {
            stim.advance(prog);
        }
        for (v, m) in fmask.iter_mut().enumerate() {
            let lanes = flips.take(((t * n + v) as u64) * w, w);
            *m = if faultable[v] { lanes } else { 0 };
        }
        stim.apply(prog, &mut good);
        prog.load_state(&mut good, &state);
        prog.eval_comb(&mut good, mask);

        stim.apply(prog, &mut bad);
        prog.load_state(&mut bad, &fstate);
        for ch in &prog.chains {
            bad[ch.node] ^= fmask[ch.node];
        }
        for &f in &prog.ffs {
            bad[f] ^= fmask[f];
        }
        for &v in &prog.comb {
            let [a, b] = prog.fanins[v];
            let x = match prog.kinds[v] {
                crate::netgraph::NodeKind::And => bad[a] & bad[b],
                _ => !bad[a] & mask,
            };
            bad[v] = x ^ fmask[v];
        }

        for v in 0..n {
            let gw = good[v] & mask;
            let bw = bad[v] & mask;
            c.n1[v] += u64::from(gw.count_ones());
            c.n0[v] += u64::from((!gw & mask).count_ones());
            c.f01[v] += u64::from((!gw & bw & mask).count_ones());
            c.f10[v] += u64::from((gw & !bw).count_ones());
        }
        for (k, &f) in prog.ffs.iter().enumerate() {
            c.ff_words[k][t] = bad[f] & mask;
            state[k] = good[prog.ff_d[k]] & mask;
            fstate[k] = bad[prog.ff_d[k]] & mask;
        }
    }
    c
}

/// Runs fault-free and faulty simulations on the same PI streams. Every
/// primary input, gate and flip-flop output (the constant excepted) flips
/// independently with probability `flip_prob` at each evaluation; faulty
/// values propagate through the logic and the flip-flops.
pub fn fault_run(g: &CircuitGraph, w: &Workload, fc: &FaultConfig) -> Result<FaultRun> {
    fc.check()?;
    let prog = Program::new(g, w, fc.reset).map_err(DownstreamError::from)?;
    let faultable: Vec<bool> = (0..g.len()).map(|v| !g.is_constant(v)).collect();
    let results: Vec<BlockCounts> = blocks(fc.n_patterns)
        .into_par_iter()
        .map(|(first, width)| run_block(&prog, fc, &faultable, first, width))
        .collect();
    let n = g.len();
    let (mut n0, mut n1, mut f01, mut f10) = (vec![0u64; n], vec![0u64; n], vec![0u64; n], vec![0u64; n]);
    let mut traces = FfTraces::new(prog.ffs.clone(), fc.n_patterns, fc.n_cycles);
    for (b, r) in results.iter().enumerate() {
        for v in 0..n {
            n0[v] += r.n0[v];
            n1[v] += r.n1[v];
            f01[v] += r.f01[v];
            f10[v] += r.f10[v];
        }
        traces.fill_block(b * 64, &r.ff_words);
    }
    let ratio = |f: u64, d: u64| if d == 0 { 0.0 } else { f as f64 / d as f64 };
    let labels = FlipLabels {
        p01: (0..n).map(|v| ratio(f01[v], n0[v])).collect(),
        p10: (0..n).map(|v| ratio(f10[v], n1[v])).collect(),
        n0,
        n1,
    };
    Ok(FaultRun {
        labels,
        faulty_traces: traces,
    })
}

pub fn reliability_labels(g: &CircuitGraph, w: &Workload, fc: &FaultConfig) -> Result<FlipLabels> {
    fault_run(g, w, fc).map(|r| r.labels)
}

impl From<SimError> for DownstreamError {
    fn from(e: SimError) -> Self {
        DownstreamError::Sim(e)
    }
}
