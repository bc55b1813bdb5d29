//! Cycle-accurate sequential simulation under stochastic workloads.
//!
//! Patterns are packed 64 to a machine word. Each pattern owns a ChaCha
//! stream keyed by its index, so results do not depend on how blocks are
//! distributed across worker threads.

mod exhaustive;
mod markov;
mod trace;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::{CircuitGraph, NodeId, NodeKind};
use crate::rng::{derive_seed, stream, tags, Rng};
use crate::schedule::{levelize, ScheduleError};

pub use exhaustive::{exhaustive_stats, ExactStats, Horizon};
pub use markov::{markov_params, PiStimulus, Workload};
pub use trace::{read_traces, write_traces, FfTraces, TRACE_MAGIC};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("infeasible stimulus p1={p1}, ptr={ptr}: need ptr <= 2*min(p1, 1-p1)")]
    InfeasibleStimulus { p1: f64, ptr: f64 },
    #[error("workload has no entry for primary input {0}")]
    MissingInput(NodeId),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("exhaustive enumeration limited to {max_pi} PIs and {max_ff} FFs (have {pis} and {ffs})")]
    TooLarge {
        pis: usize,
        ffs: usize,
        max_pi: usize,
        max_ff: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_patterns: usize,
    pub n_cycles: usize,
    pub seed: u64,
    /// Overrides every flip-flop's initial value when set.
    pub reset: Option<bool>,
    /// Also accumulate per-pattern second moments (for standard errors).
    pub pattern_moments: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_patterns: 1000,
            n_cycles: 100,
            seed: 0,
            reset: None,
            pattern_moments: false,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<(), SimError> {
        if self.n_patterns == 0 {
            return Err(SimError::Config("n_patterns must be >= 1".into()));
        }
        if self.n_cycles < 2 {
            return Err(SimError::Config("n_cycles must be >= 2".into()));
        }
        Ok(())
    }
}

/// Aggregated simulation statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub n_patterns: usize,
    pub n_cycles: usize,
    /// Evaluations at logic 1, per node.
    pub ones: Vec<u64>,
    /// Consecutive-cycle value changes, per node.
    pub toggles: Vec<u64>,
    pub p1: Vec<f64>,
    pub ptr: Vec<f64>,
    /// Sums over patterns of squared per-pattern counts, when requested.
    pub moments: Option<PatternMoments>,
    pub traces: FfTraces,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternMoments {
    pub ones_sq: Vec<f64>,
    pub toggles_sq: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeStatsRecord {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub p1: f64,
    pub ptr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsDocument {
    pub n_patterns: usize,
    pub n_cycles: usize,
    pub nodes: Vec<NodeStatsRecord>,
}

impl SimStats {
    pub fn evaluations(&self) -> u64 {
        (self.n_patterns * self.n_cycles) as u64
    }

    pub fn transitions(&self) -> u64 {
        (self.n_patterns * (self.n_cycles - 1)) as u64
    }

    /// Standard error of `p1[v]`: the larger of the binomial error over all
    /// evaluations and the pattern-level error (patterns are i.i.d. but
    /// cycles within a pattern are correlated). Needs `pattern_moments`
    /// for the second term.
    pub fn p1_std_error(&self, v: NodeId) -> f64 {
        let n = self.evaluations() as f64;
        let p = self.p1[v];
        let binom = (p * (1.0 - p) / n).sqrt();
        match &self.moments {
            Some(m) => binom.max(clustered_se(self.ones[v] as f64, m.ones_sq[v], self.n_patterns, self.n_cycles as f64)),
            None => binom,
        }
    }

    pub fn ptr_std_error(&self, v: NodeId) -> f64 {
        let n = self.transitions() as f64;
        let p = self.ptr[v];
        let binom = (p * (1.0 - p) / n).sqrt();
        match &self.moments {
            Some(m) => binom.max(clustered_se(
                self.toggles[v] as f64,
                m.toggles_sq[v],
                self.n_patterns,
                (self.n_cycles - 1) as f64,
            )),
            None => binom,
        }
    }

    pub fn to_document(&self, g: &CircuitGraph) -> StatsDocument {
        StatsDocument {
            n_patterns: self.n_patterns,
            n_cycles: self.n_cycles,
            nodes: (0..g.len())
                .map(|v| NodeStatsRecord {
                    id: v,
                    kind: g.kind(v),
                    name: g.names().name(v).map(str::to_owned),
                    p1: self.p1[v],
                    ptr: self.ptr[v],
                })
                .collect(),
        }
    }
}

fn clustered_se(sum: f64, sum_sq: f64, patterns: usize, per_pattern: f64) -> f64 {
    let p = patterns as f64;
    if patterns < 2 {
        return 0.0;
    }
    // Per-pattern means x_i = count_i / per_pattern.
    let mean = sum / (p * per_pattern);
    let second = sum_sq / (p * per_pattern * per_pattern);
    let var = ((second - mean * mean) * p / (p - 1.0)).max(0.0);
    (var / p).sqrt()
}

/// A driven primary input with its chain parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Chain {
    pub node: NodeId,
    pub p1: f64,
    pub rise: f64,
    pub fall: f64,
}

/// Topologically ordered evaluation program shared by the simulators.
#[derive(Debug, Clone)]
pub(crate) struct Program {
    pub n: usize,
    pub comb: Vec<NodeId>,
    pub ffs: Vec<NodeId>,
    pub ff_d: Vec<NodeId>,
    pub ff_reset: Vec<bool>,
    pub chains: Vec<Chain>,
    pub constant: Option<NodeId>,
    pub kinds: Vec<NodeKind>,
    pub fanins: Vec<[NodeId; 2]>,
}

impl Program {
    pub fn new(g: &CircuitGraph, w: &Workload, reset: Option<bool>) -> Result<Self, SimError> {
        let plan = levelize(g)?;
        w.check(g)?;
        let mut comb = Vec::new();
        for level in &plan.levels {
            comb.extend(level.iter().copied().filter(|&v| g.kind(v).is_combinational()));
        }
        let ffs: Vec<NodeId> = g.ffs().collect();
        let ff_d = ffs.iter().map(|&f| g.fanins(f)[0]).collect();
        let ff_reset = ffs
            .iter()
            .map(|&f| reset.unwrap_or_else(|| g.reset_value(f)))
            .collect();
        let mut chains = Vec::new();
        for pi in g.driven_pis() {
            let st = w.get(pi).ok_or(SimError::MissingInput(pi))?;
            let (rise, fall) = markov_params(st.p1, st.ptr)?;
            chains.push(Chain {
                node: pi,
                p1: st.p1,
                rise,
                fall,
            });
        }
        let fanins = (0..g.len())
            .map(|v| {
                let f = g.fanins(v);
                [f.first().copied().unwrap_or(0), f.get(1).copied().unwrap_or(0)]
            })
            .collect();
        Ok(Program {
            n: g.len(),
            comb,
            ffs,
            ff_d,
            ff_reset,
            chains,
            constant: g.constant_node(),
            kinds: g.kinds().to_vec(),
            fanins,
        })
    }

    /// Evaluates combinational nodes given PI and FF words already in `vals`.
    #[inline]
    pub fn eval_comb(&self, vals: &mut [u64], mask: u64) {
        for &v in &self.comb {
            let [a, b] = self.fanins[v];
            vals[v] = match self.kinds[v] {
                NodeKind::And => vals[a] & vals[b],
                _ => !vals[a] & mask,
            };
        }
    }

    pub fn load_state(&self, vals: &mut [u64], state: &[u64]) {
        for (k, &f) in self.ffs.iter().enumerate() {
            vals[f] = state[k];
        }
        if let Some(c) = self.constant {
            vals[c] = 0;
        }
    }

    pub fn reset_state(&self, mask: u64) -> Vec<u64> {
        self.ff_reset
            .iter()
            .map(|&r| if r { mask } else { 0 })
            .collect()
    }
}

/// Workload stimulus for one block of up to 64 patterns.
pub(crate) struct BlockStimulus {
    rngs: Vec<Rng>,
    pub words: Vec<u64>,
}

impl BlockStimulus {
    /// Draws cycle-0 values from each chain's stationary distribution.
    pub fn new(prog: &Program, seed: u64, first_pattern: usize, width: usize) -> Self {
        let base = derive_seed(seed, tags::PI_STIMULUS);
        let mut rngs: Vec<Rng> = (0..width)
            .map(|p| stream(base, (first_pattern + p) as u64))
            .collect();
        let mut words = vec![0u64; prog.chains.len()];
        for (bit, rng) in rngs.iter_mut().enumerate() {
            for (k, ch) in prog.chains.iter().enumerate() {
                let u: f64 = rng.random();
                if u < ch.p1 {
                    words[k] |= 1 << bit;
                }
            }
        }
        BlockStimulus { rngs, words }
    }

    pub fn advance(&mut self, prog: &Program) {
        for (bit, rng) in self.rngs.iter_mut().enumerate() {
            for (k, ch) in prog.chains.iter().enumerate() {
                let u: f64 = rng.random();
                let one = (self.words[k] >> bit) & 1 == 1;
                let flip = if one { u < ch.fall } else { u < ch.rise };
                if flip {
                    self.words[k] ^= 1 << bit;
                }
            }
        }
    }

    pub fn apply(&self, prog: &Program, vals: &mut [u64]) {
        for (k, ch) in prog.chains.iter().enumerate() {
            vals[ch.node] = self.words[k];
        }
    }
}

pub(crate) fn block_mask(width: usize) -> u64 {
    if width == 64 {
        !0
    } else {
        (1u64 << width) - 1
    }
}

pub(crate) fn blocks(n_patterns: usize) -> Vec<(usize, usize)> {
    (0..n_patterns.div_ceil(64))
        .map(|b| (b * 64, (n_patterns - b * 64).min(64)))
        .collect()
}

/// Bit-sliced per-pattern counters.
struct VerticalCounter {
    planes: Vec<u64>,
}

impl VerticalCounter {
    fn new(bits: usize) -> Self {
        VerticalCounter {
            planes: vec![0; bits],
        }
    }

    #[inline]
    fn add(&mut self, word: u64) {
        let mut carry = word;
        for p in self.planes.iter_mut() {
            let t = *p & carry;
            *p ^= carry;
            carry = t;
            if carry == 0 {
                break;
            }
        }
    }

    fn sum_of_squares(&self, width: usize) -> f64 {
        (0..width)
            .map(|bit| {
                let c: u64 = self
                    .planes
                    .iter()
                    .enumerate()
                    .map(|(k, p)| ((p >> bit) & 1) << k)
                    .sum();
                (c * c) as f64
            })
            .sum()
    }
}

struct BlockResult {
    ones: Vec<u64>,
    toggles: Vec<u64>,
    ones_sq: Vec<f64>,
    toggles_sq: Vec<f64>,
    /// [ff][cycle] words of this block.
    ff_words: Vec<Vec<u64>>,
}

fn run_block(prog: &Program, cfg: &SimConfig, first: usize, width: usize) -> BlockResult {
    let n = prog.n;
    let mask = block_mask(width);
    let mut stim = BlockStimulus::new(prog, cfg.seed, first, width);
    let mut state = prog.reset_state(mask);
    let mut vals = vec![0u64; n];
    let mut prev = vec![0u64; n];
    let mut ones = vec![0u64; n];
    let mut toggles = vec![0u64; n];
    let bits = (usize::BITS - cfg.n_cycles.leading_zeros()) as usize;
    let mut vc_ones: Vec<VerticalCounter> = Vec::new();
    let mut vc_tog: Vec<VerticalCounter> = Vec::new();
    if cfg.pattern_moments {
        vc_ones = (0..n).map(|_| VerticalCounter::new(bits)).collect();
        vc_tog = (0..n).map(|_| VerticalCounter::new(bits)).collect();
    }
    let mut ff_words = vec![vec![0u64; cfg.n_cycles]; prog.ffs.len()];

    for t in 0..cfg.n_cycles {
        if t > 0 {
            stim.advance(prog);
        }
        stim.apply(prog, &mut vals);
        prog.load_state(&mut vals, &state);
        prog.eval_comb(&mut vals, mask);
        for v in 0..n {
            let w = vals[v] & mask;
            ones[v] += u64::from(w.count_ones());
            if t > 0 {
                let d = (w ^ prev[v]) & mask;
                toggles[v] += u64::from(d.count_ones());
                if cfg.pattern_moments {
                    vc_tog[v].add(d);
                }
            }
            if cfg.pattern_moments {
                vc_ones[v].add(w);
            }
            prev[v] = w;
        }
        for (k, &f) in prog.ffs.iter().enumerate() {
            ff_words[k][t] = vals[f] & mask;
            state[k] = vals[prog.ff_d[k]] & mask;
        }
    }
    let (ones_sq, toggles_sq) = if cfg.pattern_moments {
        (
            vc_ones.iter().map(|c| c.sum_of_squares(width)).collect(),
            vc_tog.iter().map(|c| c.sum_of_squares(width)).collect(),
        )
    } else {
        (Vec::new(), Vec::new())
    };
    BlockResult {
        ones,
        toggles,
        ones_sq,
        toggles_sq,
        ff_words,
    }
}

/// Simulates `cfg.n_patterns` independent patterns of `cfg.n_cycles` cycles.
///
/// Each pattern resets the flip-flops, draws PI values from their stationary
/// distributions at cycle 0, then per cycle advances the PI chains,
/// evaluates the combinational logic, and latches D inputs at cycle end.
pub fn simulate(g: &CircuitGraph, w: &Workload, cfg: &SimConfig) -> Result<SimStats, SimError> {
    cfg.check()?;
    let prog = Program::new(g, w, cfg.reset)?;
    let results: Vec<BlockResult> = blocks(cfg.n_patterns)
        .into_par_iter()
        .map(|(first, width)| run_block(&prog, cfg, first, width))
        .collect();

    let n = g.len();
    let mut ones = vec![0u64; n];
    let mut toggles = vec![0u64; n];
    let mut ones_sq = vec![0f64; n];
    let mut toggles_sq = vec![0f64; n];
    let mut traces = FfTraces::new(prog.ffs.clone(), cfg.n_patterns, cfg.n_cycles);
    for (b, r) in results.iter().enumerate() {
        for v in 0..n {
            ones[v] += r.ones[v];
            toggles[v] += r.toggles[v];
            if cfg.pattern_moments {
                ones_sq[v] += r.ones_sq[v];
                toggles_sq[v] += r.toggles_sq[v];
            }
        }
        traces.fill_block(b * 64, &r.ff_words);
    }
    let evals = (cfg.n_patterns * cfg.n_cycles) as f64;
    let trans = (cfg.n_patterns * (cfg.n_cycles - 1)) as f64;
    Ok(SimStats {
        n_patterns: cfg.n_patterns,
        n_cycles: cfg.n_cycles,
        p1: ones.iter().map(|&c| c as f64 / evals).collect(),
        ptr: toggles.iter().map(|&c| c as f64 / trans).collect(),
        ones,
        toggles,
        moments: cfg.pattern_moments.then_some(PatternMoments {
            ones_sq,
            toggles_sq,
        }),
        traces,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::netgraph::CircuitBuilder;

    /// One pattern at a time, one bool per node, same random streams.
    pub(crate) fn scalar_counts(g: &CircuitGraph, w: &Workload, cfg: &SimConfig) -> (Vec<u64>, Vec<u64>) {
        let prog = Program::new(g, w, cfg.reset).unwrap();
        let base = derive_seed(cfg.seed, tags::PI_STIMULUS);
        let n = g.len();
        let mut ones = vec![0u64; n];
        let mut toggles = vec![0u64; n];
        for p in 0..cfg.n_patterns {
            let mut rng = stream(base, p as u64);
            let mut pi: Vec<bool> = prog
                .chains
                .iter()
                .map(|ch| rng.random::<f64>() < ch.p1)
                .collect();
            let mut state: Vec<bool> = prog.ff_reset.clone();
            let mut prev = vec![false; n];
            for t in 0..cfg.n_cycles {
                if t > 0 {
                    for (k, ch) in prog.chains.iter().enumerate() {
                        let u: f64 = rng.random();
                        if (pi[k] && u < ch.fall) || (!pi[k] && u < ch.rise) {
                            pi[k] = !pi[k];
                        }
                    }
                }
                let mut val = vec![false; n];
                for (k, ch) in prog.chains.iter().enumerate() {
                    val[ch.node] = pi[k];
                }
                for (k, &f) in prog.ffs.iter().enumerate() {
                    val[f] = state[k];
                }
                for &v in &prog.comb {
                    let fi = g.fanins(v);
                    val[v] = match g.kind(v) {
                        NodeKind::And => val[fi[0]] && val[fi[1]],
                        _ => !val[fi[0]],
                    };
                }
                for v in 0..n {
                    ones[v] += u64::from(val[v]);
                    if t > 0 && val[v] != prev[v] {
                        toggles[v] += 1;
                    }
                }
                prev = val.clone();
                for (k, &d) in prog.ff_d.iter().enumerate() {
                    state[k] = val[d];
                }
            }
        }
        (ones, toggles)
    }

    pub(crate) fn toggle_ff() -> CircuitGraph {
        let mut b = CircuitBuilder::new();
        let ff = b.add_ff(None);
        let n = b.add_not(ff);
        b.set_ff_input(ff, n);
        b.add_output(ff);
        b.build()
    }

    #[test]
    fn not_over_pi_complements() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let n = b.add_not(a);
        let g = b.build();
        let mut w = Workload::new();
        w.set(a, 0.3, 0.2);
        let s = simulate(&g, &w, &SimConfig::default()).unwrap();
        assert!((s.p1[n] - 0.7).abs() < 0.01, "{}", s.p1[n]);
        assert_eq!(s.ones[n] + s.ones[a], s.evaluations());
        assert_eq!(s.toggles[n], s.toggles[a]);
    }

    #[test]
    fn and_of_fair_inputs() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let c = b.add_pi();
        let x = b.add_and(a, c);
        let g = b.build();
        let w = Workload::uniform(&g, 0.5, 0.5);
        let s = simulate(&g, &w, &SimConfig::default()).unwrap();
        let se_p1 = (0.25f64 * 0.75 / 100_000.0).sqrt();
        let se_tr = (0.375f64 * 0.625 / 99_000.0).sqrt();
        assert!((s.p1[x] - 0.25).abs() < 3.0 * se_p1, "{}", s.p1[x]);
        assert!((s.ptr[x] - 0.375).abs() < 3.0 * se_tr, "{}", s.ptr[x]);
    }

    #[test]
    fn toggle_ff_alternates() {
        let g = toggle_ff();
        let s = simulate(&g, &Workload::new(), &SimConfig::default()).unwrap();
        assert_eq!(s.ptr[0], 1.0);
        assert_eq!(s.p1[0], 0.5);
        for p in [0, 1, 500, 999] {
            for t in 0..100 {
                assert_eq!(s.traces.get(0, p, t), t % 2 == 1);
            }
        }
    }

    #[test]
    fn missing_input_is_reported() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        b.add_not(a);
        let g = b.build();
        assert_eq!(
            simulate(&g, &Workload::new(), &SimConfig::default()).unwrap_err(),
            SimError::MissingInput(a)
        );
    }

    #[test]
    fn deterministic_and_matches_scalar_path() {
        let (g, _) = crate::netgraph::generate(&crate::netgraph::GenSpec {
            n_pi: 5,
            n_and: 30,
            n_not: 12,
            n_ff: 4,
            seed: 3,
            feedback_prob: 0.5,
        })
        .unwrap();
        let w = Workload::random(&g, 11);
        let cfg = SimConfig {
            n_patterns: 150,
            n_cycles: 40,
            seed: 5,
            ..SimConfig::default()
        };
        let s1 = simulate(&g, &w, &cfg).unwrap();
        let s2 = simulate(&g, &w, &cfg).unwrap();
        assert_eq!(s1, s2);
        let (ones, toggles) = scalar_counts(&g, &w, &cfg);
        assert_eq!(s1.ones, ones);
        assert_eq!(s1.toggles, toggles);
    }

    #[test]
    fn pattern_moments_match_direct_counts() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let c = b.add_pi();
        b.add_and(a, c);
        let g = b.build();
        let w = Workload::uniform(&g, 0.4, 0.3);
        let cfg = SimConfig {
            n_patterns: 70,
            n_cycles: 9,
            seed: 1,
            pattern_moments: true,
            ..SimConfig::default()
        };
        let s = simulate(&g, &w, &cfg).unwrap();
        // Recompute per-pattern counts with one-pattern runs on the same streams.
        let prog = Program::new(&g, &w, None).unwrap();
        let mut sq = 0.0;
        for p in 0..70 {
            let r = run_block(
                &prog,
                &SimConfig {
                    pattern_moments: false,
                    ..cfg
                },
                p,
                1,
            );
            sq += (r.ones[2] * r.ones[2]) as f64;
        }
        assert_eq!(s.moments.unwrap().ones_sq[2], sq);
    }
}
