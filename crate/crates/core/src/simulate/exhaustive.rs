//! Exact statistics by enumerating the joint (PI, FF) state space.
//!
//! The circuit with Markov-driven inputs is itself a Markov chain over
//! `2^(n_pi + n_ff)` states. Node values are functions of the state, so
//! signal probabilities and change rates follow from propagating the state
//! distribution.

use rayon::prelude::*;

use super::{markov_params, SimError, Workload};
use crate::netgraph::{CircuitGraph, NodeKind};
use crate::schedule::levelize;

pub const MAX_STATE_BITS: usize = 20;
const STATIONARY_TOL: f64 = 1e-10;
const STATIONARY_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    /// Average over cycles `0..T` from reset, as the simulator does.
    Cycles(usize),
    /// Long-run averages under the stationary distribution.
    Stationary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactStats {
    pub p1: Vec<f64>,
    pub ptr: Vec<f64>,
}

struct Chain {
    pi_bits: usize,
    ff_bits: usize,
    rise: Vec<f64>,
    fall: Vec<f64>,
    stationary_p1: Vec<f64>,
    /// Next FF part of the state for every state.
    next_ff: Vec<usize>,
    /// Value bitset over states, per node.
    vals: Vec<Vec<u64>>,
}

impl Chain {
    fn states(&self) -> usize {
        1 << (self.pi_bits + self.ff_bits)
    }

    fn value(&self, v: usize, s: usize) -> bool {
        (self.vals[v][s / 64] >> (s % 64)) & 1 == 1
    }

    /// One clock edge: latch FF inputs, then advance every PI chain.
    fn step(&self, mu: &[f64]) -> Vec<f64> {
        let pi_mask = (1 << self.pi_bits) - 1;
        let mut out = vec![0.0; mu.len()];
        for (s, &m) in mu.iter().enumerate() {
            if m != 0.0 {
                out[(s & pi_mask) | (self.next_ff[s] << self.pi_bits)] += m;
            }
        }
        for k in 0..self.pi_bits {
            let (a, b) = (self.rise[k], self.fall[k]);
            let bit = 1 << k;
            for s in 0..out.len() {
                if s & bit == 0 {
                    let (x0, x1) = (out[s], out[s | bit]);
                    out[s] = x0 * (1.0 - a) + x1 * b;
                    out[s | bit] = x0 * a + x1 * (1.0 - b);
                }
            }
        }
        out
    }

    fn initial(&self, reset: &[bool]) -> Vec<f64> {
        let ff_state: usize = reset
            .iter()
            .enumerate()
            .map(|(k, &r)| usize::from(r) << k)
            .sum();
        let mut mu = vec![0.0; self.states()];
        for pis in 0..(1usize << self.pi_bits) {
            let mut p = 1.0;
            for k in 0..self.pi_bits {
                p *= if pis >> k & 1 == 1 {
                    self.stationary_p1[k]
                } else {
                    1.0 - self.stationary_p1[k]
                };
            }
            mu[pis | (ff_state << self.pi_bits)] = p;
        }
        mu
    }

    fn p1(&self, mu: &[f64], v: usize) -> f64 {
        mu.iter()
            .enumerate()
            .filter(|&(s, _)| self.value(v, s))
            .map(|(_, &m)| m)
            .sum()
    }

    /// P(value of `v` differs between this cycle and the next).
    fn change(&self, mu: &[f64], next: &[f64], v: usize) -> f64 {
        let zero: Vec<f64> = mu
            .iter()
            .enumerate()
            .map(|(s, &m)| if self.value(v, s) { 0.0 } else { m })
            .collect();
        let stepped = self.step(&zero);
        let mut acc = 0.0;
        for s in 0..mu.len() {
            if self.value(v, s) {
                acc += stepped[s];
            } else {
                acc += next[s] - stepped[s];
            }
        }
        acc
    }
}

fn build_chain(g: &CircuitGraph, w: &Workload) -> Result<Chain, SimError> {
    let plan = levelize(g)?;
    w.check(g)?;
    let pis: Vec<usize> = g.driven_pis().collect();
    let ffs: Vec<usize> = g.ffs().collect();
    if pis.len() + ffs.len() > MAX_STATE_BITS {
        return Err(SimError::TooLarge {
            pis: pis.len(),
            ffs: ffs.len(),
            max_pi: MAX_STATE_BITS - ffs.len().min(MAX_STATE_BITS),
            max_ff: MAX_STATE_BITS - pis.len().min(MAX_STATE_BITS),
        });
    }
    let mut rise = Vec::new();
    let mut fall = Vec::new();
    let mut stationary_p1 = Vec::new();
    for &pi in &pis {
        let st = w.get(pi).ok_or(SimError::MissingInput(pi))?;
        let (a, b) = markov_params(st.p1, st.ptr)?;
        rise.push(a);
        fall.push(b);
        stationary_p1.push(st.p1);
    }
    let bits = pis.len() + ffs.len();
    let n_states = 1usize << bits;
    let n_words = n_states.div_ceil(64);
    let full = |s: usize, k: usize| s >> k & 1 == 1;
    let mut vals = vec![vec![0u64; n_words]; g.len()];
    for (k, &pi) in pis.iter().enumerate() {
        for s in 0..n_states {
            if full(s, k) {
                vals[pi][s / 64] |= 1 << (s % 64);
            }
        }
    }
    for (k, &ff) in ffs.iter().enumerate() {
        for s in 0..n_states {
            if full(s, pis.len() + k) {
                vals[ff][s / 64] |= 1 << (s % 64);
            }
        }
    }
    let tail = if n_states % 64 == 0 {
        !0u64
    } else {
        (1u64 << (n_states % 64)) - 1
    };
    for level in &plan.levels {
        for &v in level {
            let fi = g.fanins(v);
            match g.kind(v) {
                NodeKind::And => {
                    let r: Vec<u64> = vals[fi[0]]
                        .iter()
                        .zip(&vals[fi[1]])
                        .map(|(a, b)| a & b)
                        .collect();
                    vals[v] = r;
                }
                NodeKind::Not => {
                    let mut r: Vec<u64> = vals[fi[0]].iter().map(|a| !a).collect();
                    if let Some(last) = r.last_mut() {
                        *last &= tail;
                    }
                    vals[v] = r;
                }
                _ => {}
            }
        }
    }
    let mut next_ff = vec![0usize; n_states];
    for (s, nf) in next_ff.iter_mut().enumerate() {
        for (k, &ff) in ffs.iter().enumerate() {
            let d = g.fanins(ff)[0];
            if (vals[d][s / 64] >> (s % 64)) & 1 == 1 {
                *nf |= 1 << k;
            }
        }
    }
    Ok(Chain {
        pi_bits: pis.len(),
        ff_bits: ffs.len(),
        rise,
        fall,
        stationary_p1,
        next_ff,
        vals,
    })
}

/// Exact per-node `p1` and `ptr` for circuits with at most
/// [`MAX_STATE_BITS`] driven PIs plus flip-flops.
pub fn exhaustive_stats(
    g: &CircuitGraph,
    w: &Workload,
    horizon: Horizon,
    reset: Option<bool>,
) -> Result<ExactStats, SimError> {
    let chain = build_chain(g, w)?;
    let reset_bits: Vec<bool> = g
        .ffs()
        .map(|f| reset.unwrap_or_else(|| g.reset_value(f)))
        .collect();
    let n = g.len();
    let mut p1 = vec![0.0; n];
    let mut ptr = vec![0.0; n];
    let mu0 = chain.initial(&reset_bits);
    match horizon {
        Horizon::Cycles(t) => {
            if t < 2 {
                return Err(SimError::Config("horizon must cover >= 2 cycles".into()));
            }
            // Both statistics are linear in the state distribution, so the
            // per-cycle distributions can be summed before evaluating them.
            let mut mu = mu0;
            let mut sum_tr = vec![0.0; mu.len()];
            for _ in 0..t - 1 {
                sum_tr.iter_mut().zip(&mu).for_each(|(a, m)| *a += m);
                mu = chain.step(&mu);
            }
            let sum_p1: Vec<f64> = sum_tr.iter().zip(&mu).map(|(a, m)| a + m).collect();
            let next = chain.step(&sum_tr);
            let per_node: Vec<(f64, f64)> = (0..n)
                .into_par_iter()
                .map(|v| {
                    (
                        chain.p1(&sum_p1, v) / t as f64,
                        chain.change(&sum_tr, &next, v) / (t - 1) as f64,
                    )
                })
                .collect();
            for (v, (a, b)) in per_node.into_iter().enumerate() {
                p1[v] = a;
                ptr[v] = b;
            }
        }
        Horizon::Stationary => {
            // Lazy iteration converges for periodic chains too.
            let mut pi = mu0;
            for _ in 0..STATIONARY_MAX_ITERS {
                let stepped = chain.step(&pi);
                let next: Vec<f64> = pi
                    .iter()
                    .zip(&stepped)
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
                pi = next;
                if diff < STATIONARY_TOL {
                    break;
                }
            }
            let next = chain.step(&pi);
            for v in 0..n {
                p1[v] = chain.p1(&pi, v);
                ptr[v] = chain.change(&pi, &next, v);
            }
        }
    }
    Ok(ExactStats { p1, ptr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::CircuitBuilder;
    use crate::simulate::tests::toggle_ff;

    #[test]
    fn and_gate_closed_form() {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let c = b.add_pi();
        let x = b.add_and(a, c);
        let g = b.build();
        let mut w = Workload::new();
        w.set(a, 0.3, 0.2);
        w.set(c, 0.6, 0.5);
        let s = exhaustive_stats(&g, &w, Horizon::Stationary, None).unwrap();
        assert!((s.p1[x] - 0.18).abs() < 1e-12);
        // P(x_t=1, x_{t+1}=0) doubled, with per-input joint probabilities.
        let (ra, fa) = markov_params(0.3, 0.2).unwrap();
        let (rc, fc) = markov_params(0.6, 0.5).unwrap();
        let stay = (0.3 * (1.0 - fa)) * (0.6 * (1.0 - fc));
        let _ = (ra, rc);
        let expected = 2.0 * (0.18 - stay);
        assert!((s.ptr[x] - expected).abs() < 1e-12, "{} vs {}", s.ptr[x], expected);
        let fin = exhaustive_stats(&g, &w, Horizon::Cycles(10), None).unwrap();
        assert!((fin.p1[x] - 0.18).abs() < 1e-12);
        assert!((fin.ptr[a] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn toggle_ff_exact() {
        let g = toggle_ff();
        let fin = exhaustive_stats(&g, &Workload::new(), Horizon::Cycles(100), None).unwrap();
        assert!((fin.p1[0] - 0.5).abs() < 1e-12);
        assert!((fin.ptr[0] - 1.0).abs() < 1e-12);
        let st = exhaustive_stats(&g, &Workload::new(), Horizon::Stationary, None).unwrap();
        assert!((st.p1[0] - 0.5).abs() < 1e-9);
        assert!((st.ptr[0] - 1.0).abs() < 1e-9);
        let odd = exhaustive_stats(&g, &Workload::new(), Horizon::Cycles(3), None).unwrap();
        assert!((odd.p1[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_state_bits() {
        let mut b = CircuitBuilder::new();
        let pis: Vec<_> = (0..21).map(|_| b.add_pi()).collect();
        b.add_and(pis[0], pis[1]);
        let g = b.build();
        let w = Workload::uniform(&g, 0.5, 0.5);
        assert!(matches!(
            exhaustive_stats(&g, &w, Horizon::Stationary, None),
            Err(SimError::TooLarge { .. })
        ));
    }
}
