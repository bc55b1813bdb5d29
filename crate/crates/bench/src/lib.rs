//! Shared fixtures for the benchmarks in `benches/`.

use seqlearn_core::netgraph::{generate, GenSpec};
use seqlearn_core::CircuitGraph;

/// A generated circuit of roughly `n` nodes with the corpus gate mix.
pub fn circuit(n: usize, seed: u64) -> CircuitGraph {
    let spec = GenSpec {
        n_pi: (n * 12 / 100).max(2),
        n_ff: (n * 8 / 100).max(1),
        n_not: n * 30 / 100,
        n_and: n * 50 / 100,
        seed,
        feedback_prob: 0.5,
    };
    generate(&spec).expect("valid spec").0
}
