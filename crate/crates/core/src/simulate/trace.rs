use std::io::{self, Read, Write};

use crate::netgraph::NodeId;

pub const TRACE_MAGIC: [u8; 8] = *b"SQLTRC01";

/// Per-flip-flop state bits for every pattern and cycle.
///
/// Layout is `[ff][cycle][word]` where word `w` packs patterns `64w..64w+63`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FfTraces {
    pub ffs: Vec<NodeId>,
    pub n_patterns: usize,
    pub n_cycles: usize,
    words: Vec<u64>,
}

impl FfTraces {
    pub fn new(ffs: Vec<NodeId>, n_patterns: usize, n_cycles: usize) -> Self {
        let wpc = n_patterns.div_ceil(64);
        FfTraces {
            words: vec![0; ffs.len() * n_cycles * wpc],
            ffs,
            n_patterns,
            n_cycles,
        }
    }

    fn words_per_cycle(&self) -> usize {
        self.n_patterns.div_ceil(64)
    }

    fn index(&self, k: usize, t: usize, word: usize) -> usize {
        (k * self.n_cycles + t) * self.words_per_cycle() + word
    }

    pub(crate) fn fill_block(&mut self, first_pattern: usize, ff_words: &[Vec<u64>]) {
        let word = first_pattern / 64;
        for (k, cycles) in ff_words.iter().enumerate() {
            for (t, &w) in cycles.iter().enumerate() {
                let i = self.index(k, t, word);
                self.words[i] = w;
            }
        }
    }

    /// State of the `k`-th flip-flop (position in `ffs`) for one pattern and cycle.
    pub fn get(&self, k: usize, pattern: usize, t: usize) -> bool {
        (self.words[self.index(k, t, pattern / 64)] >> (pattern % 64)) & 1 == 1
    }

    pub fn set(&mut self, k: usize, pattern: usize, t: usize, value: bool) {
        let i = self.index(k, t, pattern / 64);
        let bit = 1u64 << (pattern % 64);
        if value {
            self.words[i] |= bit;
        } else {
            self.words[i] &= !bit;
        }
    }

    /// Packed word of 64 patterns for one flip-flop and cycle.
    pub fn word(&self, k: usize, t: usize, word: usize) -> u64 {
        self.words[self.index(k, t, word)]
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_cycle()
    }
}

/// Writes the header (magic, then `n_ff`, `n_patterns`, `n_cycles` as u64 LE),
/// the flip-flop ids as u64 LE, then every packed word as u64 LE in
/// `[ff][cycle][word]` order.
pub fn write_traces<W: Write>(tr: &FfTraces, mut out: W) -> io::Result<()> {
    out.write_all(&TRACE_MAGIC)?;
    for x in [tr.ffs.len(), tr.n_patterns, tr.n_cycles] {
        out.write_all(&(x as u64).to_le_bytes())?;
    }
    for &f in &tr.ffs {
        out.write_all(&(f as u64).to_le_bytes())?;
    }
    for &w in &tr.words {
        out.write_all(&w.to_le_bytes())?;
    }
    out.flush()
}

pub fn read_traces<R: Read>(mut r: R) -> io::Result<FfTraces> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != TRACE_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "not a trace file"));
    }
    let mut next = || -> io::Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let n_ff = next()? as usize;
    let n_patterns = next()? as usize;
    let n_cycles = next()? as usize;
    let ffs = (0..n_ff)
        .map(|_| next().map(|x| x as usize))
        .collect::<io::Result<Vec<_>>>()?;
    let mut tr = FfTraces::new(ffs, n_patterns, n_cycles);
    for w in tr.words.iter_mut() {
        *w = next()?;
    }
    Ok(tr)
}
