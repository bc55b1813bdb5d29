use serde::{Deserialize, Serialize};

use super::{DownstreamError, Result};
use crate::netgraph::{CircuitGraph, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerConfig {
    /// Per-gate load capacitance.
    pub capacitance: f64,
    pub vdd: f64,
    pub frequency_scale: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            capacitance: 1.0,
            vdd: 1.0,
            frequency_scale: 1.0,
        }
    }
}

impl PowerConfig {
    pub fn check(&self) -> Result<()> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        if ok(self.capacitance) && ok(self.vdd) && ok(self.frequency_scale) {
            Ok(())
        } else {
            Err(DownstreamError::Config("power parameters must be positive".into()))
        }
    }
}

/// `P = C * Vdd^2 * mean(tr over mask) * frequency_scale / 2`.
pub fn power_estimate(tr: &[f64], pc: &PowerConfig, mask: &[bool]) -> Result<f64> {
    pc.check()?;
    if tr.len() != mask.len() {
        return Err(DownstreamError::Mismatch(format!(
            "{} activities for a mask of {}",
            tr.len(),
            mask.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, (&x, &m)) in tr.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(DownstreamError::BadActivity { node: v, value: x });
        }
        sum += x;
        count += 1;
    }
    if count == 0 {
        return Err(DownstreamError::EmptyMask);
    }
    let avg = sum / count as f64;
    Ok(0.5 * pc.capacitance * pc.vdd * pc.vdd * avg * pc.frequency_scale)
}

/// Outputs of gates that exist in the source netlist (lowering helpers and
/// primary inputs excluded).
pub fn original_gate_mask(g: &CircuitGraph) -> Vec<bool> {
    (0..g.len())
        .map(|v| g.kind(v) != NodeKind::Pi && g.names().is_original(v))
        .collect()
}

/// The BENCH-derived mask when the graph carries source names, every node
/// otherwise.
pub fn default_power_mask(g: &CircuitGraph) -> Vec<bool> {
    let m = original_gate_mask(g);
    if m.iter().any(|&x| x) {
        m
    } else {
        vec![true; g.len()]
    }
}
