use serde::{Deserialize, Serialize};

use super::power::{power_estimate, PowerConfig};
use super::reliability::FlipLabels;
use super::{DownstreamError, Result};
use crate::model::{evaluate, fit, EpochRecord, LossWeights, Model, ModelConfig, Sample, Targets, TaskPe, TrainConfig};
use crate::netgraph::{CircuitGraph, NodeKind};
use crate::rng::derive_seed;
use crate::simulate::{simulate, SimConfig, SimStats, Workload};
use crate::tensor::{AdamConfig, Scalar};

/// A sample supervised by simulated probabilities under one workload.
pub fn workload_sample<S: Scalar>(
    name: impl Into<String>,
    g: &CircuitGraph,
    w: &Workload,
    sim: &SimConfig,
    model: &ModelConfig,
) -> Result<(Sample<S>, SimStats)> {
    let stats = simulate(g, w, sim)?;
    let tg = Targets::probabilities(g, &stats.p1, &stats.ptr)?;
    let s = Sample::new(name, g.clone(), w, tg, model)?;
    Ok((s, stats))
}

/// Predicted transition probability of every node; primary inputs take
/// the workload's value.
pub fn predicted_activity<S: Scalar>(model: &Model<S>, s: &Sample<S>, w: &Workload) -> Result<Vec<f64>> {
    let p = model.predict_nodes(&s.graph, &s.plan, &s.emb)?;
    Ok((0..s.graph.len())
        .map(|v| match (s.graph.kind(v), w.get(v)) {
            (NodeKind::Pi, Some(st)) => st.ptr,
            (NodeKind::Pi, None) => 0.0,
            _ => p.tr[v],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadTuneConfig {
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub power: PowerConfig,
}

impl Default for WorkloadTuneConfig {
    fn default() -> Self {
        WorkloadTuneConfig {
            sim: SimConfig::default(),
            train: TrainConfig {
                epochs_phase1: 0,
                epochs_phase2: 20,
                weights: LossWeights {
                    rc: 0.0,
                    f: 0.0,
                    ffsim: 0.0,
                    rel: 0.0,
                    ..LossWeights::default()
                },
                ..TrainConfig::default()
            },
            power: PowerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadResult {
    pub index: usize,
    pub held_out: bool,
    /// Mean |predicted tr - simulated tr| over masked nodes.
    pub tr_pe: f64,
    pub power_true: f64,
    pub power_pred: f64,
    /// |P_pred - P_true| / P_true (absolute difference when P_true = 0).
    pub power_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub results: Vec<WorkloadResult>,
    pub train_power_error: f64,
    pub held_out_power_error: f64,
    pub train_tr_pe: f64,
    pub held_out_tr_pe: f64,
    pub history: Vec<EpochRecord>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Fine-tunes on `train` workloads of one circuit with probability
/// supervision, then compares predicted and simulated power on both the
/// training and the held-out workloads.
pub fn finetune_workloads<S: Scalar>(
    model: &mut Model<S>,
    g: &CircuitGraph,
    train: &[Workload],
    held_out: &[Workload],
    mask: &[bool],
    cfg: &WorkloadTuneConfig,
) -> Result<WorkloadReport> {
    if train.is_empty() {
        return Err(DownstreamError::Config("no training workloads".into()));
    }
    if mask.len() != g.len() {
        return Err(DownstreamError::Mismatch(format!("mask has {} entries for {} nodes", mask.len(), g.len())));
    }
    cfg.power.check()?;
    let all: Vec<(&Workload, bool)> = train
        .iter()
        .map(|w| (w, false))
        .chain(held_out.iter().map(|w| (w, true)))
        .collect();
    let mut samples = Vec::with_capacity(all.len());
    for (k, (w, _)) in all.iter().enumerate() {
        let sim = SimConfig {
            seed: derive_seed(cfg.sim.seed, k as u64),
            ..cfg.sim
        };
        samples.push(workload_sample::<S>(format!("w{k}"), g, w, &sim, &model.cfg)?);
    }
    let train_samples: Vec<Sample<S>> = samples[..train.len()].iter().map(|x| x.0.clone()).collect();
    let mut tc = cfg.train.clone();
    tc.model = model.cfg.clone();
    let history = fit(model, &train_samples, &tc)?;

    let mut results = Vec::with_capacity(all.len());
    for (k, ((w, held), (s, stats))) in all.iter().zip(&samples).enumerate() {
        let pred = predicted_activity(model, s, w)?;
        let tr_pe = mean((0..g.len()).filter(|&v| mask[v]).map(|v| (pred[v] - stats.ptr[v]).abs()));
        let power_true = power_estimate(&stats.ptr, &cfg.power, mask)?;
        let power_pred = power_estimate(&pred, &cfg.power, mask)?;
        let diff = (power_pred - power_true).abs();
        results.push(WorkloadResult {
            index: k,
            held_out: *held,
            tr_pe,
            power_true,
            power_pred,
            power_error: if power_true > 0.0 { diff / power_true } else { diff },
        });
    }
    let pick = |held: bool, f: fn(&WorkloadResult) -> f64| mean(results.iter().filter(|r| r.held_out == held).map(f));
    Ok(WorkloadReport {
        train_power_error: pick(false, |r| r.power_error),
        held_out_power_error: pick(true, |r| r.power_error),
        train_tr_pe: pick(false, |r| r.tr_pe),
        held_out_tr_pe: pick(true, |r| r.tr_pe),
        results,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReliabilityTuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Lighter momentum than the training default: with few steps the
    /// zero-initialized sigmoid head otherwise overshoots into saturation.
    pub adam: AdamConfig,
    pub seed: u64,
    /// Initializes the flip head when the model does not have one.
    pub head_seed: u64,
}

impl Default for ReliabilityTuneConfig {
    fn default() -> Self {
        ReliabilityTuneConfig {
            epochs: 50,
            lr: 1e-2,
            batch_size: 16,
            adam: AdamConfig {
                beta1: 0.5,
                beta2: 0.99,
                eps: 1e-8,
            },
            seed: 0,
            head_seed: 0,
        }
    }
}

/// A sample supervised only by flip probabilities.
pub fn reliability_sample<S: Scalar>(
    name: impl Into<String>,
    g: &CircuitGraph,
    w: &Workload,
    labels: &FlipLabels,
    model: &ModelConfig,
) -> Result<Sample<S>> {
    if labels.len() != g.len() {
        return Err(DownstreamError::Mismatch(format!(
            "{} flip labels for {} nodes",
            labels.len(),
            g.len()
        )));
    }
    let tg = Targets::default().with_flips(labels.pairs())?;
    Ok(Sample::new(name, g.clone(), w, tg, model)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub history: Vec<EpochRecord>,
    /// Mean |predicted - label| over both outputs of every node.
    pub avg_pe: f64,
    pub pe: TaskPe,
}

/// Adds the two-output flip head (if missing) and trains every parameter
/// with the L1 flip loss alone.
pub fn finetune_reliability<S: Scalar>(
    model: &mut Model<S>,
    samples: &[Sample<S>],
    cfg: &ReliabilityTuneConfig,
) -> Result<ReliabilityReport> {
    model.add_reliability_head(cfg.head_seed);
    let tc = TrainConfig {
        batch_size: cfg.batch_size,
        epochs_phase1: 0,
        epochs_phase2: cfg.epochs,
        lr: cfg.lr,
        weights: LossWeights {
            rc: 0.0,
            lg: 0.0,
            tr: 0.0,
            f: 0.0,
            ffsim: 0.0,
            rel: 1.0,
        },
        seed: cfg.seed,
        adam: cfg.adam,
        model: model.cfg.clone(),
        ..TrainConfig::default()
    };
    let history = fit(model, samples, &tc)?;
    let pe = evaluate(model, samples)?.pooled;
    Ok(ReliabilityReport {
        history,
        avg_pe: pe.rel.unwrap_or(0.0),
        pe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::downstream::reliability::{reliability_labels, FaultConfig};
    use crate::netgraph::CircuitBuilder;

    fn tiny() -> (CircuitGraph, Workload) {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let c = b.add_pi();
        let f = b.add_ff(None);
        let x = b.add_and(a, f);
        let y = b.add_not(x);
        let z = b.add_and(y, c);
        b.set_ff_input(f, z);
        let g = b.build();
        let w = Workload::uniform(&g, 0.5, 0.4);
        (g, w)
    }

    #[test]
    fn flip_head_starts_at_half_and_learns() {
        let (g, w) = tiny();
        let cfg = ModelConfig {
            dim: 8,
            hidden: 8,
            ..ModelConfig::default()
        };
        let mut m = Model::<f32>::new(cfg.clone()).unwrap();
        let zeros = FlipLabels {
            p01: vec![0.0; g.len()],
            p10: vec![0.0; g.len()],
            n0: vec![1; g.len()],
            n1: vec![1; g.len()],
        };
        let s = vec![reliability_sample::<f32>("t", &g, &w, &zeros, &cfg).unwrap()];
        let r = finetune_reliability(
            &mut m,
            &s,
            &ReliabilityTuneConfig {
                epochs: 5,
                lr: 1e-2,
                ..ReliabilityTuneConfig::default()
            },
        )
        .unwrap();
        assert!((r.history[0].loss.rel - 0.5).abs() < 1e-6);
        assert!(r.history[4].loss.rel < r.history[0].loss.rel);
    }

    #[test]
    fn reliability_overfit_smoke() {
        let (g, w) = tiny();
        let fc = FaultConfig {
            flip_prob: 0.02,
            n_patterns: 256,
            n_cycles: 50,
            ..FaultConfig::default()
        };
        let l = reliability_labels(&g, &w, &fc).unwrap();
        let cfg = ModelConfig {
            dim: 16,
            hidden: 16,
            ..ModelConfig::default()
        };
        let mut m = Model::<f32>::new(cfg.clone()).unwrap();
        let s = vec![reliability_sample::<f32>("t", &g, &w, &l, &cfg).unwrap()];
        let r = finetune_reliability(&mut m, &s, &ReliabilityTuneConfig::default()).unwrap();
        assert_eq!(r.history.len(), 50);
        assert!(r.avg_pe < 0.02, "{}", r.avg_pe);
    }

    #[test]
    fn identical_held_out_workload_matches_training() {
        let (g, w) = tiny();
        let mut m = Model::<f32>::new(ModelConfig {
            dim: 8,
            hidden: 8,
            ..ModelConfig::default()
        })
        .unwrap();
        let mut cfg = WorkloadTuneConfig::default();
        cfg.sim.n_patterns = 64;
        cfg.sim.n_cycles = 20;
        cfg.train.epochs_phase2 = 3;
        cfg.train.lr = 1e-3;
        let mask = vec![true; g.len()];
        let r = finetune_workloads(&mut m, &g, &[w.clone()], &[w.clone()], &mask, &cfg).unwrap();
        assert_eq!(r.results.len(), 2);
        // Same stimulus model, different simulation seed: only sampling
        // noise separates the two.
        assert!((r.train_power_error - r.held_out_power_error).abs() < 0.05);
        assert!((r.results[0].power_pred - r.results[1].power_pred).abs() < 1e-12);
    }
}
