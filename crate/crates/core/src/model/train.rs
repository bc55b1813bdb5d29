use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::heads::{LossBreakdown, LossWeights, Predictions, Targets};
use super::{init_embeddings, EmbeddingState, Model, ModelConfig, ModelError, Result};
use crate::netgraph::CircuitGraph;
use crate::rng::{derive_seed, rng_from, tags};
use crate::schedule::{levelize, PropagationPlan};
use crate::simulate::Workload;
use crate::tensor::{AdamConfig, Array, ParamId, Scalar, Tape, Var};

/// One training or evaluation circuit with its targets and initial
/// embeddings.
#[derive(Debug, Clone)]
pub struct Sample<S> {
    pub name: String,
    pub graph: CircuitGraph,
    pub plan: PropagationPlan,
    pub targets: Targets,
    pub emb: EmbeddingState<S>,
}

impl<S: Scalar> Sample<S> {
    pub fn new(
        name: impl Into<String>,
        graph: CircuitGraph,
        workload: &Workload,
        targets: Targets,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let plan = levelize(&graph)?;
        let emb = init_embeddings(&graph, workload, cfg.dim, cfg.embed_seed);
        Ok(Sample {
            name: name.into(),
            graph,
            plan,
            targets,
            emb,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub adam: AdamConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs_phase1: 40,
            epochs_phase2: 40,
            lr: 1e-4,
            weights: LossWeights::default(),
            seed: 0,
            adam: AdamConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(ModelError::Config("lr must be positive".into()));
        }
        self.weights.check()?;
        self.model.check()
    }

    /// Loss weights in effect at 1-based `epoch`.
    pub fn weights_at(&self, epoch: usize) -> LossWeights {
        let mut w = self.weights;
        if epoch <= self.epochs_phase1 {
            w.ffsim = 0.0;
        }
        w
    }
}

pub const TASKS: [&str; 6] = ["rc", "lg", "tr", "f", "ffsim", "rel"];

/// Running sums of absolute prediction errors, per task in [`TASKS`] order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskErrors {
    pub sum: [f64; 6],
    pub count: [usize; 6],
}

impl TaskErrors {
    fn push(&mut self, task: usize, t: &Tape<impl Scalar>, pred: Option<Var>, target: &[f64]) {
        let Some(p) = pred else { return };
        for (x, y) in t.value(p).data().iter().zip(target) {
            self.sum[task] += (Scalar::to_f64(*x) - y).abs();
            self.count[task] += 1;
        }
    }

    pub fn merge(&mut self, o: &TaskErrors) {
        for k in 0..TASKS.len() {
            self.sum[k] += o.sum[k];
            self.count[k] += o.count[k];
        }
    }

    pub fn pe(&self) -> TaskPe {
        let avg = |k: usize| (self.count[k] > 0).then(|| self.sum[k] / self.count[k] as f64);
        TaskPe {
            rc: avg(0),
            lg: avg(1),
            tr: avg(2),
            f: avg(3),
            ffsim: avg(4),
            rel: avg(5),
        }
    }
}

/// Average prediction error per task; `None` for tasks without targets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskPe {
    pub rc: Option<f64>,
    pub lg: Option<f64>,
    pub tr: Option<f64>,
    pub f: Option<f64>,
    pub ffsim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    /// Mean over circuits of the weighted loss terms.
    pub loss: LossBreakdown,
    pub pe: TaskPe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitReport {
    pub name: String,
    pub pe: TaskPe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_circuit: Vec<CircuitReport>,
    pub pooled: TaskPe,
}

fn errors<S: Scalar>(t: &Tape<S>, p: &Predictions, tg: &Targets) -> TaskErrors {
    let mut e = TaskErrors::default();
    e.push(0, t, p.rc, &tg.rc_labels);
    e.push(1, t, p.lg, &tg.p1);
    e.push(2, t, p.tr, &tg.ptr);
    e.push(3, t, p.f, &tg.f_dist);
    e.push(4, t, p.ffsim, &tg.ffsim_sim);
    let flips: Vec<f64> = tg.flips.iter().flat_map(|x| x.1).collect();
    e.push(5, t, p.rel, &flips);
    e
}

type ParamGrads<S> = Vec<(ParamId, Array<S>)>;

struct Pass<S> {
    loss: LossBreakdown,
    errors: TaskErrors,
    grads: Option<ParamGrads<S>>,
}

fn check_sample<S: Scalar>(model: &Model<S>, s: &Sample<S>) -> Result<()> {
    if s.emb.dim() != model.cfg.dim || s.emb.len() != s.graph.len() {
        return Err(ModelError::Mismatch(format!(
            "sample {} has {}x{} embeddings, model expects dim {}",
            s.name,
            s.emb.len(),
            s.emb.dim(),
            model.cfg.dim
        )));
    }
    Ok(())
}

fn pass<S: Scalar>(model: &Model<S>, s: &Sample<S>, w: &LossWeights, grads: bool) -> Result<Pass<S>> {
    let mut t = Tape::new();
    let fw = model.forward(&mut t, &s.graph, &s.plan, &s.emb)?;
    let p = model.predict(&mut t, &fw, &s.targets)?;
    let (loss, br) = model.loss(&mut t, &p, &s.targets, w)?;
    let errors = errors(&t, &p, &s.targets);
    let grads = if grads { Some(t.param_grads(loss)?) } else { None };
    Ok(Pass { loss: br, errors, grads })
}

/// Trains a fresh model built from `cfg.model`.
pub fn train<S: Scalar>(samples: &[Sample<S>], cfg: &TrainConfig) -> Result<(Model<S>, Vec<EpochRecord>)> {
    let mut model = Model::new(cfg.model.clone())?;
    let history = fit(&mut model, samples, cfg)?;
    Ok((model, history))
}

/// Continues training `model`. Each epoch shuffles the circuits, splits
/// them into batches and takes one Adam step per batch on the mean
/// gradient. Per-circuit gradients are computed in parallel and summed in
/// batch order. Phase 1 covers the first `epochs_phase1` epochs and drops
/// the FF similarity term.
pub fn fit<S: Scalar>(model: &mut Model<S>, samples: &[Sample<S>], cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
    fit_with(model, samples, cfg, |_| {})
}

/// [`fit`], calling `on_epoch` after every epoch.
pub fn fit_with<S: Scalar>(
    model: &mut Model<S>,
    samples: &[Sample<S>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.check()?;
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    for s in samples {
        check_sample(model, s)?;
    }
    let mut rng = rng_from(derive_seed(cfg.seed, tags::SHUFFLE));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let epochs = cfg.epochs_phase1 + cfg.epochs_phase2;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let w = cfg.weights_at(epoch);
        order.shuffle(&mut rng);
        let mut loss = LossBreakdown::default();
        let mut errs = TaskErrors::default();
        for batch in order.chunks(cfg.batch_size) {
            let m: &Model<S> = model;
            let passes: Vec<Pass<S>> = batch
                .par_iter()
                .map(|&i| pass(m, &samples[i], &w, true))
                .collect::<Result<_>>()?;
            model.store.zero_grads();
            for p in &passes {
                loss.add(&p.loss);
                errs.merge(&p.errors);
                for (id, g) in p.grads.iter().flatten() {
                    model.store.accumulate_grad(*id, g);
                }
            }
            model.store.scale_grads(S::from_f64(1.0 / batch.len() as f64));
            model.store.adam_step(cfg.lr, &cfg.adam);
        }
        loss.scale(1.0 / samples.len() as f64);
        let rec = EpochRecord {
            epoch,
            phase: if epoch <= cfg.epochs_phase1 { 1 } else { 2 },
            loss,
            pe: errs.pe(),
        };
        log::debug!("epoch {epoch} phase {} loss {:.5}", rec.phase, rec.loss.total);
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(history)
}

/// Average prediction error per task, per circuit and pooled over every
/// labeled node and pair.
pub fn evaluate<S: Scalar>(model: &Model<S>, samples: &[Sample<S>]) -> Result<EvalReport> {
    for s in samples {
        check_sample(model, s)?;
    }
    let w = LossWeights::default();
    let passes: Vec<(String, TaskErrors)> = samples
        .par_iter()
        .map(|s| pass(model, s, &w, false).map(|p| (s.name.clone(), p.errors)))
        .collect::<Result<_>>()?;
    let mut pooled = TaskErrors::default();
    let mut per_circuit = Vec::with_capacity(passes.len());
    for (name, e) in passes {
        pooled.merge(&e);
        per_circuit.push(CircuitReport { name, pe: e.pe() });
    }
    Ok(EvalReport {
        per_circuit,
        pooled: pooled.pe(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::CircuitBuilder;
    use crate::supervise::{FfPair, LabelSet, RcPair};

    fn circuit() -> (CircuitGraph, Workload, LabelSet) {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let c = b.add_pi();
        let f1 = b.add_ff(None);
        let f2 = b.add_ff(None);
        let x = b.add_and(a, f1);
        let y = b.add_and(c, f2);
        let nx = b.add_not(x);
        let z = b.add_and(nx, y);
        b.set_ff_input(f1, nx);
        b.set_ff_input(f2, z);
        let g = b.build();
        let n = g.len();
        let w = Workload::uniform(&g, 0.5, 0.5);
        let l = LabelSet {
            p1: (0..n).map(|v| 0.1 + 0.1 * v as f64).collect(),
            ptr: (0..n).map(|v| 0.7 - 0.05 * v as f64).collect(),
            rc_pairs: vec![RcPair { a: nx, b: y, gate: z, label: 1 }],
            f_pairs: vec![],
            ffsim_pairs: vec![FfPair { i: f1, j: f2, sim: 0.8 }],
        };
        (g, w, l)
    }

    fn small() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            epochs_phase1: 3,
            epochs_phase2: 2,
            lr: 1e-2,
            model: ModelConfig {
                dim: 6,
                hidden: 6,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn samples(cfg: &TrainConfig) -> Vec<Sample<f64>> {
        let (g, w, l) = circuit();
        let tg = Targets::from_labels(&g, &l).unwrap();
        (0..3)
            .map(|k| Sample::new(format!("c{k}"), g.clone(), &w, tg.clone(), &cfg.model).unwrap())
            .collect()
    }

    #[test]
    fn phases_and_determinism() {
        let cfg = small();
        let s = samples(&cfg);
        let (m1, h1) = train(&s, &cfg).unwrap();
        let (m2, h2) = train(&s, &cfg).unwrap();
        assert_eq!(m1.store, m2.store);
        assert_eq!(h1, h2);
        let first = h1.iter().find(|r| r.loss.ffsim > 0.0).unwrap();
        assert_eq!(first.epoch, cfg.epochs_phase1 + 1);
        assert!(h1[..3].iter().all(|r| r.phase == 1 && r.loss.ffsim == 0.0));
        assert!(h1[..3].iter().all(|r| r.pe.ffsim.is_some()));
    }

    #[test]
    fn frozen_sources_survive_training() {
        let cfg = small();
        let s = samples(&cfg);
        let (m, _) = train(&s, &cfg).unwrap();
        let (e, _) = m.embed(&s[0].graph, &s[0].plan, &s[0].emb).unwrap();
        for v in 0..s[0].graph.len() {
            if s[0].graph.is_source(v) {
                assert_eq!(e.hs.row(v), s[0].emb.hs.row(v));
            }
            if s[0].graph.kind(v) == crate::netgraph::NodeKind::Pi {
                assert_eq!(e.hf.row(v), s[0].emb.hf.row(v));
                assert_eq!(e.hseq.row(v), s[0].emb.hseq.row(v));
            }
        }
    }

    #[test]
    fn gradient_reduction_is_order_free() {
        // A batch of identical circuits gives the single-circuit gradient.
        let cfg = small();
        let s = samples(&cfg);
        let m = Model::<f64>::new(cfg.model.clone()).unwrap();
        let one = pass(&m, &s[0], &cfg.weights, true).unwrap().grads.unwrap();
        let mut store = m.store.clone();
        for p in &s {
            for (id, g) in pass(&m, p, &cfg.weights, true).unwrap().grads.unwrap() {
                store.accumulate_grad(id, &g);
            }
        }
        store.scale_grads(1.0 / 3.0);
        for (id, g) in one {
            for (a, b) in store.grad(id).data().iter().zip(g.data()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn evaluate_matches_definition() {
        let cfg = small();
        let s = samples(&cfg);
        let m = Model::<f64>::new(cfg.model.clone()).unwrap();
        let r = evaluate(&m, &s).unwrap();
        let p = m.predict_nodes(&s[0].graph, &s[0].plan, &s[0].emb).unwrap();
        let tg = &s[0].targets;
        let lg: f64 = tg.nodes.iter().zip(&tg.p1).map(|(&v, y)| (p.lg[v] - y).abs()).sum::<f64>() / tg.nodes.len() as f64;
        assert!((r.per_circuit[0].pe.lg.unwrap() - lg).abs() < 1e-12);
        assert!((r.pooled.lg.unwrap() - lg).abs() < 1e-12);
        assert_eq!(r.pooled.f, None);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let cfg = small();
        assert!(matches!(train::<f64>(&[], &cfg), Err(ModelError::EmptyDataset)));
    }
}
