//! Disentangled three-space graph model.
//!
//! Every node carries a structure vector `hs`, a function vector `hf` and a
//! sequential vector `hseq`. A forward sweep follows the propagation plan
//! level by level; each space aggregates its predecessors with attention and
//! folds the message into the node's state with a per-kind GRU. Cyclic
//! regions are re-swept until their embeddings settle, and an optional
//! reverse layer runs the same update over fanouts.

mod embed;
mod forward;
mod heads;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::NodeKind;
use crate::rng::{derive_seed, rng_from, tags};
use crate::schedule::ScheduleError;
use crate::tensor::nn::{Attention, Gru, Mlp3};
use crate::tensor::{read_checkpoint, write_checkpoint, Array, CheckpointError, ParamStore, Scalar, TensorError};

pub use embed::{init_embeddings, EmbeddingState};
pub use forward::{Diagnostics, Forward, RegionDiagnostics};
pub use heads::{LossBreakdown, LossWeights, NodePredictions, Predictions, Targets};
pub use train::{
    evaluate, fit, fit_with, train, CircuitReport, EpochRecord, EvalReport, Sample, TaskErrors, TaskPe, TrainConfig, TASKS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("label {what} = {value} is outside [0, 1]")]
    BadLabel { what: String, value: f64 },
    #[error("{0}")]
    Mismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Batching {
    /// All nodes of one kind in one level are updated together.
    Level,
    /// One node at a time; same results, kept for verification.
    Node,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    /// Hidden width of the regression heads.
    pub hidden: usize,
    pub reverse_layer: bool,
    pub cycle_tol: f64,
    pub cycle_max_iters: usize,
    pub batching: Batching,
    /// Adds the two-output flip-probability head.
    pub reliability_head: bool,
    pub param_seed: u64,
    /// Seed of the initial per-circuit embeddings.
    pub embed_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 128,
            hidden: 128,
            reverse_layer: true,
            cycle_tol: 1e-3,
            cycle_max_iters: 3,
            batching: Batching::Level,
            reliability_head: false,
            param_seed: 0,
            embed_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 {
            return Err(ModelError::Config("dim and hidden must be positive".into()));
        }
        if !(self.cycle_tol >= 0.0) {
            return Err(ModelError::Config("cycle_tol must be >= 0".into()));
        }
        Ok(())
    }
}

pub(crate) const SPACES: [&str; 3] = ["hs", "hf", "hseq"];

pub(crate) fn kind_slot(k: NodeKind) -> Option<usize> {
    match k {
        NodeKind::And => Some(0),
        NodeKind::Not => Some(1),
        NodeKind::Ff => Some(2),
        NodeKind::Pi => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SpaceLayer {
    pub attn: Attention,
    pub gru: Gru,
}

/// Aggregators of one propagation direction, indexed `[space][kind]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Direction {
    pub layers: [[Option<SpaceLayer>; 3]; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layers {
    pub fwd: Direction,
    pub rev: Option<Direction>,
    pub rc: Mlp3,
    pub lg: Mlp3,
    pub tr: Mlp3,
    pub rel: Option<Mlp3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub cfg: ModelConfig,
    pub store: ParamStore<S>,
    pub(crate) layers: Layers,
}

fn direction<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, dim: usize, rng: &mut crate::rng::Rng) -> Direction {
    let mut layers = [[None; 3]; 3];
    let kinds = ["and", "not", "ff"];
    for (s, space) in SPACES.iter().enumerate() {
        let feat = dim * (s + 1);
        for (k, kind) in kinds.iter().enumerate() {
            // FFs keep their structure vector.
            if s == 0 && k == 2 {
                continue;
            }
            let name = format!("{prefix}.{space}.{kind}");
            layers[s][k] = Some(SpaceLayer {
                attn: Attention::new(store, &format!("{name}.attn"), dim, feat, rng),
                gru: Gru::new(store, &format!("{name}.gru"), feat, dim, rng),
            });
        }
    }
    Direction { layers }
}

impl<S: Scalar> Model<S> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.check()?;
        let mut rng = rng_from(derive_seed(cfg.param_seed, tags::PARAM_INIT));
        let mut store = ParamStore::new();
        let d = cfg.dim;
        let fwd = direction(&mut store, "fwd", d, &mut rng);
        let rev = cfg.reverse_layer.then(|| direction(&mut store, "rev", d, &mut rng));
        let rc = Mlp3::new(&mut store, "head.rc", 2 * d, cfg.hidden, 1, &mut rng);
        let lg = Mlp3::new(&mut store, "head.lg", d, cfg.hidden, 1, &mut rng);
        let tr = Mlp3::new(&mut store, "head.tr", d, cfg.hidden, 1, &mut rng);
        let rel = cfg.reliability_head.then(|| new_rel_head(&mut store, &cfg, &mut rng));
        Ok(Model {
            cfg,
            store,
            layers: Layers { fwd, rev, rc, lg, tr, rel },
        })
    }

    /// Registers the flip-probability head (final layer zeroed) if absent.
    pub fn add_reliability_head(&mut self, seed: u64) {
        if self.layers.rel.is_some() {
            return;
        }
        let mut rng = rng_from(derive_seed(seed, tags::PARAM_INIT));
        self.layers.rel = Some(new_rel_head(&mut self.store, &self.cfg, &mut rng));
        self.cfg.reliability_head = true;
    }

    pub fn has_reliability_head(&self) -> bool {
        self.layers.rel.is_some()
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            layers: self.layers.clone(),
        }
    }
}

impl<S: Scalar> Model<S> {
    /// Writes the parameters with `{"model": cfg}` merged into `meta`.
    pub fn save<W: std::io::Write>(&self, meta: serde_json::Value, out: W) -> std::result::Result<(), CheckpointError> {
        let mut meta = match meta {
            serde_json::Value::Object(m) => m,
            serde_json::Value::Null => serde_json::Map::new(),
            other => {
                let mut m = serde_json::Map::new();
                m.insert("extra".into(), other);
                m
            }
        };
        meta.insert("model".into(), serde_json::to_value(&self.cfg)?);
        write_checkpoint(&self.store, serde_json::Value::Object(meta), out)
    }

    /// Rebuilds a model from a checkpoint written by [`Model::save`] and
    /// returns it with the checkpoint's metadata.
    pub fn load<R: std::io::Read>(r: R) -> std::result::Result<(Self, serde_json::Value), CheckpointError> {
        let ck = read_checkpoint(r)?;
        let cfg: ModelConfig = serde_json::from_value(ck.meta.get("model").cloned().unwrap_or_default())?;
        let mut m = Model::new(cfg).map_err(|e| CheckpointError::Tensor {
            name: "model".into(),
            msg: e.to_string(),
        })?;
        ck.load_into(&mut m.store)?;
        Ok((m, ck.meta))
    }
}

fn new_rel_head<S: Scalar>(store: &mut ParamStore<S>, cfg: &ModelConfig, rng: &mut crate::rng::Rng) -> Mlp3 {
    let m = Mlp3::new(store, "head.rel", 3 * cfg.dim, cfg.hidden, 2, rng);
    let (r, c) = store.value(m.layers[2].w).shape();
    *store.value_mut(m.layers[2].w) = Array::zeros(r, c);
    m
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;
    use crate::netgraph::{CircuitBuilder, CircuitGraph};
    use crate::schedule::levelize;
    use crate::simulate::Workload;
    use crate::supervise::{FPair, FfPair, LabelSet, RcPair};
    use crate::tensor::tests::check_params;
    use crate::tensor::Tape;

    /// Ten nodes: two PIs, two FFs in a feedback loop, six gates.
    fn ten() -> (CircuitGraph, LabelSet) {
        let mut b = CircuitBuilder::new();
        let a = b.add_pi();
        let c = b.add_pi();
        let f1 = b.add_ff(None);
        let f2 = b.add_ff(None);
        let x = b.add_and(a, f1);
        let nx = b.add_not(x);
        let y = b.add_and(nx, f2);
        let ny = b.add_not(y);
        let z = b.add_and(c, ny);
        let u = b.add_and(z, x);
        b.set_ff_input(f1, ny);
        b.set_ff_input(f2, u);
        let g = b.build();
        assert_eq!(g.len(), 10);
        let n = g.len();
        let l = LabelSet {
            p1: (0..n).map(|v| (v as f64 * 0.37).fract()).collect(),
            ptr: (0..n).map(|v| (v as f64 * 0.61).fract() * 0.5).collect(),
            rc_pairs: vec![RcPair { a: c, b: ny, gate: z, label: 1 }, RcPair { a: z, b: x, gate: u, label: 0 }],
            f_pairs: vec![FPair { i: x, j: y, distance: 0.25 }, FPair { i: z, j: u, distance: 0.6 }],
            ffsim_pairs: vec![FfPair { i: f1, j: f2, sim: 0.3 }],
        };
        (g, l)
    }

    fn loss_of<S: Scalar>(m: &Model<S>, t: &mut Tape<S>, g: &CircuitGraph, tg: &Targets, emb: &EmbeddingState<S>) -> crate::tensor::Var {
        let plan = levelize(g).unwrap();
        let fw = m.forward(t, g, &plan, emb).unwrap();
        let p = m.predict(t, &fw, tg).unwrap();
        m.loss(t, &p, tg, &LossWeights::default()).unwrap().0
    }

    fn setup() -> (Model<f64>, CircuitGraph, Targets, EmbeddingState<f64>) {
        let (g, l) = ten();
        let cfg = ModelConfig {
            dim: 3,
            hidden: 4,
            cycle_tol: 0.0,
            cycle_max_iters: 2,
            reliability_head: true,
            param_seed: 5,
            ..ModelConfig::default()
        };
        let mut m = Model::<f64>::new(cfg).unwrap();
        // Give the zeroed flip-head layer some weight so its inputs see a gradient.
        let id = m.store.id("head.rel.l2.w").unwrap();
        let mut rng = rng_from(9);
        m.store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
        // Zero biases put ReLU inputs exactly on the kink; move off it.
        for id in m.store.ids().collect::<Vec<_>>() {
            if m.store.name(id).ends_with(".b") {
                m.store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = rng.random_range(-0.3..0.3));
            }
        }
        let flips = (0..g.len()).map(|v| (v, [0.1 * (v % 3) as f64, 0.05 * (v % 4) as f64])).collect();
        let tg = Targets::from_labels(&g, &l).unwrap().with_flips(flips).unwrap();
        let emb = init_embeddings(&g, &Workload::uniform(&g, 0.4, 0.3), 3, 2);
        (m, g, tg, emb)
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let (m, g, tg, emb) = setup();
        let mut store = m.store.clone();
        let layers = m.layers.clone();
        let cfg = m.cfg.clone();
        check_params(
            &mut store,
            |t, s| {
                let m = Model { cfg: cfg.clone(), store: s.clone(), layers: layers.clone() };
                loss_of(&m, t, &g, &tg, &emb)
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn single_precision_gradient_tracks_double() {
        let (m, g, tg, _) = setup();
        let m32: Model<f32> = m.cast();
        let emb32 = init_embeddings::<f32>(&g, &Workload::uniform(&g, 0.4, 0.3), 3, 2);
        let emb64 = init_embeddings::<f64>(&g, &Workload::uniform(&g, 0.4, 0.3), 3, 2);
        let mut t64 = Tape::new();
        let l64 = loss_of(&m, &mut t64, &g, &tg, &emb64);
        let g64 = t64.param_grads(l64).unwrap();
        let mut t32 = Tape::new();
        let l32 = loss_of(&m32, &mut t32, &g, &tg, &emb32);
        let g32 = t32.param_grads(l32).unwrap();
        assert!((t64.value(l64).item() - f64::from(t32.value(l32).item())).abs() < 1e-4);
        assert_eq!(g64.len(), g32.len());
        for ((i, a), (j, b)) in g64.iter().zip(&g32) {
            assert_eq!(i, j);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - f64::from(*y)).abs() < 1e-3 * x.abs().max(1.0), "{}", m.store.name(*i));
            }
        }
    }

    #[test]
    fn checkpoint_restores_model() {
        let (m, g, tg, emb) = setup();
        let m32: Model<f32> = m.cast();
        let mut buf = Vec::new();
        m32.save(serde_json::json!({"note": 1}), &mut buf).unwrap();
        let (back, meta) = Model::<f32>::load(&buf[..]).unwrap();
        assert_eq!(meta["note"], 1);
        assert_eq!(back.cfg, m32.cfg);
        assert_eq!(back.store.n_scalars(), m32.store.n_scalars());
        for ((a, x), (b, y)) in back.store.iter().zip(m32.store.iter()) {
            assert_eq!((a, x), (b, y));
        }
        let emb32 = init_embeddings::<f32>(&g, &Workload::uniform(&g, 0.4, 0.3), 3, 2);
        let (mut t1, mut t2) = (Tape::new(), Tape::new());
        let l1 = loss_of(&back, &mut t1, &g, &tg, &emb32);
        let l2 = loss_of(&m32, &mut t2, &g, &tg, &emb32);
        assert_eq!(t1.value(l1).item(), t2.value(l2).item());
        let _ = emb;
    }

    #[test]
    fn function_loss_reaches_structure_aggregators() {
        let (m, g, mut tg, emb) = setup();
        tg.rc.clear();
        tg.rc_labels.clear();
        tg.f.clear();
        tg.f_dist.clear();
        let mut t = Tape::new();
        let l = loss_of(&m, &mut t, &g, &tg, &emb);
        let grads = t.param_grads(l).unwrap();
        let hs_grad: f64 = grads
            .iter()
            .filter(|(id, _)| m.store.name(*id).starts_with("fwd.hs."))
            .flat_map(|(_, a)| a.data().iter().map(|x| x.abs()))
            .sum();
        assert!(hs_grad > 0.0);
        let plan = levelize(&g).unwrap();
        let (e, _) = m.embed(&g, &plan, &emb).unwrap();
        for v in (0..g.len()).filter(|&v| g.is_source(v)) {
            assert_eq!(e.hs.row(v), emb.hs.row(v));
        }
    }
}
