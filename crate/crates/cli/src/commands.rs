use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use seqlearn_core::downstream::{
    default_power_mask, finetune_reliability, power_estimate, predicted_activity, reliability_labels,
    reliability_sample, write_saif, SaifDocument,
};
use seqlearn_core::model::{evaluate, fit_with, EpochRecord, Model, Sample, Targets};
use seqlearn_core::netgraph::{corpus_spec, emit_aiger, generate, parse_aiger, parse_bench, validate};
use seqlearn_core::rng::{derive_seed, tags};
use seqlearn_core::supervise::{build_labelset, read_dataset, write_dataset, DatasetError, DatasetRecord};
use seqlearn_core::{levelize, simulate, CircuitGraph, NodeKind, Workload};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{data, CliError, Context, Result};
use crate::manifest::write_manifest;
use crate::{CircuitArgs, Command, SimArgs};

pub struct Run<'a> {
    pub cfg: RunConfig,
    pub args: &'a [String],
    pub json_logs: bool,
}

impl Run<'_> {
    fn manifest(&self, primary: &Path, command: &str, inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
        let p = write_manifest(primary, command, self.args, &self.cfg, inputs, outputs)?;
        log::info!("wrote {}", p.display());
        Ok(())
    }

    fn epoch(&self, r: &EpochRecord) {
        if self.json_logs {
            let line = json!({"event": "epoch", "epoch": r.epoch, "phase": r.phase, "loss": r.loss, "pe": r.pe});
            log::info!(target: "metrics", "{line}");
        } else {
            let pe = serde_json::to_string(&r.pe).unwrap_or_default();
            log::info!("epoch {} phase {} loss {:.6} pe {pe}", r.epoch, r.phase, r.loss.total);
        }
    }
}

/// Loads a netlist, choosing the reader by flag or extension.
pub fn read_circuit(path: &Path, bench: bool) -> Result<CircuitGraph> {
    let text = fs::read_to_string(path).at(path)?;
    let g = if bench { parse_bench(&text) } else { parse_aiger(&text) }.map_err(|e| {
        CliError::Data(format!("{}:{}: {}", path.display(), e.line, e.message))
    })?;
    let bad = validate(&g);
    if let Some(v) = bad.first() {
        return Err(data(path, format!("invalid netlist ({} violations), first: {v}", bad.len())));
    }
    Ok(g)
}

fn is_bench(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("bench"))
}

impl CircuitArgs {
    fn path(&self) -> &Path {
        self.aig.as_deref().or(self.bench.as_deref()).expect("clap enforces one circuit")
    }

    fn load(&self) -> Result<(CircuitGraph, String)> {
        let p = self.path();
        let g = read_circuit(p, self.bench.is_some())?;
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "top".into());
        Ok((g, name))
    }
}

fn read_workload(path: Option<&Path>, g: &CircuitGraph) -> Result<Workload> {
    let Some(p) = path else {
        return Ok(Workload::uniform(g, 0.5, 0.5));
    };
    let text = fs::read_to_string(p).at(p)?;
    let w: Workload = serde_json::from_str(&text).map_err(|e| {
        CliError::Data(format!("{}:{}:{}: {e}", p.display(), e.line(), e.column()))
    })?;
    w.check(g).at(p)?;
    Ok(w)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    Ok(BufWriter::new(File::create(path).at(path)?))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, v).at(path)?;
    f.write_all(b"\n").at(path)?;
    f.flush().at(path)
}

fn load_model(path: &Path) -> Result<(Model<f32>, serde_json::Value)> {
    let f = File::open(path).at(path)?;
    Model::load(BufReader::new(f)).at(path)
}

fn apply_sim(cfg: &mut seqlearn_core::SimConfig, a: &SimArgs) {
    if let Some(n) = a.patterns {
        cfg.n_patterns = n;
    }
    if let Some(n) = a.cycles {
        cfg.n_cycles = n;
    }
}

pub fn run(cmd: &Command, r: &mut Run) -> Result<()> {
    match cmd {
        Command::Gen { n, out } => gen(r, *n, out),
        Command::Sim {
            circuit,
            workload,
            sim,
            out,
            saif,
            traces,
        } => sim_cmd(r, circuit, workload.as_deref(), sim, out, saif.as_deref(), traces.as_deref()),
        Command::Label { corpus, out, sim } => label(r, corpus, out, sim),
        Command::Train {
            dataset,
            out,
            history,
            hp,
        } => {
            hp.apply(&mut r.cfg);
            train(r, dataset, out, history.as_deref())
        }
        Command::Eval { dataset, model, out } => eval(r, dataset, model, out),
        Command::Power {
            circuit,
            workload,
            sim,
            model,
            saif,
            out,
        } => power(r, circuit, workload.as_deref(), sim, model.as_deref(), saif.as_deref(), out),
        Command::Reliab {
            circuit,
            workload,
            flip_prob,
            sim,
            out,
            model,
            tuned,
            epochs,
        } => {
            let fc = &mut r.cfg.reliability.fault;
            if let Some(p) = flip_prob {
                fc.flip_prob = *p;
            }
            if let Some(n) = sim.patterns {
                fc.n_patterns = n;
            }
            if let Some(n) = sim.cycles {
                fc.n_cycles = n;
            }
            if let Some(e) = epochs {
                r.cfg.reliability.tune.epochs = *e;
            }
            reliab(r, circuit, workload.as_deref(), out, model.as_deref(), tuned.as_deref())
        }
        Command::Inspect { circuit, levels, out } => inspect(circuit, *levels, out.as_deref()),
    }
}

fn gen(r: &mut Run, n: Option<usize>, out: &Path) -> Result<()> {
    let n = n.unwrap_or(r.cfg.generate.n);
    r.cfg.generate.n = n;
    fs::create_dir_all(out).at(out)?;
    let seed = r.cfg.effective_seed();
    let fp = r.cfg.generate.feedback_prob;
    let made: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut spec = corpus_spec(seed, i as u64);
            if let Some(p) = fp {
                spec.feedback_prob = p;
            }
            generate(&spec).map_err(|e| CliError::Usage(format!("circuit {i}: {e}")))
        })
        .collect::<Result<_>>()?;
    let mut files = Vec::with_capacity(n);
    let mut summary = String::new();
    for (i, (g, s)) in made.iter().enumerate() {
        let path = out.join(format!("c{i:04}.aag"));
        fs::write(&path, emit_aiger(g)).at(&path)?;
        let mut line = serde_json::to_value(s).expect("summary serializes");
        line["file"] = json!(format!("c{i:04}.aag"));
        summary.push_str(&line.to_string());
        summary.push('\n');
        files.push(path);
    }
    let sp = out.join("summary.jsonl");
    fs::write(&sp, summary).at(&sp)?;
    log::info!("generated {n} circuits in {}", out.display());
    let mut outputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    outputs.push(&sp);
    r.manifest(out, "gen", &[], &outputs)
}

fn sim_cmd(
    r: &mut Run,
    circuit: &CircuitArgs,
    workload: Option<&Path>,
    sa: &SimArgs,
    out: &Path,
    saif: Option<&Path>,
    traces: Option<&Path>,
) -> Result<()> {
    apply_sim(&mut r.cfg.simulate, sa);
    let (g, name) = circuit.load()?;
    let w = read_workload(workload, &g)?;
    let stats = simulate(&g, &w, &r.cfg.simulate).map_err(|e| CliError::Data(e.to_string()))?;
    write_json(out, &stats.to_document(&g))?;
    let mut outputs = vec![out];
    if let Some(p) = saif {
        let duration = stats.evaluations();
        let (doc, synth) = SaifDocument::from_activity(&g, &stats.p1, &stats.ptr, duration, &name);
        log::debug!("{synth} synthesized net names");
        let mut f = create(p)?;
        write_saif(&doc, &mut f).at(p)?;
        outputs.push(p);
    }
    if let Some(p) = traces {
        let mut f = create(p)?;
        seqlearn_core::simulate::write_traces(&stats.traces, &mut f).at(p)?;
        outputs.push(p);
    }
    log::info!(
        "simulated {} nodes, {} patterns x {} cycles",
        g.len(),
        stats.n_patterns,
        stats.n_cycles
    );
    let mut inputs = vec![circuit.path()];
    inputs.extend(workload);
    r.manifest(out, "sim", &inputs, &outputs)
}

fn list_circuits(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "aag" || e == "bench"))
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(data(dir, "no .aag or .bench files"));
    }
    Ok(v)
}

/// `to` relative to directory `base` when possible.
fn relative(to: &Path, base: &Path) -> String {
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (to_a, base_a) = (abs(to), abs(base));
    let t: Vec<_> = to_a.components().collect();
    let b: Vec<_> = base_a.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c);
    }
    out.to_string_lossy().replace('\\', "/")
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn label(r: &mut Run, corpus: &Path, out: &Path, sa: &SimArgs) -> Result<()> {
    apply_sim(&mut r.cfg.label.sim, sa);
    let files = list_circuits(corpus)?;
    let base = parent_dir(out);
    fs::create_dir_all(&base).at(&base)?;
    let seed = r.cfg.effective_seed();
    let lc = r.cfg.label;
    let records: Vec<DatasetRecord> = files
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let g = read_circuit(p, is_bench(p))?;
            let w = Workload::random(&g, derive_seed(derive_seed(seed, tags::WORKLOAD), i as u64));
            let mut c = lc;
            c.seed = derive_seed(lc.seed, i as u64);
            c.sim.seed = derive_seed(lc.sim.seed, i as u64);
            let (labels, diag) = build_labelset(&g, &w, &c).at(p)?;
            log::debug!("{}: {} nodes, {} ff pairs skipped", p.display(), g.len(), diag.ff_pairs_skipped);
            Ok(DatasetRecord {
                circuit_path: relative(p, &base),
                workload: w,
                labels,
            })
        })
        .collect::<Result<_>>()?;
    let mut f = create(out)?;
    write_dataset(&records, &mut f).at(out)?;
    drop(f);
    log::info!("labeled {} circuits into {}", records.len(), out.display());
    let inputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    r.manifest(out, "label", &inputs, &[out])
}

/// Reads a dataset and resolves circuit paths against its directory.
fn load_samples(
    dataset: &Path,
    model: &seqlearn_core::model::ModelConfig,
) -> Result<(Vec<Sample<f32>>, Vec<PathBuf>)> {
    let f = File::open(dataset).at(dataset)?;
    let records = read_dataset(BufReader::new(f)).map_err(|e| match e {
        DatasetError::Parse { line, source } => CliError::Data(format!("{}:{line}: {source}", dataset.display())),
        other => data(dataset, other),
    })?;
    if records.is_empty() {
        return Err(data(dataset, "dataset has no records"));
    }
    let base = parent_dir(dataset);
    let circuits: Vec<PathBuf> = records.iter().map(|r| base.join(&r.circuit_path)).collect();
    let samples = records
        .par_iter()
        .zip(&circuits)
        .enumerate()
        .map(|(k, (rec, path))| {
            let g = read_circuit(path, is_bench(path))?;
            let ctx = |e: &dyn std::fmt::Display| CliError::Data(format!("{}:{}: {e}", dataset.display(), k + 1));
            rec.labels.check(&g).map_err(|e| ctx(&e))?;
            rec.workload.check(&g).map_err(|e| ctx(&e))?;
            let tg = Targets::from_labels(&g, &rec.labels).map_err(|e| ctx(&e))?;
            Sample::new(rec.circuit_path.clone(), g, &rec.workload, tg, model).map_err(|e| ctx(&e))
        })
        .collect::<Result<_>>()?;
    Ok((samples, circuits))
}

fn train(r: &mut Run, dataset: &Path, out: &Path, history: Option<&Path>) -> Result<()> {
    let tc = r.cfg.train.clone();
    tc.check().map_err(|e| CliError::Usage(e.to_string()))?;
    let (samples, _) = load_samples(dataset, &tc.model)?;
    log::info!("training on {} circuits", samples.len());
    let mut model = Model::<f32>::new(tc.model.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut hist = match history {
        Some(p) => Some(create(p)?),
        None => None,
    };
    let mut werr = Ok(());
    let records = fit_with(&mut model, &samples, &tc, |rec| {
        r.epoch(rec);
        if let (Some(h), Some(p)) = (hist.as_mut(), history) {
            let line = serde_json::to_string(rec).expect("record serializes");
            if let Err(e) = writeln!(h, "{line}").and_then(|_| h.flush()) {
                werr = Err(data(p, e));
            }
        }
    })
    .map_err(|e| CliError::Data(e.to_string()))?;
    werr?;
    let meta = json!({"train": tc, "epochs": records.len()});
    let mut f = create(out)?;
    model.save(meta, &mut f).at(out)?;
    f.flush().at(out)?;
    drop(f);
    let mut outputs = vec![out];
    outputs.extend(history);
    r.manifest(out, "train", &[dataset], &outputs)
}

fn eval(r: &mut Run, dataset: &Path, model_path: &Path, out: &Path) -> Result<()> {
    let (model, _) = load_model(model_path)?;
    let (samples, _) = load_samples(dataset, &model.cfg)?;
    let report = evaluate(&model, &samples).map_err(|e| CliError::Data(e.to_string()))?;
    write_json(out, &report)?;
    log::info!("pooled pe {}", serde_json::to_string(&report.pooled).unwrap_or_default());
    r.manifest(out, "eval", &[dataset, model_path], &[out])
}

#[allow(clippy::too_many_arguments)]
fn power(
    r: &mut Run,
    circuit: &CircuitArgs,
    workload: Option<&Path>,
    sa: &SimArgs,
    model_path: Option<&Path>,
    saif: Option<&Path>,
    out: &Path,
) -> Result<()> {
    apply_sim(&mut r.cfg.simulate, sa);
    let (g, name) = circuit.load()?;
    let w = read_workload(workload, &g)?;
    let stats = simulate(&g, &w, &r.cfg.simulate).map_err(|e| CliError::Data(e.to_string()))?;
    let mask = default_power_mask(&g);
    let pc = r.cfg.power;
    pc.check().map_err(|e| CliError::Usage(e.to_string()))?;
    let p_sim = power_estimate(&stats.ptr, &pc, &mask).map_err(|e| CliError::Data(e.to_string()))?;
    let mut report = json!({
        "circuit": name,
        "nodes": g.len(),
        "masked_nodes": mask.iter().filter(|m| **m).count(),
        "power_simulated": p_sim,
    });
    let (mut p1, mut ptr, mut source) = (stats.p1.clone(), stats.ptr.clone(), "simulation");
    if let Some(mp) = model_path {
        let (model, _) = load_model(mp)?;
        let s = Sample::<f32>::new(name.clone(), g.clone(), &w, Targets::default(), &model.cfg)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let tr = predicted_activity(&model, &s, &w).map_err(|e| CliError::Data(e.to_string()))?;
        let nodes = model.predict_nodes(&s.graph, &s.plan, &s.emb).map_err(|e| CliError::Data(e.to_string()))?;
        let p_pred = power_estimate(&tr, &pc, &mask).map_err(|e| CliError::Data(e.to_string()))?;
        let rel = if p_sim > 0.0 { (p_pred - p_sim).abs() / p_sim } else { (p_pred - p_sim).abs() };
        report["power_predicted"] = json!(p_pred);
        report["relative_error"] = json!(rel);
        p1 = (0..g.len())
            .map(|v| match (g.kind(v), w.get(v)) {
                (NodeKind::Pi, Some(st)) => st.p1,
                _ => nodes.lg[v],
            })
            .collect();
        // A transition rate above 2*min(p1, 1-p1) has no consistent toggle count.
        ptr = tr
            .iter()
            .zip(&p1)
            .map(|(t, p)| t.clamp(0.0, 2.0 * p.min(1.0 - p)))
            .collect();
        source = "model";
    }
    let mut outputs = vec![out];
    if let Some(sp) = saif {
        let (doc, synth) = SaifDocument::from_activity(&g, &p1, &ptr, stats.evaluations(), &name);
        log::debug!("{synth} synthesized net names");
        let mut f = create(sp)?;
        write_saif(&doc, &mut f).at(sp)?;
        report["saif"] = json!({"path": sp.display().to_string(), "source": source});
        outputs.push(sp);
    }
    write_json(out, &report)?;
    log::info!("power {}", report);
    let mut inputs = vec![circuit.path()];
    inputs.extend(workload);
    inputs.extend(model_path);
    r.manifest(out, "power", &inputs, &outputs)
}

fn reliab(
    r: &mut Run,
    circuit: &CircuitArgs,
    workload: Option<&Path>,
    out: &Path,
    model_path: Option<&Path>,
    tuned: Option<&Path>,
) -> Result<()> {
    let (g, name) = circuit.load()?;
    let w = read_workload(workload, &g)?;
    let fc = r.cfg.reliability.fault;
    fc.check().map_err(|e| CliError::Usage(e.to_string()))?;
    let labels = reliability_labels(&g, &w, &fc).map_err(|e| CliError::Data(e.to_string()))?;
    let mut f = create(out)?;
    for rec in labels.records(&g) {
        serde_json::to_writer(&mut f, &rec).at(out)?;
        f.write_all(b"\n").at(out)?;
    }
    f.flush().at(out)?;
    drop(f);
    let mut inputs = vec![circuit.path()];
    inputs.extend(workload);
    let mut outputs = vec![out];
    match (model_path, tuned) {
        (Some(mp), Some(tp)) => {
            let (mut model, meta) = load_model(mp)?;
            let s = reliability_sample(name, &g, &w, &labels, &model.cfg).map_err(|e| CliError::Data(e.to_string()))?;
            let tune = r.cfg.reliability.tune.clone();
            let rep = finetune_reliability(&mut model, std::slice::from_ref(&s), &tune)
                .map_err(|e| CliError::Data(e.to_string()))?;
            for rec in &rep.history {
                r.epoch(rec);
            }
            log::info!("flip head average pe {:.6}", rep.avg_pe);
            let mut meta = meta;
            meta["reliability"] = json!({"tune": tune, "avg_pe": rep.avg_pe});
            let mut f = create(tp)?;
            model.save(meta, &mut f).at(tp)?;
            f.flush().at(tp)?;
            inputs.push(mp);
            outputs.push(tp);
        }
        (None, None) => {}
        _ => return Err(CliError::Usage("--model and --tuned must be given together".into())),
    }
    r.manifest(out, "reliab", &inputs, &outputs)
}

fn inspect(circuit: &CircuitArgs, levels: bool, out: Option<&Path>) -> Result<()> {
    let (g, name) = circuit.load()?;
    let plan = levelize(&g).at(circuit.path())?;
    let regions: Vec<_> = plan
        .cyclic_regions
        .iter()
        .map(|c| json!({"triggers": c.triggers, "size": c.nodes.len(), "ready_level": c.ready_level}))
        .collect();
    let mut doc = json!({
        "circuit": name,
        "nodes": g.len(),
        "pis": g.count(NodeKind::Pi),
        "ffs": g.count(NodeKind::Ff),
        "ands": g.count(NodeKind::And),
        "nots": g.count(NodeKind::Not),
        "outputs": g.outputs().len(),
        "depth": plan.depth(),
        "cyclic_regions": regions,
    });
    if levels {
        doc["levels"] = json!(plan.levels);
    }
    let text = serde_json::to_string_pretty(&doc).expect("json");
    match out {
        Some(p) => {
            let mut f = create(p)?;
            writeln!(f, "{text}").at(p)?;
            f.flush().at(p)?;
        }
        None => {
            let mut o = std::io::stdout().lock();
            // A closed pipe (e.g. `| head`) is not an error.
            match writeln!(o, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    return Err(CliError::Data(format!("stdout: {e}")))
                }
                _ => {}
            }
        }
    }
    Ok(())
}
