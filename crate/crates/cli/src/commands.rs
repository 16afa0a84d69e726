use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

use igel::eval::{
    centrality_correlations, link_prediction, micro_f1, scaling_benchmark, select_k_by_modularity,
    write_scaling_tsv, CentralityCorrelations, KSelectionRow, LinkPredictionConfig,
};
use igel::graph::{load_edge_list, EdgeListDialect, LoadedGraph, NodeId};
use igel::model::write_node_embeddings;
use igel::supervised::{
    load_labeled_graph, predict, train_joint, write_node_matrix, JointReport, LabeledNodeDataset, Split,
};
use igel::unsup::{embed_nodes, train_unsupervised};
use igel::{encode_all, EmbeddingMatrix};

use crate::config::{ConfigError, RunConfig};
use crate::output::{require, Run};
use crate::{ClassifyArgs, GraphArgs, MatrixArgs};

fn load_graph(path: &Path, dialect: EdgeListDialect) -> anyhow::Result<LoadedGraph> {
    let start = Instant::now();
    let loaded = load_edge_list(path, dialect)?;
    let s = loaded.stats;
    if s.self_loops > 0 || s.duplicates > 0 {
        log::warn!(
            "{}: dropped {} self-loops and {} duplicate edges",
            path.display(),
            s.self_loops,
            s.duplicates
        );
    }
    log::info!(
        "{}: {} nodes, {} edges ({:.2}s)",
        path.display(),
        loaded.graph.num_nodes(),
        loaded.graph.num_edges(),
        start.elapsed().as_secs_f64()
    );
    Ok(loaded)
}

/// Applies the per-command overrides and loads the graph.
fn graph_run(command: &'static str, mut cfg: RunConfig, out: PathBuf, graph: &Option<PathBuf>) -> anyhow::Result<(Run, LoadedGraph)> {
    if graph.is_some() {
        cfg.graph = graph.clone();
    }
    let path = require(&cfg.graph, "graph")?.to_path_buf();
    let loaded = load_graph(&path, cfg.dialect)?;
    Ok((Run::start(command, out, cfg)?, loaded))
}

fn with_alpha(mut cfg: RunConfig, alpha: Option<u32>) -> RunConfig {
    if let Some(a) = alpha {
        cfg.encoder.alpha = a;
    }
    cfg
}

pub fn encode(cfg: RunConfig, out: PathBuf, args: &GraphArgs) -> anyhow::Result<()> {
    let (mut run, loaded) = graph_run("encode", with_alpha(cfg, args.alpha), out, &args.graph)?;
    let enc = run.cfg().encoder.resolve_for(&loaded.graph);
    enc.validate()?;
    run.cfg_mut().encoder.delta_max = Some(enc.delta_max);
    let start = Instant::now();
    let rows = encode_all(&loaded.graph, &enc);
    run.time("encode", start.elapsed().as_secs_f64());
    let mut w = run.create("features.txt")?;
    igel::encoder::write_features(&mut w, &rows, &enc, Some(&loaded.labels))?;
    w.flush()?;
    loaded.labels.save(&run.path("node_labels.tsv"))?;
    run.finish()
}

#[derive(Serialize)]
struct ObjectiveReport<'a> {
    epoch_objective: &'a [f64],
    final_objective: f64,
    pairs_per_epoch: usize,
}

pub fn train_unsup(cfg: RunConfig, out: PathBuf, args: &GraphArgs) -> anyhow::Result<()> {
    let (mut run, loaded) = graph_run("train-unsup", with_alpha(cfg, args.alpha), out, &args.graph)?;
    let enc = run.cfg().encoder.resolve_for(&loaded.graph);
    run.cfg_mut().encoder.delta_max = Some(enc.delta_max);
    let (w, report) = train_unsupervised(&loaded.graph, &enc, &run.cfg().walk, &run.cfg().unsup)?;
    log::info!("objective per epoch: {:?}", report.epoch_objective);
    run.time("encode", report.timings.encode_secs);
    run.time("walk", report.timings.walk_secs);
    run.time("optimize", report.timings.optimize_secs);
    w.save(&run.path("model.igel"), &enc)?;
    loaded.labels.save(&run.path("node_labels.tsv"))?;
    run.write_json(
        "train_report.json",
        &ObjectiveReport {
            epoch_objective: &report.epoch_objective,
            final_objective: report.final_objective,
            pairs_per_epoch: report.pairs_per_epoch,
        },
    )?;
    run.finish()
}

pub fn embed(cfg: RunConfig, out: PathBuf, args: &MatrixArgs) -> anyhow::Result<()> {
    let (mut run, loaded) = graph_run("embed", cfg, out, &args.graph)?;
    let (w, enc) = EmbeddingMatrix::load(&args.matrix)?;
    run.cfg_mut().encoder = encoder_section(&enc);
    let start = Instant::now();
    let emb = embed_nodes(&loaded.graph, &enc, &w)?;
    run.time("embed", start.elapsed().as_secs_f64());
    let mut f = run.create("embeddings.txt")?;
    write_node_embeddings(&mut f, &emb, Some(&loaded.labels))?;
    f.flush()?;
    run.finish()
}

fn encoder_section(enc: &igel::EncoderConfig) -> crate::config::EncoderSection {
    crate::config::EncoderSection {
        alpha: enc.alpha,
        delta_max: Some(enc.delta_max),
        apply_log: enc.apply_log,
        apply_unit_norm: enc.apply_unit_norm,
        log_bins: enc.log_bins,
    }
}

pub fn link_predict(cfg: RunConfig, out: PathBuf, args: &GraphArgs) -> anyhow::Result<()> {
    let (mut run, loaded) = graph_run("link-predict", with_alpha(cfg, args.alpha), out, &args.graph)?;
    let c = run.cfg();
    let lp = LinkPredictionConfig {
        alpha: c.encoder.alpha,
        split_fraction: c.link_prediction.split_fraction,
        test_fraction: c.link_prediction.test_fraction,
        walk: c.walk,
        unsup: c.unsup.clone(),
        classifier: c.link_prediction.classifier.clone(),
        seed: c.seed,
    };
    let mut report = link_prediction(&loaded.graph, &lp)?;
    log::info!("test AUC {:.4}, train AUC {:.4}", report.test_auc, report.train_auc);
    let t = std::mem::take(&mut report.train.timings);
    run.time("encode", t.encode_secs);
    run.time("walk", t.walk_secs);
    run.time("optimize", t.optimize_secs);
    run.write_json("link_prediction.json", &report)?;
    run.finish()
}

#[derive(Serialize)]
struct ClassificationReport<'a> {
    variant: &'a str,
    test_micro_f1: Option<f64>,
    best_validation_micro_f1: f64,
    best_epoch: usize,
    epochs_run: usize,
    training: &'a JointReport,
}

pub fn classify(cfg: RunConfig, out: PathBuf, args: &ClassifyArgs) -> anyhow::Result<()> {
    let entries = cfg.classify.graphs.clone();
    if entries.is_empty() {
        return Err(ConfigError("classify.graphs is empty".into()).into());
    }
    let have_attrs = entries.iter().all(|e| e.attributes.is_some());
    let use_attributes = if args.graph_only {
        false
    } else if args.with_features {
        if !have_attrs {
            return Err(ConfigError("--with-features needs an attribute file for every graph".into()).into());
        }
        true
    } else {
        have_attrs
    };
    let variant = if use_attributes { "with-features" } else { "graph-only" };
    let mut run = Run::start("classify", out, cfg)?;
    run.cfg_mut().classify.head.use_attributes = use_attributes;

    let mut graphs = Vec::new();
    let mut names = Vec::new();
    for e in &entries {
        let attrs = if use_attributes { e.attributes.as_deref() } else { None };
        let (g, n) = load_labeled_graph(&e.edges, run.cfg().dialect, &e.labels, attrs, e.split)
            .with_context(|| format!("loading {}", e.edges.display()))?;
        graphs.push(g);
        names.push(n);
    }
    let num_labels = graphs[0].labels.len() / graphs[0].graph.num_nodes().max(1);
    let attribute_width = graphs[0]
        .attributes
        .as_ref()
        .map_or(0, |a| a.len() / graphs[0].graph.num_nodes().max(1));
    let data = LabeledNodeDataset {
        graphs,
        num_labels,
        attribute_width,
    };
    let enc = run.cfg().encoder.resolve(data.train_max_degree());
    run.cfg_mut().encoder.delta_max = Some(enc.delta_max);

    let start = Instant::now();
    let (w, head, report) = train_joint(&data, &enc, &run.cfg().classify.head, None)?;
    run.time("train", start.elapsed().as_secs_f64());

    let start = Instant::now();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (i, g) in data.graphs.iter().enumerate() {
        if !g.split.contains(&Split::Test) {
            continue;
        }
        let probs = predict(&head, &w, &enc, &g.graph, g.attributes.as_deref())?;
        for v in 0..g.graph.num_nodes() {
            if g.split[v] == Split::Test {
                let row = v * num_labels..(v + 1) * num_labels;
                pred.extend(probs[row.clone()].iter().map(|&p| p > 0.5));
                truth.extend(g.labels[row].iter().map(|&y| y == 1.0));
            }
        }
        let mut f = run.create(&format!("predictions_{i}.txt"))?;
        write_node_matrix(&mut f, &probs, num_labels, &names[i])?;
        f.flush()?;
    }
    run.time("predict", start.elapsed().as_secs_f64());
    let test_micro_f1 = if truth.is_empty() { None } else { Some(micro_f1(&pred, &truth)?) };
    log::info!(
        "{variant}: validation micro-F1 {:.4}, test micro-F1 {:?}",
        report.best_validation_f1,
        test_micro_f1
    );
    w.save(&run.path("model.igel"), &enc)?;
    run.write_json("head.json", &head)?;
    run.write_json(
        &format!("classification-{variant}.json"),
        &ClassificationReport {
            variant,
            test_micro_f1,
            best_validation_micro_f1: report.best_validation_f1,
            best_epoch: report.best_epoch,
            epochs_run: report.validation_f1.len(),
            training: &report,
        },
    )?;
    run.finish()
}

#[derive(Serialize)]
struct ClusterReport<'a> {
    best_k: usize,
    modularity: f64,
    table: &'a [KSelectionRow],
    correlations: CentralityCorrelations,
}

pub fn cluster(cfg: RunConfig, out: PathBuf, args: &MatrixArgs) -> anyhow::Result<()> {
    let k_range = cfg.k_range()?;
    let (mut run, loaded) = graph_run("cluster", cfg, out, &args.graph)?;
    let (w, enc) = EmbeddingMatrix::load(&args.matrix)?;
    run.cfg_mut().encoder = encoder_section(&enc);
    let emb = embed_nodes(&loaded.graph, &enc, &w)?;
    let start = Instant::now();
    let sel = select_k_by_modularity(&loaded.graph, &emb, &k_range, run.cfg().seed)?;
    run.time("cluster", start.elapsed().as_secs_f64());
    let start = Instant::now();
    let correlations = centrality_correlations(&loaded.graph, &emb)?;
    run.time("centrality", start.elapsed().as_secs_f64());
    log::info!("best k = {}", sel.best_k);

    let mut f = run.create("clusters.tsv")?;
    writeln!(f, "node\tcluster")?;
    for (v, c) in sel.best.labels.iter().enumerate() {
        writeln!(f, "{}\t{c}", loaded.labels.name(v as NodeId))?;
    }
    f.flush()?;
    let mut f = run.create("k_selection.tsv")?;
    writeln!(f, "k\tmodularity\tinertia")?;
    for r in &sel.table {
        writeln!(f, "{}\t{}\t{}", r.k, r.modularity, r.inertia)?;
    }
    f.flush()?;
    run.write_json(
        "cluster.json",
        &ClusterReport {
            best_k: sel.best_k,
            modularity: sel.best.modularity.unwrap_or(f64::NAN),
            table: &sel.table,
            correlations,
        },
    )?;
    run.finish()
}

pub fn bench(cfg: RunConfig, out: PathBuf) -> anyhow::Result<()> {
    let mut run = Run::start("bench", out, cfg)?;
    let report = scaling_benchmark(&run.cfg().scaling())?;
    for s in &report.size_slopes {
        log::info!("alpha {}: log-log slope {:.3}", s.alpha, s.slope);
    }
    for t in &report.degree_trends {
        log::info!("alpha {}: degree max/min {:.3}", t.alpha, t.max_over_min);
    }
    let mut f = run.create("scaling.tsv")?;
    write_scaling_tsv(&mut f, &report.runs)?;
    f.flush()?;
    run.write_json("scaling.json", &report)?;
    run.finish()
}
