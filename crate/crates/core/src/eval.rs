//! Metrics and analysis protocols: ROC-AUC, micro-F1, k-means with
//! modularity-based model selection, centrality correlations, the link
//! prediction protocol and the scaling benchmark.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::graph::{generate_erdos_renyi, split_edges_for_link_prediction, Graph, GraphError, GraphGenSpec, NodeId};
use crate::model::DenseEmbedding;
use crate::supervised::{fit_edge_classifier, pair_features, EdgeClassifierConfig, SupervisedError};
use crate::unsup::{embed_nodes, train_unsupervised, TrainError, TrainReport, UnsupConfig};
use crate::walker::{mix64, WalkConfig};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("both classes must be present")]
    SingleClass,
    #[error("length mismatch: {0} vs {1}")]
    Shape(usize, usize),
    #[error("k = {k} is invalid for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Supervised(#[from] SupervisedError),
}

type Result<T, E = EvalError> = std::result::Result<T, E>;

/// 1-based ranks with ties given the mean of the ranks they span.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(score, label)` sorted by descending score.
    pub points: Vec<(f64, bool)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn new(scores: &[f64], labels: &[bool]) -> Result<Self> {
        let auc = roc_auc(scores, labels)?;
        let mut points: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
        points.sort_by(|a, b| b.0.total_cmp(&a.0));
        Ok(RocCurve { points, auc })
    }

    /// `(false positive rate, true positive rate)` at every distinct
    /// threshold, starting at the origin.
    pub fn rates(&self) -> Vec<(f64, f64)> {
        let pos = self.points.iter().filter(|p| p.1).count() as f64;
        let neg = self.points.len() as f64 - pos;
        let (mut tp, mut fp) = (0.0, 0.0);
        let mut out = vec![(0.0, 0.0)];
        for (i, &(s, l)) in self.points.iter().enumerate() {
            if l {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            if self.points.get(i + 1).is_none_or(|n| n.0 != s) {
                out.push((fp / neg, tp / pos));
            }
        }
        out
    }
}

/// Mann–Whitney statistic: `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::Shape(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let ranks = mid_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// `2TP / (2TP + FP + FN)` pooled over all cells. Two all-negative
/// matrices agree perfectly and score 1.
pub fn micro_f1(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(EvalError::Shape(pred.len(), truth.len()));
    }
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    Ok(if denom == 0 { 1.0 } else { (2 * tp) as f64 / denom as f64 })
}

/// Spearman's ρ as the Pearson correlation of mid-ranks. NaN when either
/// input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(EvalError::Shape(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(EvalError::Empty);
    }
    Ok(pearson(&mid_ranks(a), &mid_ranks(b)))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_history: Vec<f64>,
    /// Filled in when the assignment is scored against a graph.
    pub modularity: Option<f64>,
}

const KMEANS_MAX_ITER: usize = 300;
const KMEANS_TOL: f64 = 1e-6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centers.last().unwrap()));
        }
    }
    centers
}

/// Lloyd's algorithm from k-means++ seeds. Stops after 300 iterations or
/// when inertia changes by less than a relative 1e-6.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(EvalError::InvalidK { k, n });
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(EvalError::Shape(bad.len(), dim));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(points, k, &mut rng);
    let mut history = Vec::new();
    let mut labels = vec![0; n];
    for _ in 0..KMEANS_MAX_ITER {
        let assigned: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centers)).collect();
        let inertia: f64 = assigned.iter().map(|a| a.1).sum();
        let changed = assigned.iter().zip(&labels).any(|(a, &l)| a.0 != l);
        labels = assigned.iter().map(|a| a.0).collect();
        let prev = history.last().copied();
        history.push(inertia);
        if let Some(prev) = prev {
            if !changed || (prev - inertia).abs() <= KMEANS_TOL * prev.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Re-seat an empty cluster on the point worst served.
                let far = (0..n)
                    .max_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(b.cmp(&a)))
                    .unwrap();
                centers[c] = points[far].clone();
            }
        }
    }
    let inertia = *history.last().unwrap();
    Ok(ClusterAssignment {
        k,
        labels,
        inertia,
        inertia_history: history,
        modularity: None,
    })
}

/// Best of `restarts` k-means runs by inertia.
pub fn kmeans_restarts(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<ClusterAssignment> {
    let mut best: Option<ClusterAssignment> = None;
    for r in 0..restarts.max(1) {
        let run = kmeans(points, k, mix64(seed ^ (r as u64).wrapping_mul(0x9e37)))?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Newman–Girvan modularity `Σ_c [e_c / |E| − (deg_c / 2|E|)²]`.
pub fn modularity(g: &Graph, labels: &[usize]) -> f64 {
    assert_eq!(labels.len(), g.num_nodes());
    let m = g.num_edges() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let k = labels.iter().max().map_or(0, |&l| l + 1);
    let mut internal = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for v in 0..g.num_nodes() {
        degree[labels[v]] += g.degree(v as NodeId) as f64;
    }
    for (u, v) in g.edges() {
        if labels[u as usize] == labels[v as usize] {
            internal[labels[u as usize]] += 1.0;
        }
    }
    internal
        .iter()
        .zip(&degree)
        .map(|(e, d)| e / m - (d / (2.0 * m)).powi(2))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSelectionRow {
    pub k: usize,
    pub modularity: f64,
    pub inertia: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub best_k: usize,
    pub best: ClusterAssignment,
    pub table: Vec<KSelectionRow>,
}

pub const KMEANS_RESTARTS: usize = 10;

/// Clusters the embeddings for every k and keeps the partition with the
/// highest graph modularity; ties go to the smaller k.
pub fn select_k_by_modularity(
    g: &Graph,
    embeddings: &[DenseEmbedding],
    k_range: &[usize],
    seed: u64,
) -> Result<KSelection> {
    if k_range.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut table = Vec::new();
    let mut best: Option<ClusterAssignment> = None;
    for &k in k_range {
        let mut run = kmeans_restarts(embeddings, k, KMEANS_RESTARTS, mix64(seed ^ k as u64))?;
        let q = modularity(g, &run.labels);
        run.modularity = Some(q);
        table.push(KSelectionRow {
            k,
            modularity: q,
            inertia: run.inertia,
        });
        let better = best.as_ref().is_none_or(|b| {
            q > b.modularity.unwrap() || (q == b.modularity.unwrap() && k < b.k)
        });
        if better {
            best = Some(run);
        }
    }
    let best = best.unwrap();
    Ok(KSelection {
        best_k: best.k,
        best,
        table,
    })
}

/// Power iteration; dangling mass is spread uniformly.
pub fn pagerank(g: &Graph, damping: f64) -> Vec<f64> {
    let n = g.num_nodes();
    if n == 0 {
        return Vec::new();
    }
    let nf = n as f64;
    let mut rank = vec![1.0 / nf; n];
    for _ in 0..1000 {
        let dangling: f64 = (0..n).filter(|&v| g.degree(v as NodeId) == 0).map(|v| rank[v]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|v| {
                base + damping
                    * g.neighbors(v as NodeId)
                        .iter()
                        .map(|&u| rank[u as usize] / g.degree(u) as f64)
                        .sum::<f64>()
            })
            .collect();
        let delta: f64 = next.iter().zip(&rank).map(|(a, b)| (a - b).abs()).sum();
        rank = next;
        if delta < 1e-13 {
            break;
        }
    }
    rank
}

const SOURCE_CHUNK: usize = 64;

/// Brandes' algorithm; each unordered pair counted once.
pub fn betweenness(g: &Graph) -> Vec<f64> {
    let n = g.num_nodes();
    let sources: Vec<NodeId> = (0..n as NodeId).collect();
    let partials: Vec<Vec<f64>> = sources
        .par_chunks(SOURCE_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; n];
            let mut sigma = vec![0.0f64; n];
            let mut dist = vec![u32::MAX; n];
            let mut delta = vec![0.0f64; n];
            let mut stack = Vec::with_capacity(n);
            let mut queue = VecDeque::new();
            for &s in chunk {
                sigma.iter_mut().for_each(|x| *x = 0.0);
                dist.iter_mut().for_each(|x| *x = u32::MAX);
                delta.iter_mut().for_each(|x| *x = 0.0);
                stack.clear();
                sigma[s as usize] = 1.0;
                dist[s as usize] = 0;
                queue.push_back(s);
                while let Some(v) = queue.pop_front() {
                    stack.push(v);
                    for &w in g.neighbors(v) {
                        if dist[w as usize] == u32::MAX {
                            dist[w as usize] = dist[v as usize] + 1;
                            queue.push_back(w);
                        }
                        if dist[w as usize] == dist[v as usize] + 1 {
                            sigma[w as usize] += sigma[v as usize];
                        }
                    }
                }
                while let Some(w) = stack.pop() {
                    for &v in g.neighbors(w) {
                        if dist[v as usize] != u32::MAX && dist[v as usize] + 1 == dist[w as usize] {
                            delta[v as usize] +=
                                sigma[v as usize] / sigma[w as usize] * (1.0 + delta[w as usize]);
                        }
                    }
                    if w != s {
                        acc[w as usize] += delta[w as usize];
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; n];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= 2.0);
    out
}

/// `Σ_{v ≠ u} 1 / d(u, v)`, unreachable nodes contributing zero.
pub fn harmonic_closeness(g: &Graph) -> Vec<f64> {
    (0..g.num_nodes() as NodeId)
        .into_par_iter()
        .map(|u| {
            g.bfs_distances(u)
                .iter()
                .filter(|&&d| d != 0 && d != u32::MAX)
                .map(|&d| 1.0 / d as f64)
                .sum()
        })
        .collect()
}

/// `s_n = Σ_{m ∈ adj(n)} e_n · e_m`.
pub fn neighbour_similarity(g: &Graph, embeddings: &[DenseEmbedding]) -> Vec<f64> {
    (0..g.num_nodes() as NodeId)
        .into_par_iter()
        .map(|n| {
            let e = &embeddings[n as usize];
            g.neighbors(n)
                .iter()
                .map(|&m| e.iter().zip(&embeddings[m as usize]).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralityCorrelations {
    pub degree: f64,
    pub pagerank: f64,
    pub betweenness: f64,
    pub closeness: f64,
}

/// Spearman ρ between neighbour similarity and each centrality.
pub fn centrality_correlations(g: &Graph, embeddings: &[DenseEmbedding]) -> Result<CentralityCorrelations> {
    if embeddings.len() != g.num_nodes() {
        return Err(EvalError::Shape(embeddings.len(), g.num_nodes()));
    }
    let s = neighbour_similarity(g, embeddings);
    let degree: Vec<f64> = (0..g.num_nodes()).map(|v| g.degree(v as NodeId) as f64).collect();
    Ok(CentralityCorrelations {
        degree: spearman(&s, &degree)?,
        pagerank: spearman(&s, &pagerank(g, 0.85))?,
        betweenness: spearman(&s, &betweenness(g))?,
        closeness: spearman(&s, &harmonic_closeness(g))?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkPredictionConfig {
    pub alpha: u32,
    /// Fraction of edges removed from the training graph.
    pub split_fraction: f64,
    /// Fraction of the labelled pairs held out to score the classifier.
    pub test_fraction: f64,
    pub walk: WalkConfig,
    pub unsup: UnsupConfig,
    pub classifier: EdgeClassifierConfig,
    pub seed: u64,
}

impl Default for LinkPredictionConfig {
    fn default() -> Self {
        LinkPredictionConfig {
            alpha: 2,
            split_fraction: 0.5,
            test_fraction: 0.5,
            walk: WalkConfig::default(),
            unsup: UnsupConfig::default(),
            classifier: EdgeClassifierConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkPredictionReport {
    pub test_auc: f64,
    pub train_auc: f64,
    pub removed_edges: usize,
    pub classifier_train_pairs: usize,
    pub classifier_test_pairs: usize,
    pub train: TrainReport,
}

/// Removes edges while keeping the graph connected, trains embeddings on
/// what remains, then fits the edge classifier on part of the removed
/// edges and sampled non-edges and reports AUC on the rest.
pub fn link_prediction(g: &Graph, cfg: &LinkPredictionConfig) -> Result<LinkPredictionReport> {
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(EvalError::Graph(GraphError::InvalidFraction(cfg.test_fraction)));
    }
    let split = split_edges_for_link_prediction(g, cfg.split_fraction, mix64(cfg.seed ^ 0x5b1))?;
    let enc = EncoderConfig::fit(&split.train_graph, cfg.alpha);
    let walk = WalkConfig {
        seed: mix64(cfg.seed ^ 0x3a1),
        ..cfg.walk
    };
    let unsup = UnsupConfig {
        seed: mix64(cfg.seed ^ 0x7e2),
        ..cfg.unsup.clone()
    };
    let (w, train) = train_unsupervised(&split.train_graph, &enc, &walk, &unsup)?;
    let emb = embed_nodes(&split.train_graph, &enc, &w)?;

    // Stratified hold-out over the labelled pairs.
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed ^ 0xc1a));
    let mut pos = split.positive_edges.clone();
    let mut neg = split.negative_edges.clone();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let cut = |v: &Vec<(NodeId, NodeId)>| ((1.0 - cfg.test_fraction) * v.len() as f64).round() as usize;
    let (pos_train, pos_test) = pos.split_at(cut(&pos));
    let (neg_train, neg_test) = neg.split_at(cut(&neg));
    let labelled = |p: &[(NodeId, NodeId)], n: &[(NodeId, NodeId)]| {
        let mut x = pair_features(&emb, p);
        x.extend(pair_features(&emb, n));
        let mut y = vec![true; p.len()];
        y.extend(std::iter::repeat_n(false, n.len()));
        (x, y)
    };
    let (x_train, y_train) = labelled(pos_train, neg_train);
    let (x_test, y_test) = labelled(pos_test, neg_test);
    let clf = fit_edge_classifier(&x_train, &y_train, &cfg.classifier)?;
    let score = |x: &[Vec<f64>]| x.iter().map(|r| clf.logit(r)).collect::<Vec<f64>>();
    Ok(LinkPredictionReport {
        test_auc: roc_auc(&score(&x_test), &y_test)?,
        train_auc: roc_auc(&score(&x_train), &y_train)?,
        removed_edges: split.positive_edges.len(),
        classifier_train_pairs: y_train.len(),
        classifier_test_pairs: y_test.len(),
        train,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub sizes: Vec<usize>,
    /// Average degree of the size sweep.
    pub size_degree: f64,
    pub degrees: Vec<f64>,
    /// Node count of the degree sweep.
    pub degree_nodes: usize,
    pub alphas: Vec<u32>,
    /// Alphas for which the degree sweep runs.
    pub degree_alphas: Vec<u32>,
    pub replicates: usize,
    pub walk: WalkConfig,
    pub unsup: UnsupConfig,
    /// Sizes below this are recorded but left out of the slope fit.
    pub fit_min_nodes: usize,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            sizes: vec![1024, 2048, 4096, 8192, 16384],
            size_degree: 8.0,
            degrees: vec![2.0, 4.0, 8.0, 16.0, 32.0],
            degree_nodes: 4096,
            alphas: vec![1, 2],
            degree_alphas: vec![1],
            replicates: 1,
            walk: WalkConfig::default(),
            unsup: UnsupConfig::default(),
            fit_min_nodes: 1024,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    Size,
    Degree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRun {
    pub sweep: Sweep,
    pub spec: GraphGenSpec,
    pub num_edges: usize,
    pub alpha: u32,
    pub replicate: usize,
    pub encode_secs: f64,
    pub walk_secs: f64,
    pub optimize_secs: f64,
    pub total_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeSlope {
    pub alpha: u32,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeTrend {
    pub alpha: u32,
    /// Slowest over fastest mean runtime across the degree sweep.
    pub max_over_min: f64,
    /// Least-squares slope of log time against log degree.
    pub log_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub runs: Vec<ScalingRun>,
    pub size_slopes: Vec<SizeSlope>,
    pub degree_trends: Vec<DegreeTrend>,
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Mean total time per distinct key, keys ascending.
fn mean_by<F: Fn(&ScalingRun) -> f64>(runs: &[&ScalingRun], key: F) -> Vec<(f64, f64)> {
    let mut keys: Vec<f64> = runs.iter().map(|r| key(r)).collect();
    keys.sort_by(f64::total_cmp);
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let times: Vec<f64> = runs.iter().filter(|r| key(r) == k).map(|r| r.total_secs).collect();
            (k, times.iter().sum::<f64>() / times.len() as f64)
        })
        .collect()
}

fn time_pipeline(spec: GraphGenSpec, alpha: u32, replicate: usize, sweep: Sweep, cfg: &ScalingConfig) -> Result<ScalingRun> {
    let g = generate_erdos_renyi(&spec)?;
    let enc = EncoderConfig::fit(&g, alpha);
    let start = Instant::now();
    let (_, report) = train_unsupervised(&g, &enc, &cfg.walk, &cfg.unsup)?;
    let total_secs = start.elapsed().as_secs_f64();
    log::info!(
        "scaling {sweep:?} n={} deg={} alpha={alpha} rep={replicate}: {total_secs:.3}s",
        spec.num_nodes,
        spec.avg_degree
    );
    Ok(ScalingRun {
        sweep,
        num_edges: g.num_edges(),
        spec,
        alpha,
        replicate,
        encode_secs: report.timings.encode_secs,
        walk_secs: report.timings.walk_secs,
        optimize_secs: report.timings.optimize_secs,
        total_secs,
    })
}

/// Runs the unsupervised pipeline on Erdős–Rényi graphs, sweeping size at
/// fixed degree and degree at fixed size, one run at a time.
pub fn scaling_benchmark(cfg: &ScalingConfig) -> Result<ScalingReport> {
    let mut runs = Vec::new();
    for &alpha in &cfg.alphas {
        for &n in &cfg.sizes {
            for rep in 0..cfg.replicates {
                let spec = GraphGenSpec {
                    num_nodes: n,
                    avg_degree: cfg.size_degree,
                    seed: mix64(cfg.seed ^ (n as u64) << 8 ^ rep as u64),
                };
                runs.push(time_pipeline(spec, alpha, rep, Sweep::Size, cfg)?);
            }
        }
    }
    for &alpha in &cfg.degree_alphas {
        for &deg in &cfg.degrees {
            for rep in 0..cfg.replicates {
                let spec = GraphGenSpec {
                    num_nodes: cfg.degree_nodes,
                    avg_degree: deg,
                    seed: mix64(cfg.seed ^ deg.to_bits() ^ rep as u64),
                };
                runs.push(time_pipeline(spec, alpha, rep, Sweep::Degree, cfg)?);
            }
        }
    }
    Ok(summarize_scaling(runs, cfg.fit_min_nodes))
}

/// Fits the size slopes and degree trends of a set of runs.
pub fn summarize_scaling(runs: Vec<ScalingRun>, fit_min_nodes: usize) -> ScalingReport {
    let mut alphas: Vec<u32> = runs.iter().map(|r| r.alpha).collect();
    alphas.sort_unstable();
    alphas.dedup();
    let mut size_slopes = Vec::new();
    let mut degree_trends = Vec::new();
    for alpha in alphas {
        let sized: Vec<&ScalingRun> = runs
            .iter()
            .filter(|r| r.alpha == alpha && r.sweep == Sweep::Size && r.spec.num_nodes >= fit_min_nodes)
            .collect();
        let means = mean_by(&sized, |r| r.spec.num_nodes as f64);
        if means.len() >= 2 {
            let (x, y): (Vec<f64>, Vec<f64>) = means.iter().map(|(n, t)| (n.ln(), t.ln())).unzip();
            size_slopes.push(SizeSlope {
                alpha,
                slope: least_squares_slope(&x, &y),
            });
        }
        let swept: Vec<&ScalingRun> = runs
            .iter()
            .filter(|r| r.alpha == alpha && r.sweep == Sweep::Degree)
            .collect();
        let means = mean_by(&swept, |r| r.spec.avg_degree);
        if means.len() >= 2 {
            let times: Vec<f64> = means.iter().map(|m| m.1).collect();
            let max = times.iter().cloned().fold(f64::MIN, f64::max);
            let min = times.iter().cloned().fold(f64::MAX, f64::min);
            let (x, y): (Vec<f64>, Vec<f64>) = means.iter().map(|(d, t)| (d.ln(), t.ln())).unzip();
            degree_trends.push(DegreeTrend {
                alpha,
                max_over_min: max / min,
                log_slope: least_squares_slope(&x, &y),
            });
        }
    }
    ScalingReport {
        runs,
        size_slopes,
        degree_trends,
    }
}

pub const SCALING_TSV_HEADER: &str =
    "sweep\tnum_nodes\tavg_degree\tnum_edges\talpha\treplicate\tencode_secs\twalk_secs\toptimize_secs\ttotal_secs";

pub fn write_scaling_tsv<W: Write>(mut out: W, runs: &[ScalingRun]) -> std::io::Result<()> {
    writeln!(out, "{SCALING_TSV_HEADER}")?;
    for r in runs {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            match r.sweep {
                Sweep::Size => "size",
                Sweep::Degree => "degree",
            },
            r.spec.num_nodes,
            r.spec.avg_degree,
            r.num_edges,
            r.alpha,
            r.replicate,
            r.encode_secs,
            r.walk_secs,
            r.optimize_secs,
            r.total_secs
        )?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut wins, mut total) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    total += 1.0;
                    if si > sj {
                        wins += 1.0;
                    } else if si == sj {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / total
    }

    pub(crate) fn modularity_oracle(g: &Graph, labels: &[usize]) -> f64 {
        // Q = 1/2m Σ_ij [A_ij − k_i k_j / 2m] δ(c_i, c_j)
        let n = g.num_nodes();
        let two_m = 2.0 * g.num_edges() as f64;
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] == labels[j] {
                    let a = if g.has_edge(i as NodeId, j as NodeId) { 1.0 } else { 0.0 };
                    q += a - g.degree(i as NodeId) as f64 * g.degree(j as NodeId) as f64 / two_m;
                }
            }
        }
        q / two_m
    }

    fn two_cliques(size: u32) -> Graph {
        let mut edges = Vec::new();
        for base in [0, size] {
            for a in 0..size {
                for b in a + 1..size {
                    edges.push((base + a, base + b));
                }
            }
        }
        Graph::from_edges(2 * size as usize, edges)
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &[true, false, true, false, true, false]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(EvalError::SingleClass)));
    }

    #[test]
    fn auc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<f64> = (0..200).map(|_| (rng.gen_range(0..40) as f64) / 7.0).collect();
        let labels: Vec<bool> = (0..200).map(|_| rng.gen_bool(0.4)).collect();
        let auc = roc_auc(&scores, &labels).unwrap();
        assert!((auc - auc_oracle(&scores, &labels)).abs() < 1e-12);
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 2.0).collect();
        assert!((roc_auc(&warped, &labels).unwrap() - auc).abs() < 1e-12);
        let curve = RocCurve::new(&scores, &labels).unwrap();
        assert_eq!(curve.rates().last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn f1_examples() {
        let t = [true, false, true, true];
        assert_eq!(micro_f1(&t, &t).unwrap(), 1.0);
        assert_eq!(micro_f1(&[false; 4], &t).unwrap(), 0.0);
        assert!(micro_f1(&[true], &t).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<bool> = (0..50).map(|_| rng.gen_bool(0.5)).collect();
        let q: Vec<bool> = (0..50).map(|_| rng.gen_bool(0.3)).collect();
        let tp = p.iter().zip(&q).filter(|(a, b)| **a && **b).count() as f64;
        let predicted = p.iter().filter(|&&a| a).count() as f64;
        let actual = q.iter().filter(|&&a| a).count() as f64;
        let precision = tp / predicted;
        let recall = tp / actual;
        let f1 = 2.0 * precision * recall / (precision + recall);
        assert!((micro_f1(&p, &q).unwrap() - f1).abs() < 1e-12);
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&a, &[2.0, 4.0, 9.0, 16.0, 100.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let b = [0.3, 0.1, 0.1, 0.9, 0.5];
        assert_eq!(spearman(&a, &b).unwrap(), spearman(&b, &a).unwrap());
        assert!(spearman(&a, &[1.0; 5]).unwrap().is_nan());
    }

    #[test]
    fn modularity_examples() {
        let g = two_cliques(5);
        let halves: Vec<usize> = (0..10).map(|v| v / 5).collect();
        assert!((modularity(&g, &halves) - 0.5).abs() < 1e-12);
        assert_eq!(modularity(&g, &[0; 10]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let er = generate_erdos_renyi(&GraphGenSpec {
            num_nodes: 100,
            avg_degree: 9.9,
            seed: 3,
        })
        .unwrap();
        let labels: Vec<usize> = (0..100).map(|_| rng.gen_range(0..4)).collect();
        let q = modularity(&er, &labels);
        assert!(q.abs() < 0.1);
        assert!((q - modularity_oracle(&er, &labels)).abs() < 1e-12);
        let singletons: Vec<usize> = (0..100).collect();
        assert!((modularity(&er, &singletons) - modularity_oracle(&er, &singletons)).abs() < 1e-12);
    }

    fn blobs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..40)
            .map(|i| {
                let c = if i < 20 { -50.0 } else { 50.0 };
                vec![c + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
            })
            .collect()
    }

    #[test]
    fn kmeans_recovers_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = blobs(&mut rng);
        let a = kmeans(&pts, 2, 9).unwrap();
        assert!(a.labels[..20].iter().all(|&l| l == a.labels[0]));
        assert!(a.labels[20..].iter().all(|&l| l == a.labels[20]));
        assert_ne!(a.labels[0], a.labels[20]);
        assert!(a.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        assert_eq!(kmeans(&pts, 2, 9).unwrap(), a);
        assert_eq!(kmeans(&pts, 40, 3).unwrap().inertia, 0.0);
        assert!(matches!(kmeans(&pts, 41, 3), Err(EvalError::InvalidK { .. })));
    }

    #[test]
    fn kmeans_close_to_best_of_many_restarts() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)]).collect();
        let oracle = (0..100)
            .map(|s| kmeans(&pts, 3, 1000 + s).unwrap().inertia)
            .fold(f64::INFINITY, f64::min);
        let got = kmeans_restarts(&pts, 3, KMEANS_RESTARTS, 4).unwrap().inertia;
        assert!(got <= oracle * 1.05, "{got} vs {oracle}");
    }

    #[test]
    fn planted_two_cliques_select_k_two() {
        let g = two_cliques(6);
        let emb: Vec<DenseEmbedding> = (0..12)
            .map(|v| if v < 6 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
            .collect();
        let sel = select_k_by_modularity(&g, &emb, &[2, 3, 4, 5], 3).unwrap();
        assert_eq!(sel.best_k, 2);
        assert_eq!(sel.table.len(), 4);
        assert_eq!(select_k_by_modularity(&g, &emb, &[2, 3, 4, 5], 3).unwrap(), sel);
    }

    fn path(n: u32) -> Graph {
        Graph::from_edges(n as usize, (0..n - 1).map(|i| (i, i + 1)))
    }

    #[test]
    fn centralities_on_small_graphs() {
        // Star: the hub lies on every leaf-leaf path.
        let star = Graph::from_edges(5, (1..5).map(|i| (0, i)));
        let b = betweenness(&star);
        assert_eq!(b, vec![6.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(betweenness(&path(4)), vec![0.0, 2.0, 2.0, 0.0]);
        let c = harmonic_closeness(&path(3));
        assert_eq!(c, vec![1.5, 2.0, 1.5]);
        let pr = pagerank(&star, 0.85);
        assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Closed form for a star: hub = (1 - d)/n + d · Σ leaves.
        let leaf = (1.0 - 0.85) / 5.0 + 0.85 * pr[0] / 4.0;
        assert!((pr[1] - leaf).abs() < 1e-10);
        let cycle = Graph::from_edges(6, (0..6).map(|i| (i, (i + 1) % 6)));
        assert!(pagerank(&cycle, 0.85).iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-12));
    }

    fn betweenness_oracle(g: &Graph) -> Vec<f64> {
        // Counts shortest paths via σ_st = Σ over BFS layers, then sums
        // σ_sv σ_vt / σ_st over unordered pairs.
        let n = g.num_nodes();
        let dist: Vec<Vec<u32>> = (0..n as NodeId).map(|s| g.bfs_distances(s)).collect();
        let sigma: Vec<Vec<f64>> = (0..n)
            .map(|s| {
                let mut order: Vec<usize> = (0..n).filter(|&v| dist[s][v] != u32::MAX).collect();
                order.sort_by_key(|&v| dist[s][v]);
                let mut sg = vec![0.0; n];
                sg[s] = 1.0;
                for &v in &order[1..] {
                    sg[v] = g.neighbors(v as NodeId)
                        .iter()
                        .filter(|&&u| dist[s][u as usize] + 1 == dist[s][v])
                        .map(|&u| sg[u as usize])
                        .sum();
                }
                sg
            })
            .collect();
        let mut out = vec![0.0; n];
        for s in 0..n {
            for t in s + 1..n {
                if dist[s][t] == u32::MAX {
                    continue;
                }
                for v in 0..n {
                    if v != s && v != t && dist[s][v] != u32::MAX && dist[s][v] + dist[v][t] == dist[s][t] {
                        out[v] += sigma[s][v] * sigma[v][t] / sigma[s][t];
                    }
                }
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn betweenness_matches_path_counting(seed in 0u64..1000, deg in 1.0f64..5.0) {
            let g = generate_erdos_renyi(&GraphGenSpec { num_nodes: 30, avg_degree: deg, seed }).unwrap();
            let fast = betweenness(&g);
            for (a, b) in fast.iter().zip(betweenness_oracle(&g)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn similarity_equal_to_degree_correlates_perfectly() {
        // Unit-norm identical embeddings make s_n the degree.
        let g = generate_erdos_renyi(&GraphGenSpec {
            num_nodes: 60,
            avg_degree: 5.0,
            seed: 2,
        })
        .unwrap();
        let emb = vec![vec![1.0, 0.0]; 60];
        let corr = centrality_correlations(&g, &emb).unwrap();
        assert!((corr.degree - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let mk = |n: usize, t: f64| ScalingRun {
            sweep: Sweep::Size,
            spec: GraphGenSpec {
                num_nodes: n,
                avg_degree: 8.0,
                seed: 0,
            },
            num_edges: 0,
            alpha: 1,
            replicate: 0,
            encode_secs: 0.0,
            walk_secs: 0.0,
            optimize_secs: 0.0,
            total_secs: t,
        };
        let runs = vec![mk(256, 100.0), mk(1024, 1.0), mk(2048, 2.0), mk(4096, 4.0)];
        let report = summarize_scaling(runs.clone(), 1024);
        assert!((report.size_slopes[0].slope - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        write_scaling_tsv(&mut buf, &runs).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn link_prediction_on_a_dense_graph() {
        let g = generate_erdos_renyi(&GraphGenSpec {
            num_nodes: 120,
            avg_degree: 10.0,
            seed: 5,
        })
        .unwrap();
        let cfg = LinkPredictionConfig {
            walk: WalkConfig {
                walks_per_node: 2,
                walk_length: 20,
                seed: 0,
            },
            unsup: UnsupConfig {
                embedding_dim: 8,
                epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = link_prediction(&g, &cfg).unwrap();
        assert_eq!(report.removed_edges, (0.5 * g.num_edges() as f64).round() as usize);
        assert!((0.0..=1.0).contains(&report.test_auc));
        assert_eq!(link_prediction(&g, &cfg).unwrap().test_auc, report.test_auc);
        let triangle = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]);
        assert!(link_prediction(&triangle, &cfg).is_err());
    }
}
