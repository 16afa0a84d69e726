//! Predictors on top of IGEL embeddings: a logistic edge classifier over
//! Hadamard features, and a multi-label MLP trained jointly with `W`.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_all, EncoderConfig, SparseFeatures};
use crate::eval::micro_f1;
use crate::graph::{load_edge_list, EdgeListDialect, EdgeSplit, Graph, GraphError, NodeId, NodeLabels};
use crate::model::{DenseEmbedding, EmbeddingMatrix, ModelError};
use crate::optim::Adam;
use crate::unsup::{embed_nodes, log_sigmoid, sigmoid, TrainError};

#[derive(Debug, thiserror::Error)]
pub enum SupervisedError {
    #[error("length mismatch: {0}")]
    Shape(String),
    #[error("training set contains a single class")]
    SingleClass,
    #[error("label values must be 0 or 1, got {0}")]
    BadLabel(f64),
    #[error("loss became non-finite at epoch {0}")]
    Diverged(usize),
    #[error("no validation nodes")]
    EmptyValidation,
    #[error("no training nodes")]
    EmptyTraining,
    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Result<T, E = SupervisedError> = std::result::Result<T, E>;

/// Element-wise product of two embeddings.
pub fn edge_features(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(SupervisedError::Shape(format!("{} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeClassifierConfig {
    pub l2: f64,
    pub iterations: usize,
}

impl Default for EdgeClassifierConfig {
    fn default() -> Self {
        EdgeClassifierConfig {
            l2: 1e-4,
            iterations: 500,
        }
    }
}

/// Binary logistic regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl EdgeClassifier {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn score_pair(&self, e_u: &[f64], e_v: &[f64]) -> Result<f64> {
        Ok(self.probability(&edge_features(e_u, e_v)?))
    }
}

/// Mean logistic loss plus `l2/2 |w|²` and its gradient, on standardised
/// features.
fn logistic_objective(
    x: &[Vec<f64>],
    y: &[bool],
    w: &[f64],
    b: f64,
    l2: f64,
    grad: Option<(&mut [f64], &mut f64)>,
) -> f64 {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        let t = if label { 1.0 } else { 0.0 };
        loss -= t * log_sigmoid(z) + (1.0 - t) * log_sigmoid(-z);
        let r = sigmoid(z) - t;
        for (g, a) in gw.iter_mut().zip(row) {
            *g += r * a;
        }
        gb += r;
    }
    loss = loss / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    if let Some((g, gbias)) = grad {
        for ((g, acc), wv) in g.iter_mut().zip(&gw).zip(w) {
            *g = acc / n + l2 * wv;
        }
        *gbias = gb / n;
    }
    loss
}

/// Full-batch gradient descent with Armijo backtracking. Features are
/// standardised internally; the returned weights act on raw features.
pub fn fit_edge_classifier(
    features: &[Vec<f64>],
    labels: &[bool],
    cfg: &EdgeClassifierConfig,
) -> Result<EdgeClassifier> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(SupervisedError::Shape(format!(
            "{} feature rows, {} labels",
            features.len(),
            labels.len()
        )));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(SupervisedError::SingleClass);
    }
    let d = features[0].len();
    if features.iter().any(|r| r.len() != d) {
        return Err(SupervisedError::Shape("ragged feature rows".into()));
    }
    let n = features.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| features.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let var = features.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|r| (0..d).map(|j| (r[j] - mean[j]) / std[j]).collect())
        .collect();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    let mut gb = 0.0;
    let mut step: f64 = 1.0;
    let mut loss = logistic_objective(&x, labels, &w, b, cfg.l2, Some((&mut gw, &mut gb)));
    for _ in 0..cfg.iterations {
        let norm2 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        if norm2 < 1e-20 {
            break;
        }
        step = (step * 2.0).min(1e3);
        loop {
            let cand_w: Vec<f64> = w.iter().zip(&gw).map(|(v, g)| v - step * g).collect();
            let cand_b = b - step * gb;
            let cand = logistic_objective(&x, labels, &cand_w, cand_b, cfg.l2, None);
            if cand <= loss - 0.5 * step * norm2 || step < 1e-12 {
                w = cand_w;
                b = cand_b;
                break;
            }
            step *= 0.5;
        }
        loss = logistic_objective(&x, labels, &w, b, cfg.l2, Some((&mut gw, &mut gb)));
    }
    let weights: Vec<f64> = w.iter().zip(&std).map(|(v, s)| v / s).collect();
    let bias = b - weights.iter().zip(&mean).map(|(v, m)| v * m).sum::<f64>();
    Ok(EdgeClassifier { weights, bias })
}

/// Hadamard features of node pairs under a node-embedding table.
pub fn pair_features(embeddings: &[DenseEmbedding], pairs: &[(NodeId, NodeId)]) -> Vec<Vec<f64>> {
    pairs
        .iter()
        .map(|&(u, v)| {
            embeddings[u as usize]
                .iter()
                .zip(&embeddings[v as usize])
                .map(|(a, b)| a * b)
                .collect()
        })
        .collect()
}

/// Fits the edge classifier on every pair of a split: removed edges are
/// positives, sampled non-edges negatives.
pub fn train_edge_classifier(
    split: &EdgeSplit,
    w: &EmbeddingMatrix,
    enc: &EncoderConfig,
    cfg: &EdgeClassifierConfig,
) -> Result<EdgeClassifier> {
    let emb = embed_nodes(&split.train_graph, enc, w)?;
    let mut x = pair_features(&emb, &split.positive_edges);
    x.extend(pair_features(&emb, &split.negative_edges));
    let mut y = vec![true; split.positive_edges.len()];
    y.extend(std::iter::repeat_n(false, split.negative_edges.len()));
    fit_edge_classifier(&x, &y, cfg)
}

/// Summed binary cross-entropy of logits against 0/1 labels,
/// `-Σ [y log σ(ŷ) + (1 - y) log(1 - σ(ŷ))]`.
pub fn multilabel_loss(logits: &[f64], labels: &[f64]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(SupervisedError::Shape(format!(
            "{} logits, {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut loss = 0.0;
    for (&z, &y) in logits.iter().zip(labels) {
        if y != 0.0 && y != 1.0 {
            return Err(SupervisedError::BadLabel(y));
        }
        loss -= y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z);
    }
    Ok(loss)
}

/// `∂ multilabel_loss / ∂ logits = σ(ŷ) - y`.
pub fn multilabel_loss_grad(logits: &[f64], labels: &[f64]) -> Vec<f64> {
    logits.iter().zip(labels).map(|(&z, &y)| sigmoid(z) - y).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu if x <= 0.0 => x.exp_m1(),
            Activation::Relu if x <= 0.0 => 0.0,
            _ => x,
        }
    }

    /// Derivative in terms of the pre-activation.
    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu if x <= 0.0 => x.exp(),
            Activation::Relu if x <= 0.0 => 0.0,
            _ => 1.0,
        }
    }
}

/// Fully connected network with `activation` after every hidden layer and
/// raw logits out. All parameters live in one flat vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelHead {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Intermediate values kept for back-propagation.
pub struct ForwardCache {
    rows: usize,
    /// Input to each layer, then the output logits.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
}

const ROW_CHUNK: usize = 256;

impl MultiLabelHead {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: Vec<usize>, activation: Activation, seed: u64) -> Self {
        let mut head = Self::zeros(sizes, activation);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..head.num_layers() {
            let (i, o) = (head.sizes[l], head.sizes[l + 1]);
            let limit = (6.0 / (i + o) as f64).sqrt();
            let (w, _) = head.layer_mut(l);
            for v in w.iter_mut() {
                *v = rng.gen_range(-limit..limit);
            }
        }
        head
    }

    pub fn zeros(sizes: Vec<usize>, activation: Activation) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        let n = sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        MultiLabelHead {
            sizes,
            activation,
            params: vec![0.0; n],
        }
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offset(&self, layer: usize) -> usize {
        self.sizes[..=layer]
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }

    /// `(weights out×in row-major, bias)` of a layer.
    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let start = self.offset(l);
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let block = &self.params[start..start + i * o + o];
        block.split_at(i * o)
    }

    fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let start = self.offset(l);
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let block = &mut self.params[start..start + i * o + o];
        block.split_at_mut(i * o)
    }

    /// Logits for `rows` inputs stored row-major in `input`.
    pub fn forward(&self, input: &[f64], rows: usize) -> Vec<f64> {
        self.forward_cached(input, rows).acts.pop().unwrap()
    }

    pub fn forward_cached(&self, input: &[f64], rows: usize) -> ForwardCache {
        assert_eq!(input.len(), rows * self.input_width());
        let mut acts = vec![input.to_vec()];
        let mut pre = Vec::new();
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(l);
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let x = acts.last().unwrap();
            let mut z = vec![0.0; rows * o];
            z.par_chunks_mut(o).zip(x.par_chunks(i)).for_each(|(zr, xr)| {
                for (k, zk) in zr.iter_mut().enumerate() {
                    *zk = b[k] + w[k * i..(k + 1) * i].iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
                }
            });
            if l + 1 < self.num_layers() {
                let a: Vec<f64> = z.par_iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(z);
                acts.push(a);
            } else {
                acts.push(z);
            }
        }
        ForwardCache { rows, acts, pre }
    }

    /// Back-propagates `grad_out` (∂loss/∂logits). Returns the parameter
    /// gradient and ∂loss/∂input. Row reductions run in fixed-size chunks
    /// summed in order, so the result is thread-count independent.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let rows = cache.rows;
        let mut grad = vec![0.0; self.params.len()];
        let mut delta = grad_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (w, _) = self.layer(l);
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let x = &cache.acts[l];
            let partials: Vec<Vec<f64>> = delta
                .par_chunks(ROW_CHUNK * o)
                .zip(x.par_chunks(ROW_CHUNK * i))
                .map(|(dc, xc)| {
                    let mut g = vec![0.0; i * o + o];
                    for (dr, xr) in dc.chunks(o).zip(xc.chunks(i)) {
                        for k in 0..o {
                            let dk = dr[k];
                            if dk != 0.0 {
                                for (gw, xv) in g[k * i..(k + 1) * i].iter_mut().zip(xr) {
                                    *gw += dk * xv;
                                }
                            }
                            g[i * o + k] += dk;
                        }
                    }
                    g
                })
                .collect();
            let start = self.offset(l);
            let block = &mut grad[start..start + i * o + o];
            for p in partials {
                for (a, b) in block.iter_mut().zip(p) {
                    *a += b;
                }
            }
            let mut prev = vec![0.0; rows * i];
            prev.par_chunks_mut(i).zip(delta.par_chunks(o)).for_each(|(pr, dr)| {
                for (k, &dk) in dr.iter().enumerate() {
                    for (p, wv) in pr.iter_mut().zip(&w[k * i..(k + 1) * i]) {
                        *p += dk * wv;
                    }
                }
            });
            if l > 0 {
                let z = &cache.pre[l - 1];
                prev.par_iter_mut()
                    .zip(z.par_iter())
                    .for_each(|(p, &zv)| *p *= self.activation.derivative(zv));
            }
            delta = prev;
        }
        (grad, delta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One graph with per-node labels, optional attributes and split tags.
#[derive(Clone, Debug)]
pub struct LabeledGraph {
    pub graph: Graph,
    /// `|V| × M`, row-major, values 0 or 1.
    pub labels: Vec<f64>,
    /// `|V| × K`, row-major.
    pub attributes: Option<Vec<f64>>,
    pub split: Vec<Split>,
}

#[derive(Clone, Debug)]
pub struct LabeledNodeDataset {
    pub graphs: Vec<LabeledGraph>,
    pub num_labels: usize,
    pub attribute_width: usize,
}

impl LabeledNodeDataset {
    pub fn validate(&self) -> Result<()> {
        for (k, g) in self.graphs.iter().enumerate() {
            let n = g.graph.num_nodes();
            if g.labels.len() != n * self.num_labels {
                return Err(SupervisedError::Shape(format!(
                    "graph {k}: {} label values for {n} nodes × {} labels",
                    g.labels.len(),
                    self.num_labels
                )));
            }
            if let Some(&bad) = g.labels.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(SupervisedError::BadLabel(bad));
            }
            let width = g.attributes.as_ref().map_or(0, |a| a.len() / n.max(1));
            if width != self.attribute_width
                || g.attributes.as_ref().is_some_and(|a| a.len() != n * width)
            {
                return Err(SupervisedError::Shape(format!(
                    "graph {k}: attribute width {width}, expected {}",
                    self.attribute_width
                )));
            }
            if g.split.len() != n {
                return Err(SupervisedError::Shape(format!("graph {k}: split tags")));
            }
        }
        Ok(())
    }

    /// Largest degree over graphs holding training nodes.
    pub fn train_max_degree(&self) -> usize {
        self.graphs
            .iter()
            .filter(|g| g.split.contains(&Split::Train))
            .map(|g| g.graph.max_degree())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub embedding_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Concatenate node attributes to the embedding.
    pub use_attributes: bool,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            embedding_dim: 256,
            hidden_layers: 3,
            hidden_width: 256,
            activation: Activation::Elu,
            learning_rate: 0.005,
            epochs: 1000,
            patience: 100,
            use_attributes: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointReport {
    pub train_loss: Vec<f64>,
    pub validation_f1: Vec<f64>,
    pub best_epoch: usize,
    pub best_validation_f1: f64,
    pub initial_validation_f1: f64,
}

/// Model inputs for the chosen nodes: `[e_n | F_n]` rows.
fn head_input(
    w: &EmbeddingMatrix,
    features: &[SparseFeatures],
    attributes: Option<&[f64]>,
    attr_width: usize,
    nodes: &[NodeId],
) -> Vec<f64> {
    let d = w.cols();
    let width = d + attr_width;
    let mut input = vec![0.0; nodes.len() * width];
    input
        .par_chunks_mut(width)
        .zip(nodes.par_iter())
        .for_each(|(row, &v)| {
            w.forward_into(&features[v as usize], &mut row[..d]);
            if let Some(a) = attributes {
                row[d..].copy_from_slice(&a[v as usize * attr_width..(v as usize + 1) * attr_width]);
            }
        });
    input
}

/// Summed multi-label loss over `nodes` and its gradient with respect to
/// `W` and the head parameters, back-propagated through `e = xᵀ W`.
pub fn joint_loss_and_grad(
    w: &EmbeddingMatrix,
    head: &MultiLabelHead,
    features: &[SparseFeatures],
    attributes: Option<&[f64]>,
    labels: &[f64],
    nodes: &[NodeId],
) -> Result<(f64, EmbeddingMatrix, Vec<f64>)> {
    let d = w.cols();
    let attr_width = head.input_width() - d;
    let m = head.output_width();
    let input = head_input(w, features, attributes, attr_width, nodes);
    let cache = head.forward_cached(&input, nodes.len());
    let logits = cache.acts.last().unwrap();
    let target: Vec<f64> = nodes
        .iter()
        .flat_map(|&v| labels[v as usize * m..(v as usize + 1) * m].iter().copied())
        .collect();
    let loss = multilabel_loss(logits, &target)?;
    let grad_logits = multilabel_loss_grad(logits, &target);
    let (grad_head, grad_input) = head.backward(&cache, &grad_logits);
    let mut grad_w = EmbeddingMatrix::zeros(w.rows(), d);
    for (k, &v) in nodes.iter().enumerate() {
        let ge = &grad_input[k * head.input_width()..k * head.input_width() + d];
        EmbeddingMatrix::accumulate_gradient(&features[v as usize], ge, &mut grad_w)?;
    }
    Ok((loss, grad_w, grad_head))
}

/// 0.5-thresholded predictions against truth, pooled over the given nodes
/// of every graph with the requested split.
fn split_f1(
    w: &EmbeddingMatrix,
    head: &MultiLabelHead,
    data: &LabeledNodeDataset,
    features: &[Vec<SparseFeatures>],
    split: Split,
    use_attributes: bool,
) -> Option<f64> {
    let m = data.num_labels;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (g, feats) in data.graphs.iter().zip(features) {
        let nodes: Vec<NodeId> = (0..g.graph.num_nodes() as NodeId)
            .filter(|&v| g.split[v as usize] == split)
            .collect();
        if nodes.is_empty() {
            continue;
        }
        let attrs = if use_attributes { g.attributes.as_deref() } else { None };
        let input = head_input(w, feats, attrs, head.input_width() - w.cols(), &nodes);
        let logits = head.forward(&input, nodes.len());
        pred.extend(logits.iter().map(|&z| z > 0.0));
        for &v in &nodes {
            truth.extend(g.labels[v as usize * m..(v as usize + 1) * m].iter().map(|&y| y == 1.0));
        }
    }
    if truth.is_empty() {
        None
    } else {
        Some(micro_f1(&pred, &truth).expect("equal shapes"))
    }
}

/// Trains `W` and the head together on the training nodes, one full-batch
/// step per training graph per epoch, keeping the parameters with the best
/// validation micro-F1 and stopping after `patience` epochs without
/// improvement.
pub fn train_joint(
    data: &LabeledNodeDataset,
    enc: &EncoderConfig,
    cfg: &HeadConfig,
    w_init: Option<EmbeddingMatrix>,
) -> Result<(EmbeddingMatrix, MultiLabelHead, JointReport)> {
    data.validate()?;
    let attr_width = if cfg.use_attributes { data.attribute_width } else { 0 };
    let mut w = w_init.unwrap_or_else(|| {
        EmbeddingMatrix::init_default(enc.dim(), cfg.embedding_dim, cfg.seed ^ 0x7765)
    });
    if w.rows() != enc.dim() {
        return Err(ModelError::Shape {
            expected: enc.dim(),
            got: w.rows(),
        }
        .into());
    }
    let mut sizes = vec![w.cols() + attr_width];
    sizes.extend(std::iter::repeat_n(cfg.hidden_width, cfg.hidden_layers));
    sizes.push(data.num_labels);
    let mut head = MultiLabelHead::new(sizes, cfg.activation, cfg.seed);

    let features: Vec<Vec<SparseFeatures>> = data.graphs.iter().map(|g| encode_all(&g.graph, enc)).collect();
    let train_nodes: Vec<Vec<NodeId>> = data
        .graphs
        .iter()
        .map(|g| {
            (0..g.graph.num_nodes() as NodeId)
                .filter(|&v| g.split[v as usize] == Split::Train)
                .collect()
        })
        .collect();
    if train_nodes.iter().all(|n| n.is_empty()) {
        return Err(SupervisedError::EmptyTraining);
    }
    let initial = split_f1(&w, &head, data, &features, Split::Validation, cfg.use_attributes)
        .ok_or(SupervisedError::EmptyValidation)?;

    let mut opt_w = Adam::new(w.as_slice().len(), cfg.learning_rate);
    let mut opt_head = Adam::new(head.params().len(), cfg.learning_rate);
    let mut report = JointReport {
        best_validation_f1: initial,
        initial_validation_f1: initial,
        ..Default::default()
    };
    let mut best = (w.clone(), head.clone());
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut count = 0usize;
        for ((g, feats), nodes) in data.graphs.iter().zip(&features).zip(&train_nodes) {
            if nodes.is_empty() {
                continue;
            }
            let attrs = if cfg.use_attributes { g.attributes.as_deref() } else { None };
            let (loss, mut gw, mut gh) = joint_loss_and_grad(&w, &head, feats, attrs, &g.labels, nodes)?;
            if !loss.is_finite() {
                return Err(SupervisedError::Diverged(epoch));
            }
            // Mean over labelled cells.
            let scale = 1.0 / (nodes.len() * data.num_labels) as f64;
            gw.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
            gh.iter_mut().for_each(|v| *v *= scale);
            opt_w.step(w.as_mut_slice(), gw.as_slice());
            opt_head.step(head.params_mut(), &gh);
            epoch_loss += loss;
            count += nodes.len() * data.num_labels;
        }
        report.train_loss.push(epoch_loss / count as f64);
        let f1 = split_f1(&w, &head, data, &features, Split::Validation, cfg.use_attributes)
            .ok_or(SupervisedError::EmptyValidation)?;
        report.validation_f1.push(f1);
        if f1 > report.best_validation_f1 {
            report.best_validation_f1 = f1;
            report.best_epoch = epoch + 1;
            best = (w.clone(), head.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::info!("early stop at epoch {}", epoch + 1);
                break;
            }
        }
    }
    Ok((best.0, best.1, report))
}

/// Label probabilities for every node of `g` (`|V| × M`, row-major).
pub fn predict(
    head: &MultiLabelHead,
    w: &EmbeddingMatrix,
    enc: &EncoderConfig,
    g: &Graph,
    attributes: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let attr_width = head.input_width().checked_sub(w.cols()).ok_or_else(|| {
        SupervisedError::Shape("head narrower than the embedding".into())
    })?;
    let n = g.num_nodes();
    match attributes {
        Some(a) if a.len() != n * attr_width => {
            return Err(SupervisedError::Shape(format!(
                "attributes hold {} values, expected {n} × {attr_width}",
                a.len()
            )))
        }
        None if attr_width > 0 => {
            return Err(SupervisedError::Shape(format!(
                "head expects {attr_width} attribute columns"
            )))
        }
        _ => {}
    }
    if w.rows() != enc.dim() {
        return Err(ModelError::Shape {
            expected: enc.dim(),
            got: w.rows(),
        }
        .into());
    }
    let features = encode_all(g, enc);
    let nodes: Vec<NodeId> = (0..n as NodeId).collect();
    let input = head_input(w, &features, attributes, attr_width, &nodes);
    Ok(head.forward(&input, n).into_iter().map(sigmoid).collect())
}

/// Reads `node v1 ... vk` rows into a dense `|V| × k` matrix ordered by the
/// graph's node ids. Every node must appear exactly once.
pub fn read_node_matrix(path: &Path, labels: &NodeLabels) -> Result<(Vec<f64>, usize)> {
    let reader = BufReader::new(File::open(path)?);
    let err = |line: usize, reason: String| SupervisedError::Parse {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut width = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; labels.len()];
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut toks = line.split_whitespace();
        let Some(node) = toks.next() else { continue };
        if node.starts_with('#') {
            continue;
        }
        let id = labels
            .get(node)
            .ok_or_else(|| err(i + 1, format!("unknown node {node:?}")))?;
        let values = toks
            .map(|t| t.parse::<f64>().map_err(|_| err(i + 1, format!("bad number {t:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(err(i + 1, format!("expected {w} values, got {}", values.len())))
            }
            _ => {}
        }
        if rows[id as usize].replace(values).is_some() {
            return Err(err(i + 1, format!("duplicate node {node:?}")));
        }
    }
    let width = width.unwrap_or(0);
    let mut out = Vec::with_capacity(labels.len() * width);
    for (id, row) in rows.into_iter().enumerate() {
        let row = row.ok_or_else(|| {
            err(0, format!("node {:?} has no row", labels.name(id as NodeId)))
        })?;
        out.extend(row);
    }
    Ok((out, width))
}

/// Loads one graph of a labelled dataset. Nodes named only in the label or
/// attribute file join the graph as isolated nodes.
pub fn load_labeled_graph(
    edges: &Path,
    dialect: EdgeListDialect,
    label_path: &Path,
    attribute_path: Option<&Path>,
    split: Split,
) -> Result<(LabeledGraph, NodeLabels)> {
    let loaded = load_edge_list(edges, dialect)?;
    let mut names = loaded.labels;
    let before = names.len();
    for path in std::iter::once(label_path).chain(attribute_path) {
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if let Some(tok) = line.split_whitespace().next() {
                if !tok.starts_with('#') {
                    names.intern(tok);
                }
            }
        }
    }
    let graph = if names.len() > before {
        log::warn!("{}: {} isolated nodes added", edges.display(), names.len() - before);
        Graph::from_edges(names.len(), loaded.graph.edges())
    } else {
        loaded.graph
    };
    let (labels, _) = read_node_matrix(label_path, &names)?;
    let attributes = attribute_path
        .map(|p| read_node_matrix(p, &names).map(|(a, _)| a))
        .transpose()?;
    let n = graph.num_nodes();
    Ok((
        LabeledGraph {
            graph,
            labels,
            attributes,
            split: vec![split; n],
        },
        names,
    ))
}

/// Writes a `|V| × k` matrix as `node v1 ... vk` rows.
pub fn write_node_matrix<W: Write>(mut out: W, values: &[f64], width: usize, labels: &NodeLabels) -> std::io::Result<()> {
    for (id, row) in values.chunks(width.max(1)).enumerate() {
        write!(out, "{}", labels.name(id as NodeId))?;
        for v in row {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Assigns `fractions` (train, validation) of the nodes to those splits at
/// random and the rest to test.
pub fn random_node_split(n: usize, train: f64, validation: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train * n as f64).round() as usize;
    let n_val = (validation * n as f64).round() as usize;
    let mut split = vec![Split::Test; n];
    for (rank, &v) in order.iter().enumerate() {
        if rank < n_train {
            split[v] = Split::Train;
        } else if rank < n_train + n_val {
            split[v] = Split::Validation;
        }
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hadamard_examples() {
        assert_eq!(edge_features(&[1.0; 3], &[1.0; 3]).unwrap(), vec![1.0; 3]);
        assert_eq!(
            edge_features(&[2.0, 0.0, -1.0], &[3.0, 5.0, 4.0]).unwrap(),
            vec![6.0, 0.0, -4.0]
        );
        let (a, b) = ([0.3, -1.2], [4.0, 0.5]);
        assert_eq!(edge_features(&a, &b).unwrap(), edge_features(&b, &a).unwrap());
        assert!(edge_features(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn separable_logistic_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..200 {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            if (a + 2.0 * b).abs() < 0.1 {
                continue;
            }
            x.push(vec![a * 3.0 + 10.0, b]);
            y.push(a + 2.0 * b > 0.0);
        }
        let clf = fit_edge_classifier(&x, &y, &EdgeClassifierConfig::default()).unwrap();
        let correct = x
            .iter()
            .zip(&y)
            .filter(|(r, &l)| (clf.probability(r) > 0.5) == l)
            .count();
        assert_eq!(correct, x.len());
    }

    #[test]
    fn shuffled_labels_give_chance_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut rows = |n: usize| -> (Vec<Vec<f64>>, Vec<bool>) {
            let x = (0..n).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let y = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            (x, y)
        };
        let (x, y) = rows(2000);
        let (xt, yt) = rows(4000);
        let clf = fit_edge_classifier(&x, &y, &EdgeClassifierConfig::default()).unwrap();
        let scores: Vec<f64> = xt.iter().map(|r| clf.logit(r)).collect();
        let auc = crate::eval::roc_auc(&scores, &yt).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "{auc}");
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            fit_edge_classifier(&x, &[true, true], &EdgeClassifierConfig::default()),
            Err(SupervisedError::SingleClass)
        ));
    }

    #[test]
    fn pair_score_is_symmetric() {
        let clf = EdgeClassifier {
            weights: vec![0.5, -2.0, 1.0],
            bias: 0.1,
        };
        let (u, v) = ([1.0, 2.0, 3.0], [-0.5, 0.25, 2.0]);
        assert_eq!(clf.score_pair(&u, &v).unwrap(), clf.score_pair(&v, &u).unwrap());
    }

    #[test]
    fn loss_examples() {
        assert!((multilabel_loss(&[0.0], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(multilabel_loss(&[30.0], &[1.0]).unwrap() < 1e-12);
        assert!(multilabel_loss(&[-800.0], &[1.0]).unwrap().is_finite());
        assert!(matches!(multilabel_loss(&[0.0], &[0.5]), Err(SupervisedError::BadLabel(_))));
        assert!(multilabel_loss(&[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn loss_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits: Vec<f64> = (0..24).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let labels: Vec<f64> = (0..24).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let g = multilabel_loss_grad(&logits, &labels);
        let h = 1e-6;
        for k in 0..24 {
            let mut p = logits.clone();
            p[k] += h;
            let mut m = logits.clone();
            m[k] -= h;
            let numeric = (multilabel_loss(&p, &labels).unwrap() - multilabel_loss(&m, &labels).unwrap()) / (2.0 * h);
            assert!((numeric - g[k]).abs() / numeric.abs().max(1e-3) < 1e-5);
        }
    }

    #[test]
    fn zero_head_predicts_one_half() {
        let g = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3)]);
        let enc = EncoderConfig::fit(&g, 1);
        let w = EmbeddingMatrix::init_default(enc.dim(), 4, 1);
        let head = MultiLabelHead::zeros(vec![4, 8, 3], Activation::Elu);
        let p = predict(&head, &w, &enc, &g, None).unwrap();
        assert_eq!(p.len(), 12);
        assert!(p.iter().all(|&v| v == 0.5));
        assert!(predict(&head, &w, &enc, &g, Some(&[1.0; 4])).is_err());
    }

    #[test]
    fn head_backward_matches_central_differences() {
        for act in [Activation::Elu, Activation::Relu] {
            let mut head = MultiLabelHead::zeros(vec![5, 7, 6, 3], act);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            // Random biases keep pre-activations away from the ReLU kink.
            for p in head.params_mut() {
                *p = rng.gen_range(-1.0..1.0);
            }
            let rows = 4;
            let input: Vec<f64> = (0..rows * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let labels: Vec<f64> = (0..rows * 3).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            let loss = |h: &MultiLabelHead, x: &[f64]| multilabel_loss(&h.forward(x, rows), &labels).unwrap();
            let cache = head.forward_cached(&input, rows);
            let gl = multilabel_loss_grad(cache.acts.last().unwrap(), &labels);
            let (gp, gi) = head.backward(&cache, &gl);
            let h = 1e-6;
            for k in 0..head.params().len() {
                let mut p = head.clone();
                p.params_mut()[k] += h;
                let mut m = head.clone();
                m.params_mut()[k] -= h;
                let numeric = (loss(&p, &input) - loss(&m, &input)) / (2.0 * h);
                assert!((numeric - gp[k]).abs() < 1e-6 + 1e-5 * numeric.abs(), "param {k} {act:?} {numeric} {}", gp[k]);
            }
            for k in 0..input.len() {
                let mut p = input.clone();
                p[k] += h;
                let mut m = input.clone();
                m[k] -= h;
                let numeric = (loss(&head, &p) - loss(&head, &m)) / (2.0 * h);
                assert!((numeric - gi[k]).abs() < 1e-6 + 1e-5 * numeric.abs(), "input {k}");
            }
        }
    }

    /// Disjoint K5 and K8; label 1 marks the larger clique.
    pub(crate) fn two_clique_dataset(seed: u64) -> LabeledNodeDataset {
        let mut edges = Vec::new();
        for (base, size) in [(0u32, 5u32), (5, 8)] {
            for a in 0..size {
                for b in a + 1..size {
                    edges.push((base + a, base + b));
                }
            }
        }
        let graph = Graph::from_edges(13, edges);
        let labels = (0..13).map(|v| if v >= 5 { 1.0 } else { 0.0 }).collect();
        LabeledNodeDataset {
            graphs: vec![LabeledGraph {
                graph,
                labels,
                attributes: None,
                split: random_node_split(13, 0.5, 0.3, seed),
            }],
            num_labels: 1,
            attribute_width: 0,
        }
    }

    fn toy_cfg() -> HeadConfig {
        HeadConfig {
            embedding_dim: 4,
            hidden_layers: 2,
            hidden_width: 8,
            learning_rate: 0.01,
            epochs: 200,
            patience: 100,
            use_attributes: false,
            seed: 1,
            ..Default::default()
        }
    }

    #[test]
    fn two_cliques_are_separable() {
        let data = two_clique_dataset(3);
        let enc = EncoderConfig::new(1, data.train_max_degree() as u32);
        let (_, _, report) = train_joint(&data, &enc, &toy_cfg(), None).unwrap();
        assert_eq!(report.best_validation_f1, 1.0, "{report:?}");
        assert!(report.best_epoch <= 200);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let data = two_clique_dataset(3);
        let enc = EncoderConfig::new(1, data.train_max_degree() as u32);
        let cfg = HeadConfig {
            learning_rate: 0.0,
            epochs: 5,
            ..toy_cfg()
        };
        let w0 = EmbeddingMatrix::init_default(enc.dim(), 4, 77);
        let (w, head, report) = train_joint(&data, &enc, &cfg, Some(w0.clone())).unwrap();
        assert_eq!(w, w0);
        assert_eq!(head, MultiLabelHead::new(vec![4, 8, 8, 1], Activation::Elu, 1));
        assert!(report.validation_f1.iter().all(|&f| f == report.initial_validation_f1));
    }

    #[test]
    fn missing_validation_is_an_error() {
        let mut data = two_clique_dataset(3);
        for s in data.graphs[0].split.iter_mut() {
            if *s == Split::Validation {
                *s = Split::Train;
            }
        }
        let enc = EncoderConfig::new(1, 7);
        assert!(matches!(
            train_joint(&data, &enc, &toy_cfg(), None),
            Err(SupervisedError::EmptyValidation)
        ));
    }

    #[test]
    fn node_matrix_round_trip() {
        let labels = NodeLabels::identity(3);
        let values = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut buf = Vec::new();
        write_node_matrix(&mut buf, &values, 2, &labels).unwrap();
        let dir = std::env::temp_dir().join(format!("igel-sup-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("labels.txt");
        std::fs::write(&path, &buf).unwrap();
        assert_eq!(read_node_matrix(&path, &labels).unwrap(), (values, 2));
        std::fs::write(&path, "0 1 0\n1 0\n").unwrap();
        assert!(read_node_matrix(&path, &labels).is_err());
    }
}
