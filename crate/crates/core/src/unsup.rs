//! Unsupervised training: maximise the skip-gram negative-sampling
//! log-likelihood of walk co-occurrences,
//!
//! ```text
//! L(W) = Σ_(t,o) [ log σ(e_t·e_o) + Σ_{i=1..z} log σ(-e_t·e_i) ],   e_n = x_nᵀ W,
//! ```
//!
//! where `(t, o)` ranges over context pairs of the walk corpus and the `e_i`
//! are embeddings of nodes drawn from the noise distribution.
//!
//! Two execution modes share the batching:
//!
//! * `Deterministic`: each batch gradient is reduced in a fixed order and
//!   applied once. Results are bit-identical across runs and thread counts.
//! * `Racy`: workers take small sub-batches and apply their updates to a
//!   shared matrix without locks (Hogwild). Individual scalars are
//!   last-writer-wins.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_all, EncoderConfig, SparseFeatures};
use crate::graph::{Graph, NodeId};
use crate::model::{DenseEmbedding, EmbeddingMatrix, ModelError};
use crate::optim::{Optimizer, OptimizerKind};
use crate::walker::{
    context_pair_count, context_pairs, generate_corpus, mix64, ContextPair, NoiseDistribution,
    NoiseKind, Walk, WalkConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("objective diverged (non-finite) during epoch {epoch}")]
    Diverged { epoch: u32 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParallelMode {
    #[default]
    Deterministic,
    Racy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnsupConfig {
    pub embedding_dim: usize,
    /// Negative samples per positive pair (`z`).
    #[serde(alias = "z")]
    pub negatives: u32,
    /// Context window (`p`).
    #[serde(alias = "p")]
    pub window: u32,
    pub learning_rate: f64,
    pub epochs: u32,
    /// Positive pairs per parameter update.
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub parallel_mode: ParallelMode,
    pub noise: NoiseKind,
}

impl Default for UnsupConfig {
    fn default() -> Self {
        UnsupConfig {
            embedding_dim: 32,
            negatives: 10,
            window: 10,
            learning_rate: 0.01,
            epochs: 5,
            batch_size: 50_000,
            optimizer: OptimizerKind::AdaptiveMoment,
            seed: 0,
            parallel_mode: ParallelMode::Deterministic,
            noise: NoiseKind::Uniform,
        }
    }
}

impl UnsupConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be >= 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub encode_secs: f64,
    pub walk_secs: f64,
    pub optimize_secs: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.encode_secs + self.walk_secs + self.optimize_secs
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-pair objective of each epoch, measured before each update.
    pub epoch_objective: Vec<f64>,
    pub final_objective: f64,
    pub pairs_per_epoch: usize,
    pub timings: PhaseTimings,
}

/// `log σ(x)` without overflow.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective of one positive pair and its partial derivatives with
/// respect to each embedding involved.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGradient {
    pub loss: f64,
    pub target: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// `log σ(e_t·e_o) + Σ_i log σ(-e_t·e_i)` and its gradient.
pub fn pair_loss_and_grad(
    e_t: &[f64],
    e_o: &[f64],
    negatives: &[&[f64]],
) -> Result<PairGradient, TrainError> {
    let d = e_t.len();
    if e_o.len() != d || negatives.iter().any(|n| n.len() != d) {
        return Err(TrainError::Config("embedding lengths differ".into()));
    }
    if !e_t.iter().chain(e_o).chain(negatives.iter().flat_map(|n| n.iter())).all(|v| v.is_finite()) {
        return Err(TrainError::NonFinite("pair embeddings"));
    }
    let s = dot(e_t, e_o);
    let mut loss = log_sigmoid(s);
    let pos = sigmoid(-s);
    let mut target: Vec<f64> = e_o.iter().map(|v| pos * v).collect();
    let context: Vec<f64> = e_t.iter().map(|v| pos * v).collect();
    let mut grads = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = dot(e_t, n);
        loss += log_sigmoid(-s);
        let c = -sigmoid(s);
        for (t, v) in target.iter_mut().zip(n.iter()) {
            *t += c * v;
        }
        grads.push(e_t.iter().map(|v| c * v).collect());
    }
    Ok(PairGradient {
        loss,
        target,
        context,
        negatives: grads,
    })
}

/// Stable counting sort of `keys`; returns `(offsets, order)` such that the
/// items with key `k` are `order[offsets[k]..offsets[k + 1]]` in input order.
fn group_by_key(keys: &[u32], num_keys: usize) -> (Vec<usize>, Vec<u32>) {
    let mut offsets = vec![0usize; num_keys + 1];
    for &k in keys {
        offsets[k as usize + 1] += 1;
    }
    for i in 0..num_keys {
        offsets[i + 1] += offsets[i];
    }
    let mut cursor = offsets.clone();
    let mut order = vec![0u32; keys.len()];
    for (i, &k) in keys.iter().enumerate() {
        order[cursor[k as usize]] = i as u32;
        cursor[k as usize] += 1;
    }
    (offsets, order)
}

/// Scratch buffers for [`batch_objective_gradient`].
#[derive(Default)]
pub struct BatchWorkspace {
    slot: Vec<u32>,
    touched: Vec<NodeId>,
    emb: Vec<f64>,
    grad_e: Vec<f64>,
    pair_loss: Vec<f64>,
    coef: Vec<f64>,
    dest: Vec<u32>,
    src: Vec<(u32, f64)>,
    row_keys: Vec<u32>,
    row_src: Vec<(u32, f64)>,
}

const PAIR_CHUNK: usize = 1024;

/// Sums the objective over `pairs` (negatives: `pairs.len() * z` node ids,
/// row-major) and adds `scale · ∂L/∂W` into `grad_w`.
///
/// Every reduction runs in an order fixed by the input, so the result is
/// independent of the rayon thread count.
pub fn batch_objective_gradient(
    features: &[SparseFeatures],
    w: &EmbeddingMatrix,
    pairs: &[ContextPair],
    negatives: &[NodeId],
    scale: f64,
    ws: &mut BatchWorkspace,
    grad_w: &mut EmbeddingMatrix,
) -> f64 {
    let d = w.cols();
    let z = if pairs.is_empty() { 0 } else { negatives.len() / pairs.len() };
    assert_eq!(negatives.len(), pairs.len() * z);
    if ws.slot.len() < features.len() {
        ws.slot.resize(features.len(), u32::MAX);
    }

    // Dense slots for the nodes this batch touches.
    ws.touched.clear();
    let nodes = pairs
        .iter()
        .flat_map(|p| [p.target, p.context])
        .chain(negatives.iter().copied());
    for v in nodes {
        if ws.slot[v as usize] == u32::MAX {
            ws.slot[v as usize] = ws.touched.len() as u32;
            ws.touched.push(v);
        }
    }
    let slot = &ws.slot;
    let touched = &ws.touched;

    ws.emb.resize(touched.len() * d, 0.0);
    ws.emb
        .par_chunks_mut(d)
        .zip(touched.par_iter())
        .for_each(|(out, &v)| w.forward_into(&features[v as usize], out));
    let emb = &ws.emb;
    let e = |v: NodeId| &emb[slot[v as usize] as usize * d..][..d];

    // Per-pair coefficients: σ(-t·o) for the positive, -σ(t·n) per negative.
    ws.pair_loss.resize(pairs.len(), 0.0);
    ws.coef.resize(pairs.len() * (z + 1), 0.0);
    ws.pair_loss
        .par_chunks_mut(PAIR_CHUNK)
        .zip(ws.coef.par_chunks_mut(PAIR_CHUNK * (z + 1)))
        .enumerate()
        .for_each(|(chunk, (losses, coefs))| {
            for (k, (loss, c)) in losses.iter_mut().zip(coefs.chunks_mut(z + 1)).enumerate() {
                let p = chunk * PAIR_CHUNK + k;
                let pair = pairs[p];
                let et = e(pair.target);
                let s = dot(et, e(pair.context));
                let mut l = log_sigmoid(s);
                c[0] = sigmoid(-s);
                for (i, &n) in negatives[p * z..(p + 1) * z].iter().enumerate() {
                    let s = dot(et, e(n));
                    l += log_sigmoid(-s);
                    c[i + 1] = -sigmoid(s);
                }
                *loss = l;
            }
        });
    let total: f64 = ws.pair_loss.iter().sum();

    // ∂L/∂e_v = Σ coef · e_u over every (v, u) interaction.
    ws.dest.clear();
    ws.src.clear();
    for (p, pair) in pairs.iter().enumerate() {
        let c = &ws.coef[p * (z + 1)..(p + 1) * (z + 1)];
        let (t, o) = (slot[pair.target as usize], slot[pair.context as usize]);
        ws.dest.extend([t, o]);
        ws.src.extend([(o, c[0]), (t, c[0])]);
        for (i, &n) in negatives[p * z..(p + 1) * z].iter().enumerate() {
            let n = slot[n as usize];
            ws.dest.extend([t, n]);
            ws.src.extend([(n, c[i + 1]), (t, c[i + 1])]);
        }
    }
    let (offsets, order) = group_by_key(&ws.dest, touched.len());
    ws.grad_e.resize(touched.len() * d, 0.0);
    let src = &ws.src;
    ws.grad_e
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(v, g)| {
            g.iter_mut().for_each(|x| *x = 0.0);
            for &k in &order[offsets[v]..offsets[v + 1]] {
                let (u, c) = src[k as usize];
                let eu = &emb[u as usize * d..][..d];
                for (g, x) in g.iter_mut().zip(eu) {
                    *g += c * x;
                }
            }
        });

    // ∂L/∂W[i] = Σ_v x_v[i] · ∂L/∂e_v, grouped by feature row.
    ws.row_keys.clear();
    ws.row_src.clear();
    for (s, &v) in touched.iter().enumerate() {
        for (i, x) in features[v as usize].iter() {
            ws.row_keys.push(i);
            ws.row_src.push((s as u32, x));
        }
    }
    let (row_offsets, row_order) = group_by_key(&ws.row_keys, w.rows());
    let row_src = &ws.row_src;
    let grad_e = &ws.grad_e;
    grad_w
        .as_mut_slice()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(i, g)| {
            for &k in &row_order[row_offsets[i]..row_offsets[i + 1]] {
                let (s, x) = row_src[k as usize];
                let ge = &grad_e[s as usize * d..][..d];
                for (g, y) in g.iter_mut().zip(ge) {
                    *g += scale * x * y;
                }
            }
        });

    for &v in touched {
        ws.slot[v as usize] = u32::MAX;
    }
    total
}

fn batch_seed(seed: u64, epoch: u32, batch: usize) -> u64 {
    mix64(seed ^ mix64(((epoch as u64) << 40) ^ batch as u64 ^ 0x6e65_6761_7469_7665))
}

/// Fills `out` (`pairs * z` slots) with noise samples, seeded per chunk so
/// the draw does not depend on scheduling.
fn sample_negatives(noise: &NoiseDistribution, seed: u64, z: usize, out: &mut [NodeId]) {
    out.par_chunks_mut(PAIR_CHUNK * z)
        .enumerate()
        .for_each(|(chunk, slice)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ chunk as u64));
            for v in slice.iter_mut() {
                *v = noise.sample(&mut rng);
            }
        });
}

/// Runs all epochs over a fixed corpus, updating `w` in place. Returns the
/// mean per-pair objective of each epoch.
pub fn train_on_corpus(
    features: &[SparseFeatures],
    corpus: &[Walk],
    noise: &NoiseDistribution,
    w: &mut EmbeddingMatrix,
    cfg: &UnsupConfig,
) -> Result<Vec<f64>, TrainError> {
    cfg.validate()?;
    if let Some(x) = features.iter().find(|x| x.dim() != w.rows()) {
        return Err(ModelError::Shape {
            expected: w.rows(),
            got: x.dim(),
        }
        .into());
    }
    let total_pairs: usize = corpus
        .iter()
        .map(|walk| context_pair_count(walk.len(), cfg.window))
        .sum();
    if total_pairs == 0 {
        return Err(TrainError::Config("walk corpus yields no context pairs".into()));
    }
    match cfg.parallel_mode {
        ParallelMode::Deterministic => train_deterministic(features, corpus, noise, w, cfg, total_pairs),
        ParallelMode::Racy => train_racy(features, corpus, noise, w, cfg, total_pairs),
    }
}

/// Visits the epoch's pairs in a seed-defined walk order, handing out
/// batches of at most `batch_size` pairs.
fn for_each_batch<F>(
    corpus: &[Walk],
    cfg: &UnsupConfig,
    epoch: u32,
    mut f: F,
) -> Result<(), TrainError>
where
    F: FnMut(usize, &[ContextPair]) -> Result<(), TrainError>,
{
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix64(cfg.seed ^ 0x7761_6c6b ^ ((epoch as u64) << 32))));
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut index = 0;
    for &wi in &order {
        for pair in context_pairs(&corpus[wi], cfg.window) {
            batch.push(pair);
            if batch.len() == cfg.batch_size {
                f(index, &batch)?;
                index += 1;
                batch.clear();
            }
        }
    }
    if !batch.is_empty() {
        f(index, &batch)?;
    }
    Ok(())
}

fn train_deterministic(
    features: &[SparseFeatures],
    corpus: &[Walk],
    noise: &NoiseDistribution,
    w: &mut EmbeddingMatrix,
    cfg: &UnsupConfig,
    total_pairs: usize,
) -> Result<Vec<f64>, TrainError> {
    let z = cfg.negatives as usize;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, w.as_slice().len());
    let mut grad = EmbeddingMatrix::zeros(w.rows(), w.cols());
    let mut ws = BatchWorkspace::default();
    let mut negatives = Vec::new();
    let mut history = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 0..cfg.epochs {
        let mut objective = 0.0;
        for_each_batch(corpus, cfg, epoch, |index, batch| {
            negatives.resize(batch.len() * z, 0);
            sample_negatives(noise, batch_seed(cfg.seed, epoch, index), z, &mut negatives);
            grad.as_mut_slice().par_iter_mut().for_each(|g| *g = 0.0);
            // Minimise the negated mean objective.
            let scale = -1.0 / batch.len() as f64;
            let loss = batch_objective_gradient(features, w, batch, &negatives, scale, &mut ws, &mut grad);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            objective += loss;
            optimizer.step(w.as_mut_slice(), grad.as_slice());
            Ok(())
        })?;
        let mean = objective / total_pairs as f64;
        log::debug!("epoch {epoch}: mean objective {mean:.6}");
        if !mean.is_finite() || !w.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        history.push(mean);
    }
    Ok(history)
}

/// Parameters shared between Hogwild workers. Relaxed atomics make the
/// races well-defined: each scalar read sees some previously written value.
struct SharedParams(Vec<AtomicU64>);

impl SharedParams {
    fn new(values: &[f64]) -> Self {
        SharedParams(values.iter().map(|v| AtomicU64::new(v.to_bits())).collect())
    }

    #[inline]
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self.0[i].load(Ordering::Relaxed))
    }

    #[inline]
    fn set(&self, i: usize, v: f64) {
        self.0[i].store(v.to_bits(), Ordering::Relaxed)
    }

    fn to_vec(&self) -> Vec<f64> {
        (0..self.0.len()).map(|i| self.get(i)).collect()
    }
}

/// Pairs per Hogwild update.
const RACY_CHUNK: usize = 256;

struct RacyState<'a> {
    features: &'a [SparseFeatures],
    w: SharedParams,
    /// Adam moments, updated only for the rows a sub-batch touches.
    moments: Option<(SharedParams, SharedParams)>,
    steps: AtomicU64,
    d: usize,
    lr: f64,
}

impl RacyState<'_> {
    fn embed(&self, v: NodeId, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, x) in self.features[v as usize].iter() {
            let base = i as usize * self.d;
            for (j, o) in out.iter_mut().enumerate() {
                *o += x * self.w.get(base + j);
            }
        }
    }

    /// Computes the mean gradient of one sub-batch against the current
    /// (possibly concurrently modified) parameters and applies it in place.
    /// Returns the summed objective.
    fn process(&self, pairs: &[ContextPair], negatives: &[NodeId], z: usize) -> f64 {
        let d = self.d;
        let mut slot: HashMap<NodeId, usize> = HashMap::new();
        let mut nodes = Vec::new();
        for v in pairs.iter().flat_map(|p| [p.target, p.context]).chain(negatives.iter().copied()) {
            slot.entry(v).or_insert_with(|| {
                nodes.push(v);
                nodes.len() - 1
            });
        }
        let mut emb = vec![0.0; nodes.len() * d];
        for (k, &v) in nodes.iter().enumerate() {
            self.embed(v, &mut emb[k * d..(k + 1) * d]);
        }
        let mut grad_e = vec![0.0; nodes.len() * d];
        let mut total = 0.0;
        let add = |grad_e: &mut [f64], dst: usize, src: usize, c: f64| {
            for j in 0..d {
                grad_e[dst * d + j] += c * emb[src * d + j];
            }
        };
        for (p, pair) in pairs.iter().enumerate() {
            let (t, o) = (slot[&pair.target], slot[&pair.context]);
            let s = dot(&emb[t * d..][..d], &emb[o * d..][..d]);
            total += log_sigmoid(s);
            let c = sigmoid(-s);
            add(&mut grad_e, t, o, c);
            add(&mut grad_e, o, t, c);
            for &n in &negatives[p * z..(p + 1) * z] {
                let n = slot[&n];
                let s = dot(&emb[t * d..][..d], &emb[n * d..][..d]);
                total += log_sigmoid(-s);
                let c = -sigmoid(s);
                add(&mut grad_e, t, n, c);
                add(&mut grad_e, n, t, c);
            }
        }

        // Descent direction on the negated mean objective, per feature row.
        let scale = -1.0 / pairs.len() as f64;
        let mut rows: HashMap<u32, Vec<f64>> = HashMap::new();
        for (k, &v) in nodes.iter().enumerate() {
            for (i, x) in self.features[v as usize].iter() {
                let g = rows.entry(i).or_insert_with(|| vec![0.0; d]);
                for j in 0..d {
                    g[j] += scale * x * grad_e[k * d + j];
                }
            }
        }
        let step = self.steps.fetch_add(1, Ordering::Relaxed) + 1;
        let step = step.min(i32::MAX as u64) as i32;
        for (i, g) in rows {
            let base = i as usize * d;
            match &self.moments {
                None => {
                    for (j, g) in g.iter().enumerate() {
                        self.w.set(base + j, self.w.get(base + j) - self.lr * g);
                    }
                }
                Some((m, s)) => {
                    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                    let corr = (1.0 - b2.powi(step)).sqrt() / (1.0 - b1.powi(step));
                    for (j, g) in g.iter().enumerate() {
                        let k = base + j;
                        let mk = b1 * m.get(k) + (1.0 - b1) * g;
                        let sk = b2 * s.get(k) + (1.0 - b2) * g * g;
                        m.set(k, mk);
                        s.set(k, sk);
                        self.w.set(k, self.w.get(k) - self.lr * corr * mk / (sk.sqrt() + eps));
                    }
                }
            }
        }
        total
    }
}

fn train_racy(
    features: &[SparseFeatures],
    corpus: &[Walk],
    noise: &NoiseDistribution,
    w: &mut EmbeddingMatrix,
    cfg: &UnsupConfig,
    total_pairs: usize,
) -> Result<Vec<f64>, TrainError> {
    let z = cfg.negatives as usize;
    let state = RacyState {
        features,
        w: SharedParams::new(w.as_slice()),
        moments: match cfg.optimizer {
            OptimizerKind::PlainSgd => None,
            OptimizerKind::AdaptiveMoment => {
                let zeros = vec![0.0; w.as_slice().len()];
                Some((SharedParams::new(&zeros), SharedParams::new(&zeros)))
            }
        },
        steps: AtomicU64::new(0),
        d: w.cols(),
        lr: cfg.learning_rate,
    };
    let mut negatives = Vec::new();
    let mut history = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 0..cfg.epochs {
        let mut objective = 0.0;
        for_each_batch(corpus, cfg, epoch, |index, batch| {
            negatives.resize(batch.len() * z, 0);
            sample_negatives(noise, batch_seed(cfg.seed, epoch, index), z, &mut negatives);
            let loss: f64 = batch
                .par_chunks(RACY_CHUNK)
                .zip(negatives.par_chunks(RACY_CHUNK * z))
                .map(|(pairs, negs)| state.process(pairs, negs, z))
                .sum();
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            objective += loss;
            Ok(())
        })?;
        history.push(objective / total_pairs as f64);
    }
    let trained = state.w.to_vec();
    if !trained.iter().all(|v| v.is_finite()) {
        return Err(TrainError::Diverged {
            epoch: cfg.epochs - 1,
        });
    }
    w.as_mut_slice().copy_from_slice(&trained);
    Ok(history)
}

/// Full pipeline: encode, walk, optimise. The matrix is initialised
/// uniformly in `±0.5/d` from the configuration seed.
pub fn train_unsupervised(
    g: &Graph,
    enc: &EncoderConfig,
    walk: &WalkConfig,
    cfg: &UnsupConfig,
) -> Result<(EmbeddingMatrix, TrainReport), TrainError> {
    cfg.validate()?;
    enc.validate()
        .map_err(|e| TrainError::Config(e.to_string()))?;
    if walk.walks_per_node == 0 || walk.walk_length == 0 {
        return Err(TrainError::Config("walks_per_node and walk_length must be >= 1".into()));
    }
    let mut timings = PhaseTimings::default();

    let start = Instant::now();
    let features = encode_all(g, enc);
    timings.encode_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let corpus = generate_corpus(g, walk);
    let noise = NoiseDistribution::build(cfg.noise, g.num_nodes(), &corpus);
    timings.walk_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut w = EmbeddingMatrix::init_default(enc.dim(), cfg.embedding_dim, mix64(cfg.seed ^ 0x696e_6974));
    let history = train_on_corpus(&features, &corpus, &noise, &mut w, cfg)?;
    timings.optimize_secs = start.elapsed().as_secs_f64();

    let pairs_per_epoch = corpus
        .iter()
        .map(|walk| context_pair_count(walk.len(), cfg.window))
        .sum();
    Ok((
        w,
        TrainReport {
            final_objective: *history.last().unwrap(),
            epoch_objective: history,
            pairs_per_epoch,
            timings,
        },
    ))
}

/// Embeds every node of `g`, which need not be the training graph.
/// Degrees above the configuration's `delta_max` are clipped.
pub fn embed_nodes(
    g: &Graph,
    enc: &EncoderConfig,
    w: &EmbeddingMatrix,
) -> Result<Vec<DenseEmbedding>, TrainError> {
    if w.rows() != enc.dim() {
        return Err(ModelError::Shape {
            expected: enc.dim(),
            got: w.rows(),
        }
        .into());
    }
    let features = encode_all(g, enc);
    Ok(features
        .par_iter()
        .map(|x| {
            let mut e = vec![0.0; w.cols()];
            w.forward_into(x, &mut e);
            e
        })
        .collect())
}
