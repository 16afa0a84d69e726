//! Uniform random walks, skip-gram context pairs, and the noise
//! distribution negatives are drawn from.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkConfig {
    /// Walks started from every node (`w`).
    #[serde(alias = "w")]
    pub walks_per_node: u32,
    /// Nodes per walk (`s`).
    #[serde(alias = "s")]
    pub walk_length: u32,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 10,
            walk_length: 80,
            seed: 0,
        }
    }
}

pub type Walk = Vec<NodeId>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ContextPair {
    pub target: NodeId,
    pub context: NodeId,
}

/// SplitMix64 finaliser; decorrelates consecutive inputs.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one walk, a function of the corpus seed, start node and replica
/// only, so the corpus is independent of how walks are scheduled.
pub fn walk_seed(seed: u64, start: NodeId, replica: u32) -> u64 {
    mix64(seed ^ mix64(((replica as u64) << 32) | start as u64))
}

/// A walk of `length` nodes starting at `start`, each step to a uniformly
/// chosen neighbour. Stops early only at an isolated node.
pub fn random_walk<R: Rng>(g: &Graph, start: NodeId, length: u32, rng: &mut R) -> Walk {
    assert!((start as usize) < g.num_nodes(), "start node {start} out of range");
    let mut walk = Vec::with_capacity(length as usize);
    walk.push(start);
    let mut current = start;
    while walk.len() < length as usize {
        let nbrs = g.neighbors(current);
        if nbrs.is_empty() {
            break;
        }
        current = nbrs[rng.gen_range(0..nbrs.len())];
        walk.push(current);
    }
    walk
}

/// `walks_per_node` walks from every node, ordered replica-major then by
/// start node.
pub fn generate_corpus(g: &Graph, cfg: &WalkConfig) -> Vec<Walk> {
    let n = g.num_nodes() as u64;
    (0..cfg.walks_per_node as u64 * n)
        .into_par_iter()
        .map(|k| {
            let replica = (k / n) as u32;
            let start = (k % n) as NodeId;
            let mut rng = ChaCha8Rng::seed_from_u64(walk_seed(cfg.seed, start, replica));
            random_walk(g, start, cfg.walk_length, &mut rng)
        })
        .collect()
}

/// Every `(walk[t], walk[o])` with `0 < |o - t| <= window`, repetitions kept.
pub fn context_pairs(walk: &[NodeId], window: u32) -> impl Iterator<Item = ContextPair> + '_ {
    let p = window as usize;
    (0..walk.len()).flat_map(move |t| {
        let lo = t.saturating_sub(p);
        let hi = (t + p).min(walk.len().saturating_sub(1));
        (lo..=hi).filter(move |&o| o != t).map(move |o| ContextPair {
            target: walk[t],
            context: walk[o],
        })
    })
}

/// Number of pairs [`context_pairs`] yields for a walk of `len` nodes.
pub fn context_pair_count(len: usize, window: u32) -> usize {
    let p = window as usize;
    if len == 0 {
        0
    } else if len - 1 <= p {
        len * (len - 1)
    } else {
        2 * p * len - p * (p + 1)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    Uniform,
    /// Proportional to walk visit counts raised to 3/4.
    Frequency,
}

#[derive(Clone, Debug)]
pub struct NoiseDistribution {
    kind: NoiseKind,
    num_nodes: usize,
    cumulative: Vec<f64>,
}

impl NoiseDistribution {
    pub fn uniform(num_nodes: usize) -> Self {
        assert!(num_nodes > 0);
        NoiseDistribution {
            kind: NoiseKind::Uniform,
            num_nodes,
            cumulative: Vec::new(),
        }
    }

    /// `P(v) ∝ counts[v]^0.75`. Falls back to uniform if every count is zero.
    pub fn from_counts(counts: &[u64]) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Self::uniform(counts.len());
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        *cumulative.last_mut().unwrap() = 1.0;
        NoiseDistribution {
            kind: NoiseKind::Frequency,
            num_nodes: counts.len(),
            cumulative,
        }
    }

    pub fn build(kind: NoiseKind, num_nodes: usize, corpus: &[Walk]) -> Self {
        match kind {
            NoiseKind::Uniform => Self::uniform(num_nodes),
            NoiseKind::Frequency => Self::from_counts(&visit_counts(corpus, num_nodes)),
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn probability(&self, v: NodeId) -> f64 {
        match self.kind {
            NoiseKind::Uniform => 1.0 / self.num_nodes as f64,
            NoiseKind::Frequency => {
                let i = v as usize;
                self.cumulative[i] - if i == 0 { 0.0 } else { self.cumulative[i - 1] }
            }
        }
    }

    #[inline]
    pub fn sample<R: Rng>(&self, rng: &mut R) -> NodeId {
        match self.kind {
            NoiseKind::Uniform => rng.gen_range(0..self.num_nodes as NodeId),
            NoiseKind::Frequency => {
                let u: f64 = rng.gen();
                let i = self.cumulative.partition_point(|&c| c <= u);
                i.min(self.num_nodes - 1) as NodeId
            }
        }
    }
}

pub fn visit_counts(corpus: &[Walk], num_nodes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_nodes];
    for walk in corpus {
        for &v in walk {
            counts[v as usize] += 1;
        }
    }
    counts
}

/// One walk per line, space separated.
pub fn write_corpus<W: Write>(mut out: W, corpus: &[Walk]) -> std::io::Result<()> {
    for walk in corpus {
        let line: Vec<String> = walk.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}
