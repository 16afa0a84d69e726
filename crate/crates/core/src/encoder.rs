//! Sparse structural features: for every node, the counts of (distance,
//! induced degree) pairs inside its α-hop neighbourhood.
//!
//! Feature `(c, δ)` lives at flat index `c * bins + (bin(δ) - 1)` of a vector
//! of length `(alpha + 1) * bins`. Degrees are clipped into `1..=delta_max`,
//! so a graph with larger degrees than the one the configuration was fitted
//! on still encodes into the same space. A root with induced degree 0
//! (`alpha = 0`, or an isolated node) lands in bin 1.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Neighborhood, NeighborhoodScratch, NodeId, NodeLabels};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("delta_max must be >= 1")]
    ZeroDeltaMax,
    #[error("feature index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: u32, dim: usize },
    #[error("feature indices must be strictly increasing")]
    Unsorted,
    #[error("feature values must be positive and finite, got {0}")]
    BadValue(f64),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub alpha: u32,
    pub delta_max: u32,
    #[serde(default = "yes")]
    pub apply_log: bool,
    #[serde(default = "yes")]
    pub apply_unit_norm: bool,
    /// Bin degrees by `floor(log2 δ)` instead of one bin per degree.
    #[serde(default)]
    pub log_bins: bool,
}

impl EncoderConfig {
    pub fn new(alpha: u32, delta_max: u32) -> Self {
        EncoderConfig {
            alpha,
            delta_max,
            apply_log: true,
            apply_unit_norm: true,
            log_bins: false,
        }
    }

    /// Sizes the degree axis to the largest degree of `g` (at least 1).
    pub fn fit(g: &Graph, alpha: u32) -> Self {
        Self::new(alpha, g.max_degree().max(1) as u32)
    }

    /// Raw counts, no transforms.
    pub fn raw(mut self) -> Self {
        self.apply_log = false;
        self.apply_unit_norm = false;
        self
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.delta_max == 0 {
            return Err(EncoderError::ZeroDeltaMax);
        }
        Ok(())
    }

    pub fn degree_bins(&self) -> u32 {
        if self.log_bins {
            self.delta_max.ilog2() + 1
        } else {
            self.delta_max
        }
    }

    /// Length ℓ of the feature vector.
    pub fn dim(&self) -> usize {
        (self.alpha as usize + 1) * self.degree_bins() as usize
    }

    /// 1-based degree bin after clipping.
    pub fn bin(&self, degree: u32) -> u32 {
        let clipped = degree.clamp(1, self.delta_max);
        if self.log_bins {
            clipped.ilog2() + 1
        } else {
            clipped
        }
    }

    pub fn index(&self, distance: u32, degree: u32) -> FeatureIndex {
        debug_assert!(distance <= self.alpha);
        let bin = self.bin(degree);
        FeatureIndex {
            distance,
            bin,
            flat: distance * self.degree_bins() + (bin - 1),
        }
    }

    pub fn unflatten(&self, flat: u32) -> FeatureIndex {
        let bins = self.degree_bins();
        FeatureIndex {
            distance: flat / bins,
            bin: flat % bins + 1,
            flat,
        }
    }
}

/// Position of a `(distance, degree bin)` feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureIndex {
    pub distance: u32,
    pub bin: u32,
    pub flat: u32,
}

/// A sparse vector with strictly increasing indices and positive values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseFeatures {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseFeatures {
    pub fn new(dim: usize, entries: Vec<(u32, f64)>) -> Result<Self, EncoderError> {
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            if i as usize >= dim {
                return Err(EncoderError::IndexOutOfRange { index: i, dim });
            }
            if indices.last().is_some_and(|&last| last >= i) {
                return Err(EncoderError::Unsorted);
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(EncoderError::BadValue(v));
            }
            indices.push(i);
            values.push(v);
        }
        Ok(SparseFeatures {
            dim,
            indices,
            values,
        })
    }

    pub fn empty(dim: usize) -> Self {
        SparseFeatures {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            dense[i as usize] = v;
        }
        dense
    }
}

/// Reusable buffers for [`encode_node_with`].
pub struct EncodeScratch {
    ball: Neighborhood,
    visit: NeighborhoodScratch,
    flat: Vec<u32>,
}

impl EncodeScratch {
    pub fn new(g: &Graph) -> Self {
        EncodeScratch {
            ball: Neighborhood::default(),
            visit: NeighborhoodScratch::new(g.num_nodes()),
            flat: Vec::new(),
        }
    }
}

pub fn encode_node(g: &Graph, n: NodeId, cfg: &EncoderConfig) -> SparseFeatures {
    encode_node_with(g, n, cfg, &mut EncodeScratch::new(g))
}

pub fn encode_node_with(
    g: &Graph,
    n: NodeId,
    cfg: &EncoderConfig,
    scratch: &mut EncodeScratch,
) -> SparseFeatures {
    g.neighborhood_into(n, cfg.alpha, &mut scratch.visit, &mut scratch.ball);
    scratch.flat.clear();
    scratch.flat.extend(
        scratch
            .ball
            .nodes
            .iter()
            .map(|b| cfg.index(b.distance, b.induced_degree).flat),
    );
    scratch.flat.sort_unstable();

    let mut indices = Vec::new();
    let mut values = Vec::new();
    for run in scratch.flat.chunk_by(|a, b| a == b) {
        indices.push(run[0]);
        let count = run.len() as f64;
        values.push(if cfg.apply_log { (1.0 + count).log2() } else { count });
    }
    if cfg.apply_unit_norm {
        let max = values.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            values.iter_mut().for_each(|v| *v /= max);
        }
    }
    SparseFeatures {
        dim: cfg.dim(),
        indices,
        values,
    }
}

/// Encodes every node. Rows are independent, so the work fans out over the
/// rayon pool; the result does not depend on the thread count.
pub fn encode_all(g: &Graph, cfg: &EncoderConfig) -> Vec<SparseFeatures> {
    (0..g.num_nodes() as NodeId)
        .into_par_iter()
        .map_init(|| EncodeScratch::new(g), |s, n| encode_node_with(g, n, cfg, s))
        .collect()
}

/// Writes `node (c,delta):value ...` lines, one per node.
pub fn write_features<W: Write>(
    mut out: W,
    rows: &[SparseFeatures],
    cfg: &EncoderConfig,
    labels: Option<&NodeLabels>,
) -> Result<(), EncoderError> {
    let mut line = String::new();
    for (node, row) in rows.iter().enumerate() {
        line.clear();
        match labels {
            Some(l) => line.push_str(l.name(node as NodeId)),
            None => write!(line, "{node}").unwrap(),
        }
        for (i, v) in row.iter() {
            let idx = cfg.unflatten(i);
            write!(line, " ({},{}):{}", idx.distance, idx.bin, v).unwrap();
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Parses the output of [`write_features`] into `(node label, features)`.
pub fn read_features<R: BufRead>(
    input: R,
    cfg: &EncoderConfig,
) -> Result<Vec<(String, SparseFeatures)>, EncoderError> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let err = |reason: &str| EncoderError::Parse {
            line: i + 1,
            reason: reason.to_owned(),
        };
        let mut toks = line.split_whitespace();
        let Some(node) = toks.next() else { continue };
        let mut entries = Vec::new();
        for tok in toks {
            let (key, value) = tok.split_once(':').ok_or_else(|| err("missing ':'"))?;
            let key = key
                .strip_prefix('(')
                .and_then(|k| k.strip_suffix(')'))
                .ok_or_else(|| err("expected (c,delta)"))?;
            let (c, bin) = key.split_once(',').ok_or_else(|| err("expected (c,delta)"))?;
            let c: u32 = c.parse().map_err(|_| err("bad distance"))?;
            let bin: u32 = bin.parse().map_err(|_| err("bad degree bin"))?;
            if c > cfg.alpha || bin == 0 || bin > cfg.degree_bins() {
                return Err(err("feature outside the configured space"));
            }
            let value: f64 = value.parse().map_err(|_| err("bad value"))?;
            entries.push((c * cfg.degree_bins() + bin - 1, value));
        }
        let features = SparseFeatures::new(cfg.dim(), entries).map_err(|e| err(&e.to_string()))?;
        rows.push((node.to_owned(), features));
    }
    Ok(rows)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::graph::{clone_graph_with_bridge, generate_erdos_renyi, GraphGenSpec};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    /// A graph whose node 0 has the distance-degree profile of the worked
    /// encoding figure: {(0,2):1, (1,2):1, (1,4):1, (2,3):2, (2,4):1}.
    /// Node 6 hangs off a distance-2 node, outside the α = 2 ball.
    pub(crate) fn figure_graph() -> Graph {
        Graph::from_edges(
            7,
            [
                (0, 1),
                (0, 2),
                (1, 5),
                (2, 3),
                (2, 4),
                (2, 5),
                (3, 4),
                (3, 5),
                (4, 5),
                (3, 6),
            ],
        )
    }

    /// Independent route: full BFS, explicit induced-edge count, map of
    /// (distance, clipped degree) → count.
    pub(crate) fn oracle_counts(
        g: &Graph,
        n: NodeId,
        alpha: u32,
        delta_max: u32,
    ) -> BTreeMap<(u32, u32), usize> {
        let dist = g.bfs_distances(n);
        let inside = |v: NodeId| dist[v as usize] <= alpha;
        let mut counts = BTreeMap::new();
        for v in 0..g.num_nodes() as NodeId {
            if !inside(v) {
                continue;
            }
            let deg = g.neighbors(v).iter().filter(|&&u| inside(u)).count() as u32;
            *counts
                .entry((dist[v as usize], deg.clamp(1, delta_max)))
                .or_insert(0) += 1;
        }
        counts
    }

    pub(crate) fn as_counts(cfg: &EncoderConfig, x: &SparseFeatures) -> BTreeMap<(u32, u32), usize> {
        x.iter()
            .map(|(i, v)| {
                let idx = cfg.unflatten(i);
                ((idx.distance, idx.bin), v as usize)
            })
            .collect()
    }

    #[test]
    fn figure_profile() {
        let g = figure_graph();
        let cfg = EncoderConfig::fit(&g, 2).raw();
        let x = encode_node(&g, 0, &cfg);
        let expected: BTreeMap<_, _> = [((0, 2), 1), ((1, 2), 1), ((1, 4), 1), ((2, 3), 2), ((2, 4), 1)]
            .into_iter()
            .collect();
        assert_eq!(as_counts(&cfg, &x), expected);
        assert_eq!(cfg.delta_max, 4);
        assert_eq!(x.dim(), 12);
    }

    #[test]
    fn log_transform_of_three_is_two() {
        // Star with three leaves: the root sees three degree-1 nodes at distance 1.
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]);
        let mut cfg = EncoderConfig::fit(&g, 1);
        cfg.apply_unit_norm = false;
        let x = encode_node(&g, 0, &cfg);
        let at = cfg.index(1, 1).flat;
        let v = x.iter().find(|&(i, _)| i == at).unwrap().1;
        assert_eq!(v, 2.0);
        // After unit norm the largest value is exactly 1.
        cfg.apply_unit_norm = true;
        let x = encode_node(&g, 0, &cfg);
        assert_eq!(x.values().iter().copied().fold(0.0, f64::max), 1.0);
        assert_eq!(x.values(), &[1.0 / 2.0, 1.0]);
    }

    #[test]
    fn triangle_rows_identical() {
        let g = Graph::from_edges(3, [(0, 1), (1, 2), (2, 0)]);
        let cfg = EncoderConfig::fit(&g, 1).raw();
        let rows = encode_all(&g, &cfg);
        let expected: BTreeMap<_, _> = [((0, 2), 1), ((1, 2), 2)].into_iter().collect();
        for row in &rows {
            assert_eq!(as_counts(&cfg, row), expected);
        }
    }

    #[test]
    fn degree_zero_root_goes_to_bin_one() {
        let g = Graph::from_edges(3, [(0, 1)]);
        let cfg = EncoderConfig::fit(&g, 2).raw();
        let isolated = encode_node(&g, 2, &cfg);
        assert_eq!(isolated.iter().collect::<Vec<_>>(), vec![(0, 1.0)]);
        let alpha0 = EncoderConfig::fit(&g, 0).raw();
        assert_eq!(encode_node(&g, 0, &alpha0).iter().collect::<Vec<_>>(), vec![(0, 1.0)]);
    }

    #[test]
    fn fit_config_cases() {
        let star = Graph::from_edges(6, (1..6).map(|v| (0, v)));
        assert_eq!(EncoderConfig::fit(&star, 2).delta_max, 5);
        let edgeless = Graph::from_edges(4, []);
        assert_eq!(EncoderConfig::fit(&edgeless, 1).delta_max, 1);
    }

    #[test]
    fn clipping_keeps_indices_in_range() {
        let star = Graph::from_edges(11, (1..11).map(|v| (0, v)));
        let small = EncoderConfig::new(2, 3);
        for v in 0..11 {
            let x = encode_node(&star, v, &small);
            assert!(x.indices().iter().all(|&i| (i as usize) < small.dim()));
        }
        let x = encode_node(&star, 0, &small.raw());
        assert_eq!(as_counts(&small, &x)[&(0, 3)], 1);
    }

    #[test]
    fn log_bins_shrink_the_space() {
        let mut cfg = EncoderConfig::new(1, 1045);
        cfg.log_bins = true;
        assert_eq!(cfg.degree_bins(), 11);
        assert_eq!(cfg.dim(), 22);
        assert_eq!(cfg.bin(1), 1);
        assert_eq!(cfg.bin(3), 2);
        assert_eq!(cfg.bin(5000), 11);
    }

    #[test]
    fn matches_oracle_on_random_graph() {
        let g = generate_erdos_renyi(&GraphGenSpec {
            num_nodes: 200,
            avg_degree: 0.05 * 199.0,
            seed: 21,
        })
        .unwrap();
        for alpha in 0..3 {
            let cfg = EncoderConfig::fit(&g, alpha).raw();
            let rows = encode_all(&g, &cfg);
            for (v, row) in rows.iter().enumerate() {
                assert_eq!(
                    as_counts(&cfg, row),
                    oracle_counts(&g, v as NodeId, alpha, cfg.delta_max)
                );
            }
        }
    }

    #[test]
    fn parallel_equals_sequential() {
        let g = generate_erdos_renyi(&GraphGenSpec {
            num_nodes: 300,
            avg_degree: 6.0,
            seed: 5,
        })
        .unwrap();
        let cfg = EncoderConfig::fit(&g, 2);
        let parallel = encode_all(&g, &cfg);
        let mut scratch = EncodeScratch::new(&g);
        for v in 0..300 {
            assert_eq!(parallel[v as usize], encode_node_with(&g, v, &cfg, &mut scratch));
        }
    }

    #[test]
    fn clones_encode_identically() {
        let g = generate_erdos_renyi(&GraphGenSpec {
            num_nodes: 60,
            avg_degree: 3.0,
            seed: 8,
        })
        .unwrap();
        let c = clone_graph_with_bridge(&g, 1);
        let n = 60;
        let cfg = EncoderConfig::fit(&c.graph, 2);
        let near_a = c.graph.bfs_distances(c.bridge.0);
        let near_b = c.graph.bfs_distances(c.bridge.1);
        let mut checked = 0;
        for v in 0..n {
            let far = |u: NodeId| near_a[u as usize] > 2 && near_b[u as usize] > 2;
            if far(v) && far(v + n) {
                assert_eq!(encode_node(&c.graph, v, &cfg), encode_node(&c.graph, v + n, &cfg));
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn text_round_trip() {
        let g = figure_graph();
        let cfg = EncoderConfig::fit(&g, 2);
        let rows = encode_all(&g, &cfg);
        let mut buf = Vec::new();
        write_features(&mut buf, &rows, &cfg, None).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("0 (0,2):"));
        let parsed = read_features(buf.as_slice(), &cfg).unwrap();
        assert_eq!(parsed.len(), rows.len());
        for ((label, x), (i, row)) in parsed.iter().zip(rows.iter().enumerate()) {
            assert_eq!(label, &i.to_string());
            assert_eq!(x, row);
        }
    }

    #[test]
    fn sparse_features_validate() {
        assert!(SparseFeatures::new(4, vec![(1, 1.0), (1, 1.0)]).is_err());
        assert!(SparseFeatures::new(4, vec![(4, 1.0)]).is_err());
        assert!(SparseFeatures::new(4, vec![(0, 0.0)]).is_err());
        assert!(EncoderConfig::new(1, 0).validate().is_err());
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (2usize..40).prop_flat_map(|n| {
            prop::collection::vec((0..n as NodeId, 0..n as NodeId), 0..120)
                .prop_map(move |edges| Graph::from_edges(n, edges))
        })
    }

    proptest! {
        #[test]
        fn permutation_invariance(g in arb_graph(), seed in any::<u64>(), alpha in 0u32..4) {
            use rand::{seq::SliceRandom, SeedableRng};
            let n = g.num_nodes();
            let mut perm: Vec<NodeId> = (0..n as NodeId).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let h = g.permute(&perm);
            let cfg = EncoderConfig::fit(&g, alpha);
            for v in 0..n as NodeId {
                prop_assert_eq!(encode_node(&g, v, &cfg), encode_node(&h, perm[v as usize], &cfg));
            }
        }

        #[test]
        fn sparsity_and_distance_bounds(g in arb_graph(), alpha in 0u32..4) {
            let cfg = EncoderConfig::fit(&g, alpha);
            let raw = cfg.raw();
            for v in 0..g.num_nodes() as NodeId {
                let ball = g.neighborhood_subgraph(v, alpha);
                let x = encode_node(&g, v, &cfg);
                prop_assert!(x.len() <= cfg.dim().min(ball.nodes.len()));
                for (i, _) in x.iter() {
                    let c = cfg.unflatten(i).distance;
                    prop_assert!(ball.nodes.iter().any(|b| b.distance == c));
                }
                let counts = encode_node(&g, v, &raw);
                prop_assert!(counts.values().iter().all(|c| c.fract() == 0.0));
                prop_assert_eq!(counts.values().iter().sum::<f64>() as usize, ball.nodes.len());
            }
        }
    }
}
