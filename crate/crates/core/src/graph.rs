//! Undirected graphs in compressed adjacency form, edge-list I/O, and the
//! dataset transforms used by the evaluation protocols.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense node identifier in `0..num_nodes`.
pub type NodeId = u32;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected two node labels, got {content:?}")]
    MalformedLine { line: usize, content: String },
    #[error("edge list contains no nodes")]
    Empty,
    #[error("graph is not connected")]
    NotConnected,
    #[error("split fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error(
        "cannot remove {requested} edges and keep the graph connected; at most {achievable} edges are removable"
    )]
    QuotaUnreachable { requested: usize, achievable: usize },
    #[error("only {available} non-adjacent node pairs exist but {requested} negatives were requested")]
    NotEnoughNonEdges { requested: usize, available: usize },
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
}

impl GraphError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        GraphError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// Immutable simple undirected graph.
///
/// Neighbours of node `v` live in `targets[offsets[v]..offsets[v + 1]]`,
/// sorted ascending. Every edge is stored once in each direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
}

/// Counters reported while building a graph from raw pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub self_loops: usize,
    pub duplicates: usize,
}

impl Graph {
    /// Builds a graph over `num_nodes` nodes. Self-loops are dropped and
    /// duplicate or reversed edges collapse into one.
    ///
    /// Panics if an endpoint is `>= num_nodes`.
    pub fn from_edges<I>(num_nodes: usize, edges: I) -> Self
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        Self::build(num_nodes, edges).0
    }

    pub fn build<I>(num_nodes: usize, edges: I) -> (Self, BuildStats)
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        let mut stats = BuildStats::default();
        let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
        for (u, v) in edges {
            assert!(
                (u as usize) < num_nodes && (v as usize) < num_nodes,
                "edge ({u}, {v}) out of range for {num_nodes} nodes"
            );
            if u == v {
                stats.self_loops += 1;
                continue;
            }
            pairs.push((u.min(v), u.max(v)));
        }
        let before = pairs.len();
        pairs.sort_unstable();
        pairs.dedup();
        stats.duplicates = before - pairs.len();

        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in &pairs {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..num_nodes].to_vec();
        let mut targets = vec![0; offsets[num_nodes]];
        for &(u, v) in &pairs {
            targets[cursor[u as usize]] = v;
            cursor[u as usize] += 1;
            targets[cursor[v as usize]] = u;
            cursor[v as usize] += 1;
        }
        for v in 0..num_nodes {
            targets[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        (Graph { offsets, targets }, stats)
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        let v = v as usize;
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: NodeId) -> usize {
        let v = v as usize;
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes() as NodeId)
            .map(|v| self.degree(v))
            .max()
            .unwrap_or(0)
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.num_nodes() as NodeId).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    /// Hop distances from `source`; unreachable nodes get `u32::MAX`.
    pub fn bfs_distances(&self, source: NodeId) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.num_nodes()];
        let mut queue = std::collections::VecDeque::new();
        dist[source as usize] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let next = dist[u as usize] + 1;
            for &v in self.neighbors(u) {
                if dist[v as usize] == u32::MAX {
                    dist[v as usize] = next;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        if self.num_nodes() == 0 {
            return true;
        }
        self.bfs_distances(0).iter().all(|&d| d != u32::MAX)
    }

    /// Renames node `v` to `perm[v]`.
    pub fn permute(&self, perm: &[NodeId]) -> Graph {
        assert_eq!(perm.len(), self.num_nodes());
        Graph::from_edges(
            self.num_nodes(),
            self.edges().map(|(u, v)| (perm[u as usize], perm[v as usize])),
        )
    }

    /// Nodes within `alpha` hops of `root`, each with its hop distance and
    /// its degree inside the induced subgraph.
    pub fn neighborhood_subgraph(&self, root: NodeId, alpha: u32) -> Neighborhood {
        let mut scratch = NeighborhoodScratch::new(self.num_nodes());
        let mut out = Neighborhood::default();
        self.neighborhood_into(root, alpha, &mut scratch, &mut out);
        out
    }

    /// Allocation-free variant of [`Graph::neighborhood_subgraph`] for hot loops.
    pub fn neighborhood_into(
        &self,
        root: NodeId,
        alpha: u32,
        scratch: &mut NeighborhoodScratch,
        out: &mut Neighborhood,
    ) {
        assert!((root as usize) < self.num_nodes(), "node {root} out of range");
        scratch.next_epoch(self.num_nodes());
        let epoch = scratch.epoch;
        out.nodes.clear();
        scratch.stamp[root as usize] = epoch;
        out.nodes.push(BallNode {
            node: root,
            distance: 0,
            induced_degree: 0,
        });
        let mut head = 0;
        while head < out.nodes.len() {
            let BallNode { node, distance, .. } = out.nodes[head];
            head += 1;
            if distance == alpha {
                continue;
            }
            for &v in self.neighbors(node) {
                if scratch.stamp[v as usize] != epoch {
                    scratch.stamp[v as usize] = epoch;
                    out.nodes.push(BallNode {
                        node: v,
                        distance: distance + 1,
                        induced_degree: 0,
                    });
                }
            }
        }
        for entry in out.nodes.iter_mut() {
            // Interior nodes keep every neighbour; only the frontier loses edges.
            entry.induced_degree = if entry.distance < alpha {
                self.degree(entry.node) as u32
            } else {
                self.neighbors(entry.node)
                    .iter()
                    .filter(|&&v| scratch.stamp[v as usize] == epoch)
                    .count() as u32
            };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct BallNode {
    pub node: NodeId,
    pub distance: u32,
    pub induced_degree: u32,
}

/// The α-ball around a node, root first, then in BFS order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Neighborhood {
    pub nodes: Vec<BallNode>,
}

/// Reusable visit marks for repeated neighbourhood extraction.
#[derive(Clone, Debug)]
pub struct NeighborhoodScratch {
    stamp: Vec<u32>,
    epoch: u32,
}

impl NeighborhoodScratch {
    pub fn new(num_nodes: usize) -> Self {
        NeighborhoodScratch {
            stamp: vec![0; num_nodes],
            epoch: 0,
        }
    }

    fn next_epoch(&mut self, num_nodes: usize) {
        if self.stamp.len() < num_nodes {
            self.stamp.resize(num_nodes, 0);
        }
        if self.epoch == u32::MAX {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 0;
        }
        self.epoch += 1;
    }
}

/// Bijection between external node labels and dense ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeLabels {
    names: Vec<String>,
    index: HashMap<String, NodeId>,
}

impl NodeLabels {
    /// Labels `"0".."n-1"`.
    pub fn identity(n: usize) -> Self {
        let mut labels = NodeLabels::default();
        for i in 0..n {
            labels.intern(&i.to_string());
        }
        labels
    }

    pub fn intern(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as NodeId;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Writes `node_id<TAB>label` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| GraphError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, name) in self.names.iter().enumerate() {
            writeln!(w, "{i}\t{name}").map_err(|e| GraphError::io(path, e))?;
        }
        w.flush().map_err(|e| GraphError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| GraphError::io(path, e))?;
        let mut labels = NodeLabels::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GraphError::io(path, e))?;
            let malformed = || GraphError::MalformedLine {
                line: i + 1,
                content: line.clone(),
            };
            let (id, name) = line.split_once('\t').ok_or_else(malformed)?;
            let id: usize = id.parse().map_err(|_| malformed())?;
            if id != labels.len() || labels.get(name).is_some() {
                return Err(malformed());
            }
            labels.intern(name);
        }
        Ok(labels)
    }
}

/// Token separator of an edge-list file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeListDialect {
    /// Any run of spaces or tabs.
    #[default]
    Whitespace,
    Comma,
}

impl EdgeListDialect {
    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            EdgeListDialect::Whitespace => line.split_whitespace().collect(),
            EdgeListDialect::Comma => line.split(',').map(str::trim).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadedGraph {
    pub graph: Graph,
    pub labels: NodeLabels,
    pub stats: BuildStats,
}

/// Reads an edge list. Blank lines and lines starting with `#` are skipped.
pub fn load_edge_list(path: &Path, dialect: EdgeListDialect) -> Result<LoadedGraph> {
    let file = File::open(path).map_err(|e| GraphError::io(path, e))?;
    read_edge_list(BufReader::new(file), dialect).map_err(|e| match e {
        GraphError::Io { source, .. } => GraphError::io(path, source),
        other => other,
    })
}

pub fn read_edge_list<R: BufRead>(reader: R, dialect: EdgeListDialect) -> Result<LoadedGraph> {
    let mut labels = NodeLabels::default();
    let mut raw = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| GraphError::io(Path::new("<reader>"), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match dialect.split(trimmed).as_slice() {
            [a, b] if !a.is_empty() && !b.is_empty() => {
                raw.push((labels.intern(a), labels.intern(b)));
            }
            _ => {
                return Err(GraphError::MalformedLine {
                    line: i + 1,
                    content: line,
                })
            }
        }
    }
    if labels.is_empty() {
        return Err(GraphError::Empty);
    }
    let (graph, stats) = Graph::build(labels.len(), raw);
    if stats.self_loops > 0 {
        log::warn!("dropped {} self-loop(s)", stats.self_loops);
    }
    Ok(LoadedGraph {
        graph,
        labels,
        stats,
    })
}

/// Writes node pairs one per line, using `labels` when given.
pub fn write_pairs(
    path: &Path,
    pairs: impl IntoIterator<Item = (NodeId, NodeId)>,
    labels: Option<&NodeLabels>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| GraphError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (u, v) in pairs {
        let res = match labels {
            Some(l) => writeln!(w, "{} {}", l.name(u), l.name(v)),
            None => writeln!(w, "{u} {v}"),
        };
        res.map_err(|e| GraphError::io(path, e))?;
    }
    w.flush().map_err(|e| GraphError::io(path, e))
}

pub fn write_edge_list(path: &Path, graph: &Graph, labels: Option<&NodeLabels>) -> Result<()> {
    write_pairs(path, graph.edges(), labels)
}

/// Reads node pairs written by [`write_pairs`], resolving labels against
/// an existing dictionary.
pub fn read_pairs(path: &Path, labels: &NodeLabels) -> Result<Vec<(NodeId, NodeId)>> {
    let file = File::open(path).map_err(|e| GraphError::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GraphError::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        match toks.as_slice() {
            [a, b] => match (labels.get(a), labels.get(b)) {
                (Some(u), Some(v)) => pairs.push((u, v)),
                _ => {
                    return Err(GraphError::MalformedLine {
                        line: i + 1,
                        content: line,
                    })
                }
            },
            _ => {
                return Err(GraphError::MalformedLine {
                    line: i + 1,
                    content: line,
                })
            }
        }
    }
    Ok(pairs)
}

/// Link-prediction dataset: a connected training graph, the edges removed
/// from it, and an equal number of sampled non-edges.
#[derive(Clone, Debug)]
pub struct EdgeSplit {
    pub train_graph: Graph,
    pub positive_edges: Vec<(NodeId, NodeId)>,
    pub negative_edges: Vec<(NodeId, NodeId)>,
}

impl EdgeSplit {
    /// Persists `train.edges`, `positive.pairs` and `negative.pairs` under `dir`.
    pub fn save(&self, dir: &Path, labels: Option<&NodeLabels>) -> Result<()> {
        write_edge_list(&dir.join("train.edges"), &self.train_graph, labels)?;
        write_pairs(
            &dir.join("positive.pairs"),
            self.positive_edges.iter().copied(),
            labels,
        )?;
        write_pairs(
            &dir.join("negative.pairs"),
            self.negative_edges.iter().copied(),
            labels,
        )
    }
}

/// Removes `round(fraction * |E|)` edges without disconnecting the graph and
/// samples as many uniform non-adjacent pairs.
///
/// Removal picks from the edges outside a BFS spanning tree, in shuffled order.
pub fn split_edges_for_link_prediction(g: &Graph, fraction: f64, seed: u64) -> Result<EdgeSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(GraphError::InvalidFraction(fraction));
    }
    if g.num_nodes() == 0 || !g.is_connected() {
        return Err(GraphError::NotConnected);
    }
    let quota = (fraction * g.num_edges() as f64).round() as usize;

    let mut in_tree = HashSet::with_capacity(g.num_nodes());
    let mut seen = vec![false; g.num_nodes()];
    let mut queue = std::collections::VecDeque::from([0 as NodeId]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if !seen[v as usize] {
                seen[v as usize] = true;
                in_tree.insert((u.min(v), u.max(v)));
                queue.push_back(v);
            }
        }
    }
    let mut removable: Vec<(NodeId, NodeId)> =
        g.edges().filter(|e| !in_tree.contains(e)).collect();
    if quota == 0 || quota > removable.len() {
        return Err(GraphError::QuotaUnreachable {
            requested: quota,
            achievable: removable.len(),
        });
    }

    let n = g.num_nodes() as u64;
    let available = (n * (n - 1) / 2) as usize - g.num_edges();
    if quota > available {
        return Err(GraphError::NotEnoughNonEdges {
            requested: quota,
            available,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    removable.shuffle(&mut rng);
    removable.truncate(quota);
    let removed: HashSet<(NodeId, NodeId)> = removable.iter().copied().collect();
    let train_graph = Graph::from_edges(
        g.num_nodes(),
        g.edges().filter(|e| !removed.contains(e)),
    );

    let mut negatives = Vec::with_capacity(quota);
    let mut taken = HashSet::with_capacity(quota);
    while negatives.len() < quota {
        let u = rng.gen_range(0..g.num_nodes() as NodeId);
        let v = rng.gen_range(0..g.num_nodes() as NodeId);
        if u == v || g.has_edge(u, v) {
            continue;
        }
        let pair = (u.min(v), u.max(v));
        if taken.insert(pair) {
            negatives.push(pair);
        }
    }

    Ok(EdgeSplit {
        train_graph,
        positive_edges: removable,
        negative_edges: negatives,
    })
}

/// Parameters of an Erdős–Rényi G(n, p) graph with `p = avg_degree / (n - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GraphGenSpec {
    pub num_nodes: usize,
    pub avg_degree: f64,
    pub seed: u64,
}

/// Samples G(n, p) by geometric skipping over the lower-triangular pairs,
/// in time proportional to `n + |E|`.
pub fn generate_erdos_renyi(spec: &GraphGenSpec) -> Result<Graph> {
    let n = spec.num_nodes;
    if n < 2 {
        return Err(GraphError::InvalidSpec(format!("num_nodes = {n} < 2")));
    }
    if !(spec.avg_degree >= 0.0 && spec.avg_degree.is_finite()) {
        return Err(GraphError::InvalidSpec(format!(
            "avg_degree = {} must be finite and >= 0",
            spec.avg_degree
        )));
    }
    let p = (spec.avg_degree / (n - 1) as f64).min(1.0);
    let mut edges = Vec::new();
    if p >= 1.0 {
        for v in 1..n as NodeId {
            edges.extend((0..v).map(|w| (v, w)));
        }
    } else if p > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let log_q = (1.0 - p).ln();
        let mut v: usize = 1;
        let mut w: i64 = -1;
        while v < n {
            let r: f64 = rng.gen();
            w += 1 + ((1.0 - r).ln() / log_q).floor() as i64;
            while w >= v as i64 && v < n {
                w -= v as i64;
                v += 1;
            }
            if v < n {
                edges.push((v as NodeId, w as NodeId));
            }
        }
    }
    Ok(Graph::from_edges(n, edges))
}

/// Two copies of a graph joined by one edge.
#[derive(Clone, Debug)]
pub struct BridgedClone {
    pub graph: Graph,
    /// `(a, b)` with `a` in the first copy and `b >= |V|` in the second.
    pub bridge: (NodeId, NodeId),
}

/// Duplicates `g` (node `i` of the copy becomes `i + |V|`) and links the two
/// copies with an edge between uniformly chosen nodes.
pub fn clone_graph_with_bridge(g: &Graph, seed: u64) -> BridgedClone {
    let n = g.num_nodes() as NodeId;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rng.gen_range(0..n);
    let b = rng.gen_range(0..n) + n;
    let edges = g
        .edges()
        .chain(g.edges().map(|(u, v)| (u + n, v + n)))
        .chain(std::iter::once((a, b)));
    BridgedClone {
        graph: Graph::from_edges(2 * n as usize, edges),
        bridge: (a, b),
    }
}
