//! Attributed sparse graphs: loading, validation, normalization, and the
//! edge manipulations the training and evaluation pipelines need.
//!
//! A [`Graph`] is immutable once constructed; every transformation returns a
//! new value. Constructors re-validate the full invariant set (symmetry, no
//! stored self-loops, sorted rows, metadata lengths), so any `Graph` in hand
//! is safe to compute on.

mod cache;
mod load;

pub use cache::{read_cache, write_cache};
pub use load::{load_citation_dataset, read_split_masks, write_split_masks, LoadReport};

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffmath::{CsrMatrix, Matrix};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}:{line}: {detail}")]
    Parse { path: String, line: usize, detail: String },
    #[error("duplicate node id {id:?} at {path}:{line}")]
    DuplicateNode { path: String, id: String, line: usize },
    #[error("adjacency is not symmetric at ({i}, {j})")]
    Asymmetric { i: u32, j: u32 },
    #[error("self-loop stored at node {node}; self-loops belong only in the normalized adjacency")]
    SelfLoop { node: u32 },
    #[error("invalid graph structure: {detail}")]
    Invalid { detail: String },
    #[error("graph is not connected")]
    Disconnected,
    #[error("removal ratio {ratio} outside [0, 1)")]
    InvalidRatio { ratio: f64 },
    #[error(
        "cannot remove {requested} edges while staying connected: only {available} non-tree edges \
         exist (max ratio {max_ratio:.4})"
    )]
    QuotaUnreachable { requested: usize, available: usize, max_ratio: f64 },
    #[error("graph cache: {detail}")]
    Cache { detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Boolean node partitions for downstream evaluation. Masks are pairwise
/// disjoint; nodes in none of them are simply unused by a given protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl NodeMasks {
    fn validate(&self, n_nodes: usize) -> Result<(), GraphError> {
        if self.train.len() != n_nodes || self.val.len() != n_nodes || self.test.len() != n_nodes {
            return Err(GraphError::Invalid {
                detail: format!(
                    "mask lengths ({}, {}, {}) do not match node count {n_nodes}",
                    self.train.len(),
                    self.val.len(),
                    self.test.len()
                ),
            });
        }
        for i in 0..n_nodes {
            let memberships = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if memberships > 1 {
                return Err(GraphError::Invalid {
                    detail: format!("node {i} belongs to more than one mask"),
                });
            }
        }
        Ok(())
    }

    pub fn count(mask: &[bool]) -> usize {
        mask.iter().filter(|&&b| b).count()
    }
}

/// Undirected attributed graph.
///
/// The adjacency holds both directions of every undirected edge with equal
/// weight and no diagonal entries. `n_edges` counts undirected edges, so the
/// adjacency stores `2 * n_edges` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: CsrMatrix,
    features: Matrix,
    labels: Option<Vec<u32>>,
    masks: Option<NodeMasks>,
    node_ids: Vec<String>,
    class_names: Option<Vec<String>>,
}

impl Graph {
    pub fn new(adjacency: CsrMatrix, features: Matrix) -> Result<Self, GraphError> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(GraphError::Invalid {
                detail: format!("adjacency is {}x{}, expected square", n, adjacency.cols()),
            });
        }
        if features.rows() != n {
            return Err(GraphError::Invalid {
                detail: format!("{} feature rows for {n} nodes", features.rows()),
            });
        }
        for i in 0..n {
            let (cols, vals) = adjacency.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j as usize == i {
                    return Err(GraphError::SelfLoop { node: i as u32 });
                }
                if adjacency.get(j as usize, i) != v {
                    return Err(GraphError::Asymmetric { i: i as u32, j });
                }
            }
        }
        let node_ids = (0..n).map(|i| i.to_string()).collect();
        Ok(Graph { adjacency, features, labels: None, masks: None, node_ids, class_names: None })
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self, GraphError> {
        if labels.len() != self.n_nodes() {
            return Err(GraphError::Invalid {
                detail: format!("{} labels for {} nodes", labels.len(), self.n_nodes()),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_masks(mut self, masks: NodeMasks) -> Result<Self, GraphError> {
        masks.validate(self.n_nodes())?;
        self.masks = Some(masks);
        Ok(self)
    }

    pub fn with_node_ids(mut self, ids: Vec<String>) -> Result<Self, GraphError> {
        if ids.len() != self.n_nodes() {
            return Err(GraphError::Invalid {
                detail: format!("{} node ids for {} nodes", ids.len(), self.n_nodes()),
            });
        }
        self.node_ids = ids;
        Ok(self)
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self, GraphError> {
        self.class_names = Some(names);
        Ok(self)
    }

    /// Same nodes and metadata over a different edge set.
    fn with_adjacency(&self, adjacency: CsrMatrix) -> Result<Self, GraphError> {
        let mut g = Graph::new(adjacency, self.features.clone())?;
        g.labels = self.labels.clone();
        g.masks = self.masks.clone();
        g.node_ids = self.node_ids.clone();
        g.class_names = self.class_names.clone();
        Ok(g)
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    /// Undirected edge count.
    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn masks(&self) -> Option<&NodeMasks> {
        self.masks.as_ref()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn n_classes(&self) -> usize {
        match (&self.class_names, &self.labels) {
            (Some(names), _) => names.len(),
            (None, Some(labels)) => labels.iter().max().map(|&m| m as usize + 1).unwrap_or(0),
            (None, None) => 0,
        }
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        self.adjacency.row(i).0
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len()
    }

    /// Undirected edge list with `i < j`, in row-major adjacency order.
    pub fn edge_list(&self) -> Vec<(u32, u32)> {
        let mut edges = Vec::with_capacity(self.n_edges());
        for i in 0..self.n_nodes() {
            for &j in self.neighbors(i) {
                if (i as u32) < j {
                    edges.push((i as u32, j));
                }
            }
        }
        edges
    }

    pub fn has_edge(&self, i: u32, j: u32) -> bool {
        self.adjacency.get(i as usize, j as usize) != 0.0
    }
}

/// One-hop support neighborhoods: for each node, its sorted neighbor list
/// plus the node itself. The member count per node is written `i_n` in the
/// objective weighting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportGraphIndex {
    offsets: Vec<usize>,
    members: Vec<u32>,
}

impl SupportGraphIndex {
    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn members(&self, i: usize) -> &[u32] {
        &self.members[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Support size of node `i` (degree + 1, counting the node itself).
    pub fn count(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Total member entries across all nodes: the number of positive pairs
    /// the feature-information term scores.
    pub fn total_members(&self) -> usize {
        self.members.len()
    }

    /// All (center, member) pairs in index order.
    pub fn positive_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs = Vec::with_capacity(self.total_members());
        for i in 0..self.n_nodes() {
            for &j in self.members(i) {
                pairs.push((i as u32, j));
            }
        }
        pairs
    }
}

/// Result of connectivity-preserving edge removal.
#[derive(Debug, Clone)]
pub struct EdgeSplit {
    pub damaged: Graph,
    /// Removed undirected edges as (i, j) with i < j.
    pub removed_edges: Vec<(u32, u32)>,
    pub removal_ratio: f64,
}

/// Scales every nonzero feature row to sum to one. Zero rows stay zero so
/// featureless nodes cannot produce NaN.
pub fn row_normalize_features(graph: &Graph) -> Graph {
    let mut features = graph.features.clone();
    for i in 0..features.rows() {
        let row = features.row_mut(i);
        let sum: f64 = row.iter().sum();
        if sum != 0.0 {
            for v in row {
                *v /= sum;
            }
        }
    }
    let mut g = graph.clone();
    g.features = features;
    g
}

/// Symmetrically normalized adjacency with self-loops:
/// entry (i, j) of D^{-1/2} (A + I) D^{-1/2}, where D sums rows of A + I.
pub fn normalized_adjacency(graph: &Graph) -> CsrMatrix {
    let n = graph.n_nodes();
    let adj = graph.adjacency();
    let mut degree = vec![0.0f64; n];
    for (i, d) in degree.iter_mut().enumerate() {
        *d = 1.0 + adj.row(i).1.iter().sum::<f64>();
    }
    let mut triplets = Vec::with_capacity(adj.nnz() + n);
    for i in 0..n {
        triplets.push((i as u32, i as u32, 1.0 / degree[i]));
        let (cols, vals) = adj.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            triplets.push((i as u32, j, v / (degree[i] * degree[j as usize]).sqrt()));
        }
    }
    CsrMatrix::from_triplets(n, n, triplets).expect("normalization preserves index bounds")
}

/// One-hop support neighborhoods for every node.
pub fn build_support_index(graph: &Graph) -> SupportGraphIndex {
    let n = graph.n_nodes();
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0usize);
    let mut members = Vec::with_capacity(graph.adjacency().nnz() + n);
    for i in 0..n {
        let neighbors = graph.neighbors(i);
        // Neighbor lists are sorted and exclude i, so i splices in at its
        // binary-search position to keep the member list sorted.
        let self_pos = neighbors.partition_point(|&j| j < i as u32);
        members.extend_from_slice(&neighbors[..self_pos]);
        members.push(i as u32);
        members.extend_from_slice(&neighbors[self_pos..]);
        offsets.push(members.len());
    }
    SupportGraphIndex { offsets, members }
}

/// Whether every node is reachable from node 0 (vacuously true when empty).
pub fn is_connected(graph: &Graph) -> bool {
    let n = graph.n_nodes();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut visited = 1;
    while let Some(i) = queue.pop_front() {
        for &j in graph.neighbors(i) {
            if !seen[j as usize] {
                seen[j as usize] = true;
                visited += 1;
                queue.push_back(j as usize);
            }
        }
    }
    visited == n
}

/// Component id per node, ids dense in discovery order from node 0.
pub fn connected_components(graph: &Graph) -> Vec<u32> {
    let n = graph.n_nodes();
    let mut comp = vec![u32::MAX; n];
    let mut next = 0u32;
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        comp[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in graph.neighbors(i) {
                if comp[j as usize] == u32::MAX {
                    comp[j as usize] = next;
                    queue.push_back(j as usize);
                }
            }
        }
        next += 1;
    }
    comp
}

/// A graph induced on a node subset plus the index remapping.
#[derive(Debug, Clone)]
pub struct InducedSubgraph {
    pub graph: Graph,
    /// new index -> original index.
    pub to_original: Vec<u32>,
    /// original index -> new index, None for nodes outside the subset.
    pub from_original: Vec<Option<u32>>,
}

/// Induces the subgraph on `nodes` (deduplicated, kept in sorted original
/// order), carrying features, labels, masks, and ids along.
pub fn induced_subgraph(graph: &Graph, nodes: &[u32]) -> Result<InducedSubgraph, GraphError> {
    let n = graph.n_nodes();
    let mut keep = vec![false; n];
    for &v in nodes {
        if v as usize >= n {
            return Err(GraphError::Invalid {
                detail: format!("subgraph node {v} outside graph of {n} nodes"),
            });
        }
        keep[v as usize] = true;
    }
    let to_original: Vec<u32> =
        (0..n as u32).filter(|&v| keep[v as usize]).collect();
    let mut from_original = vec![None; n];
    for (new, &old) in to_original.iter().enumerate() {
        from_original[old as usize] = Some(new as u32);
    }

    let m = to_original.len();
    let mut triplets = Vec::new();
    let mut features = Matrix::zeros(m, graph.n_features());
    let mut labels = graph.labels.as_ref().map(|_| Vec::with_capacity(m));
    let mut masks = graph.masks.as_ref().map(|_| NodeMasks {
        train: Vec::with_capacity(m),
        val: Vec::with_capacity(m),
        test: Vec::with_capacity(m),
    });
    let mut node_ids = Vec::with_capacity(m);
    for (new, &old) in to_original.iter().enumerate() {
        let old = old as usize;
        features.row_mut(new).copy_from_slice(graph.features.row(old));
        if let (Some(ls), Some(src)) = (&mut labels, &graph.labels) {
            ls.push(src[old]);
        }
        if let (Some(ms), Some(src)) = (&mut masks, &graph.masks) {
            ms.train.push(src.train[old]);
            ms.val.push(src.val[old]);
            ms.test.push(src.test[old]);
        }
        node_ids.push(graph.node_ids[old].clone());
        let (cols, vals) = graph.adjacency.row(old);
        for (&j, &v) in cols.iter().zip(vals) {
            if let Some(nj) = from_original[j as usize] {
                triplets.push((new as u32, nj, v));
            }
        }
    }
    let adjacency = CsrMatrix::from_triplets(m, m, triplets)
        .map_err(|e| GraphError::Invalid { detail: e.to_string() })?;
    let mut g = Graph::new(adjacency, features)?;
    g.labels = labels;
    g.masks = masks;
    g.node_ids = node_ids;
    g.class_names = graph.class_names.clone();
    Ok(InducedSubgraph { graph: g, to_original, from_original })
}

/// The induced subgraph on the largest connected component (ties broken by
/// smallest component id, i.e. earliest discovery).
pub fn largest_component(graph: &Graph) -> Result<InducedSubgraph, GraphError> {
    let comp = connected_components(graph);
    let n_comps = comp.iter().map(|&c| c + 1).max().unwrap_or(0) as usize;
    let mut sizes = vec![0usize; n_comps];
    for &c in &comp {
        sizes[c as usize] += 1;
    }
    let best = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| c as u32)
        .ok_or(GraphError::Invalid { detail: "empty graph has no components".into() })?;
    let nodes: Vec<u32> = (0..graph.n_nodes() as u32)
        .filter(|&v| comp[v as usize] == best)
        .collect();
    induced_subgraph(graph, &nodes)
}

/// Removes `round(ratio * |E|)` undirected edges, chosen uniformly at random
/// among edges not on a (seeded) spanning tree, so the damaged graph stays
/// connected. Deterministic for a given seed.
pub fn remove_edges(graph: &Graph, ratio: f64, seed: u64) -> Result<EdgeSplit, GraphError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(GraphError::InvalidRatio { ratio });
    }
    if !is_connected(graph) {
        return Err(GraphError::Disconnected);
    }
    if ratio == 0.0 {
        return Ok(EdgeSplit { damaged: graph.clone(), removed_edges: Vec::new(), removal_ratio: 0.0 });
    }

    let mut edges = graph.edge_list();
    let n_edges = edges.len();
    let quota = (ratio * n_edges as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);

    // Union-find over the shuffled order: edges that join two components form
    // a uniform random spanning tree and are protected; the rest may go.
    let mut parent: Vec<u32> = (0..graph.n_nodes() as u32).collect();
    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            parent[x as usize] = parent[parent[x as usize] as usize];
            x = parent[x as usize];
        }
        x
    }
    let mut candidates = Vec::new();
    for &(i, j) in &edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri == rj {
            candidates.push((i, j));
        } else {
            parent[ri as usize] = rj;
        }
    }

    if quota > candidates.len() {
        return Err(GraphError::QuotaUnreachable {
            requested: quota,
            available: candidates.len(),
            max_ratio: candidates.len() as f64 / n_edges as f64,
        });
    }
    candidates.shuffle(&mut rng);
    let mut removed: Vec<(u32, u32)> = candidates.into_iter().take(quota).collect();
    removed.sort_unstable();

    let removed_set: std::collections::HashSet<(u32, u32)> = removed.iter().copied().collect();
    let mut triplets = Vec::with_capacity((n_edges - quota) * 2);
    for i in 0..graph.n_nodes() {
        let (cols, vals) = graph.adjacency().row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let key = if (i as u32) < j { (i as u32, j) } else { (j, i as u32) };
            if !removed_set.contains(&key) {
                triplets.push((i as u32, j, v));
            }
        }
    }
    let damaged_adj = CsrMatrix::from_triplets(graph.n_nodes(), graph.n_nodes(), triplets)
        .map_err(|e| GraphError::Invalid { detail: e.to_string() })?;
    let damaged = graph.with_adjacency(damaged_adj)?;
    Ok(EdgeSplit { damaged, removed_edges: removed, removal_ratio: ratio })
}
