//! Undirected graphs in compressed adjacency form, k-hop shell indexing,
//! synthetic generation, JSONL ingestion and batching.

mod batch;
mod jsonl;
mod khop;
mod sbm;

pub use batch::{batch, GraphBatch};
pub use jsonl::{load_jsonl_dataset, parse_jsonl_dataset, write_jsonl_dataset, GraphRecord};
pub use khop::{khop_index, KHopIndex};
pub use sbm::{generate_sbm, SbmConfig};

use ndarray::Array2;

use crate::error::{Result, SeaError};

/// Per-node input features.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeFeatures {
    /// One integer token per node (embedding lookup).
    Tokens(Vec<usize>),
    /// One dense row per node.
    Dense(Array2<f64>),
}

impl NodeFeatures {
    pub fn len(&self) -> usize {
        match self {
            NodeFeatures::Tokens(t) => t.len(),
            NodeFeatures::Dense(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `None` for tokens, the row width for dense features.
    pub fn dense_dim(&self) -> Option<usize> {
        match self {
            NodeFeatures::Tokens(_) => None,
            NodeFeatures::Dense(m) => Some(m.ncols()),
        }
    }
}

/// Per-undirected-edge features, aligned with [`Graph::edges`].
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeFeatures {
    Tokens(Vec<usize>),
    Dense(Array2<f64>),
}

impl EdgeFeatures {
    pub fn len(&self) -> usize {
        match self {
            EdgeFeatures::Tokens(t) => t.len(),
            EdgeFeatures::Dense(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Graph-level scalar. Regression or binary label, decided by the task.
    Graph(f64),
    /// Per-node class labels.
    Node(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Graph,
    Node,
}

impl Target {
    pub fn kind(&self) -> TargetKind {
        match self {
            Target::Graph(_) => TargetKind::Graph,
            Target::Node(_) => TargetKind::Node,
        }
    }
}

/// Immutable undirected graph.
///
/// Each undirected edge `{u, v}` is stored once in `edges` (with `u < v`,
/// ascending) and twice in the adjacency arrays. Neighbor lists are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    /// For every adjacency entry, the index of its undirected edge.
    entry_edge: Vec<usize>,
    edges: Vec<(usize, usize)>,
    node_features: NodeFeatures,
    edge_features: Option<EdgeFeatures>,
    target: Option<Target>,
}

impl Graph {
    /// Builds a graph from an undirected edge list.
    ///
    /// Edges may be given in either orientation. Self-loops, duplicates and
    /// out-of-range endpoints are rejected. `edge_features`, when present, is
    /// aligned with `edges` as given and is reordered with them.
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        node_features: NodeFeatures,
        edge_features: Option<EdgeFeatures>,
        target: Option<Target>,
    ) -> Result<Self> {
        if node_features.len() != num_nodes {
            return Err(SeaError::InvalidGraph(format!(
                "{} node feature rows for {} nodes",
                node_features.len(),
                num_nodes
            )));
        }
        if let Some(ef) = &edge_features {
            if ef.len() != edges.len() {
                return Err(SeaError::InvalidGraph(format!(
                    "{} edge feature rows for {} edges",
                    ef.len(),
                    edges.len()
                )));
            }
        }
        if let Some(Target::Node(labels)) = &target {
            if labels.len() != num_nodes {
                return Err(SeaError::InvalidGraph(format!(
                    "{} node labels for {} nodes",
                    labels.len(),
                    num_nodes
                )));
            }
        }

        let mut canon: Vec<(usize, usize, usize)> = Vec::with_capacity(edges.len());
        for (i, &(a, b)) in edges.iter().enumerate() {
            for x in [a, b] {
                if x >= num_nodes {
                    return Err(SeaError::NodeOutOfRange {
                        index: x,
                        num_nodes,
                    });
                }
            }
            if a == b {
                return Err(SeaError::InvalidGraph(format!("self-loop at node {a}")));
            }
            canon.push((a.min(b), a.max(b), i));
        }
        canon.sort_unstable();
        for w in canon.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                let same = match &edge_features {
                    None => true,
                    Some(EdgeFeatures::Tokens(t)) => t[w[0].2] == t[w[1].2],
                    Some(EdgeFeatures::Dense(m)) => m.row(w[0].2) == m.row(w[1].2),
                };
                let (u, v) = (w[0].0, w[0].1);
                return Err(SeaError::InvalidGraph(if same {
                    format!("duplicate edge ({u}, {v})")
                } else {
                    format!("conflicting features for edge ({u}, {v})")
                }));
            }
        }

        let edge_features = edge_features.map(|ef| match ef {
            EdgeFeatures::Tokens(t) => {
                EdgeFeatures::Tokens(canon.iter().map(|&(_, _, i)| t[i]).collect())
            }
            EdgeFeatures::Dense(m) => {
                let idx: Vec<usize> = canon.iter().map(|&(_, _, i)| i).collect();
                EdgeFeatures::Dense(m.select(ndarray::Axis(0), &idx))
            }
        });
        let sorted_edges: Vec<(usize, usize)> = canon.iter().map(|&(u, v, _)| (u, v)).collect();

        let mut degree = vec![0usize; num_nodes];
        for &(u, v) in &sorted_edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = vec![0usize; num_nodes + 1];
        for u in 0..num_nodes {
            offsets[u + 1] = offsets[u] + degree[u];
        }
        let mut lists: Vec<Vec<(usize, usize)>> =
            degree.iter().map(|&d| Vec::with_capacity(d)).collect();
        for (e, &(u, v)) in sorted_edges.iter().enumerate() {
            lists[u].push((v, e));
            lists[v].push((u, e));
        }
        let mut neighbors = Vec::with_capacity(offsets[num_nodes]);
        let mut entry_edge = Vec::with_capacity(offsets[num_nodes]);
        for mut list in lists {
            list.sort_unstable();
            for (v, e) in list {
                neighbors.push(v);
                entry_edge.push(e);
            }
        }

        Ok(Graph {
            num_nodes,
            offsets,
            neighbors,
            entry_edge,
            edges: sorted_edges,
            node_features,
            edge_features,
            target,
        })
    }

    /// Graph with token features all zero and no target.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Graph::new(
            num_nodes,
            edges,
            NodeFeatures::Tokens(vec![0; num_nodes]),
            None,
            None,
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    /// Undirected edge indices aligned with [`Graph::neighbors`].
    pub fn neighbor_edges(&self, u: usize) -> &[usize] {
        &self.entry_edge[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn node_features(&self) -> &NodeFeatures {
        &self.node_features
    }

    pub fn edge_features(&self) -> Option<&EdgeFeatures> {
        self.edge_features.as_ref()
    }

    pub fn target(&self) -> Option<&Target> {
        self.target.as_ref()
    }

    pub fn with_target(mut self, target: Option<Target>) -> Result<Self> {
        if let Some(Target::Node(labels)) = &target {
            if labels.len() != self.num_nodes {
                return Err(SeaError::InvalidGraph(format!(
                    "{} node labels for {} nodes",
                    labels.len(),
                    self.num_nodes
                )));
            }
        }
        self.target = target;
        Ok(self)
    }

    pub fn with_node_features(mut self, features: NodeFeatures) -> Result<Self> {
        if features.len() != self.num_nodes {
            return Err(SeaError::InvalidGraph(format!(
                "{} node feature rows for {} nodes",
                features.len(),
                self.num_nodes
            )));
        }
        self.node_features = features;
        Ok(self)
    }

    /// Relabels nodes so that old node `u` becomes `perm[u]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes;
        if perm.len() != n {
            return Err(SeaError::InvalidGraph("permutation length".into()));
        }
        let mut inv = vec![usize::MAX; n];
        for (old, &new) in perm.iter().enumerate() {
            if new >= n || inv[new] != usize::MAX {
                return Err(SeaError::InvalidGraph("not a permutation".into()));
            }
            inv[new] = old;
        }
        let edges: Vec<(usize, usize)> =
            self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let node_features = match &self.node_features {
            NodeFeatures::Tokens(t) => NodeFeatures::Tokens(inv.iter().map(|&o| t[o]).collect()),
            NodeFeatures::Dense(m) => NodeFeatures::Dense(m.select(ndarray::Axis(0), &inv)),
        };
        let target = self.target.as_ref().map(|t| match t {
            Target::Graph(y) => Target::Graph(*y),
            Target::Node(l) => Target::Node(inv.iter().map(|&o| l[o]).collect()),
        });
        Graph::new(n, &edges, node_features, self.edge_features.clone(), target)
    }

    /// Connected component id per node, numbered in order of smallest member.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let mut comp = vec![usize::MAX; self.num_nodes];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..self.num_nodes {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = count;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &v in self.neighbors(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = count;
                        stack.push(v);
                    }
                }
            }
            count += 1;
        }
        (count, comp)
    }
}

/// Checks that every graph carries the same target kind (or none at all).
pub fn common_target_kind(graphs: &[Graph]) -> Result<Option<TargetKind>> {
    let mut kind: Option<Option<TargetKind>> = None;
    for (i, g) in graphs.iter().enumerate() {
        let k = g.target().map(Target::kind);
        match kind {
            None => kind = Some(k),
            Some(prev) if prev != k => {
                return Err(SeaError::InvalidGraph(format!(
                    "mixed target kinds: graph {i} has {k:?}, expected {prev:?}"
                )))
            }
            _ => {}
        }
    }
    Ok(kind.flatten())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_is_symmetric_and_sorted() {
        let g = Graph::from_edges(4, &[(2, 0), (0, 1), (3, 1)]).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(1), &[0, 3]);
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 3)]);
        for u in 0..4 {
            for &v in g.neighbors(u) {
                assert!(g.has_edge(v, u));
            }
        }
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        assert!(Graph::from_edges(2, &[(1, 1)]).is_err());
        let err = Graph::from_edges(2, &[(0, 1), (1, 0)]).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn conflicting_edge_features_reported() {
        let err = Graph::new(
            2,
            &[(0, 1), (1, 0)],
            NodeFeatures::Tokens(vec![0, 0]),
            Some(EdgeFeatures::Tokens(vec![1, 2])),
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("conflicting"));
    }

    #[test]
    fn edge_features_follow_canonical_order() {
        let g = Graph::new(
            3,
            &[(2, 1), (0, 1)],
            NodeFeatures::Tokens(vec![0; 3]),
            Some(EdgeFeatures::Tokens(vec![7, 9])),
            None,
        )
        .unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.edge_features(), Some(&EdgeFeatures::Tokens(vec![9, 7])));
        assert_eq!(g.neighbor_edges(1), &[0, 1]);
    }

    #[test]
    fn permute_relabels_everything() {
        let g = Graph::new(
            3,
            &[(0, 1)],
            NodeFeatures::Tokens(vec![5, 6, 7]),
            None,
            Some(Target::Node(vec![0, 1, 1])),
        )
        .unwrap();
        let p = g.permute(&[2, 0, 1]).unwrap();
        assert!(p.has_edge(2, 0));
        assert_eq!(p.node_features(), &NodeFeatures::Tokens(vec![6, 7, 5]));
        assert_eq!(p.target(), Some(&Target::Node(vec![1, 1, 0])));
    }

    #[test]
    fn components_counted() {
        let g = Graph::from_edges(5, &[(0, 1), (3, 4)]).unwrap();
        let (c, comp) = g.components();
        assert_eq!(c, 3);
        assert_eq!(comp, vec![0, 0, 1, 2, 2]);
    }
}
