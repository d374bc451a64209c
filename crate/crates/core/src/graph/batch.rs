use ndarray::{concatenate, Array2, Axis};

use super::{common_target_kind, EdgeFeatures, Graph, NodeFeatures, Target};
use crate::error::{Result, SeaError};

/// Disjoint union of several graphs.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub graph: Graph,
    /// Owning graph for every merged node.
    pub graph_id: Vec<usize>,
    /// First merged node index of every graph.
    pub offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn num_graphs(&self) -> usize {
        self.offsets.len()
    }

    pub fn nodes_of(&self, g: usize) -> std::ops::Range<usize> {
        let end = self
            .offsets
            .get(g + 1)
            .copied()
            .unwrap_or(self.graph.num_nodes());
        self.offsets[g]..end
    }

    /// Index of a merged node within its own graph.
    pub fn local_index(&self, node: usize) -> usize {
        node - self.offsets[self.graph_id[node]]
    }
}

pub fn batch(graphs: &[Graph]) -> Result<GraphBatch> {
    if graphs.is_empty() {
        return Err(SeaError::EmptyDataset);
    }
    let dim = graphs[0].node_features().dense_dim();
    for (i, g) in graphs.iter().enumerate() {
        if g.node_features().dense_dim() != dim {
            return Err(SeaError::InvalidGraph(format!(
                "mixed feature dims: graph {i} has {:?}, expected {dim:?}",
                g.node_features().dense_dim()
            )));
        }
    }
    let edge_kind = |g: &Graph| match g.edge_features() {
        None => None,
        Some(EdgeFeatures::Tokens(_)) => Some(None),
        Some(EdgeFeatures::Dense(m)) => Some(Some(m.ncols())),
    };
    let ek = edge_kind(&graphs[0]);
    if graphs.iter().any(|g| edge_kind(g) != ek) {
        return Err(SeaError::InvalidGraph("mixed edge feature kinds".into()));
    }
    let kind = common_target_kind(graphs)?;

    let mut offsets = Vec::with_capacity(graphs.len());
    let mut graph_id = Vec::new();
    let mut edges = Vec::new();
    let mut total = 0;
    for (gi, g) in graphs.iter().enumerate() {
        offsets.push(total);
        graph_id.extend(std::iter::repeat(gi).take(g.num_nodes()));
        edges.extend(g.edges().iter().map(|&(u, v)| (u + total, v + total)));
        total += g.num_nodes();
    }

    let node_features = match dim {
        None => NodeFeatures::Tokens(
            graphs
                .iter()
                .flat_map(|g| match g.node_features() {
                    NodeFeatures::Tokens(t) => t.clone(),
                    NodeFeatures::Dense(_) => unreachable!(),
                })
                .collect(),
        ),
        Some(d) => NodeFeatures::Dense(stack_rows(
            graphs.iter().map(|g| match g.node_features() {
                NodeFeatures::Dense(m) => m.view(),
                NodeFeatures::Tokens(_) => unreachable!(),
            }),
            d,
        )),
    };
    let edge_features = match ek {
        None => None,
        Some(None) => Some(EdgeFeatures::Tokens(
            graphs
                .iter()
                .flat_map(|g| match g.edge_features() {
                    Some(EdgeFeatures::Tokens(t)) => t.clone(),
                    _ => unreachable!(),
                })
                .collect(),
        )),
        Some(Some(d)) => Some(EdgeFeatures::Dense(stack_rows(
            graphs.iter().map(|g| match g.edge_features() {
                Some(EdgeFeatures::Dense(m)) => m.view(),
                _ => unreachable!(),
            }),
            d,
        ))),
    };
    // Merged target: node labels concatenate; graph-level targets stay on the
    // per-graph side and are not carried by the merged graph.
    let target = match kind {
        Some(super::TargetKind::Node) => Some(Target::Node(
            graphs
                .iter()
                .flat_map(|g| match g.target() {
                    Some(Target::Node(l)) => l.clone(),
                    _ => unreachable!(),
                })
                .collect(),
        )),
        _ => None,
    };

    let graph = Graph::new(total, &edges, node_features, edge_features, target)?;
    Ok(GraphBatch {
        graph,
        graph_id,
        offsets,
    })
}

fn stack_rows<'a>(views: impl Iterator<Item = ndarray::ArrayView2<'a, f64>>, d: usize) -> Array2<f64> {
    let views: Vec<_> = views.collect();
    if views.is_empty() {
        return Array2::zeros((0, d));
    }
    concatenate(Axis(0), &views).expect("uniform widths checked")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Graph {
        let e: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::from_edges(n, &e).unwrap()
    }

    #[test]
    fn offsets_and_ids() {
        let b = batch(&[path(2), path(3)]).unwrap();
        assert_eq!(b.graph.num_nodes(), 5);
        assert_eq!(b.offsets, vec![0, 2]);
        assert_eq!(b.graph_id, vec![0, 0, 1, 1, 1]);
        assert!(b.graph.has_edge(2, 3));
        assert!(!b.graph.has_edge(1, 2));
        assert_eq!(b.nodes_of(1), 2..5);
        assert_eq!(b.local_index(4), 2);
    }

    #[test]
    fn single_graph_is_identity() {
        let g = path(4);
        let b = batch(std::slice::from_ref(&g)).unwrap();
        assert_eq!(b.graph, g);
    }

    #[test]
    fn mixed_dims_rejected() {
        let a = path(2)
            .with_node_features(NodeFeatures::Dense(Array2::zeros((2, 3))))
            .unwrap();
        let b = path(2)
            .with_node_features(NodeFeatures::Dense(Array2::zeros((2, 4))))
            .unwrap();
        assert!(batch(&[a, b]).is_err());
    }

    #[test]
    fn mixed_targets_rejected() {
        let a = path(2).with_target(Some(Target::Graph(1.0))).unwrap();
        let b = path(2).with_target(Some(Target::Node(vec![0, 1]))).unwrap();
        assert!(batch(&[a, b]).is_err());
    }
}
