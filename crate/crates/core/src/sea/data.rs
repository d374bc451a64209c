use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use super::config::{SeaConfig, Task, Variant};
use crate::error::{Result, SeaError};
use crate::graph::{batch, khop_index, Graph, GraphBatch, Target};
use crate::gtl::AttentionSupport;
use crate::spectral::lpe;

/// A graph with its positional encoding computed once.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub graph: Graph,
    pub lpe: Array2<f64>,
    /// Position in the source dataset; keys the routing draws.
    pub index: usize,
}

/// Computes positional encodings for a whole dataset in parallel.
pub fn prepare(graphs: &[Graph], config: &SeaConfig) -> Result<Vec<PreparedGraph>> {
    graphs
        .par_iter()
        .enumerate()
        .map(|(index, g)| {
            Ok(PreparedGraph {
                graph: g.clone(),
                lpe: lpe(g, config.lpe_dim, config.lpe_skip_trivial)?,
                index,
            })
        })
        .collect()
}

/// Everything one forward pass needs about its input graphs.
#[derive(Debug, Clone)]
pub struct ModelBatch {
    pub batch: GraphBatch,
    pub lpe: Array2<f64>,
    /// Dataset index of every graph in the batch.
    pub graph_index: Vec<usize>,
    pub graph_id: Arc<[usize]>,
    /// Attention support of the layers that attend.
    pub support: AttentionSupport,
    /// One-hop support without self pairs, for neighborhood aggregation.
    pub neighbors: AttentionSupport,
    graph_targets: Option<Vec<f64>>,
}

impl ModelBatch {
    pub fn new(graphs: &[&PreparedGraph], config: &SeaConfig) -> Result<Self> {
        let owned: Vec<Graph> = graphs.iter().map(|p| p.graph.clone()).collect();
        let merged = batch(&owned)?;
        for p in graphs {
            if p.lpe.ncols() != config.lpe_dim {
                return Err(SeaError::Config(format!(
                    "graph prepared with lpe_dim {}, model expects {}",
                    p.lpe.ncols(),
                    config.lpe_dim
                )));
            }
        }
        let views: Vec<_> = graphs.iter().map(|p| p.lpe.view()).collect();
        let lpe = concatenate(Axis(0), &views).expect("widths checked");
        let g = &merged.graph;
        let neighbors = AttentionSupport::one_hop(g, false);
        let support = match config.variant {
            Variant::SeaKhop if config.khop > 1 => {
                let index = khop_index(g, config.khop);
                AttentionSupport::k_hop(g, &index, config.khop, config.include_self)
            }
            _ => AttentionSupport::one_hop(g, config.include_self),
        };
        let graph_targets = graphs
            .iter()
            .map(|p| match p.graph.target() {
                Some(Target::Graph(y)) => Some(*y),
                _ => None,
            })
            .collect();
        Ok(ModelBatch {
            graph_targets,
            graph_id: merged.graph_id.clone().into(),
            graph_index: graphs.iter().map(|p| p.index).collect(),
            batch: merged,
            lpe,
            support,
            neighbors,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.batch.graph.num_nodes()
    }

    pub fn num_graphs(&self) -> usize {
        self.batch.num_graphs()
    }

    /// Graph-level targets in batch order.
    pub fn graph_targets(&self) -> Result<Vec<f64>> {
        self.graph_targets
            .clone()
            .ok_or_else(|| SeaError::TaskMismatch("batch has no graph-level targets".into()))
    }

    /// Node labels of the merged graph.
    pub fn node_labels(&self) -> Result<Vec<usize>> {
        match self.batch.graph.target() {
            Some(Target::Node(y)) => Ok(y.clone()),
            _ => Err(SeaError::TaskMismatch("batch has no node labels".into())),
        }
    }
}

/// Checks that every graph carries the target the task needs.
pub fn check_task(graphs: &[Graph], task: Task) -> Result<()> {
    if graphs.is_empty() {
        return Err(SeaError::EmptyDataset);
    }
    for (i, g) in graphs.iter().enumerate() {
        let ok = match (task, g.target()) {
            (Task::GraphRegression, Some(Target::Graph(_))) => true,
            (Task::GraphBinary, Some(Target::Graph(y))) => *y == 0.0 || *y == 1.0,
            (Task::NodeClassification, Some(Target::Node(_))) => true,
            _ => false,
        };
        if !ok {
            return Err(SeaError::TaskMismatch(format!(
                "graph {i} target does not fit task {task:?}"
            )));
        }
    }
    Ok(())
}
