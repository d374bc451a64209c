use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::softmax_row;

/// Identifies the random stream behind one node's exploration draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeKey {
    pub graph: u64,
    pub node: u64,
}

/// Per-node expert choice.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    /// Softmax of the router logits, one row per node.
    pub probs: Array2<f64>,
    pub chosen: Vec<usize>,
    /// True where the random branch picked the expert.
    pub explored: Vec<bool>,
}

impl RoutingDecision {
    pub fn num_nodes(&self) -> usize {
        self.chosen.len()
    }

    pub fn num_experts(&self) -> usize {
        self.probs.ncols()
    }

    /// Node indices routed to each expert, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_experts()];
        for (u, &i) in self.chosen.iter().enumerate() {
            out[i].push(u);
        }
        out
    }
}

/// Counter-based generator for one node's draw: the key is the 256-bit seed.
pub fn node_rng(seed: u64, epoch: u64, key: NodeKey) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    for (chunk, word) in bytes
        .chunks_exact_mut(8)
        .zip([seed, epoch, key.graph, key.node])
    {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Lowest index among the maxima.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Picks one expert per node from router logits `h0 * router`.
///
/// With probability `epsilon` (drawn from the node's own stream) the choice is
/// uniform; otherwise it is the argmax, lowest index on ties.
pub fn route_keyed(
    h0: &Array2<f64>,
    router: &Array2<f64>,
    epsilon: f64,
    seed: u64,
    epoch: u64,
    keys: &[NodeKey],
) -> RoutingDecision {
    assert_eq!(keys.len(), h0.nrows(), "one key per node");
    let logits = h0.dot(router);
    let n_exp = router.ncols();
    let mut probs = Array2::zeros(logits.dim());
    let mut chosen = Vec::with_capacity(keys.len());
    let mut explored = Vec::with_capacity(keys.len());
    for (u, key) in keys.iter().enumerate() {
        let p = softmax_row(logits.row(u).iter().copied());
        let mut rng = node_rng(seed, epoch, *key);
        let explore = epsilon > 0.0 && rng.gen::<f64>() < epsilon;
        let i = if explore {
            rng.gen_range(0..n_exp)
        } else {
            argmax(logits.row(u).as_slice().expect("standard layout"))
        };
        probs.row_mut(u).assign(&ndarray::ArrayView1::from(&p));
        chosen.push(i);
        explored.push(explore);
    }
    RoutingDecision {
        probs,
        chosen,
        explored,
    }
}

/// [`route_keyed`] for the nodes of a single graph at epoch 0.
pub fn route(h0: &Array2<f64>, router: &Array2<f64>, epsilon: f64, seed: u64) -> RoutingDecision {
    let keys: Vec<NodeKey> = (0..h0.nrows() as u64)
        .map(|node| NodeKey { graph: 0, node })
        .collect();
    route_keyed(h0, router, epsilon, seed, 0, &keys)
}
