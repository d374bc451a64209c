#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sea_core::graph::{EdgeFeatures, Graph, NodeFeatures, Target};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_edges(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Random graph with token node features and token edge features.
pub fn token_graph(n: usize, p: f64, vocab: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let edges = random_edges(n, p, &mut r);
    let nodes = (0..n).map(|_| r.gen_range(0..vocab)).collect();
    let efeat = (0..edges.len()).map(|_| r.gen_range(0..vocab)).collect();
    Graph::new(
        n,
        &edges,
        NodeFeatures::Tokens(nodes),
        Some(EdgeFeatures::Tokens(efeat)),
        Some(Target::Graph(r.gen_range(-1.0..1.0))),
    )
    .unwrap()
}

/// Random graph with dense node features of width `dim`.
pub fn dense_graph(n: usize, p: f64, dim: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let edges = random_edges(n, p, &mut r);
    let x = Array2::from_shape_simple_fn((n, dim), || r.gen_range(-1.0..1.0));
    let y = (0..n).map(|_| r.gen_range(0..2)).collect();
    Graph::new(n, &edges, NodeFeatures::Dense(x), None, Some(Target::Node(y))).unwrap()
}

pub fn path(n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|i| (i - 1, i)).collect()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Hop distances from `src` by plain BFS.
pub fn distances(g: &Graph, src: usize) -> Vec<Option<usize>> {
    let mut d = vec![None; g.num_nodes()];
    d[src] = Some(0);
    let mut queue = std::collections::VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if d[v].is_none() {
                d[v] = Some(d[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    d
}
