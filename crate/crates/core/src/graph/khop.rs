use rayon::prelude::*;

use super::Graph;

/// Hop-distance rings around every node.
///
/// `ring(u, r)` holds the nodes at distance exactly `r` from `u`, sorted
/// ascending. Ring 0 is `{u}`, so the union of rings `0..=k` is the closed
/// k-hop neighborhood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KHopIndex {
    max_k: usize,
    rings: Vec<Vec<Vec<usize>>>,
}

impl KHopIndex {
    pub fn max_k(&self) -> usize {
        self.max_k
    }

    pub fn num_nodes(&self) -> usize {
        self.rings.len()
    }

    pub fn ring(&self, u: usize, r: usize) -> &[usize] {
        &self.rings[u][r]
    }

    pub fn rings(&self, u: usize) -> &[Vec<usize>] {
        &self.rings[u]
    }

    /// Sorted members of the closed neighborhood `{v : d(u, v) <= k}`.
    pub fn neighborhood(&self, u: usize, k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.rings[u][..=k.min(self.max_k)]
            .iter()
            .flatten()
            .copied()
            .collect();
        out.sort_unstable();
        out
    }
}

fn bfs_rings(graph: &Graph, source: usize, max_k: usize, dist: &mut [usize]) -> Vec<Vec<usize>> {
    let mut rings = Vec::with_capacity(max_k + 1);
    rings.push(vec![source]);
    dist[source] = 0;
    let mut touched = vec![source];
    for r in 1..=max_k {
        let mut next = Vec::new();
        for &u in &rings[r - 1] {
            for &v in graph.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = r;
                    next.push(v);
                    touched.push(v);
                }
            }
        }
        next.sort_unstable();
        rings.push(next);
    }
    for v in touched {
        dist[v] = usize::MAX;
    }
    rings
}

/// Breadth-first ring decomposition from every node, up to `max_k` hops.
///
/// Runs in parallel across source nodes; the result does not depend on the
/// thread count.
pub fn khop_index(graph: &Graph, max_k: usize) -> KHopIndex {
    assert!(max_k >= 1, "max_k must be at least 1");
    let n = graph.num_nodes();
    let rings = (0..n)
        .into_par_iter()
        .map_init(
            || vec![usize::MAX; n],
            |dist, u| bfs_rings(graph, u, max_k, dist),
        )
        .collect();
    KHopIndex { max_k, rings }
}
