//! Hop rings around every node and the attention support a 2-hop expert uses.
//!
//! cargo run --example khop_shells

use sea_core::graph::{khop_index, Graph};
use sea_core::gtl::AttentionSupport;

fn main() -> sea_core::Result<()> {
    // hexagon with one chord and a pendant node
    let g = Graph::from_edges(7, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3), (5, 6)])?;
    let index = khop_index(&g, 3);
    for u in 0..g.num_nodes() {
        let rings: Vec<String> = (0..=3).map(|r| format!("{:?}", index.ring(u, r))).collect();
        println!("node {u}: rings {}", rings.join(" "));
    }
    println!("closed 2-hop neighborhood of 6: {:?}", index.neighborhood(6, 2));

    let support = AttentionSupport::k_hop(&g, &index, 2, false);
    println!("2-hop support: {} attention pairs", support.num_pairs());
    for r in 1..=support.max_ring() {
        println!("  ring {r}: {} pairs", support.ring_range(r).len());
    }
    println!("node 6 attends to {:?}", support.partners(6));
    Ok(())
}
