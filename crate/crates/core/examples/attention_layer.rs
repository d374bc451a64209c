//! One graph transformer layer with an edge channel, its attention weights
//! and a sum readout.
//!
//! cargo run --example attention_layer

use std::sync::Arc;

use ndarray::Array2;
use sea_core::autodiff::{Initializer, ParamStore, Tape};
use sea_core::graph::Graph;
use sea_core::gtl::{readout, AttentionSupport, Dropout, GtlLayer, LayerConfig, Readout};

fn main() -> sea_core::Result<()> {
    let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 0), (2, 3)])?;
    let cfg = LayerConfig {
        use_edge_features: true,
        ..LayerConfig::new(2, 4)
    };
    let mut store = ParamStore::new();
    let layer = GtlLayer::new(&mut store, &Initializer::new(1), "layer", cfg, 1);
    let support = AttentionSupport::one_hop(&g, false);

    let tape = Tape::new();
    let p = store.bind_constant(&tape);
    let h = tape.constant(Array2::from_shape_fn((5, 4), |(u, j)| ((u + 2 * j) % 5) as f64 / 4.0 - 0.5));
    let e = tape.constant(Array2::from_elem((support.num_pairs(), 4), 0.1));
    let out = layer.forward(&p, h, Some(e), &support, &mut Dropout::off())?;

    let w = out.weights.value();
    for (k, (dst, src)) in support.dst().iter().zip(support.src().iter()).enumerate() {
        println!("{dst} <- {src}: head weights {:.3} {:.3}", w[(k, 0)], w[(k, 1)]);
    }
    println!("node 4 has no partners, so it gets no attention message");
    println!("node states:\n{:.3}", out.h.value());
    let graph_id: Arc<[usize]> = vec![0; 5].into();
    println!("sum readout: {:.3}", readout(out.h, &graph_id, 1, Readout::Sum)?.value());
    Ok(())
}
