use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, NodeFeatures, Target};
use crate::error::{Result, SeaError};

/// Stochastic block model parameters. Nodes are laid out block by block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub num_graphs: usize,
    pub nodes_per_block: usize,
    #[serde(default = "default_blocks")]
    pub num_blocks: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    #[serde(default = "default_vocab")]
    pub feature_vocab: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_blocks() -> usize {
    2
}

fn default_vocab() -> usize {
    3
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.p_inter)
            && (0.0..=1.0).contains(&self.p_intra)
            && self.p_inter <= self.p_intra;
        if !ok {
            return Err(SeaError::Config(format!(
                "need 0 <= p_inter <= p_intra <= 1, got p_intra={} p_inter={}",
                self.p_intra, self.p_inter
            )));
        }
        if self.num_blocks == 0 || self.nodes_per_block == 0 {
            return Err(SeaError::Config("empty blocks".into()));
        }
        if self.feature_vocab == 0 {
            return Err(SeaError::Config("feature_vocab must be positive".into()));
        }
        Ok(())
    }
}

/// Draws `config.num_graphs` graphs. Graph `i` uses its own ChaCha stream
/// (`seed`, stream `i`), so output is bit-identical for identical configs.
pub fn generate_sbm(config: &SbmConfig) -> Result<Vec<Graph>> {
    config.validate()?;
    let n = config.nodes_per_block * config.num_blocks;
    let block = |u: usize| u / config.nodes_per_block;
    (0..config.num_graphs)
        .map(|gi| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(gi as u64);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    let p = if block(u) == block(v) {
                        config.p_intra
                    } else {
                        config.p_inter
                    };
                    if rng.gen::<f64>() < p {
                        edges.push((u, v));
                    }
                }
            }
            let tokens = (0..n).map(|_| rng.gen_range(0..config.feature_vocab)).collect();
            let labels = (0..n).map(block).collect();
            Graph::new(
                n,
                &edges,
                NodeFeatures::Tokens(tokens),
                None,
                Some(Target::Node(labels)),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(p_intra: f64, p_inter: f64, seed: u64) -> SbmConfig {
        SbmConfig {
            num_graphs: 1,
            nodes_per_block: 3,
            num_blocks: 2,
            p_intra,
            p_inter,
            feature_vocab: 3,
            seed,
        }
    }

    #[test]
    fn degenerate_probabilities_give_two_triangles() {
        let g = &generate_sbm(&cfg(1.0, 0.0, 1)).unwrap()[0];
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
        assert_eq!(g.target(), Some(&Target::Node(vec![0, 0, 0, 1, 1, 1])));
    }

    #[test]
    fn zero_probabilities_give_no_edges() {
        let g = &generate_sbm(&cfg(0.0, 0.0, 1)).unwrap()[0];
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn same_seed_same_graphs() {
        let mut c = cfg(0.8, 0.1, 7);
        c.num_graphs = 5;
        c.nodes_per_block = 10;
        assert_eq!(generate_sbm(&c).unwrap(), generate_sbm(&c).unwrap());
        let mut d = c.clone();
        d.seed = 8;
        assert_ne!(generate_sbm(&c).unwrap(), generate_sbm(&d).unwrap());
    }

    #[test]
    fn rejects_inverted_probabilities() {
        assert!(generate_sbm(&cfg(0.1, 0.5, 0)).is_err());
        assert!(generate_sbm(&cfg(1.5, 0.5, 0)).is_err());
    }

    #[test]
    fn features_within_vocab() {
        let mut c = cfg(0.5, 0.1, 3);
        c.nodes_per_block = 30;
        c.feature_vocab = 4;
        let g = &generate_sbm(&c).unwrap()[0];
        match g.node_features() {
            NodeFeatures::Tokens(t) => {
                assert!(t.iter().all(|&x| x < 4));
                for tok in 0..4 {
                    assert!(t.contains(&tok));
                }
            }
            _ => panic!("expected tokens"),
        }
    }

    #[test]
    fn edge_counts_within_three_sigma() {
        // 100 seeds; intra and inter pair counts are binomial.
        let (npb, blocks) = (10usize, 2usize);
        let intra_pairs = blocks * npb * (npb - 1) / 2;
        let inter_pairs = npb * npb;
        let (p_in, p_out) = (0.3, 0.05);
        let (mut intra, mut inter) = (0usize, 0usize);
        for seed in 0..100 {
            let c = SbmConfig {
                num_graphs: 1,
                nodes_per_block: npb,
                num_blocks: blocks,
                p_intra: p_in,
                p_inter: p_out,
                feature_vocab: 2,
                seed,
            };
            let g = &generate_sbm(&c).unwrap()[0];
            for &(u, v) in g.edges() {
                if u / npb == v / npb {
                    intra += 1;
                } else {
                    inter += 1;
                }
            }
        }
        for (count, pairs, p) in [(intra, intra_pairs, p_in), (inter, inter_pairs, p_out)] {
            let trials = (100 * pairs) as f64;
            let mean = trials * p;
            let sd = (trials * p * (1.0 - p)).sqrt();
            assert!(
                (count as f64 - mean).abs() <= 3.0 * sd,
                "count {count}, mean {mean}, sd {sd}"
            );
        }
    }
}
