//! Graph transformer layer: multi-head attention restricted to a per-node
//! support set, an optional edge channel, feed-forward sublayers and
//! residual connections. Normalization layers are not used.

use std::ops::Range;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_rows, BoundParams, Initializer, ParamId, ParamStore, Tensor};
use crate::error::{Result, SeaError};
use crate::graph::{Graph, KHopIndex};

/// (heads, hidden dim) pairings accepted in strict mode.
pub const TUNED_PAIRINGS: [(usize, usize); 3] = [(4, 32), (8, 64), (8, 56)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub num_heads: usize,
    pub dim: usize,
    #[serde(default)]
    pub use_edge_features: bool,
    #[serde(default)]
    pub use_bias: bool,
    /// Whether a node attends to itself.
    #[serde(default)]
    pub include_self: bool,
    #[serde(default = "yes")]
    pub residual: bool,
}

fn yes() -> bool {
    true
}

impl LayerConfig {
    pub fn new(num_heads: usize, dim: usize) -> Self {
        LayerConfig {
            num_heads,
            dim,
            use_edge_features: false,
            use_bias: false,
            include_self: false,
            residual: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.num_heads
    }

    pub fn validate(&self, strict: bool) -> Result<()> {
        if self.num_heads == 0 || self.dim == 0 || self.dim % self.num_heads != 0 {
            return Err(SeaError::Config(format!(
                "hidden dim {} must be a positive multiple of heads {}",
                self.dim, self.num_heads
            )));
        }
        if strict && !TUNED_PAIRINGS.contains(&(self.num_heads, self.dim)) {
            return Err(SeaError::Config(format!(
                "strict mode allows (heads, dim) in {TUNED_PAIRINGS:?}, got ({}, {})",
                self.num_heads, self.dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    #[default]
    Sum,
    Mean,
    Max,
}

/// Attention pairs `(dst attends to src)`, grouped by hop ring.
///
/// Pairs are stored ring by ring (ring 0 holds self pairs when enabled), and
/// within a ring sorted by `(dst, src)`.
#[derive(Debug, Clone)]
pub struct AttentionSupport {
    num_nodes: usize,
    dst: Arc<[usize]>,
    src: Arc<[usize]>,
    /// Undirected edge index for pairs that are real edges.
    edge: Vec<Option<usize>>,
    rings: Vec<Range<usize>>,
    ring_dst: Vec<Arc<[usize]>>,
    ring_src: Vec<Arc<[usize]>>,
}

impl AttentionSupport {
    fn build(
        num_nodes: usize,
        include_self: bool,
        max_ring: usize,
        ring_members: impl Fn(usize, usize) -> Vec<(usize, Option<usize>)>,
    ) -> Self {
        let mut dst = Vec::new();
        let mut src = Vec::new();
        let mut edge = Vec::new();
        let mut rings = Vec::with_capacity(max_ring + 1);
        for r in 0..=max_ring {
            let start = dst.len();
            if r > 0 || include_self {
                for u in 0..num_nodes {
                    let members = if r == 0 {
                        vec![(u, None)]
                    } else {
                        ring_members(u, r)
                    };
                    for (v, e) in members {
                        dst.push(u);
                        src.push(v);
                        edge.push(e);
                    }
                }
            }
            rings.push(start..dst.len());
        }
        let ring_dst = rings.iter().map(|r| Arc::from(&dst[r.clone()])).collect();
        let ring_src = rings.iter().map(|r| Arc::from(&src[r.clone()])).collect();
        AttentionSupport {
            num_nodes,
            dst: dst.into(),
            src: src.into(),
            edge,
            rings,
            ring_dst,
            ring_src,
        }
    }

    /// Direct neighbors.
    pub fn one_hop(graph: &Graph, include_self: bool) -> Self {
        Self::build(graph.num_nodes(), include_self, 1, |u, _| {
            graph
                .neighbors(u)
                .iter()
                .zip(graph.neighbor_edges(u))
                .map(|(&v, &e)| (v, Some(e)))
                .collect()
        })
    }

    /// All nodes with `1 <= d(u, v) <= k`.
    pub fn k_hop(graph: &Graph, index: &KHopIndex, k: usize, include_self: bool) -> Self {
        assert!(k >= 1 && k <= index.max_k(), "k outside the index range");
        Self::build(graph.num_nodes(), include_self, k, |u, r| {
            if r == 1 {
                graph
                    .neighbors(u)
                    .iter()
                    .zip(graph.neighbor_edges(u))
                    .map(|(&v, &e)| (v, Some(e)))
                    .collect()
            } else {
                index.ring(u, r).iter().map(|&v| (v, None)).collect()
            }
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_pairs(&self) -> usize {
        self.dst.len()
    }

    pub fn dst(&self) -> &Arc<[usize]> {
        &self.dst
    }

    pub fn src(&self) -> &Arc<[usize]> {
        &self.src
    }

    pub fn edge_of_pair(&self) -> &[Option<usize>] {
        &self.edge
    }

    /// Ring index of every pair.
    pub fn pair_rings(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_pairs()];
        for (r, range) in self.rings.iter().enumerate() {
            out[range.clone()].fill(r);
        }
        out
    }

    pub fn max_ring(&self) -> usize {
        self.rings.len() - 1
    }

    pub fn ring_range(&self, r: usize) -> Range<usize> {
        self.rings[r].clone()
    }

    /// Sorted attention partners of `u`.
    pub fn partners(&self, u: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .dst
            .iter()
            .zip(self.src.iter())
            .filter(|(&d, _)| d == u)
            .map(|(_, &s)| s)
            .collect();
        out.sort_unstable();
        out
    }
}

/// Dropout state for one forward pass; inactive when `rng` is `None`.
pub struct Dropout {
    pub rate: f64,
    pub rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn apply<'t>(&mut self, x: Tensor<'t>) -> Result<Tensor<'t>> {
        let Some(rng) = self.rng.as_mut() else { return Ok(x) };
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let (r, c) = x.shape();
        let mask = Array2::from_shape_simple_fn((r, c), || {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        x.mul(&x.tape().constant(mask))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &Initializer,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
    ) -> Self {
        let weight = init.glorot(store, format!("{name}.weight"), inputs, outputs);
        let bias = bias.then(|| init.zeros(store, format!("{name}.bias"), 1, outputs));
        Linear { weight, bias }
    }

    pub fn forward<'t>(&self, p: &BoundParams<'t>, x: Tensor<'t>) -> Result<Tensor<'t>> {
        let y = x.matmul(&p.get(self.weight))?;
        match self.bias {
            Some(b) => y.add_row(&p.get(b)),
            None => Ok(y),
        }
    }
}

/// `d -> 2d -> d` with ReLU.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, init: &Initializer, name: &str, dim: usize) -> Self {
        FeedForward {
            up: Linear::new(store, init, &format!("{name}.up"), dim, 2 * dim, true),
            down: Linear::new(store, init, &format!("{name}.down"), 2 * dim, dim, true),
        }
    }

    pub fn forward<'t>(
        &self,
        p: &BoundParams<'t>,
        x: Tensor<'t>,
        dropout: &mut Dropout,
    ) -> Result<Tensor<'t>> {
        let hidden = dropout.apply(self.up.forward(p, x)?.relu()?)?;
        self.down.forward(p, hidden)
    }
}

/// Per-layer weights. `q/k/v` hold one projection per ring group: a single
/// shared group normally, one group per hop ring in augmented k-hop mode.
#[derive(Debug, Clone)]
pub struct GtlLayer {
    pub config: LayerConfig,
    pub q: Vec<Linear>,
    pub k: Vec<Linear>,
    pub v: Vec<Linear>,
    pub e: Option<Linear>,
    pub o_h: Linear,
    pub o_e: Option<Linear>,
    pub ffn_h: FeedForward,
    pub ffn_e: Option<FeedForward>,
}

pub struct GtlOutput<'t> {
    pub h: Tensor<'t>,
    pub e: Option<Tensor<'t>>,
    /// Attention weights, one row per support pair and one column per head.
    pub weights: Tensor<'t>,
}

impl GtlLayer {
    pub fn new(
        store: &mut ParamStore,
        init: &Initializer,
        name: &str,
        config: LayerConfig,
        ring_groups: usize,
    ) -> Self {
        let d = config.dim;
        let b = config.use_bias;
        let groups = ring_groups.max(1);
        let proj = |store: &mut ParamStore, tag: &str, g: usize| -> Linear {
            let n = if g == 0 {
                format!("{name}.{tag}")
            } else {
                format!("{name}.{tag}_ring{}", g + 1)
            };
            Linear::new(store, init, &n, d, d, b)
        };
        // Shared-group projections are created first so that layers with and
        // without per-ring groups draw identical ring-1 weights.
        let mut q0 = vec![proj(store, "q", 0)];
        let mut k0 = vec![proj(store, "k", 0)];
        let mut v0 = vec![proj(store, "v", 0)];
        for g in 1..groups {
            q0.push(proj(store, "q", g));
            k0.push(proj(store, "k", g));
            v0.push(proj(store, "v", g));
        }
        let e = config
            .use_edge_features
            .then(|| Linear::new(store, init, &format!("{name}.e"), d, d, b));
        let o_h = Linear::new(store, init, &format!("{name}.o_h"), d, d, b);
        let o_e = config
            .use_edge_features
            .then(|| Linear::new(store, init, &format!("{name}.o_e"), d, d, b));
        let ffn_h = FeedForward::new(store, init, &format!("{name}.ffn_h"), d);
        let ffn_e = config
            .use_edge_features
            .then(|| FeedForward::new(store, init, &format!("{name}.ffn_e"), d));
        GtlLayer {
            config,
            q: q0,
            k: k0,
            v: v0,
            e,
            o_h,
            o_e,
            ffn_h,
            ffn_e,
        }
    }

    fn group_of_ring(&self, ring: usize) -> usize {
        if self.q.len() == 1 {
            0
        } else {
            ring.max(1) - 1
        }
    }

    /// Projects `h` with the ring-appropriate weights and gathers one row per
    /// support pair, taking node indices from `pick(ring)`.
    fn pairwise<'t>(
        &self,
        p: &BoundParams<'t>,
        h: Tensor<'t>,
        proj: &[Linear],
        support: &AttentionSupport,
        by_dst: bool,
    ) -> Result<Tensor<'t>> {
        if proj.len() == 1 {
            let full = proj[0].forward(p, h)?;
            let idx = if by_dst { support.dst() } else { support.src() };
            return full.gather_rows(idx.clone());
        }
        let mut cache: Vec<Option<Tensor<'t>>> = vec![None; proj.len()];
        let mut parts = Vec::new();
        for r in 0..=support.max_ring() {
            if support.ring_range(r).is_empty() {
                continue;
            }
            let g = self.group_of_ring(r);
            let projected = match cache[g] {
                Some(t) => t,
                None => {
                    let t = proj[g].forward(p, h)?;
                    cache[g] = Some(t);
                    t
                }
            };
            let idx = if by_dst {
                &support.ring_dst[r]
            } else {
                &support.ring_src[r]
            };
            parts.push(projected.gather_rows(idx.clone())?);
        }
        if parts.is_empty() {
            return proj[0].forward(p, h)?.gather_rows(Arc::from(Vec::new()));
        }
        concat_rows(&parts)
    }

    /// Per-pair, per-head scores and (with edges on) the per-component
    /// products that feed the edge stream.
    ///
    /// The score for a pair is `sum_j (q_j k_j / sqrt(d_k)) * (E e)_j` over the
    /// head's components; without edges the `E e` factor is dropped.
    pub fn attention_scores<'t>(
        &self,
        p: &BoundParams<'t>,
        h: Tensor<'t>,
        e: Option<Tensor<'t>>,
        support: &AttentionSupport,
    ) -> Result<(Tensor<'t>, Option<Tensor<'t>>)> {
        let dk = self.config.head_dim();
        let q = self.pairwise(p, h, &self.q, support, true)?;
        let k = self.pairwise(p, h, &self.k, support, false)?;
        let qk = q.mul(&k)?.scale(1.0 / (dk as f64).sqrt())?;
        match (&self.e, e) {
            (Some(proj), Some(e)) => {
                let components = qk.mul(&proj.forward(p, e)?)?;
                Ok((components.group_sum(dk)?, Some(components)))
            }
            (None, _) => Ok((qk.group_sum(dk)?, None)),
            (Some(_), None) => Err(SeaError::Config(
                "edge features enabled but no edge states given".into(),
            )),
        }
    }

    pub fn forward<'t>(
        &self,
        p: &BoundParams<'t>,
        h: Tensor<'t>,
        e: Option<Tensor<'t>>,
        support: &AttentionSupport,
        dropout: &mut Dropout,
    ) -> Result<GtlOutput<'t>> {
        let (n, d) = h.shape();
        if d != self.config.dim || n != support.num_nodes() {
            return Err(SeaError::ShapeMismatch {
                op: "gtl_forward",
                left: vec![n, d],
                right: vec![support.num_nodes(), self.config.dim],
            });
        }
        if let Some(e) = e {
            if e.shape() != (support.num_pairs(), d) {
                return Err(SeaError::ShapeMismatch {
                    op: "gtl_forward edges",
                    left: vec![e.shape().0, e.shape().1],
                    right: vec![support.num_pairs(), d],
                });
            }
        }
        let (scores, components) = self.attention_scores(p, h, e, support)?;
        let weights = scores.segment_softmax(support.dst().clone())?;
        let dropped = dropout.apply(weights)?;
        let values = self.pairwise(p, h, &self.v, support, false)?;
        let aggregated = values
            .group_mul(&dropped)?
            .scatter_add_rows(support.dst().clone(), n)?;
        let attn = self.o_h.forward(p, aggregated)?;
        let h1 = if self.config.residual { h.add(&attn)? } else { attn };
        let ff = self.ffn_h.forward(p, h1, dropout)?;
        let h2 = if self.config.residual { h1.add(&ff)? } else { ff };

        let e_out = match (e, components, &self.o_e, &self.ffn_e) {
            (Some(e), Some(c), Some(o_e), Some(ffn_e)) => {
                let upd = o_e.forward(p, c)?;
                let e1 = if self.config.residual { e.add(&upd)? } else { upd };
                let ff = ffn_e.forward(p, e1, dropout)?;
                Some(if self.config.residual { e1.add(&ff)? } else { ff })
            }
            _ => None,
        };
        Ok(GtlOutput {
            h: h2,
            e: e_out,
            weights,
        })
    }
}

/// Pools node rows into one row per graph.
pub fn readout<'t>(
    h: Tensor<'t>,
    graph_id: &Arc<[usize]>,
    num_graphs: usize,
    kind: Readout,
) -> Result<Tensor<'t>> {
    match kind {
        Readout::Sum => h.scatter_add_rows(graph_id.clone(), num_graphs),
        Readout::Mean => {
            let mut counts = vec![0usize; num_graphs];
            for &g in graph_id.iter() {
                counts[g] += 1;
            }
            let inv: Vec<f64> = counts
                .iter()
                .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
                .collect();
            h.scatter_add_rows(graph_id.clone(), num_graphs)?
                .scale_rows(inv.into())
        }
        Readout::Max => h.segment_max(graph_id, num_graphs),
    }
}
