use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Aggregate, InputSpec, SeaConfig, Task, Variant};
use super::data::ModelBatch;
use super::routing::{route_keyed, NodeKey, RoutingDecision};
use crate::autodiff::{concat_rows, BoundParams, Initializer, ParamId, ParamStore, Tape, Tensor, TensorRecord};
use crate::error::{Result, SeaError};
use crate::graph::{EdgeFeatures, NodeFeatures};
use crate::gtl::{readout, AttentionSupport, Dropout, GtlLayer, Linear};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
enum Embedding {
    Table { table: ParamId, vocab: usize },
    Dense { proj: Linear, dim: usize },
}

impl Embedding {
    fn new(store: &mut ParamStore, init: &Initializer, name: &str, spec: InputSpec, d: usize) -> Self {
        match spec {
            InputSpec::Tokens(vocab) => Embedding::Table {
                table: init.glorot(store, name, vocab, d),
                vocab,
            },
            InputSpec::Dense(dim) => Embedding::Dense {
                proj: Linear::new(store, init, name, dim, d, true),
                dim,
            },
        }
    }

    fn tokens<'t>(&self, p: &BoundParams<'t>, tokens: &[usize], what: &str) -> Result<Tensor<'t>> {
        match self {
            Embedding::Table { table, vocab } => {
                if let Some(&t) = tokens.iter().find(|&&t| t >= *vocab) {
                    return Err(SeaError::Config(format!(
                        "{what} token {t} outside vocabulary of {vocab}"
                    )));
                }
                p.get(*table).gather_rows(tokens.into())
            }
            Embedding::Dense { .. } => Err(SeaError::Config(format!(
                "{what} features are tokens but the model expects dense input"
            ))),
        }
    }

    fn dense<'t>(&self, p: &BoundParams<'t>, rows: &Array2<f64>, what: &str) -> Result<Tensor<'t>> {
        match self {
            Embedding::Dense { proj, dim } if rows.ncols() == *dim => {
                proj.forward(p, p.tape().constant(rows.clone()))
            }
            Embedding::Dense { dim, .. } => Err(SeaError::Config(format!(
                "{what} features have width {}, model expects {dim}",
                rows.ncols()
            ))),
            Embedding::Table { .. } => Err(SeaError::Config(format!(
                "{what} features are dense but the model expects tokens"
            ))),
        }
    }
}

/// How a forward pass should behave.
#[derive(Debug, Clone, Default)]
pub struct ForwardMode {
    /// Exploration probability of the router.
    pub epsilon: f64,
    pub epoch: usize,
    /// Base seed of the routing draws.
    pub seed: u64,
    /// Dropout is active only when a seed is given.
    pub dropout_seed: Option<u64>,
    /// Bypasses the router with a given expert per node.
    pub fixed_routing: Option<Vec<usize>>,
}

impl ForwardMode {
    /// Greedy routing, no dropout.
    pub fn eval() -> Self {
        ForwardMode::default()
    }
}

pub struct ForwardOutput<'t> {
    /// Graphs x 1 for graph tasks, nodes x classes for node tasks.
    pub predictions: Tensor<'t>,
    pub routing: RoutingDecision,
    /// Embedded input including the positional term.
    pub initial: Tensor<'t>,
    /// One state table per expert.
    pub expert_states: Vec<Tensor<'t>>,
    /// Per-node output of the routed expert's affine map.
    pub routed: Tensor<'t>,
}

/// Parameters and structure of a shell-attention model.
#[derive(Debug, Clone)]
pub struct SeaModel {
    config: SeaConfig,
    params: ParamStore,
    node_embed: Embedding,
    lpe_proj: Linear,
    edge_embed: Option<Embedding>,
    /// Learned edge state for self pairs.
    edge_self: Option<ParamId>,
    /// Learned edge states for hop rings 2..=k, which have no real edge.
    edge_rings: Vec<ParamId>,
    layers: Vec<GtlLayer>,
    router: ParamId,
    experts: Vec<Linear>,
    head: Linear,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: SeaConfig,
    params: BTreeMap<String, TensorRecord>,
}

impl SeaModel {
    /// Builds a model with seeded Glorot weights and zero biases.
    pub fn new(config: SeaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let init = Initializer::new(seed);
        let mut store = ParamStore::new();
        let d = config.hidden_dim;
        let node_embed = Embedding::new(&mut store, &init, "embed.node", config.node_input, d);
        let lpe_proj = Linear::new(&mut store, &init, "embed.lpe", config.lpe_dim, d, false);

        let mut edge_embed = None;
        let mut edge_self = None;
        let mut edge_rings = Vec::new();
        if config.use_edge_features {
            let spec = config.edge_input.expect("validated");
            edge_embed = Some(Embedding::new(&mut store, &init, "embed.edge", spec, d));
            if config.include_self {
                edge_self = Some(init.glorot(&mut store, "embed.edge_self", 1, d));
            }
            for r in 2..=config.support_radius() {
                edge_rings.push(init.glorot(&mut store, format!("embed.edge_ring{r}"), 1, d));
            }
        }

        let depth = match config.variant {
            Variant::SeaAggregated => 1,
            _ => config.num_experts,
        };
        let layers = (0..depth)
            .map(|l| {
                GtlLayer::new(
                    &mut store,
                    &init,
                    &format!("layer{}", l + 1),
                    config.layer_config(),
                    config.ring_groups(),
                )
            })
            .collect();
        let router = init.glorot(&mut store, "router", d, config.num_experts);
        let experts = (0..config.num_experts)
            .map(|i| Linear::new(&mut store, &init, &format!("expert{}", i + 1), d, d, true))
            .collect();
        let head = Linear::new(&mut store, &init, "head", d, config.output_dim(), true);
        Ok(SeaModel {
            config,
            params: store,
            node_embed,
            lpe_proj,
            edge_embed,
            edge_self,
            edge_rings,
            layers,
            router,
            experts,
            head,
        })
    }

    pub fn config(&self) -> &SeaConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn router(&self) -> ParamId {
        self.router
    }

    /// Weight and bias of each expert's affine map.
    pub fn expert_heads(&self) -> &[Linear] {
        &self.experts
    }

    pub fn layers(&self) -> &[GtlLayer] {
        &self.layers
    }

    /// Task head applied after routing (and readout for graph tasks).
    pub fn head(&self) -> &Linear {
        &self.head
    }

    /// Node embedding plus projected positional encoding.
    pub fn embed<'t>(&self, p: &BoundParams<'t>, batch: &ModelBatch) -> Result<Tensor<'t>> {
        let x = match batch.batch.graph.node_features() {
            NodeFeatures::Tokens(t) => self.node_embed.tokens(p, t, "node")?,
            NodeFeatures::Dense(m) => self.node_embed.dense(p, m, "node")?,
        };
        let pos = self.lpe_proj.forward(p, p.tape().constant(batch.lpe.clone()))?;
        x.add(&pos)
    }

    /// Initial edge state of every support pair, or `None` with edges off.
    pub fn edge_states<'t>(
        &self,
        p: &BoundParams<'t>,
        batch: &ModelBatch,
        support: &AttentionSupport,
    ) -> Result<Option<Tensor<'t>>> {
        let Some(embed) = &self.edge_embed else { return Ok(None) };
        let feats = batch
            .batch
            .graph
            .edge_features()
            .ok_or_else(|| SeaError::TaskMismatch("model uses edge features but graph has none".into()))?;
        let d = self.config.hidden_dim;
        let mut parts = Vec::new();
        for r in 0..=support.max_ring() {
            let range = support.ring_range(r);
            if range.is_empty() {
                continue;
            }
            let repeat = |id: ParamId| p.get(id).gather_rows(vec![0; range.len()].into());
            let part = match r {
                0 => repeat(self.edge_self.expect("self pairs imply the self embedding"))?,
                1 => {
                    let idx: Vec<usize> = support.edge_of_pair()[range.clone()]
                        .iter()
                        .map(|e| e.expect("ring 1 pairs are edges"))
                        .collect();
                    match feats {
                        EdgeFeatures::Tokens(t) => {
                            let toks: Vec<usize> = idx.iter().map(|&e| t[e]).collect();
                            embed.tokens(p, &toks, "edge")?
                        }
                        EdgeFeatures::Dense(m) => embed.dense(p, &m.select(ndarray::Axis(0), &idx), "edge")?,
                    }
                }
                r => repeat(self.edge_rings[r - 2])?,
            };
            parts.push(part);
        }
        if parts.is_empty() {
            return Ok(Some(p.tape().constant(Array2::zeros((0, d)))));
        }
        concat_rows(&parts).map(Some)
    }

    /// State table of every expert, in expert order.
    pub fn expert_states<'t>(
        &self,
        p: &BoundParams<'t>,
        batch: &ModelBatch,
        h0: Tensor<'t>,
        dropout: &mut Dropout,
    ) -> Result<Vec<Tensor<'t>>> {
        let support = &batch.support;
        let mut e = self.edge_states(p, batch, support)?;
        let mut h = h0;
        let mut states = Vec::with_capacity(self.config.num_experts);
        for layer in &self.layers {
            let out = layer.forward(p, h, e, support, dropout)?;
            h = out.h;
            e = out.e;
            states.push(h);
        }
        if self.config.variant == Variant::SeaAggregated {
            let n = batch.num_nodes();
            for _ in 1..self.config.num_experts {
                let m = aggregate(h, &batch.neighbors, self.config.aggregate, n)?;
                h = aggregate(m, &batch.neighbors, self.config.aggregate_mu, n)?;
                states.push(h);
            }
        }
        Ok(states)
    }

    /// Routing decision for the embedded batch under the stored router.
    pub fn route(&self, h0: &Array2<f64>, batch: &ModelBatch, mode: &ForwardMode) -> Result<RoutingDecision> {
        self.route_with(self.params.get(self.router), h0, batch, mode)
    }

    fn route_with(
        &self,
        router: &Array2<f64>,
        h0: &Array2<f64>,
        batch: &ModelBatch,
        mode: &ForwardMode,
    ) -> Result<RoutingDecision> {
        if let Some(fixed) = &mode.fixed_routing {
            if fixed.len() != h0.nrows() || fixed.iter().any(|&i| i >= self.config.num_experts) {
                return Err(SeaError::Config("fixed routing does not fit the batch".into()));
            }
            let mut d = route_keyed(h0, router, 0.0, 0, 0, &node_keys(batch));
            d.chosen = fixed.clone();
            return Ok(d);
        }
        Ok(route_keyed(
            h0,
            router,
            mode.epsilon,
            mode.seed,
            mode.epoch as u64,
            &node_keys(batch),
        ))
    }

    pub fn forward<'t>(
        &self,
        p: &BoundParams<'t>,
        batch: &ModelBatch,
        mode: &ForwardMode,
    ) -> Result<ForwardOutput<'t>> {
        let mut dropout = match mode.dropout_seed {
            Some(s) if self.config.dropout > 0.0 => Dropout {
                rate: self.config.dropout,
                rng: Some(ChaCha8Rng::seed_from_u64(s)),
            },
            _ => Dropout::off(),
        };
        let h0 = self.embed(p, batch)?;
        let routing = self.route_with(&p.get(self.router).value(), &h0.value(), batch, mode)?;
        let states = self.expert_states(p, batch, h0, &mut dropout)?;
        let routed = expert_transform(p, &states, &self.experts, &routing)?;
        let predictions = if self.config.task.is_graph_level() {
            let pooled = readout(routed, &batch.graph_id, batch.num_graphs(), self.config.readout)?;
            self.head.forward(p, pooled)?
        } else {
            self.head.forward(p, routed)?
        };
        Ok(ForwardOutput {
            predictions,
            routing,
            initial: h0,
            expert_states: states,
            routed,
        })
    }

    /// Forward pass without gradients.
    pub fn predict(&self, batch: &ModelBatch, mode: &ForwardMode) -> Result<(Array2<f64>, RoutingDecision)> {
        let tape = Tape::new();
        let p = self.params.bind_constant(&tape);
        let out = self.forward(&p, batch, mode)?;
        Ok((out.predictions.value().as_ref().clone(), out.routing))
    }

    /// Task loss of `predictions` against the batch targets.
    ///
    /// `class_weights` overrides the batch's inverse-frequency weights for node
    /// classification and is ignored otherwise.
    pub fn loss<'t>(
        &self,
        predictions: Tensor<'t>,
        batch: &ModelBatch,
        class_weights: Option<&[f64]>,
    ) -> Result<Tensor<'t>> {
        match self.config.task {
            Task::GraphRegression => predictions.l1_loss(batch.graph_targets()?.into()),
            Task::GraphBinary => predictions.bce_with_logits(batch.graph_targets()?.into()),
            Task::NodeClassification => {
                let labels = batch.node_labels()?;
                let w = match class_weights {
                    Some(w) => w.to_vec(),
                    None => inverse_frequency_weights(&labels, self.config.num_classes),
                };
                predictions.weighted_cross_entropy(labels.into(), w.into())
            }
        }
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model: self.config.clone(),
            params: self.params.to_records(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(SeaError::Checkpoint(format!(
                "unsupported format version {}",
                ck.format_version
            )));
        }
        let mut model = SeaModel::new(ck.model, 0)?;
        model.params.load_records(&ck.params)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}

fn node_keys(batch: &ModelBatch) -> Vec<NodeKey> {
    (0..batch.num_nodes())
        .map(|u| NodeKey {
            graph: batch.graph_index[batch.graph_id[u]] as u64,
            node: batch.batch.local_index(u) as u64,
        })
        .collect()
}

/// `w_c = n / (C * count_c)`; classes absent from `labels` get weight 0.
pub fn inverse_frequency_weights(labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        if y < num_classes {
            counts[y] += 1;
        }
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (num_classes as f64 * c as f64) })
        .collect()
}

/// Combines neighbor rows of `x` per node; nodes without neighbors get zeros.
pub fn aggregate<'t>(x: Tensor<'t>, nbrs: &AttentionSupport, kind: Aggregate, n: usize) -> Result<Tensor<'t>> {
    let gathered = x.gather_rows(nbrs.src().clone())?;
    match kind {
        Aggregate::Sum => gathered.scatter_add_rows(nbrs.dst().clone(), n),
        Aggregate::Mean => {
            let mut deg = vec![0usize; n];
            for &u in nbrs.dst().iter() {
                deg[u] += 1;
            }
            let inv: Vec<f64> = deg
                .iter()
                .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
                .collect();
            gathered
                .scatter_add_rows(nbrs.dst().clone(), n)?
                .scale_rows(Arc::from(inv))
        }
        Aggregate::Max => gathered.segment_max(nbrs.dst(), n),
    }
}

/// Applies each node's routed expert map `state * W + b` to its row of that
/// expert's state table. Experts with no nodes are not evaluated.
pub fn expert_transform<'t>(
    p: &BoundParams<'t>,
    states: &[Tensor<'t>],
    heads: &[Linear],
    routing: &RoutingDecision,
) -> Result<Tensor<'t>> {
    if states.len() != heads.len() || routing.num_experts() != heads.len() {
        return Err(SeaError::Config(format!(
            "{} expert states, {} heads, {} routed experts",
            states.len(),
            heads.len(),
            routing.num_experts()
        )));
    }
    let n = routing.num_nodes();
    let mut acc: Option<Tensor<'t>> = None;
    for (i, members) in routing.members().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let idx: Arc<[usize]> = members.into();
        let mapped = heads[i].forward(p, states[i].gather_rows(idx.clone())?)?;
        let placed = mapped.scatter_add_rows(idx, n)?;
        acc = Some(match acc {
            Some(a) => a.add(&placed)?,
            None => placed,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => {
            let d = states.first().map_or(0, |s| s.shape().1);
            Ok(p.tape().constant(Array2::zeros((0, d))))
        }
    }
}
