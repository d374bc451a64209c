use serde::{Deserialize, Serialize};

use crate::error::{Result, SeaError};
use crate::gtl::{LayerConfig, Readout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Shared trunk; expert `i` reads layer `i`.
    SeaGnn,
    /// First layer attends, later layers pass aggregated neighborhood values.
    SeaAggregated,
    /// Trunk whose attention covers every node within `khop` hops.
    SeaKhop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    GraphRegression,
    GraphBinary,
    NodeClassification,
}

impl Task {
    pub fn is_graph_level(self) -> bool {
        !matches!(self, Task::NodeClassification)
    }
}

/// How raw node or edge features enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSpec {
    /// Integer tokens below this vocabulary size, looked up in a table.
    Tokens(usize),
    /// Dense rows of this width, mapped by a linear layer.
    Dense(usize),
}

/// Exploration rate `max(floor, initial * decay^epoch)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            initial: 0.5,
            decay: 0.9,
            floor: 0.0,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        (self.initial * self.decay.powi(epoch as i32)).max(self.floor).min(1.0)
    }

    /// No exploration at all.
    pub fn greedy() -> Self {
        EpsilonSchedule {
            initial: 0.0,
            decay: 1.0,
            floor: 0.0,
        }
    }
}

fn default_experts() -> usize {
    4
}
fn default_khop() -> usize {
    2
}
fn default_classes() -> usize {
    2
}
fn default_heads() -> usize {
    4
}
fn default_dim() -> usize {
    32
}
fn default_lpe() -> usize {
    8
}
fn default_mu() -> Aggregate {
    Aggregate::Mean
}
fn yes() -> bool {
    true
}

/// Architecture description; stored verbatim in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeaConfig {
    pub variant: Variant,
    #[serde(default = "default_experts")]
    pub num_experts: usize,
    /// Hop radius of the attention support (k-hop variant only).
    #[serde(default = "default_khop")]
    pub khop: usize,
    /// Separate query/key/value projections per hop ring (k-hop variant only).
    #[serde(default)]
    pub augmented: bool,
    /// Per-node neighborhood summary in the aggregated variant.
    #[serde(default)]
    pub aggregate: Aggregate,
    /// How a node combines its neighbors' summaries in the aggregated variant.
    #[serde(default = "default_mu")]
    pub aggregate_mu: Aggregate,
    pub task: Task,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    pub node_input: InputSpec,
    #[serde(default)]
    pub edge_input: Option<InputSpec>,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    #[serde(default = "default_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_lpe")]
    pub lpe_dim: usize,
    #[serde(default)]
    pub lpe_skip_trivial: bool,
    #[serde(default)]
    pub use_edge_features: bool,
    #[serde(default)]
    pub use_bias: bool,
    #[serde(default)]
    pub include_self: bool,
    #[serde(default = "yes")]
    pub residual: bool,
    #[serde(default)]
    pub readout: Readout,
    #[serde(default)]
    pub dropout: f64,
    /// Restrict (heads, dim) to `TUNED_PAIRINGS`.
    #[serde(default)]
    pub strict_pairing: bool,
    #[serde(default)]
    pub epsilon: EpsilonSchedule,
}

impl SeaConfig {
    /// Defaults for everything but the essentials.
    pub fn new(variant: Variant, task: Task, node_input: InputSpec) -> Self {
        SeaConfig {
            variant,
            num_experts: default_experts(),
            khop: default_khop(),
            augmented: false,
            aggregate: Aggregate::Sum,
            aggregate_mu: Aggregate::Mean,
            task,
            num_classes: default_classes(),
            node_input,
            edge_input: None,
            num_heads: default_heads(),
            hidden_dim: default_dim(),
            lpe_dim: default_lpe(),
            lpe_skip_trivial: false,
            use_edge_features: false,
            use_bias: false,
            include_self: false,
            residual: true,
            readout: Readout::Sum,
            dropout: 0.0,
            strict_pairing: false,
            epsilon: EpsilonSchedule::default(),
        }
    }

    pub fn layer_config(&self) -> LayerConfig {
        LayerConfig {
            num_heads: self.num_heads,
            dim: self.hidden_dim,
            use_edge_features: self.use_edge_features,
            use_bias: self.use_bias,
            include_self: self.include_self,
            residual: self.residual,
        }
    }

    /// Hop radius actually used by the attention layers.
    pub fn support_radius(&self) -> usize {
        match self.variant {
            Variant::SeaKhop => self.khop,
            _ => 1,
        }
    }

    /// Query/key/value groups per layer.
    pub fn ring_groups(&self) -> usize {
        match self.variant {
            Variant::SeaKhop if self.augmented => self.khop,
            _ => 1,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.task {
            Task::NodeClassification => self.num_classes,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SeaError::Config(m));
        self.layer_config().validate(self.strict_pairing)?;
        if self.num_experts == 0 {
            return bad("num_experts must be at least 1".into());
        }
        if self.khop == 0 {
            return bad("khop must be at least 1".into());
        }
        if self.lpe_dim == 0 {
            return bad("lpe_dim must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.task == Task::NodeClassification && self.num_classes < 2 {
            return bad("node classification needs at least 2 classes".into());
        }
        let e = self.epsilon;
        if !(0.0..=1.0).contains(&e.initial)
            || !(0.0..=1.0).contains(&e.floor)
            || !(0.0..=1.0).contains(&e.decay)
        {
            return bad(format!("epsilon schedule outside [0, 1]: {e:?}"));
        }
        match self.node_input {
            InputSpec::Tokens(0) | InputSpec::Dense(0) => {
                return bad("node input size must be positive".into())
            }
            _ => {}
        }
        if self.use_edge_features && self.edge_input.is_none() {
            return bad("use_edge_features requires edge_input".into());
        }
        Ok(())
    }
}
