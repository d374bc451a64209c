//! Shell attention: per-node routing to one of several experts, each reading
//! node states computed over a different hop neighborhood.

mod config;
mod data;
mod model;
mod routing;

pub use config::{Aggregate, EpsilonSchedule, InputSpec, SeaConfig, Task, Variant};
pub use data::{check_task, prepare, ModelBatch, PreparedGraph};
pub use model::{
    aggregate, expert_transform, inverse_frequency_weights, ForwardMode, ForwardOutput, SeaModel,
};
pub use routing::{argmax, node_rng, route, route_keyed, NodeKey, RoutingDecision};
