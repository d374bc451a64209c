//! Finite-difference checks of every differentiable operation, the attention
//! layer and the full model on random small inputs.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{
    concat_cols, concat_rows, finite_diff_gradcheck, gradcheck_params, Initializer, ParamStore, Tensor,
    DEFAULT_STEP,
};
use crate::error::{Result, SeaError};
use crate::graph::{khop_index, EdgeFeatures, Graph, NodeFeatures, Target};
use crate::gtl::{AttentionSupport, Dropout, GtlLayer, LayerConfig};
use crate::sea::{prepare, Aggregate, ForwardMode, InputSpec, ModelBatch, PreparedGraph, SeaConfig, SeaModel, Task, Variant};

pub const MODULES: [&str; 3] = ["autodiff", "gtl", "sea"];

/// Relative error bound every check must meet.
pub const TOLERANCE: f64 = 1e-4;

/// Second step size tried when the default one misses the bound. A ReLU input
/// within one step of zero breaks central differences at that step only,
/// while a wrong gradient misses at every step.
pub const FALLBACK_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: String,
    pub instances: usize,
    pub max_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error <= TOLERANCE
    }
}

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.gen_range(-1.0..1.0))
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..=8), rng.gen_range(1..=8))
}

/// `sum(x * w)` for a fixed random `w`, so every output entry matters.
fn project<'t>(y: Tensor<'t>, seed: u64) -> Result<Tensor<'t>> {
    let (r, c) = y.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = y.tape().constant(mat(&mut rng, r, c));
    y.mul(&w)?.sum_all()
}

type OpCheck = fn(&mut ChaCha8Rng, u64, f64) -> Result<f64>;

fn check_input(x: Array2<f64>, seed: u64, h: f64, f: impl for<'t> Fn(Tensor<'t>) -> Result<Tensor<'t>>) -> Result<f64> {
    finite_diff_gradcheck(|_, x| project(f(x)?, seed), &x, h)
}

fn op_checks() -> Vec<(&'static str, OpCheck)> {
    vec![
        ("matmul", |rng, s, h| {
            let (r, k) = dims(rng);
            let c = rng.gen_range(1..=8);
            let b = mat(rng, k, c);
            let a = mat(rng, c, r);
            let e1 = check_input(mat(rng, r, k), s, h, |x| x.matmul(&x.tape().constant(b.clone())))?;
            let e2 = check_input(mat(rng, r, c), s, h, |x| x.tape().constant(a.clone()).matmul(&x))?;
            Ok(e1.max(e2))
        }),
        ("add_sub_mul", |rng, s, h| {
            let (r, c) = dims(rng);
            let o = mat(rng, r, c);
            check_input(mat(rng, r, c), s, h, |x| {
                let k = x.tape().constant(o.clone());
                x.add(&k)?.mul(&x)?.sub(&k.mul(&x)?)
            })
        }),
        ("add_row", |rng, s, h| {
            let (r, c) = dims(rng);
            let m = mat(rng, r, c);
            let row = mat(rng, 1, c);
            let e1 = check_input(row, s, h, |x| x.tape().constant(m.clone()).add_row(&x))?;
            let row2 = mat(rng, 1, c);
            let e2 = check_input(m, s, h, |x| x.add_row(&x.tape().constant(row2.clone())))?;
            Ok(e1.max(e2))
        }),
        ("scale_and_scale_rows", |rng, s, h| {
            let (r, c) = dims(rng);
            let f: Arc<[f64]> = (0..r).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let k = rng.gen_range(-3.0..3.0);
            check_input(mat(rng, r, c), s, h, |x| x.scale(k)?.scale_rows(f.clone()))
        }),
        ("relu", |rng, s, h| {
            let (r, c) = dims(rng);
            check_input(mat(rng, r, c), s, h, |x| x.relu())
        }),
        ("sum_rows_and_sum_all", |rng, s, h| {
            let (r, c) = dims(rng);
            let e1 = check_input(mat(rng, r, c), s, h, |x| x.sum_rows())?;
            let e2 = check_input(mat(rng, r, c), s, h, |x| {
                let t = x.sum_all()?;
                t.mul(&t)
            })?;
            Ok(e1.max(e2))
        }),
        ("gather_and_scatter_add_rows", |rng, s, h| {
            let (r, c) = dims(rng);
            let m = rng.gen_range(1..=8);
            let idx: Arc<[usize]> = (0..m).map(|_| rng.gen_range(0..r)).collect();
            let out_rows = rng.gen_range(1..=8);
            let dst: Arc<[usize]> = (0..m).map(|_| rng.gen_range(0..out_rows)).collect();
            check_input(mat(rng, r, c), s, h, |x| x.gather_rows(idx.clone())?.scatter_add_rows(dst.clone(), out_rows))
        }),
        ("segment_max", |rng, s, h| {
            let (r, c) = dims(rng);
            let n = rng.gen_range(1..=4);
            let seg: Vec<usize> = (0..r).map(|_| rng.gen_range(0..n)).collect();
            check_input(mat(rng, r, c), s, h, |x| x.segment_max(&seg, n))
        }),
        ("group_sum_and_group_mul", |rng, s, h| {
            let r = rng.gen_range(1..=8);
            let g = rng.gen_range(1..=4);
            let w = rng.gen_range(1..=2);
            let weights = mat(rng, r, g);
            let values = mat(rng, r, g * w);
            let e1 = check_input(values.clone(), s, h, |x| x.group_mul(&x.tape().constant(weights.clone()))?.group_sum(w))?;
            let e2 = check_input(weights, s, h, |x| x.tape().constant(values.clone()).group_mul(&x))?;
            Ok(e1.max(e2))
        }),
        ("segment_softmax", |rng, s, h| {
            let (r, c) = dims(rng);
            let seg: Arc<[usize]> = (0..r).map(|_| rng.gen_range(0..3)).collect();
            check_input(mat(rng, r, c), s, h, |x| x.segment_softmax(seg.clone()))
        }),
        ("masked_row_softmax", |rng, s, h| {
            let (r, c) = dims(rng);
            let mask = Array2::from_shape_simple_fn((r, c), || rng.gen_bool(0.6));
            check_input(mat(rng, r, c), s, h, |x| x.masked_row_softmax(&mask))
        }),
        ("concat_cols_and_rows", |rng, s, h| {
            let (r, c) = dims(rng);
            let other = mat(rng, r, c);
            check_input(mat(rng, r, c), s, h, |x| {
                let k = x.tape().constant(other.clone());
                let wide = concat_cols(&[x, k, x])?;
                concat_rows(&[wide, wide.scale(0.5)?])
            })
        }),
        ("l1_loss", |rng, _, h| {
            let r = rng.gen_range(1..=8);
            let t: Arc<[f64]> = (0..r).map(|_| rng.gen_range(-1.0..1.0)).collect();
            finite_diff_gradcheck(|_, x| x.l1_loss(t.clone()), &mat(rng, r, 1), h)
        }),
        ("bce_with_logits", |rng, _, h| {
            let r = rng.gen_range(1..=8);
            let t: Arc<[f64]> = (0..r).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
            let x = mat(rng, r, 1) * 4.0;
            finite_diff_gradcheck(|_, x| x.bce_with_logits(t.clone()), &x, h)
        }),
        ("weighted_cross_entropy", |rng, _, h| {
            let r = rng.gen_range(1..=8);
            let c = rng.gen_range(2..=5);
            let y: Arc<[usize]> = (0..r).map(|_| rng.gen_range(0..c)).collect();
            let w: Arc<[f64]> = (0..c).map(|_| rng.gen_range(0.1..2.0)).collect();
            let x = mat(rng, r, c) * 3.0;
            finite_diff_gradcheck(|_, x| x.weighted_cross_entropy(y.clone(), w.clone()), &x, h)
        }),
    ]
}

/// Random graph on 2..=8 nodes with token node and edge features.
pub fn random_graph(rng: &mut ChaCha8Rng, vocab: usize) -> Graph {
    let n = rng.gen_range(2..=8);
    let p = rng.gen_range(0.2..0.7);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let nodes = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
    let efeat = (0..edges.len()).map(|_| rng.gen_range(0..vocab)).collect();
    let y = rng.gen_range(-1.0..1.0);
    Graph::new(n, &edges, NodeFeatures::Tokens(nodes), Some(EdgeFeatures::Tokens(efeat)), Some(Target::Graph(y)))
        .expect("valid random graph")
}

fn gtl_check(rng: &mut ChaCha8Rng, seed: u64, h: f64, edges: bool, include_self: bool, k: usize, augmented: bool) -> Result<f64> {
    let g = random_graph(rng, 3);
    let heads = [1, 2, 4][rng.gen_range(0..3)];
    let d = heads * rng.gen_range(1..=2);
    let cfg = LayerConfig {
        use_edge_features: edges,
        use_bias: rng.gen_bool(0.5),
        include_self,
        ..LayerConfig::new(heads, d)
    };
    let support = if k == 1 {
        AttentionSupport::one_hop(&g, include_self)
    } else {
        AttentionSupport::k_hop(&g, &khop_index(&g, k), k, include_self)
    };
    let groups = if augmented { k } else { 1 };
    let mut store = ParamStore::new();
    let layer = GtlLayer::new(&mut store, &Initializer::new(seed), "l", cfg, groups);
    let states = mat(rng, g.num_nodes(), d);
    let e = mat(rng, support.num_pairs(), d);
    let wrt_params = gradcheck_params(
        |tape, p| {
            let out = layer.forward(p, tape.constant(states.clone()), edges.then(|| tape.constant(e.clone())), &support, &mut Dropout::off())?;
            let s = project(out.h, seed)?;
            match out.e {
                Some(e) => s.add(&project(e, seed + 1)?),
                None => Ok(s),
            }
        },
        &store,
        h,
    )?;
    let wrt_input = finite_diff_gradcheck(
        |tape, x| {
            let p = store.bind_constant(tape);
            let out = layer.forward(&p, x, edges.then(|| tape.constant(e.clone())), &support, &mut Dropout::off())?;
            project(out.h, seed)
        },
        &states,
        h,
    )?;
    Ok(wrt_params.max(wrt_input))
}

fn gtl_checks() -> Vec<(&'static str, OpCheck)> {
    vec![
        ("gtl_layer", |rng, s, h| gtl_check(rng, s, h, false, false, 1, false)),
        ("gtl_layer_edges_self", |rng, s, h| gtl_check(rng, s, h, true, true, 1, false)),
        ("gtl_layer_khop2", |rng, s, h| gtl_check(rng, s, h, false, false, 2, false)),
        ("gtl_layer_khop2_augmented_edges", |rng, s, h| gtl_check(rng, s, h, true, false, 2, true)),
    ]
}

fn model_check(rng: &mut ChaCha8Rng, seed: u64, h: f64, mut cfg: SeaConfig) -> Result<f64> {
    cfg.num_heads = 2;
    cfg.hidden_dim = [2, 4, 8][rng.gen_range(0..3)];
    cfg.lpe_dim = rng.gen_range(1..=4);
    cfg.num_experts = rng.gen_range(1..=3);
    let graphs: Vec<Graph> = (0..rng.gen_range(1..=2))
        .map(|i| {
            let g = random_graph(rng, 4);
            match cfg.task {
                Task::GraphBinary => g.with_target(Some(Target::Graph((i % 2) as f64))),
                Task::NodeClassification => {
                    let y = (0..g.num_nodes()).map(|_| rng.gen_range(0..cfg.num_classes)).collect();
                    g.with_target(Some(Target::Node(y)))
                }
                Task::GraphRegression => Ok(g),
            }
            .expect("target fits")
        })
        .collect();
    let prepared = prepare(&graphs, &cfg)?;
    let refs: Vec<&PreparedGraph> = prepared.iter().collect();
    let batch = ModelBatch::new(&refs, &cfg)?;
    let model = SeaModel::new(cfg.clone(), seed)?;
    let mode = ForwardMode {
        fixed_routing: Some((0..batch.num_nodes()).map(|_| rng.gen_range(0..cfg.num_experts)).collect()),
        ..ForwardMode::eval()
    };
    gradcheck_params(
        |_, p| {
            let out = model.forward(p, &batch, &mode)?;
            model.loss(out.predictions, &batch, None)
        },
        model.params(),
        h,
    )
}

fn base(variant: Variant, task: Task) -> SeaConfig {
    SeaConfig::new(variant, task, InputSpec::Tokens(4))
}

fn sea_checks() -> Vec<(&'static str, OpCheck)> {
    vec![
        ("model_sea_gnn", |rng, s, h| model_check(rng, s, h, base(Variant::SeaGnn, Task::GraphRegression))),
        ("model_sea_gnn_edges_binary", |rng, s, h| {
            model_check(rng, s, h, SeaConfig {
                use_edge_features: true,
                edge_input: Some(InputSpec::Tokens(4)),
                include_self: true,
                use_bias: true,
                ..base(Variant::SeaGnn, Task::GraphBinary)
            })
        }),
        ("model_sea_aggregated", |rng, s, h| model_check(rng, s, h, base(Variant::SeaAggregated, Task::GraphRegression))),
        ("model_sea_aggregated_mean_mean", |rng, s, h| {
            model_check(rng, s, h, SeaConfig {
                aggregate: Aggregate::Mean,
                aggregate_mu: Aggregate::Mean,
                ..base(Variant::SeaAggregated, Task::NodeClassification)
            })
        }),
        ("model_sea_aggregated_max", |rng, s, h| {
            model_check(rng, s, h, SeaConfig {
                aggregate: Aggregate::Max,
                aggregate_mu: Aggregate::Max,
                ..base(Variant::SeaAggregated, Task::GraphRegression)
            })
        }),
        ("model_sea_khop2", |rng, s, h| model_check(rng, s, h, SeaConfig { khop: 2, ..base(Variant::SeaKhop, Task::GraphRegression) })),
        ("model_sea_khop2_augmented", |rng, s, h| {
            model_check(rng, s, h, SeaConfig {
                khop: 2,
                augmented: true,
                use_edge_features: true,
                edge_input: Some(InputSpec::Tokens(4)),
                ..base(Variant::SeaKhop, Task::NodeClassification)
            })
        }),
    ]
}

/// Runs every check of `module` (all modules when `None`) on `instances`
/// random inputs each, seeded from `seed`.
pub fn run_gradient_suite(module: Option<&str>, instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    if let Some(m) = module {
        if !MODULES.contains(&m) {
            return Err(SeaError::Config(format!("unknown module {m:?}, expected one of {MODULES:?}")));
        }
    }
    let groups: [(&'static str, Vec<(&'static str, OpCheck)>); 3] =
        [("autodiff", op_checks()), ("gtl", gtl_checks()), ("sea", sea_checks())];
    let mut out = Vec::new();
    for (m, checks) in groups {
        if module.is_some_and(|x| x != m) {
            continue;
        }
        for (c, (name, check)) in checks.into_iter().enumerate() {
            let mut worst = 0.0f64;
            for i in 0..instances {
                let s = seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((c * 10_007 + i) as u64);
                let run = |h| check(&mut ChaCha8Rng::seed_from_u64(s), s, h);
                let mut err = run(DEFAULT_STEP)?;
                if err > TOLERANCE {
                    err = err.min(run(FALLBACK_STEP)?);
                }
                worst = worst.max(err);
            }
            out.push(CheckResult {
                module: m,
                name: name.to_string(),
                instances,
                max_error: worst,
            });
        }
    }
    Ok(out)
}
