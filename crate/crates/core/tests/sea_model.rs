mod common;

use common::*;
use ndarray::{arr2, Array2};
use rand::Rng;
use sea_core::autodiff::{gradcheck_params, ParamStore, Initializer, Tape, DEFAULT_STEP};
use sea_core::graph::{Graph, NodeFeatures, Target};
use sea_core::gtl::{readout, AttentionSupport, Dropout, Linear};
use sea_core::sea::*;

fn small(variant: Variant, task: Task, input: InputSpec) -> SeaConfig {
    SeaConfig {
        num_experts: 3,
        num_heads: 2,
        hidden_dim: 8,
        lpe_dim: 4,
        ..SeaConfig::new(variant, task, input)
    }
}

fn model_batch(graphs: &[Graph], cfg: &SeaConfig) -> ModelBatch {
    let prepared = prepare(graphs, cfg).unwrap();
    let refs: Vec<&PreparedGraph> = prepared.iter().collect();
    ModelBatch::new(&refs, cfg).unwrap()
}

fn states(model: &SeaModel, batch: &ModelBatch) -> Vec<Array2<f64>> {
    let tape = Tape::new();
    let p = model.params().bind_constant(&tape);
    let h0 = model.embed(&p, batch).unwrap();
    model
        .expert_states(&p, batch, h0, &mut Dropout::off())
        .unwrap()
        .iter()
        .map(|t| t.value().as_ref().clone())
        .collect()
}

#[test]
fn expert_transform_identity_constant_and_oracle() {
    let tape = Tape::new();
    let mut store = ParamStore::new();
    let init = Initializer::new(3);
    let heads: Vec<Linear> = (0..2)
        .map(|i| Linear::new(&mut store, &init, &format!("e{i}"), 3, 3, true))
        .collect();
    *store.get_mut(heads[0].weight) = Array2::eye(3);
    *store.get_mut(heads[1].weight) = Array2::zeros((3, 3));
    *store.get_mut(heads[1].bias.unwrap()) = arr2(&[[0.5, -1.0, 2.0]]);
    let x = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.3 - 1.0);
    let routing = RoutingDecision {
        probs: Array2::from_elem((4, 2), 0.5),
        chosen: vec![0, 1, 1, 0],
        explored: vec![false; 4],
    };
    let p = store.bind(&tape);
    let s = tape.constant(x.clone());
    let out = expert_transform(&p, &[s, s], &heads, &routing).unwrap().value();
    for u in [0, 3] {
        assert_eq!(out.row(u), x.row(u));
    }
    for u in [1, 2] {
        assert_eq!(out.row(u).to_vec(), vec![0.5, -1.0, 2.0]);
    }

    let mut r = rng(11);
    let store2 = {
        let mut s = ParamStore::new();
        for h in &heads {
            s.add(format!("{}", h.weight.index()), Array2::from_shape_simple_fn((3, 3), || r.gen_range(-1.0..1.0)));
            s.add(format!("{}b", h.weight.index()), Array2::from_shape_simple_fn((1, 3), || r.gen_range(-1.0..1.0)));
        }
        s
    };
    let tape = Tape::new();
    let p = store2.bind(&tape);
    let s = tape.constant(x.clone());
    let out = expert_transform(&p, &[s, s], &heads, &routing).unwrap().value();
    for (u, &i) in routing.chosen.iter().enumerate() {
        let w = store2.get(heads[i].weight);
        let b = store2.get(heads[i].bias.unwrap());
        for c in 0..3 {
            let want: f64 = (0..3).map(|k| x[(u, k)] * w[(k, c)]).sum::<f64>() + b[(0, c)];
            assert!((out[(u, c)] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn single_expert_is_trunk_plus_head() {
    for variant in [Variant::SeaGnn, Variant::SeaAggregated, Variant::SeaKhop] {
        let cfg = SeaConfig {
            num_experts: 1,
            ..small(variant, Task::GraphRegression, InputSpec::Tokens(4))
        };
        let g = token_graph(7, 0.4, 4, 5);
        let batch = model_batch(&[g], &cfg);
        let model = SeaModel::new(cfg, 2).unwrap();
        let (pred, routing) = model.predict(&batch, &ForwardMode::eval()).unwrap();
        assert!(routing.chosen.iter().all(|&i| i == 0));

        let tape = Tape::new();
        let p = model.params().bind_constant(&tape);
        let h0 = model.embed(&p, &batch).unwrap();
        let layer = model.layers()[0]
            .forward(&p, h0, None, &batch.support, &mut Dropout::off())
            .unwrap();
        let mapped = model.expert_heads()[0].forward(&p, layer.h).unwrap();
        let pooled = readout(mapped, &batch.graph_id, 1, Default::default()).unwrap();
        let manual = model.head().forward(&p, pooled).unwrap().value();
        assert_eq!(&pred, manual.as_ref(), "{variant:?}");
    }
}

#[test]
fn gnn_experts_differ_on_path() {
    let cfg = small(Variant::SeaGnn, Task::NodeClassification, InputSpec::Dense(3));
    let g = Graph::new(
        6,
        &path(6),
        NodeFeatures::Dense(Array2::from_shape_fn((6, 3), |(i, j)| ((i * 5 + j * 3) % 7) as f64 - 3.0)),
        None,
        None,
    )
    .unwrap();
    let model = SeaModel::new(cfg.clone(), 1).unwrap();
    let s = states(&model, &model_batch(&[g], &cfg));
    assert_eq!(s.len(), 3);
    for i in 0..3 {
        for j in i + 1..3 {
            assert!(max_abs_diff(&s[i], &s[j]) > 1e-6);
        }
    }
}

#[test]
fn gnn_receptive_field_is_exact() {
    let cfg = SeaConfig {
        num_experts: 3,
        ..small(Variant::SeaGnn, Task::NodeClassification, InputSpec::Dense(3))
    };
    let mut cases = 0;
    let mut seed = 0;
    while cases < 20 {
        seed += 1;
        let g = dense_graph(10, 0.22, 3, seed);
        let mut r = rng(seed + 1000);
        let u = r.gen_range(0..10);
        let i = r.gen_range(1..=3);
        let dist = distances(&g, u);
        let far: Vec<usize> = (0..10).filter(|&v| dist[v].map_or(true, |d| d > i)).collect();
        if far.is_empty() {
            continue;
        }
        let w = far[r.gen_range(0..far.len())];
        let NodeFeatures::Dense(x) = g.node_features().clone() else { unreachable!() };
        let mut x2 = x.clone();
        x2.row_mut(w).mapv_inplace(|v| v + 3.7);
        let g2 = g.clone().with_node_features(NodeFeatures::Dense(x2)).unwrap();
        let model = SeaModel::new(cfg.clone(), seed).unwrap();
        let a = states(&model, &model_batch(&[g], &cfg));
        let b = states(&model, &model_batch(&[g2], &cfg));
        assert_eq!(a[i - 1].row(u), b[i - 1].row(u), "seed {seed} u {u} i {i} w {w}");
        // the perturbation itself is visible at w
        assert_ne!(a[0].row(w), b[0].row(w));
        cases += 1;
    }
}

#[test]
fn khop_with_k1_is_bit_identical_to_gnn() {
    for seed in 0..10 {
        let gnn = small(Variant::SeaGnn, Task::GraphRegression, InputSpec::Tokens(4));
        let khop = SeaConfig { khop: 1, augmented: seed % 2 == 0, ..small(Variant::SeaKhop, Task::GraphRegression, InputSpec::Tokens(4)) };
        let graphs: Vec<Graph> = (0..3).map(|j| token_graph(5 + j, 0.4, 4, seed * 10 + j as u64)).collect();
        let a = SeaModel::new(gnn.clone(), seed).unwrap();
        let b = SeaModel::new(khop.clone(), seed).unwrap();
        assert_eq!(a.params(), b.params());
        let mode = ForwardMode { epsilon: 0.3, seed, ..ForwardMode::default() };
        let (pa, ra) = a.predict(&model_batch(&graphs, &gnn), &mode).unwrap();
        let (pb, rb) = b.predict(&model_batch(&graphs, &khop), &mode).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ra, rb);
    }
}

#[test]
fn aggregated_first_expert_matches_gnn_first_layer() {
    let g = token_graph(8, 0.35, 4, 3);
    let agg = small(Variant::SeaAggregated, Task::GraphRegression, InputSpec::Tokens(4));
    let gnn = small(Variant::SeaGnn, Task::GraphRegression, InputSpec::Tokens(4));
    let a = states(&SeaModel::new(agg.clone(), 4).unwrap(), &model_batch(&[g.clone()], &agg));
    let b = states(&SeaModel::new(gnn.clone(), 4).unwrap(), &model_batch(&[g], &gnn));
    assert_eq!(a[0], b[0]);
    assert_eq!(a.len(), 3);
}

fn aggregate_twice(g: &Graph, x: Array2<f64>, agg: Aggregate, mu: Aggregate) -> Array2<f64> {
    let tape = Tape::new();
    let nbrs = AttentionSupport::one_hop(g, false);
    let n = g.num_nodes();
    let m = aggregate(tape.constant(x), &nbrs, agg, n).unwrap();
    aggregate(m, &nbrs, mu, n).unwrap().value().as_ref().clone()
}

#[test]
fn aggregation_hand_cases() {
    // C4 of constant states: sum then mean gives degree * c
    let c4 = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
    let out = aggregate_twice(&c4, Array2::from_elem((4, 2), 1.5), Aggregate::Sum, Aggregate::Mean);
    assert!(out.iter().all(|&v| v == 3.0));

    // P3 center receives (m(0) + m(2)) / 2 = b
    let p3 = Graph::from_edges(3, &path(3)).unwrap();
    let x = arr2(&[[1.0, -2.0], [0.25, 4.0], [7.0, 3.0]]);
    let out = aggregate_twice(&p3, x.clone(), Aggregate::Sum, Aggregate::Mean);
    assert_eq!(out.row(1), x.row(1));

    // isolated node becomes zero under every combination
    let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
    for a in [Aggregate::Sum, Aggregate::Mean, Aggregate::Max] {
        for m in [Aggregate::Sum, Aggregate::Mean, Aggregate::Max] {
            let out = aggregate_twice(&g, Array2::from_elem((3, 2), 2.0), a, m);
            assert!(out.row(2).iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn router_scaling_and_determinism() {
    let cfg = small(Variant::SeaKhop, Task::GraphRegression, InputSpec::Tokens(4));
    let graphs: Vec<Graph> = (0..4).map(|j| token_graph(6, 0.4, 4, 40 + j)).collect();
    let batch = model_batch(&graphs, &cfg);
    let model = SeaModel::new(cfg, 8).unwrap();
    let (pred, routing) = model.predict(&batch, &ForwardMode::eval()).unwrap();
    let (pred2, routing2) = model.predict(&batch, &ForwardMode::eval()).unwrap();
    assert_eq!(pred, pred2);
    assert_eq!(routing, routing2);
    for c in [0.01, 3.0, 250.0] {
        let mut scaled = model.clone();
        let r = scaled.router();
        scaled.params_mut().get_mut(r).mapv_inplace(|v| v * c);
        let (p, d) = scaled.predict(&batch, &ForwardMode::eval()).unwrap();
        assert_eq!(d.chosen, routing.chosen);
        assert_eq!(p, pred);
    }
}

#[test]
fn non_chosen_experts_get_zero_gradient() {
    let cfg = SeaConfig {
        num_experts: 4,
        ..small(Variant::SeaGnn, Task::NodeClassification, InputSpec::Dense(3))
    };
    let mut checked = 0;
    for seed in 0..10u64 {
        let g = dense_graph(8, 0.35, 3, seed);
        let batch = model_batch(&[g.clone()], &cfg);
        let model = SeaModel::new(cfg.clone(), seed).unwrap();
        let Some(Target::Node(labels)) = g.target() else { unreachable!() };
        let u = (seed as usize * 3) % 8;
        let tape = Tape::new();
        let p = model.params().bind(&tape);
        let out = model.forward(&p, &batch, &ForwardMode::eval()).unwrap();
        let row = out.predictions.gather_rows(vec![u].into()).unwrap();
        let loss = row
            .weighted_cross_entropy(vec![labels[u]].into(), vec![1.0, 1.0].into())
            .unwrap();
        let grads = p.grads(&tape.backward(loss).unwrap());
        let chosen = out.routing.chosen[u];
        for (i, head) in model.expert_heads().iter().enumerate() {
            let params = [head.weight, head.bias.unwrap()];
            let zero = params.iter().all(|id| grads[id.index()].iter().all(|&v| v == 0.0));
            assert_eq!(zero, i != chosen, "seed {seed} expert {i} chosen {chosen}");
        }
        assert!(grads[model.router().index()].iter().all(|&v| v == 0.0));
        checked += 1;
    }
    assert_eq!(checked, 10);
}

fn end_to_end_gradcheck(cfg: SeaConfig, graphs: &[Graph], seed: u64) -> f64 {
    let batch = model_batch(graphs, &cfg);
    let model = SeaModel::new(cfg.clone(), seed).unwrap();
    let n = batch.num_nodes();
    let mode = ForwardMode {
        fixed_routing: Some((0..n).map(|u| (u * 7 + seed as usize) % cfg.num_experts).collect()),
        ..ForwardMode::eval()
    };
    gradcheck_params(
        |_, p| {
            let out = model.forward(p, &batch, &mode)?;
            model.loss(out.predictions, &batch, None)
        },
        model.params(),
        DEFAULT_STEP,
    )
    .unwrap()
}

#[test]
fn gradcheck_every_variant() {
    let cases = [
        small(Variant::SeaGnn, Task::GraphRegression, InputSpec::Tokens(4)),
        SeaConfig { use_edge_features: true, edge_input: Some(InputSpec::Tokens(4)), include_self: true, use_bias: true, ..small(Variant::SeaGnn, Task::GraphBinary, InputSpec::Tokens(4)) },
        SeaConfig { aggregate: Aggregate::Sum, aggregate_mu: Aggregate::Mean, ..small(Variant::SeaAggregated, Task::GraphRegression, InputSpec::Tokens(4)) },
        SeaConfig { khop: 2, ..small(Variant::SeaKhop, Task::GraphBinary, InputSpec::Tokens(4)) },
        SeaConfig { khop: 2, augmented: true, use_edge_features: true, edge_input: Some(InputSpec::Tokens(4)), ..small(Variant::SeaKhop, Task::GraphRegression, InputSpec::Tokens(4)) },
    ];
    for (i, cfg) in cases.into_iter().enumerate() {
        let mut graphs: Vec<Graph> = (0..2).map(|j| token_graph(5, 0.5, 4, 70 + i as u64 * 2 + j)).collect();
        if cfg.task == Task::GraphBinary {
            graphs = graphs
                .into_iter()
                .enumerate()
                .map(|(j, g)| g.with_target(Some(Target::Graph((j % 2) as f64))).unwrap())
                .collect();
        }
        let err = end_to_end_gradcheck(cfg.clone(), &graphs, i as u64);
        assert!(err <= 1e-4, "{cfg:?}: {err}");
    }
    let node = small(Variant::SeaKhop, Task::NodeClassification, InputSpec::Dense(3));
    let err = end_to_end_gradcheck(node, &[dense_graph(7, 0.4, 3, 9)], 5);
    assert!(err <= 1e-4, "node task: {err}");
}

#[test]
fn batched_prediction_equals_per_graph() {
    let cfg = small(Variant::SeaKhop, Task::GraphRegression, InputSpec::Tokens(4));
    let graphs: Vec<Graph> = (0..5).map(|j| token_graph(4 + j, 0.5, 4, 90 + j as u64)).collect();
    let prepared = prepare(&graphs, &cfg).unwrap();
    let model = SeaModel::new(cfg.clone(), 6).unwrap();
    let refs: Vec<&PreparedGraph> = prepared.iter().collect();
    let mode = ForwardMode { epsilon: 0.5, seed: 3, ..ForwardMode::default() };
    let (all, _) = model.predict(&ModelBatch::new(&refs, &cfg).unwrap(), &mode).unwrap();
    for (j, pg) in prepared.iter().enumerate() {
        let (one, _) = model.predict(&ModelBatch::new(&[pg], &cfg).unwrap(), &mode).unwrap();
        assert!((one[(0, 0)] - all[(j, 0)]).abs() < 1e-10);
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = SeaConfig { khop: 3, augmented: true, ..small(Variant::SeaKhop, Task::GraphRegression, InputSpec::Tokens(4)) };
    let model = SeaModel::new(cfg.clone(), 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = SeaModel::load(&path).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(back.config(), model.config());
    let batch = model_batch(&[token_graph(6, 0.5, 4, 1)], &cfg);
    assert_eq!(
        back.predict(&batch, &ForwardMode::eval()).unwrap().0,
        model.predict(&batch, &ForwardMode::eval()).unwrap().0
    );
    std::fs::write(&path, r#"{"format_version":9,"model":{},"params":{}}"#).unwrap();
    assert!(SeaModel::load(&path).is_err());
}

#[test]
fn rejects_mismatched_inputs() {
    let cfg = small(Variant::SeaGnn, Task::GraphRegression, InputSpec::Tokens(2));
    let model = SeaModel::new(cfg.clone(), 0).unwrap();
    let batch = model_batch(&[token_graph(5, 0.5, 4, 2)], &cfg);
    assert!(model.predict(&batch, &ForwardMode::eval()).is_err());
    let dense = model_batch(&[dense_graph(4, 0.5, 3, 2)], &cfg);
    assert!(model.predict(&dense, &ForwardMode::eval()).is_err());
    assert!(check_task(&[dense_graph(4, 0.5, 3, 2)], Task::GraphRegression).is_err());
}
