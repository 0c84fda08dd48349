use super::*;
use crate::graph::{EvalBatch, Graph, WeightStore};
use crate::train::{
    build_model, train, LossKind, OptimizerConfig, Target, TrainConfig,
};
use approx::assert_abs_diff_eq;
use ndarray::Array2;

fn weight_id_by_name(g: &Graph, name: &str) -> crate::graph::WeightId {
    let idx = g
        .weight_metas()
        .iter()
        .position(|m| m.name == name)
        .unwrap_or_else(|| panic!("weight {name} not registered"));
    crate::graph::WeightId(idx as u32)
}

#[test]
fn three_layer_functional_has_expected_shapes() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let y = g.variable("y").unwrap();
    let f = functional(&mut g, "f", &[x, y], &[6, 6, 6], Activation::Tanh, 0).unwrap();
    let dims: Vec<(usize, usize)> = f.layers().iter().map(|l| (l.d_out, l.d_in)).collect();
    assert_eq!(dims, vec![(6, 2), (6, 6), (6, 6), (1, 6)]);
    assert!(f.layers().last().unwrap().activation.is_none());
}

#[test]
fn eight_by_twenty_architecture() {
    let mut g = Graph::new();
    let t = g.variable("t").unwrap();
    let x = g.variable("x").unwrap();
    let f = functional(&mut g, "u", &[t, x], &[20; 8], Activation::Tanh, 0).unwrap();
    assert_eq!(f.layers().len(), 9);
    assert!(f.layers()[..8].iter().all(|l| l.d_out == 20));
    assert_eq!(f.layers()[8].d_out, 1);
}

#[test]
fn zero_weights_collapse_to_final_bias() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let f = functional(&mut g, "f", &[x], &[4, 4], Activation::Tanh, 3).unwrap();
    let mut store = WeightStore::initialize(&g);
    let mut weights = f.get_weights(&store);
    for (w, b) in weights.iter_mut() {
        w.fill(0.0);
        b.fill(0.0);
    }
    weights.last_mut().unwrap().1[[0, 0]] = 2.5;
    f.set_weights(&mut store, &weights).unwrap();
    let batch = EvalBatch::new().bind("x", vec![-1.0, 0.0, 5.0]);
    let out = g.eval(f.output(), &batch, &store).unwrap();
    assert_eq!(out, vec![2.5, 2.5, 2.5]);
}

#[test]
fn empty_architecture_rejected() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    assert!(matches!(
        functional(&mut g, "f", &[x], &[], Activation::Tanh, 0),
        Err(NetError::EmptyArchitecture)
    ));
    assert!(matches!(
        functional(&mut g, "g", &[], &[4], Activation::Tanh, 0),
        Err(NetError::EmptyArchitecture)
    ));
}

#[test]
fn composition_equals_direct_evaluation_on_constant_inners() {
    // Freeze f1, f2 to constants c1, c2 (zero weights, bias = c). The outer
    // network must then match the same architecture evaluated directly on
    // two variables bound to (c1, c2).
    let (c1, c2) = (0.35, -0.8);
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let y = g.variable("y").unwrap();
    let f1 = functional(&mut g, "f1", &[x, y], &[4, 4], Activation::Tanh, 1).unwrap();
    let f2 = functional(&mut g, "f2", &[x, y], &[4, 4], Activation::Tanh, 2).unwrap();
    let outer = functional(
        &mut g,
        "g",
        &[f1.output(), f2.output()],
        &[4, 4],
        Activation::Tanh,
        3,
    )
    .unwrap();
    let mut store = WeightStore::initialize(&g);
    for (f, c) in [(&f1, c1), (&f2, c2)] {
        let mut w = f.get_weights(&store);
        for (wm, bm) in w.iter_mut() {
            wm.fill(0.0);
            bm.fill(0.0);
        }
        w.last_mut().unwrap().1[[0, 0]] = c;
        f.set_weights(&mut store, &w).unwrap();
    }

    let mut g2 = Graph::new();
    let a = g2.variable("a").unwrap();
    let b = g2.variable("b").unwrap();
    let direct = functional(&mut g2, "g", &[a, b], &[4, 4], Activation::Tanh, 3).unwrap();
    let mut store2 = WeightStore::initialize(&g2);
    direct
        .set_weights(&mut store2, &outer.get_weights(&store))
        .unwrap();

    let batch = EvalBatch::new()
        .bind("x", vec![0.1, 2.0, -3.0])
        .bind("y", vec![1.0, -1.0, 0.5]);
    let composed = g.eval(outer.output(), &batch, &store).unwrap();
    let batch2 = EvalBatch::new()
        .bind("a", vec![c1; 3])
        .bind("b", vec![c2; 3]);
    let straight = g2.eval(direct.output(), &batch2, &store2).unwrap();
    for (u, v) in composed.iter().zip(&straight) {
        assert_abs_diff_eq!(u, v, epsilon = 1e-14);
    }
}

#[test]
fn composition_gradients_flow_into_all_networks() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let y = g.variable("y").unwrap();
    let f1 = functional(&mut g, "f1", &[x, y], &[4, 4], Activation::Tanh, 1).unwrap();
    let f2 = functional(&mut g, "f2", &[x, y], &[4, 4], Activation::Tanh, 2).unwrap();
    let outer = functional(
        &mut g,
        "g",
        &[f1.output(), f2.output()],
        &[4, 4],
        Activation::Tanh,
        3,
    )
    .unwrap();
    let loss = g.square(outer.output());
    let store = WeightStore::initialize(&g);
    let batch = EvalBatch::new()
        .bind("x", vec![0.2, -0.4, 0.9, 1.3])
        .bind("y", vec![-1.0, 0.3, 0.8, -0.6]);
    let grads = g.weight_gradients(loss, &batch, &store).unwrap();
    // One weight per network checked against central finite differences.
    for f in [&f1, &f2, &outer] {
        let id = f.layers()[0].w;
        let ad = grads.get(id).expect("gradient entry for trainable net")[[0, 0]];
        let h = 1e-5;
        let mean = |s: &WeightStore| {
            let v = g.eval(loss, &batch, s).unwrap();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let mut plus = store.clone();
        plus.tensor_mut(id)[[0, 0]] += h;
        let mut minus = store.clone();
        minus.tensor_mut(id)[[0, 0]] -= h;
        let fd = (mean(&plus) - mean(&minus)) / (2.0 * h);
        assert!(
            (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-8) < 1e-5,
            "{}: {ad} vs {fd}",
            f.name()
        );
    }
}

#[test]
fn frozen_functional_gets_no_gradient_entries() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let f1 = functional(&mut g, "f1", &[x], &[4], Activation::Tanh, 1).unwrap();
    let outer = functional(&mut g, "g", &[f1.output()], &[4], Activation::Tanh, 2).unwrap();
    let loss = g.square(outer.output());
    let mut store = WeightStore::initialize(&g);
    f1.set_trainable(&mut store, false);
    let batch = EvalBatch::new().bind("x", vec![0.5, 1.0]);
    let grads = g.weight_gradients(loss, &batch, &store).unwrap();
    for layer in f1.layers() {
        assert!(!grads.contains(layer.w));
        assert!(!grads.contains(layer.b));
    }
    assert!(grads.contains(outer.layers()[0].w));
}

#[test]
fn residual_block_with_zero_weights_is_identity() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let y = g.variable("y").unwrap();
    let input = g.concat(&[x, y]);
    let out = residual_block(&mut g, "blk", input, [3, 3, 2], Activation::Tanh, 7).unwrap();
    let mut store = WeightStore::initialize(&g);
    for (i, meta) in g.weight_metas().iter().enumerate() {
        let id = crate::graph::WeightId(i as u32);
        store
            .set_tensor(id, Array2::zeros((meta.rows, meta.cols)))
            .unwrap();
    }
    let c0 = g.extract(out, 0);
    let c1 = g.extract(out, 1);
    let batch = EvalBatch::new()
        .bind("x", vec![0.7, -2.0])
        .bind("y", vec![1.5, 0.25]);
    assert_eq!(g.eval(c0, &batch, &store).unwrap(), vec![0.7, -2.0]);
    assert_eq!(g.eval(c1, &batch, &store).unwrap(), vec![1.5, 0.25]);
}

#[test]
fn residual_block_equals_three_layer_chain_plus_skip() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let y = g.variable("y").unwrap();
    let input = g.concat(&[x, y]);
    let out = residual_block(&mut g, "blk", input, [5, 4, 2], Activation::Tanh, 11).unwrap();
    // Oracle: apply the same three activated affine layers explicitly.
    let chain = {
        let mut cur = input;
        for i in 0..3 {
            let w = weight_id_by_name(&g, &format!("blk/{i}/w"));
            let b = weight_id_by_name(&g, &format!("blk/{i}/b"));
            cur = g.affine(w, Some(b), cur).unwrap();
            cur = g.tanh(cur);
        }
        cur
    };
    let skip_plus = g.add(chain, input);
    let store = WeightStore::initialize(&g);
    let batch = EvalBatch::new()
        .bind("x", vec![0.3, -0.9, 2.0])
        .bind("y", vec![-0.1, 0.8, 1.2]);
    for lane in 0..2 {
        let a = g.extract(out, lane);
        let b = g.extract(skip_plus, lane);
        assert_eq!(
            g.eval(a, &batch, &store).unwrap(),
            g.eval(b, &batch, &store).unwrap()
        );
    }
}

#[test]
fn stacked_residual_blocks_iterate_the_recurrence() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let y = g.variable("y").unwrap();
    let z0 = g.concat(&[x, y]);
    let z1 = residual_block(&mut g, "b0", z0, [3, 3, 2], Activation::Tanh, 1).unwrap();
    let z2 = residual_block(&mut g, "b1", z1, [3, 3, 2], Activation::Tanh, 2).unwrap();
    // The second block consumes the first block's output, so zeroing block 1
    // weights must reduce the stack to the first block alone.
    let mut store = WeightStore::initialize(&g);
    for i in 0..3 {
        let w = weight_id_by_name(&g, &format!("b1/{i}/w"));
        let b = weight_id_by_name(&g, &format!("b1/{i}/b"));
        let meta_w = g.weight_metas()[w.index()].clone();
        let meta_b = g.weight_metas()[b.index()].clone();
        store
            .set_tensor(w, Array2::zeros((meta_w.rows, meta_w.cols)))
            .unwrap();
        store
            .set_tensor(b, Array2::zeros((meta_b.rows, meta_b.cols)))
            .unwrap();
    }
    let batch = EvalBatch::new()
        .bind("x", vec![0.4, 1.1])
        .bind("y", vec![-0.6, 0.2]);
    for lane in 0..2 {
        let a = g.extract(z2, lane);
        let b = g.extract(z1, lane);
        assert_eq!(
            g.eval(a, &batch, &store).unwrap(),
            g.eval(b, &batch, &store).unwrap()
        );
    }
}

#[test]
fn residual_block_width_mismatch_rejected() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let y = g.variable("y").unwrap();
    let input = g.concat(&[x, y]);
    assert!(matches!(
        residual_block(&mut g, "blk", input, [3, 3, 5], Activation::Tanh, 0),
        Err(NetError::WidthMismatch {
            expected: 2,
            got: 5
        })
    ));
}

#[test]
fn parameter_broadcasts_and_freezes() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let p = parameter(&mut g, "lambda", 0.0);
    let mut store = WeightStore::initialize(&g);
    let batch = EvalBatch::new().bind("x", vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    assert_eq!(
        g.eval(p.expr(), &batch, &store).unwrap(),
        vec![0.0; 5]
    );
    p.set_value(&mut store, 1.0);
    let sum = g.add(p.expr(), x);
    let loss = g.square(sum);
    let grads = g.weight_gradients(loss, &batch, &store).unwrap();
    assert!(grads.contains(p.id()));
    p.set_trainable(&mut store, false);
    let grads = g.weight_gradients(loss, &batch, &store).unwrap();
    assert!(!grads.contains(p.id()));
}

#[test]
fn set_weights_shape_mismatch_names_layer() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let f = functional(&mut g, "f", &[x], &[3, 3], Activation::Tanh, 0).unwrap();
    let mut store = WeightStore::initialize(&g);
    let mut weights = f.get_weights(&store);
    weights[1].0 = Array2::zeros((4, 3));
    match f.set_weights(&mut store, &weights) {
        Err(NetError::ShapeMismatch { location, .. }) => {
            assert!(location.contains("layer 1"), "location was {location}");
        }
        other => panic!("expected ShapeMismatch, got {other:?}"),
    }
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weights.pfw.json");

    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let f = functional(&mut g, "f", &[x], &[7, 5], Activation::Tanh, 42).unwrap();
    let p = parameter(&mut g, "lam", 0.125);
    let mut store = WeightStore::initialize(&g);
    p.set_value(&mut store, 0.7318529281948712);
    let batch = EvalBatch::new().bind("x", (0..50).map(|i| i as f64 * 0.07 - 1.5).collect::<Vec<_>>());
    let before = g.eval(f.output(), &batch, &store).unwrap();

    save_weights(&path, "test", &g, &store, &[&f], &[&p]).unwrap();

    let mut store2 = WeightStore::initialize(&g);
    load_weights(&path, &g, &mut store2, &[&f], &[&p]).unwrap();
    let after = g.eval(f.output(), &batch, &store2).unwrap();
    assert_eq!(before, after);
    assert_eq!(p.value(&store), p.value(&store2));
    for layer in f.layers() {
        assert_eq!(store.tensor(layer.w), store2.tensor(layer.w));
        assert_eq!(store.tensor(layer.b), store2.tensor(layer.b));
    }
}

#[test]
fn load_into_differently_shaped_functional_names_offending_layer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weights.pfw.json");

    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let f = functional(&mut g, "f", &[x], &[3, 3], Activation::Tanh, 0).unwrap();
    let store = WeightStore::initialize(&g);
    save_weights(&path, "test", &g, &store, &[&f], &[]).unwrap();

    let mut g2 = Graph::new();
    let x2 = g2.variable("x").unwrap();
    let f2 = functional(&mut g2, "f", &[x2], &[3, 4], Activation::Tanh, 0).unwrap();
    let mut store2 = WeightStore::initialize(&g2);
    match load_weights(&path, &g2, &mut store2, &[&f2], &[]) {
        Err(NetError::ShapeMismatch { location, .. }) => {
            assert!(location.contains("layer 1"), "location was {location}");
        }
        other => panic!("expected ShapeMismatch, got {other:?}"),
    }
}

#[test]
fn format_version_mismatch_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weights.pfw.json");
    std::fs::write(
        &path,
        r#"{"format_version": 99, "name": "x", "layers": [], "parameters": []}"#,
    )
    .unwrap();
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let f = functional(&mut g, "f", &[x], &[3], Activation::Tanh, 0).unwrap();
    let mut store = WeightStore::initialize(&g);
    assert!(matches!(
        load_weights(&path, &g, &mut store, &[&f], &[]),
        Err(NetError::FormatVersionMismatch { got: 99, .. })
    ));
}

#[test]
fn same_seed_gives_bit_identical_initialization_different_seed_differs() {
    let build = |seed: u64| {
        let mut g = Graph::new();
        let x = g.variable("x").unwrap();
        let f = functional(&mut g, "f", &[x], &[8, 8], Activation::Tanh, seed).unwrap();
        let store = WeightStore::initialize(&g);
        let batch = EvalBatch::new().bind("x", vec![0.1, 0.9, -0.4]);
        g.eval(f.output(), &batch, &store).unwrap()
    };
    assert_eq!(build(5), build(5));
    assert_ne!(build(5), build(6));
}

#[test]
fn universal_approximator_smoke_fit_of_sine() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let f = functional(&mut g, "f", &[x], &[10, 10], Activation::Tanh, 17).unwrap();
    let out = f.output();
    let n = 200;
    let xs: Vec<f64> = (0..n)
        .map(|i| -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64)
        .collect();
    let data: Vec<f64> = xs.iter().map(|v| v.sin()).collect();
    let model = build_model(
        &mut g,
        &[x],
        vec![Target::data(out, data.clone())],
        LossKind::Mse,
        OptimizerConfig::adam(0.01),
    )
    .unwrap();
    let mut store = WeightStore::initialize(&g);
    let history = train(
        &g,
        &mut store,
        &model,
        &[xs],
        &TrainConfig {
            epochs: 2000,
            batch_size: None,
            shuffle_seed: 0,
            log_every: 0,
        },
    )
    .unwrap();
    assert!(
        history.final_loss() < 1e-3,
        "sine fit MSE {} after 2000 Adam steps",
        history.final_loss()
    );
}

#[test]
fn frozen_weights_stay_bit_identical_through_training() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let f = functional(&mut g, "f", &[x], &[6], Activation::Tanh, 2).unwrap();
    let p = parameter(&mut g, "shift", 0.0);
    let shifted = g.add(f.output(), p.expr());
    let xs: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
    let data: Vec<f64> = xs.iter().map(|v| v + 1.0).collect();
    let model = build_model(
        &mut g,
        &[x],
        vec![Target::data(shifted, data)],
        LossKind::Mse,
        OptimizerConfig::adam(0.01),
    )
    .unwrap();
    let mut store = WeightStore::initialize(&g);
    f.set_trainable(&mut store, false);
    let before: Vec<Array2<f64>> = f
        .layers()
        .iter()
        .flat_map(|l| [store.tensor(l.w).clone(), store.tensor(l.b).clone()])
        .collect();
    train(
        &g,
        &mut store,
        &model,
        &[xs],
        &TrainConfig {
            epochs: 100,
            ..Default::default()
        },
    )
    .unwrap();
    let after: Vec<Array2<f64>> = f
        .layers()
        .iter()
        .flat_map(|l| [store.tensor(l.w).clone(), store.tensor(l.b).clone()])
        .collect();
    assert_eq!(before, after);
    // The unfrozen parameter did move.
    assert!(p.value(&store) != 0.0);
}
