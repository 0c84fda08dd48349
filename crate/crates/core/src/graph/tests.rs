use super::*;
use approx::assert_abs_diff_eq;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-10)
}

#[test]
fn variable_eval_is_identity() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let store = WeightStore::initialize(&g);
    let batch = EvalBatch::new().bind("x", vec![1.0, 2.0, 3.0]);
    assert_eq!(g.eval(x, &batch, &store).unwrap(), vec![1.0, 2.0, 3.0]);
}

#[test]
fn unbound_variable_errors() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let store = WeightStore::initialize(&g);
    let batch = EvalBatch::new().bind("y", vec![1.0]);
    match g.eval(x, &batch, &store) {
        Err(GraphError::MissingBinding(name)) => assert_eq!(name, "x"),
        other => panic!("expected MissingBinding, got {other:?}"),
    }
}

#[test]
fn product_of_two_variables() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let y = g.variable("y").unwrap();
    let xy = g.mul(x, y);
    let store = WeightStore::initialize(&g);
    let batch = EvalBatch::new().bind("x", vec![2.0]).bind("y", vec![3.0]);
    assert_eq!(g.eval(xy, &batch, &store).unwrap(), vec![6.0]);
}

#[test]
fn duplicate_variable_name_rejected() {
    let mut g = Graph::new();
    g.variable("x").unwrap();
    assert!(matches!(
        g.variable("x"),
        Err(GraphError::DuplicateVariableName(_))
    ));
}

#[test]
fn activation_values() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let t = g.tanh(x);
    let s = g.sigmoid(x);
    let r = g.relu(x);
    let sg = g.sign(x);
    let store = WeightStore::initialize(&g);
    let batch = EvalBatch::new().bind("x", vec![0.0, -1.5, 2.0, -0.3, 0.3]);
    let tv = g.eval(t, &batch, &store).unwrap();
    let sv = g.eval(s, &batch, &store).unwrap();
    let rv = g.eval(r, &batch, &store).unwrap();
    let gv = g.eval(sg, &batch, &store).unwrap();
    assert_eq!(tv[0], 0.0);
    assert_eq!(sv[0], 0.5);
    assert_eq!(rv[1], 0.0);
    assert_eq!(rv[2], 2.0);
    assert_eq!(gv[3], -1.0);
    assert_eq!(gv[4], 1.0);
}

#[test]
fn apply_checks_arity() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    match g.apply(OpKind::Add, &[x]) {
        Err(GraphError::ArityMismatch { expected, got, .. }) => {
            assert_eq!((expected, got), (2, 1));
        }
        other => panic!("expected ArityMismatch, got {other:?}"),
    }
}

#[test]
fn affine_like_scalar_expression() {
    // 2*x + 1 over [0, 1, 2] -> [1, 3, 5]
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let two = g.constant(2.0);
    let prod = g.mul(two, x);
    let one = g.constant(1.0);
    let e = g.add(prod, one);
    let store = WeightStore::initialize(&g);
    let batch = EvalBatch::new().bind("x", vec![0.0, 1.0, 2.0]);
    assert_eq!(g.eval(e, &batch, &store).unwrap(), vec![1.0, 3.0, 5.0]);
}

#[test]
fn sqrt_of_negative_detected_in_debug_eval() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let r = g.sqrt(x);
    let store = WeightStore::initialize(&g);
    let batch = EvalBatch::new().bind("x", vec![-1.0]);
    let opts = EvalOptions { check_finite: true };
    assert!(matches!(
        g.eval_with(r, &batch, &store, &opts),
        Err(GraphError::NonFiniteValue { .. })
    ));
}

#[test]
fn diff_sin_first_and_second_order() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let s = g.sin(x);
    let d1 = g.diff(s, x, 1).unwrap();
    let d2 = g.diff(s, x, 2).unwrap();
    let store = WeightStore::initialize(&g);
    let b0 = EvalBatch::new().bind("x", vec![0.0]);
    let bp = EvalBatch::new().bind("x", vec![std::f64::consts::FRAC_PI_2]);
    assert_abs_diff_eq!(g.eval(d1, &b0, &store).unwrap()[0], 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(g.eval(d2, &bp, &store).unwrap()[0], -1.0, epsilon = 1e-15);
}

#[test]
fn diff_is_not_allowed_wrt_non_variable() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let s = g.sin(x);
    assert!(matches!(g.diff(x, s, 1), Err(GraphError::NotAVariable)));
}

#[test]
fn second_derivative_of_tanh_affine_matches_finite_difference_oracle() {
    // Independent oracle: tanh'(u) = 1 - tanh(u)^2 hand-coded; the second
    // derivative of tanh(w*x + b) at w=1, b=0 equals d/dx tanh'(x),
    // approximated by a central difference with h = 1e-4.
    let (w, b, x0, h) = (1.0f64, 0.0f64, 0.5f64, 1e-4f64);
    let tanh_prime = |u: f64| 1.0 - u.tanh() * u.tanh();
    let fd = (tanh_prime(w * (x0 + h) + b) - tanh_prime(w * (x0 - h) + b)) / (2.0 * h);

    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let wc = g.constant(w);
    let bc = g.constant(b);
    let wx = g.mul(wc, x);
    let u = g.add(wx, bc);
    let t = g.tanh(u);
    let d2 = g.diff(t, x, 2).unwrap();
    let store = WeightStore::initialize(&g);
    let batch = EvalBatch::new().bind("x", vec![x0]);
    let got = g.eval(d2, &batch, &store).unwrap()[0];
    assert!(
        rel_err(got, fd) < 1e-6,
        "second derivative {got} vs finite difference {fd}"
    );
}

#[test]
fn sign_derivative_is_zero_everywhere() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let s = g.sign(x);
    let d = g.diff(s, x, 1).unwrap();
    let store = WeightStore::initialize(&g);
    let batch = EvalBatch::new().bind("x", vec![-2.0, 0.0, 3.0]);
    assert_eq!(g.eval(d, &batch, &store).unwrap(), vec![0.0, 0.0, 0.0]);
}

#[test]
fn weight_gradient_matches_hand_chain_rule() {
    // loss = (w*x - 1)^2 with w = 2, x = [1]: dloss/dw = 2*(2-1)*1 = 2.
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let wid = g.register_weight("w", 1, 1, WeightInit::Const(2.0));
    let w = g.weight_node(wid);
    let wx = g.mul(w, x);
    let one = g.constant(1.0);
    let r = g.sub(wx, one);
    let loss = g.square(r);
    let store = WeightStore::initialize(&g);
    let batch = EvalBatch::new().bind("x", vec![1.0]);
    let grads = g.weight_gradients(loss, &batch, &store).unwrap();
    assert_abs_diff_eq!(grads.get(wid).unwrap()[[0, 0]], 2.0, epsilon = 1e-14);
}

#[test]
fn mean_gradient_equals_mean_of_per_sample_gradients() {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let xs: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let wid = g.register_weight("w", 1, 1, WeightInit::Const(0.7));
    let w = g.weight_node(wid);
    let wx = g.mul(w, x);
    let t = g.tanh(wx);
    let loss = g.square(t);
    let store = WeightStore::initialize(&g);

    let full = EvalBatch::new().bind("x", xs.clone());
    let grad_full = g.weight_gradients(loss, &full, &store).unwrap();
    // Oracle: loop over samples one at a time and average.
    let mut acc = 0.0;
    for &xv in &xs {
        let single = EvalBatch::new().bind("x", vec![xv]);
        acc += g.weight_gradients(loss, &single, &store).unwrap().get(wid).unwrap()[[0, 0]];
    }
    acc /= xs.len() as f64;
    assert!(rel_err(grad_full.get(wid).unwrap()[[0, 0]], acc) < 1e-12);
}

/// Central finite difference of the mean loss with respect to one scalar
/// entry of a weight tensor.
fn fd_weight_gradient(
    g: &Graph,
    loss: ExprId,
    batch: &EvalBatch,
    store: &WeightStore,
    id: WeightId,
    row: usize,
    col: usize,
    h: f64,
) -> f64 {
    let mean = |store: &WeightStore| {
        let vals = g.eval(loss, batch, store).unwrap();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let mut plus = store.clone();
    plus.tensor_mut(id)[[row, col]] += h;
    let mut minus = store.clone();
    minus.tensor_mut(id)[[row, col]] -= h;
    (mean(&plus) - mean(&minus)) / (2.0 * h)
}

#[test]
fn every_op_kind_gradient_matches_finite_differences() {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    for kind in OpKind::ALL {
        let mut g = Graph::new();
        let x = g.variable("x").unwrap();
        let y = g.variable("y").unwrap();
        let w1 = g.register_weight("w1", 1, 1, WeightInit::Const(rng.random_range(0.6..1.3)));
        let w2 = g.register_weight("w2", 1, 1, WeightInit::Const(rng.random_range(0.6..1.3)));
        let a = {
            let w = g.weight_node(w1);
            g.mul(w, x)
        };
        let b = {
            let w = g.weight_node(w2);
            g.mul(w, y)
        };
        let expr = match kind.arity() {
            2 => {
                if kind == OpKind::Pow {
                    let p = g.constant(1.7);
                    g.apply(kind, &[a, p]).unwrap()
                } else {
                    g.apply(kind, &[a, b]).unwrap()
                }
            }
            _ => g.apply(kind, &[a]).unwrap(),
        };
        let loss = g.square(expr);
        let store = WeightStore::initialize(&g);
        // Positive samples keep sqrt/pow/div in-domain and away from kinks.
        let xs: Vec<f64> = (0..16).map(|_| rng.random_range(0.4..1.6)).collect();
        let ys: Vec<f64> = (0..16).map(|_| rng.random_range(0.4..1.6)).collect();
        let batch = EvalBatch::new().bind("x", xs).bind("y", ys);
        let grads = g.weight_gradients(loss, &batch, &store).unwrap();
        for id in [w1, w2] {
            let Some(grad) = grads.get(id) else { continue };
            let fd = fd_weight_gradient(&g, loss, &batch, &store, id, 0, 0, 1e-5);
            let ad = grad[[0, 0]];
            assert!(
                (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6) < 1e-5,
                "{kind}: reverse-mode {ad} vs finite difference {fd}"
            );
        }
    }
}

#[test]
fn two_layer_network_gradients_match_finite_differences() {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);

    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let y = g.variable("y").unwrap();
    let input = g.concat(&[x, y]);
    let w0 = g.register_weight("w0", 4, 2, WeightInit::GlorotUniform { seed: 11 });
    let b0 = g.register_weight("b0", 4, 1, WeightInit::Zeros);
    let w1 = g.register_weight("w1", 1, 4, WeightInit::GlorotUniform { seed: 12 });
    let b1 = g.register_weight("b1", 1, 1, WeightInit::Zeros);
    let z0 = g.affine(w0, Some(b0), input).unwrap();
    let a0 = g.tanh(z0);
    let z1 = g.affine(w1, Some(b1), a0).unwrap();
    let out = g.extract(z1, 0);
    let loss = g.square(out);

    let mut store = WeightStore::initialize(&g);
    // Nonzero biases so their gradients are informative.
    store.tensor_mut(b0).mapv_inplace(|_| 0.1);
    let xs: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = EvalBatch::new().bind("x", xs).bind("y", ys);
    let grads = g.weight_gradients(loss, &batch, &store).unwrap();
    for id in [w0, b0, w1, b1] {
        let grad = grads.get(id).unwrap();
        let (rows, cols) = grad.dim();
        for r in 0..rows {
            for c in 0..cols {
                let fd = fd_weight_gradient(&g, loss, &batch, &store, id, r, c, 1e-5);
                let ad = grad[[r, c]];
                assert!(
                    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6) < 1e-5,
                    "weight {id:?}[{r},{c}]: {ad} vs {fd}"
                );
            }
        }
    }
}

#[test]
fn differentiation_is_linear() {
    // eval(diff(a*f + b*g, x)) == a*eval(diff(f,x)) + b*eval(diff(g,x))
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let f = g.sin(x);
    let gg = {
        let t = g.tanh(x);
        g.mul(t, t)
    };
    let (a, b) = (2.5, -1.25);
    let ac = g.constant(a);
    let bc = g.constant(b);
    let af = g.mul(ac, f);
    let bg = g.mul(bc, gg);
    let combo = g.add(af, bg);
    let d_combo = g.diff(combo, x, 1).unwrap();
    let df = g.diff(f, x, 1).unwrap();
    let dg = g.diff(gg, x, 1).unwrap();
    let store = WeightStore::initialize(&g);
    let xs: Vec<f64> = (0..64).map(|i| -2.0 + 4.0 * i as f64 / 63.0).collect();
    let batch = EvalBatch::new().bind("x", xs);
    let lhs = g.eval(d_combo, &batch, &store).unwrap();
    let dfv = g.eval(df, &batch, &store).unwrap();
    let dgv = g.eval(dg, &batch, &store).unwrap();
    for i in 0..lhs.len() {
        assert_abs_diff_eq!(lhs[i], a * dfv[i] + b * dgv[i], epsilon = 1e-12);
    }
}

#[test]
fn repeated_first_order_equals_second_order() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let e = {
        let s = g.sin(x);
        let t = g.tanh(x);
        g.mul(s, t)
    };
    let d1 = g.diff(e, x, 1).unwrap();
    let d11 = g.diff(d1, x, 1).unwrap();
    let d2 = g.diff(e, x, 2).unwrap();
    let store = WeightStore::initialize(&g);
    let xs: Vec<f64> = (0..50).map(|i| -1.5 + 3.0 * i as f64 / 49.0).collect();
    let batch = EvalBatch::new().bind("x", xs);
    let a = g.eval(d11, &batch, &store).unwrap();
    let b = g.eval(d2, &batch, &store).unwrap();
    for i in 0..a.len() {
        assert_abs_diff_eq!(a[i], b[i], epsilon = 1e-12);
    }
}

#[test]
fn mixed_partials_commute() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let y = g.variable("y").unwrap();
    let e = {
        let xy = g.mul(x, y);
        let s = g.sin(xy);
        let t = g.tanh(y);
        let st = g.mul(s, t);
        let sq = g.square(x);
        g.add(st, sq)
    };
    let dx = g.diff(e, x, 1).unwrap();
    let dxy = g.diff(dx, y, 1).unwrap();
    let dy = g.diff(e, y, 1).unwrap();
    let dyx = g.diff(dy, x, 1).unwrap();
    let store = WeightStore::initialize(&g);
    let xs: Vec<f64> = (0..40).map(|i| -1.0 + 2.0 * i as f64 / 39.0).collect();
    let ys: Vec<f64> = (0..40).map(|i| 1.0 - 2.0 * i as f64 / 39.0).collect();
    let batch = EvalBatch::new().bind("x", xs).bind("y", ys);
    let a = g.eval(dxy, &batch, &store).unwrap();
    let b = g.eval(dyx, &batch, &store).unwrap();
    for i in 0..a.len() {
        assert_abs_diff_eq!(a[i], b[i], epsilon = 1e-10);
    }
}

#[test]
fn evaluation_is_bit_deterministic() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let w0 = g.register_weight("w0", 8, 1, WeightInit::GlorotUniform { seed: 5 });
    let b0 = g.register_weight("b0", 8, 1, WeightInit::Zeros);
    let w1 = g.register_weight("w1", 1, 8, WeightInit::GlorotUniform { seed: 6 });
    let z0 = g.affine(w0, Some(b0), x).unwrap();
    let a0 = g.tanh(z0);
    let z1 = g.affine(w1, None, a0).unwrap();
    let out = g.extract(z1, 0);
    let d = g.diff(out, x, 2).unwrap();
    let store = WeightStore::initialize(&g);
    let xs: Vec<f64> = (0..301).map(|i| -3.0 + 6.0 * i as f64 / 300.0).collect();
    let batch = EvalBatch::new().bind("x", xs);
    let run1 = g.eval(d, &batch, &store).unwrap();
    let run2 = g.eval(d, &batch, &store).unwrap();
    assert_eq!(run1, run2);
    let g1 = g.weight_gradients(d, &batch, &store).unwrap();
    let g2 = g.weight_gradients(d, &batch, &store).unwrap();
    for (id, a) in g1.iter() {
        assert_eq!(a, g2.get(id).unwrap());
    }
}

#[test]
fn node_dedup_shares_structurally_equal_expressions() {
    let mut g = Graph::new();
    let x = g.variable("x").unwrap();
    let t1 = g.tanh(x);
    let t2 = g.tanh(x);
    assert_eq!(t1, t2);
    let before = g.node_count();
    let d1 = g.diff(t1, x, 1).unwrap();
    let d2 = g.diff(t1, x, 1).unwrap();
    assert_eq!(d1, d2);
    // The second diff pass added nothing new.
    let mid = g.node_count();
    g.diff(t1, x, 1).unwrap();
    assert_eq!(g.node_count(), mid);
    assert!(mid > before);
}
