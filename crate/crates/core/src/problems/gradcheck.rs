//! Finite-difference validation of reverse-mode weight gradients, covering
//! every operation kind and a small two-layer network.

use super::Result;
use crate::graph::{EvalBatch, Graph, OpKind, WeightInit, WeightStore};
use rand::Rng;
use rand::SeedableRng;

#[derive(Clone, Debug, Default)]
pub struct GradcheckReport {
    /// Worst relative error across all checked partials.
    pub max_rel_error: f64,
    /// (label, relative error) for the worst case of each scenario.
    pub cases: Vec<(String, f64)>,
}

impl GradcheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn fd_gradient(
    g: &Graph,
    loss: crate::graph::ExprId,
    batch: &EvalBatch,
    store: &WeightStore,
    id: crate::graph::WeightId,
    row: usize,
    col: usize,
    h: f64,
) -> f64 {
    let mean = |s: &WeightStore| {
        let vals = g
            .eval_with(
                loss,
                batch,
                s,
                &crate::graph::EvalOptions { check_finite: false },
            )
            .unwrap();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let mut plus = store.clone();
    plus.tensor_mut(id)[[row, col]] += h;
    let mut minus = store.clone();
    minus.tensor_mut(id)[[row, col]] -= h;
    (mean(&plus) - mean(&minus)) / (2.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Check every op kind with weights inside the expression, over `configs`
/// random weight/sample draws each.
pub fn check_op_kinds(seed: u64, configs: usize) -> Result<GradcheckReport> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport::default();
    for kind in OpKind::ALL {
        let mut worst = 0.0f64;
        for _ in 0..configs {
            let mut g = Graph::new();
            let x = g.variable("x")?;
            let y = g.variable("y")?;
            let w1 = g.register_weight(
                "w1",
                1,
                1,
                WeightInit::Const(rng.random_range(0.6..1.4)),
            );
            let w2 = g.register_weight(
                "w2",
                1,
                1,
                WeightInit::Const(rng.random_range(0.6..1.4)),
            );
            let a = {
                let w = g.weight_node(w1);
                g.mul(w, x)
            };
            let b = {
                let w = g.weight_node(w2);
                g.mul(w, y)
            };
            let expr = if kind == OpKind::Pow {
                let p = g.constant(rng.random_range(1.2..2.5));
                g.apply(kind, &[a, p])?
            } else if kind.arity() == 2 {
                g.apply(kind, &[a, b])?
            } else {
                g.apply(kind, &[a])?
            };
            let loss = g.square(expr);
            let store = WeightStore::initialize(&g);
            // Positive, kink-free samples keep sqrt/div/pow/relu smooth.
            let n = 16;
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.4..1.6)).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random_range(0.4..1.6)).collect();
            let batch = EvalBatch::new().bind("x", xs).bind("y", ys);
            let grads = g.weight_gradients(loss, &batch, &store)?;
            for id in [w1, w2] {
                let Some(grad) = grads.get(id) else { continue };
                let fd = fd_gradient(&g, loss, &batch, &store, id, 0, 0, 1e-5);
                worst = worst.max(rel_err(grad[[0, 0]], fd));
            }
        }
        report.cases.push((format!("{kind}"), worst));
        report.max_rel_error = report.max_rel_error.max(worst);
    }
    Ok(report)
}

/// Check all weights of a 2-layer tanh network over `configs` random draws.
pub fn check_two_layer_network(seed: u64, configs: usize) -> Result<GradcheckReport> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut report = GradcheckReport::default();
    let mut worst = 0.0f64;
    for c in 0..configs {
        let mut g = Graph::new();
        let x = g.variable("x")?;
        let y = g.variable("y")?;
        let f = crate::net::functional(
            &mut g,
            "f",
            &[x, y],
            &[5, 5],
            crate::net::Activation::Tanh,
            seed.wrapping_add(c as u64),
        )?;
        let loss = g.square(f.output());
        let store = WeightStore::initialize(&g);
        let n = 24;
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let batch = EvalBatch::new().bind("x", xs).bind("y", ys);
        let grads = g.weight_gradients(loss, &batch, &store)?;
        for layer in f.layers() {
            for id in [layer.w, layer.b] {
                let grad = grads.get(id).expect("trainable layer has gradient");
                let (rows, cols) = grad.dim();
                for r in 0..rows {
                    for cc in 0..cols {
                        let fd = fd_gradient(&g, loss, &batch, &store, id, r, cc, 1e-5);
                        worst = worst.max(rel_err(grad[[r, cc]], fd));
                    }
                }
            }
        }
    }
    report.cases.push(("two_layer_tanh".into(), worst));
    report.max_rel_error = worst;
    Ok(report)
}

/// The full battery used by the `gradcheck` CLI command.
pub fn run_gradcheck(seed: u64, configs: usize) -> Result<GradcheckReport> {
    let mut ops = check_op_kinds(seed, configs)?;
    let net = check_two_layer_network(seed, configs)?;
    ops.max_rel_error = ops.max_rel_error.max(net.max_rel_error);
    ops.cases.extend(net.cases);
    Ok(ops)
}
