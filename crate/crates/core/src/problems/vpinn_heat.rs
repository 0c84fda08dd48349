//! Weak-form (Petrov-Galerkin) solve of the steady heat equation on
//! [-1, 1]^2 with a neural test function.
//!
//! Phase 1 trains the test function Q to vanish on the boundary while
//! staying away from zero inside, then freezes it. Phase 2 trains the trial
//! network T against the weak-form target built from the integrand
//! J = (Q_x T_x + Q_y T_y + Q f) vol, plus a boundary data target on T.
//!
//! The weak-form loss has two modes: `Integral` squares the quadrature sum
//! (one scalar equation), `Pointwise` penalizes the integrand values
//! sample-wise.

use super::{error_report, Metrics, ProblemError, Result};
use crate::data::{quadrature_grid, uniform_grid, QuadratureGrid, SampleSet};
use crate::graph::{EvalBatch, EvalOptions, ExprId, Graph, WeightStore};
use crate::net::{functional, Activation, Functional};
use crate::train::{
    build_model, train, LossKind, OptimizerConfig, Reduction, SciModel, Target, TrainConfig,
    TrainHistory,
};
use rand::Rng;
use rand::SeedableRng;
use std::f64::consts::PI;

/// Heat source driving the manufactured solution (its Laplacian).
pub fn heat_source(x: f64, y: f64) -> f64 {
    let th = (10.0 * x).tanh();
    (2.0 * PI * y).sin()
        * (20.0 * th * (10.0 * th * th - 10.0) - 2.0 * PI * PI * (2.0 * PI * x).sin() / 5.0)
        - 4.0 * PI * PI * (2.0 * PI * y).sin() * (th + (2.0 * PI * x).sin() / 10.0)
}

/// Manufactured solution T(x, y) = (0.1 sin(2 pi x) + tanh(10 x)) sin(2 pi y).
pub fn heat_truth(x: f64, y: f64) -> f64 {
    (0.1 * (2.0 * PI * x).sin() + (10.0 * x).tanh()) * (2.0 * PI * y).sin()
}

/// Graph transcription of the heat source (matches [`heat_source`]).
pub fn heat_source_expr(graph: &mut Graph, x: ExprId, y: ExprId) -> ExprId {
    let c = |g: &mut Graph, v: f64| g.constant(v);
    let ten = c(graph, 10.0);
    let tenx = graph.mul(ten, x);
    let th = graph.tanh(tenx);
    let two_pi = c(graph, 2.0 * PI);
    let tpx = graph.mul(two_pi, x);
    let tpy = graph.mul(two_pi, y);
    let sin_tpy = graph.sin(tpy);
    let sin_tpx = graph.sin(tpx);

    let part1 = {
        let th2 = graph.mul(th, th);
        let t10 = graph.mul(ten, th2);
        let m10 = c(graph, 10.0);
        let inner = graph.sub(t10, m10);
        let twenty = c(graph, 20.0);
        let t20 = graph.mul(twenty, th);
        let a = graph.mul(t20, inner);
        let coeff = c(graph, 2.0 * PI * PI / 5.0);
        let b = graph.mul(coeff, sin_tpx);
        let diff = graph.sub(a, b);
        graph.mul(sin_tpy, diff)
    };
    let part2 = {
        let tenth = c(graph, 0.1);
        let sx10 = graph.mul(tenth, sin_tpx);
        let sum = graph.add(th, sx10);
        let coeff = c(graph, 4.0 * PI * PI);
        let scaled = graph.mul(coeff, sin_tpy);
        graph.mul(scaled, sum)
    };
    graph.sub(part1, part2)
}

/// Graph transcription of the manufactured solution.
pub fn heat_truth_expr(graph: &mut Graph, x: ExprId, y: ExprId) -> ExprId {
    let two_pi = graph.constant(2.0 * PI);
    let tpx = graph.mul(two_pi, x);
    let tpy = graph.mul(two_pi, y);
    let sin_tpx = graph.sin(tpx);
    let sin_tpy = graph.sin(tpy);
    let tenth = graph.constant(0.1);
    let a = graph.mul(tenth, sin_tpx);
    let ten = graph.constant(10.0);
    let tenx = graph.mul(ten, x);
    let th = graph.tanh(tenx);
    let sum = graph.add(a, th);
    graph.mul(sum, sin_tpy)
}

/// Weak-form integrand J = (Q_x T_x + Q_y T_y + Q f) vol for arbitrary test
/// and trial expressions.
pub fn weak_integrand(
    graph: &mut Graph,
    q: ExprId,
    t: ExprId,
    x: ExprId,
    y: ExprId,
    fxy: ExprId,
    vol: ExprId,
) -> crate::graph::Result<ExprId> {
    let qx = graph.diff(q, x, 1)?;
    let qy = graph.diff(q, y, 1)?;
    let tx = graph.diff(t, x, 1)?;
    let ty = graph.diff(t, y, 1)?;
    let g1 = graph.mul(qx, tx);
    let g2 = graph.mul(qy, ty);
    let src = graph.mul(q, fxy);
    let s = graph.add(g1, g2);
    let s = graph.add(s, src);
    Ok(graph.mul(s, vol))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum WeakMode {
    /// loss = (sum_q J_q)^2 — the integral equation as one scalar target.
    Integral,
    /// loss = mean_q J_q^2 — collocation of the integrand.
    Pointwise,
}

#[derive(Clone, Debug)]
pub struct VpinnConfig {
    pub n_quad: usize,
    pub weak_mode: WeakMode,
    pub q_hidden: Vec<usize>,
    pub t_hidden: Vec<usize>,
    pub q_epochs: usize,
    pub q_learning_rate: f64,
    /// Loss weights for the phase-1 boundary and interior targets. A heavy
    /// boundary weight drives Q very small on the boundary, which the weak
    /// form requires.
    pub q_boundary_weight: f64,
    pub q_interior_weight: f64,
    pub t_epochs: usize,
    pub t_learning_rate: f64,
    pub t_decay: Option<(f64, usize)>,
    pub bc_weight: f64,
    pub seed: u64,
    pub eval_grid: usize,
}

impl Default for VpinnConfig {
    fn default() -> Self {
        VpinnConfig {
            n_quad: 70,
            weak_mode: WeakMode::Integral,
            q_hidden: vec![20; 4],
            t_hidden: vec![20; 4],
            q_epochs: 3_000,
            q_learning_rate: 5e-3,
            q_boundary_weight: 200.0,
            q_interior_weight: 1.0,
            t_epochs: 10_000,
            t_learning_rate: 3e-3,
            t_decay: Some((0.1, 10_000)),
            bc_weight: 10.0,
            seed: 0,
            eval_grid: 101,
        }
    }
}

pub struct VpinnProblem {
    pub graph: Graph,
    pub store: WeightStore,
    pub q_net: Functional,
    pub t_net: Functional,
    pub quad: QuadratureGrid,
    q_model: SciModel,
    t_model: SciModel,
    /// J with the exact solution injected in place of T (same trained Q).
    injected_j: ExprId,
    phase1_columns: Vec<Vec<f64>>,
    phase2_columns: Vec<Vec<f64>>,
    cfg: VpinnConfig,
}

pub fn vpinn_heat_problem(cfg: &VpinnConfig) -> Result<VpinnProblem> {
    let quad = quadrature_grid((-1.0, 1.0), (-1.0, 1.0), cfg.n_quad)?;
    let xs = quad.set.column("x")?.to_vec();
    let ys = quad.set.column("y")?.to_vec();
    let vols = quad.set.column("vol")?.to_vec();
    let fxy_col: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| heat_source(x, y))
        .collect();

    let mut graph = Graph::new();
    let x = graph.variable("x")?;
    let y = graph.variable("y")?;
    let vol = graph.variable("vol")?;
    let fxy = graph.variable("fxy")?;
    let q_net = functional(
        &mut graph,
        "Q",
        &[x, y],
        &cfg.q_hidden,
        Activation::Sigmoid,
        cfg.seed.wrapping_add(1),
    )?;
    let t_net = functional(
        &mut graph,
        "T",
        &[x, y],
        &cfg.t_hidden,
        Activation::Tanh,
        cfg.seed.wrapping_add(2),
    )?;

    // Phase 1: boundary zeros and bounded-away-from-zero random interior
    // values for the test function.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(7));
    let interior_ids: Vec<usize> = (0..quad.interior_count).collect();
    let interior_vals: Vec<f64> = interior_ids
        .iter()
        .map(|_| rng.random_range(0.2..1.0))
        .collect();
    let bc_ids = quad.boundary_ids.clone();
    let bc_zeros = vec![0.0; bc_ids.len()];
    let q_targets = vec![
        Target::data_at(q_net.output(), bc_ids.clone(), bc_zeros)
            .with_weight(cfg.q_boundary_weight)
            .labeled("q_boundary"),
        Target::data_at(q_net.output(), interior_ids, interior_vals)
            .with_weight(cfg.q_interior_weight)
            .labeled("q_interior"),
    ];
    let q_model = build_model(
        &mut graph,
        &[x, y],
        q_targets,
        LossKind::Mse,
        OptimizerConfig::adam(cfg.q_learning_rate),
    )?;

    // Phase 2: weak-form target plus the boundary trace of the solution.
    let j = weak_integrand(&mut graph, q_net.output(), t_net.output(), x, y, fxy, vol)?;
    let bc_vals: Vec<f64> = bc_ids
        .iter()
        .map(|&i| heat_truth(xs[i], ys[i]))
        .collect();
    let weak_target = match cfg.weak_mode {
        WeakMode::Integral => Target::zeros(j)
            .with_reduction(Reduction::SumSquared)
            .labeled("weak_form"),
        WeakMode::Pointwise => Target::zeros(j).labeled("weak_form"),
    };
    let t_targets = vec![
        weak_target,
        Target::data_at(t_net.output(), bc_ids, bc_vals)
            .with_weight(cfg.bc_weight)
            .labeled("bc"),
    ];
    let t_model = build_model(
        &mut graph,
        &[x, y, vol, fxy],
        t_targets,
        LossKind::Mse,
        {
            let mut opt = OptimizerConfig::adam(cfg.t_learning_rate);
            if let Some((rate, steps)) = cfg.t_decay {
                opt = opt.with_decay(rate, steps);
            }
            opt
        },
    )?;

    let truth = heat_truth_expr(&mut graph, x, y);
    let injected_j = weak_integrand(&mut graph, q_net.output(), truth, x, y, fxy, vol)?;

    let store = WeightStore::initialize(&graph);
    Ok(VpinnProblem {
        graph,
        store,
        q_net,
        t_net,
        quad,
        q_model,
        t_model,
        injected_j,
        phase1_columns: vec![xs.clone(), ys.clone()],
        phase2_columns: vec![xs, ys, vols, fxy_col],
        cfg: cfg.clone(),
    })
}

impl VpinnProblem {
    /// Phase 1: train the test function, verify it is not degenerate, and
    /// freeze it.
    pub fn pretrain_test_function(&mut self) -> Result<TrainHistory> {
        let cfg = TrainConfig {
            epochs: self.cfg.q_epochs,
            batch_size: None,
            shuffle_seed: self.cfg.seed,
            log_every: 0,
        };
        let history = train(
            &self.graph,
            &mut self.store,
            &self.q_model,
            &self.phase1_columns,
            &cfg,
        )?;
        let rms = self.interior_rms(self.q_net.output())?;
        const MIN_RMS: f64 = 1e-3;
        if rms < MIN_RMS {
            return Err(ProblemError::DegenerateTestFunction { rms, min: MIN_RMS });
        }
        self.q_net.set_trainable(&mut self.store, false);
        Ok(history)
    }

    /// Phase 2: train the trial network against the weak form.
    pub fn train(&mut self) -> Result<TrainHistory> {
        let cfg = TrainConfig {
            epochs: self.cfg.t_epochs,
            batch_size: None,
            shuffle_seed: self.cfg.seed,
            log_every: 0,
        };
        Ok(train(
            &self.graph,
            &mut self.store,
            &self.t_model,
            &self.phase2_columns,
            &cfg,
        )?)
    }

    /// RMS of an expression over the interior quadrature points.
    pub fn interior_rms(&self, expr: ExprId) -> Result<f64> {
        let n = self.quad.interior_count;
        let batch = EvalBatch::new()
            .bind("x", self.phase1_columns[0][..n].to_vec())
            .bind("y", self.phase1_columns[1][..n].to_vec());
        let vals = self.graph.eval_with(
            expr,
            &batch,
            &self.store,
            &EvalOptions { check_finite: false },
        )?;
        Ok((vals.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt())
    }

    /// Boundary RMS of the test function (diagnostic for the weak form).
    pub fn q_boundary_rms(&self) -> Result<f64> {
        let ids = &self.quad.boundary_ids;
        let batch = EvalBatch::new()
            .bind(
                "x",
                ids.iter()
                    .map(|&i| self.phase2_columns[0][i])
                    .collect::<Vec<_>>(),
            )
            .bind(
                "y",
                ids.iter()
                    .map(|&i| self.phase2_columns[1][i])
                    .collect::<Vec<_>>(),
            );
        let vals = self.graph.eval_with(
            self.q_net.output(),
            &batch,
            &self.store,
            &EvalOptions { check_finite: false },
        )?;
        Ok((vals.iter().map(|v| v * v).sum::<f64>() / ids.len() as f64).sqrt())
    }

    /// Quadrature sum of J with the exact solution injected in place of T
    /// (uses the trained, frozen Q).
    pub fn weak_sum_injected(&self) -> Result<f64> {
        let batch = EvalBatch::new()
            .bind("x", self.phase2_columns[0].clone())
            .bind("y", self.phase2_columns[1].clone())
            .bind("vol", self.phase2_columns[2].clone())
            .bind("fxy", self.phase2_columns[3].clone());
        let vals = self.graph.eval_with(
            self.injected_j,
            &batch,
            &self.store,
            &EvalOptions { check_finite: false },
        )?;
        Ok(vals.iter().sum())
    }

    pub fn evaluate(&self) -> Result<(SampleSet, Metrics)> {
        let n = self.cfg.eval_grid;
        let mut grid = uniform_grid((-1.0, 1.0), (-1.0, 1.0), n, n)?;
        let pred = super::eval_on_set(
            &self.graph,
            self.t_net.output(),
            &grid,
            &[("x", "x"), ("y", "y")],
            &self.store,
        )?;
        let gx = grid.column("x")?;
        let gy = grid.column("y")?;
        let truth: Vec<f64> = gx
            .iter()
            .zip(gy)
            .map(|(&a, &b)| heat_truth(a, b))
            .collect();
        let report = error_report(&pred, &truth)?;
        grid.add_column("t_pred", pred);
        grid.add_column("t_true", truth);
        grid.add_column("abs_error", report.abs_errors.clone());
        let mut metrics = Metrics {
            relative_l2: report.relative_l2,
            l_inf: report.l_inf,
            final_loss: f64::NAN,
            params: Default::default(),
        };
        metrics
            .params
            .insert("q_interior_rms".into(), self.interior_rms(self.q_net.output())?);
        metrics
            .params
            .insert("q_boundary_rms".into(), self.q_boundary_rms()?);
        Ok((grid, metrics))
    }
}
