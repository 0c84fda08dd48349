//! Data-driven identification of the Navier-Stokes momentum coefficients
//! lambda_1 (convective) and lambda_2 (viscosity) from velocity samples.
//!
//! The velocity field derives from a stream function (u = psi_y,
//! v = -psi_x), so incompressibility holds identically. Pressure and stream
//! function are two separate networks over (t, x, y). The dataset is a
//! manufactured decaying Taylor-Green vortex with known ground truth
//! lambda_1 = 1, lambda_2 = nu.

use super::{error_report, Metrics, ProblemError, Result};
use crate::data::SampleSet;
use crate::graph::{EvalBatch, EvalOptions, ExprId, Graph, WeightStore};
use crate::net::{functional, parameter, Activation, Functional, Parameter};
use crate::train::{
    build_model, train, LossKind, OptimizerConfig, SciModel, Target, TrainConfig, TrainHistory,
};
use rand::Rng;
use rand::SeedableRng;
use std::f64::consts::PI;

/// Closed-form decaying vortex on [0, 2pi]^2.
pub mod taylor_green {
    pub fn u(nu: f64, t: f64, x: f64, y: f64) -> f64 {
        -x.cos() * y.sin() * (-2.0 * nu * t).exp()
    }

    pub fn v(nu: f64, t: f64, x: f64, y: f64) -> f64 {
        x.sin() * y.cos() * (-2.0 * nu * t).exp()
    }

    pub fn pressure(nu: f64, t: f64, x: f64, y: f64) -> f64 {
        -0.25 * ((2.0 * x).cos() + (2.0 * y).cos()) * (-4.0 * nu * t).exp()
    }

    pub fn stream(nu: f64, t: f64, x: f64, y: f64) -> f64 {
        x.cos() * y.cos() * (-2.0 * nu * t).exp()
    }
}

/// Random space-time samples of the Taylor-Green field with columns
/// t, x, y, u, v.
pub fn taylor_green_dataset(nu: f64, n_points: usize, t_range: (f64, f64), seed: u64) -> SampleSet {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut ts = Vec::with_capacity(n_points);
    let mut xs = Vec::with_capacity(n_points);
    let mut ys = Vec::with_capacity(n_points);
    let mut us = Vec::with_capacity(n_points);
    let mut vs = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let t = rng.random_range(t_range.0..t_range.1);
        let x = rng.random_range(0.0..2.0 * PI);
        let y = rng.random_range(0.0..2.0 * PI);
        ts.push(t);
        xs.push(x);
        ys.push(y);
        us.push(taylor_green::u(nu, t, x, y));
        vs.push(taylor_green::v(nu, t, x, y));
    }
    let mut set = SampleSet::new();
    set.add_column("t", ts);
    set.add_column("x", xs);
    set.add_column("y", ys);
    set.add_column("u", us);
    set.add_column("v", vs);
    set
}

/// Momentum residuals and stream-function velocities for given pressure and
/// stream-function expressions (networks or closed forms alike).
pub struct NsResiduals {
    pub u: ExprId,
    pub v: ExprId,
    pub momentum_x: ExprId,
    pub momentum_y: ExprId,
    /// u_x + v_y; identically zero by the stream-function construction.
    pub divergence: ExprId,
}

pub fn ns_residuals(
    graph: &mut Graph,
    t: ExprId,
    x: ExprId,
    y: ExprId,
    psi: ExprId,
    p: ExprId,
    lamb1: ExprId,
    lamb2: ExprId,
) -> crate::graph::Result<NsResiduals> {
    let u = graph.diff(psi, y, 1)?;
    let psi_x = graph.diff(psi, x, 1)?;
    let v = graph.neg(psi_x);

    let u_t = graph.diff(u, t, 1)?;
    let v_t = graph.diff(v, t, 1)?;
    let u_x = graph.diff(u, x, 1)?;
    let u_y = graph.diff(u, y, 1)?;
    let v_x = graph.diff(v, x, 1)?;
    let v_y = graph.diff(v, y, 1)?;
    let u_xx = graph.diff(u, x, 2)?;
    let u_yy = graph.diff(u, y, 2)?;
    let v_xx = graph.diff(v, x, 2)?;
    let v_yy = graph.diff(v, y, 2)?;
    let p_x = graph.diff(p, x, 1)?;
    let p_y = graph.diff(p, y, 1)?;

    let momentum_x = {
        let c1 = graph.mul(u, u_x);
        let c2 = graph.mul(v, u_y);
        let conv = graph.add(c1, c2);
        let conv = graph.mul(lamb1, conv);
        let lap = graph.add(u_xx, u_yy);
        let visc = graph.mul(lamb2, lap);
        let s = graph.add(u_t, p_x);
        let s = graph.add(s, conv);
        graph.sub(s, visc)
    };
    let momentum_y = {
        let c1 = graph.mul(u, v_x);
        let c2 = graph.mul(v, v_y);
        let conv = graph.add(c1, c2);
        let conv = graph.mul(lamb1, conv);
        let lap = graph.add(v_xx, v_yy);
        let visc = graph.mul(lamb2, lap);
        let s = graph.add(v_t, p_y);
        let s = graph.add(s, conv);
        graph.sub(s, visc)
    };
    let divergence = graph.add(u_x, v_y);
    Ok(NsResiduals {
        u,
        v,
        momentum_x,
        momentum_y,
        divergence,
    })
}

#[derive(Clone, Debug)]
pub struct NsInverseConfig {
    pub nu: f64,
    pub samples: usize,
    pub t_range: (f64, f64),
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    /// Exponential learning-rate decay applied over the run.
    pub decay: Option<(f64, usize)>,
    pub seed: u64,
}

impl Default for NsInverseConfig {
    fn default() -> Self {
        NsInverseConfig {
            nu: 0.01,
            samples: 5_000,
            t_range: (0.0, 1.0),
            hidden: vec![20; 8],
            activation: Activation::Tanh,
            epochs: 5_000,
            batch_size: Some(1_000),
            learning_rate: 2e-3,
            decay: Some((0.1, 25_000)),
            seed: 0,
        }
    }
}

pub struct NsInverseProblem {
    pub graph: Graph,
    pub store: WeightStore,
    pub p_net: Functional,
    pub psi_net: Functional,
    pub lamb1: Parameter,
    pub lamb2: Parameter,
    pub u_expr: ExprId,
    pub v_expr: ExprId,
    pub divergence: ExprId,
    pub model: SciModel,
    pub columns: Vec<Vec<f64>>,
    cfg: NsInverseConfig,
}

/// Build the inversion problem over the given dataset (columns t, x, y, u,
/// v required).
pub fn ns_inverse_problem(dataset: &SampleSet, cfg: &NsInverseConfig) -> Result<NsInverseProblem> {
    for col in ["t", "x", "y", "u", "v"] {
        if !dataset.has_column(col) {
            return Err(ProblemError::MissingColumn(col.to_string()));
        }
    }
    let mut graph = Graph::new();
    let t = graph.variable("t")?;
    let x = graph.variable("x")?;
    let y = graph.variable("y")?;
    let p_net = functional(
        &mut graph,
        "p",
        &[t, x, y],
        &cfg.hidden,
        cfg.activation,
        cfg.seed.wrapping_add(1),
    )?;
    let psi_net = functional(
        &mut graph,
        "psi",
        &[t, x, y],
        &cfg.hidden,
        cfg.activation,
        cfg.seed.wrapping_add(2),
    )?;
    let lamb1 = parameter(&mut graph, "lamb1", 0.0);
    let lamb2 = parameter(&mut graph, "lamb2", 0.0);
    let res = ns_residuals(
        &mut graph,
        t,
        x,
        y,
        psi_net.output(),
        p_net.output(),
        lamb1.expr(),
        lamb2.expr(),
    )?;

    let targets = vec![
        Target::zeros(res.momentum_x).labeled("momentum_x"),
        Target::zeros(res.momentum_y).labeled("momentum_y"),
        Target::data(res.u, dataset.column("u")?.to_vec()).labeled("u_data"),
        Target::data(res.v, dataset.column("v")?.to_vec()).labeled("v_data"),
    ];
    let mut optimizer = OptimizerConfig::adam(cfg.learning_rate);
    if let Some((rate, steps)) = cfg.decay {
        optimizer = optimizer.with_decay(rate, steps);
    }
    let model = build_model(&mut graph, &[t, x, y], targets, LossKind::Mse, optimizer)?;
    let columns = vec![
        dataset.column("t")?.to_vec(),
        dataset.column("x")?.to_vec(),
        dataset.column("y")?.to_vec(),
    ];
    let store = WeightStore::initialize(&graph);
    Ok(NsInverseProblem {
        graph,
        store,
        p_net,
        psi_net,
        lamb1,
        lamb2,
        u_expr: res.u,
        v_expr: res.v,
        divergence: res.divergence,
        model,
        columns,
        cfg: cfg.clone(),
    })
}

impl NsInverseProblem {
    pub fn train(&mut self) -> Result<TrainHistory> {
        let cfg = TrainConfig {
            epochs: self.cfg.epochs,
            batch_size: self.cfg.batch_size,
            shuffle_seed: self.cfg.seed,
            log_every: 0,
        };
        Ok(train(
            &self.graph,
            &mut self.store,
            &self.model,
            &self.columns,
            &cfg,
        )?)
    }

    /// Identified coefficients, velocity-field accuracy on a fresh grid at
    /// mid-time, and the worst incompressibility residual.
    pub fn evaluate(&self) -> Result<(SampleSet, Metrics)> {
        let nu = self.cfg.nu;
        let t_mid = 0.5 * (self.cfg.t_range.0 + self.cfg.t_range.1);
        let n = 41;
        let mut ts = Vec::with_capacity(n * n);
        let mut xs = Vec::with_capacity(n * n);
        let mut ys = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                ts.push(t_mid);
                xs.push(2.0 * PI * ix as f64 / (n - 1) as f64);
                ys.push(2.0 * PI * iy as f64 / (n - 1) as f64);
            }
        }
        let batch = EvalBatch::new()
            .bind("t", ts.clone())
            .bind("x", xs.clone())
            .bind("y", ys.clone());
        let opts = EvalOptions { check_finite: false };
        let u_pred = self.graph.eval_with(self.u_expr, &batch, &self.store, &opts)?;
        let v_pred = self.graph.eval_with(self.v_expr, &batch, &self.store, &opts)?;
        let div = self
            .graph
            .eval_with(self.divergence, &batch, &self.store, &opts)?;
        let u_true: Vec<f64> = (0..ts.len())
            .map(|i| taylor_green::u(nu, ts[i], xs[i], ys[i]))
            .collect();
        let v_true: Vec<f64> = (0..ts.len())
            .map(|i| taylor_green::v(nu, ts[i], xs[i], ys[i]))
            .collect();
        let u_report = error_report(&u_pred, &u_true)?;
        let v_report = error_report(&v_pred, &v_true)?;
        let max_div = div.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let mut set = SampleSet::new();
        set.add_column("t", ts);
        set.add_column("x", xs);
        set.add_column("y", ys);
        set.add_column("u_pred", u_pred);
        set.add_column("u_true", u_true);
        set.add_column("u_abs_error", u_report.abs_errors.clone());
        set.add_column("v_pred", v_pred);
        set.add_column("v_true", v_true);
        set.add_column("v_abs_error", v_report.abs_errors.clone());

        let mut metrics = Metrics {
            relative_l2: u_report.relative_l2.max(v_report.relative_l2),
            l_inf: u_report.l_inf.max(v_report.l_inf),
            final_loss: f64::NAN,
            params: Default::default(),
        };
        metrics
            .params
            .insert("lamb1".into(), self.lamb1.value(&self.store));
        metrics
            .params
            .insert("lamb2".into(), self.lamb2.value(&self.store));
        metrics.params.insert("max_divergence".into(), max_div);
        metrics
            .params
            .insert("relative_l2_u".into(), u_report.relative_l2);
        metrics
            .params
            .insert("relative_l2_v".into(), v_report.relative_l2);
        Ok((set, metrics))
    }
}
