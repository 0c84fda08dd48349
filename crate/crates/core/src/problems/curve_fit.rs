//! Curve fitting of sin(x)sin(y) over [-pi, pi]^2, with and without the
//! governing-equation constraint `f_xx + f_yy + 2 f = 0`.
//!
//! The unconstrained variant trains on a 51x51 data grid. The constrained
//! variant trains on a 101x101 collocation grid where the residual applies
//! everywhere and the data target only at the ids of the coarse 51x51
//! subset.

use super::{error_report, Metrics, Result};
use crate::data::{uniform_grid, SampleSet};
use crate::graph::{ExprId, Graph, WeightStore};
use crate::net::{functional, Activation, Functional};
use crate::train::{
    build_model, train, LossKind, OptimizerConfig, SciModel, Target, TrainConfig, TrainHistory,
};
use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct CurveFitConfig {
    pub constrained: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    pub eval_grid: usize,
}

impl Default for CurveFitConfig {
    fn default() -> Self {
        CurveFitConfig {
            constrained: false,
            hidden: vec![6, 6, 6],
            activation: Activation::Tanh,
            epochs: 400,
            batch_size: Some(32),
            learning_rate: 1e-3,
            seed: 0,
            eval_grid: 101,
        }
    }
}

pub fn truth(x: f64, y: f64) -> f64 {
    x.sin() * y.sin()
}

/// `f_xx + f_yy + 2 f` as a graph expression over the same inputs.
pub fn governing_residual(
    graph: &mut Graph,
    f: ExprId,
    x: ExprId,
    y: ExprId,
) -> crate::graph::Result<ExprId> {
    let fxx = graph.diff(f, x, 2)?;
    let fyy = graph.diff(f, y, 2)?;
    let two = graph.constant(2.0);
    let two_f = graph.mul(two, f);
    let sum = graph.add(fxx, fyy);
    Ok(graph.add(sum, two_f))
}

pub struct CurveFitProblem {
    pub graph: Graph,
    pub store: WeightStore,
    pub functional: Functional,
    pub model: SciModel,
    pub columns: Vec<Vec<f64>>,
    cfg: CurveFitConfig,
}

pub fn curve_fit_problem(cfg: &CurveFitConfig) -> Result<CurveFitProblem> {
    let mut graph = Graph::new();
    let x = graph.variable("x")?;
    let y = graph.variable("y")?;
    let f = functional(
        &mut graph,
        "f",
        &[x, y],
        &cfg.hidden,
        cfg.activation,
        cfg.seed,
    )?;
    let out = f.output();

    let (grid, targets) = if cfg.constrained {
        let grid = uniform_grid((-PI, PI), (-PI, PI), 101, 101)?;
        // The 51x51 data points sit at every other index of the fine grid.
        let mut ids = Vec::with_capacity(51 * 51);
        for iy in (0..101).step_by(2) {
            for ix in (0..101).step_by(2) {
                ids.push(iy * 101 + ix);
            }
        }
        let gx = grid.column("x")?;
        let gy = grid.column("y")?;
        let values: Vec<f64> = ids.iter().map(|&i| truth(gx[i], gy[i])).collect();
        let residual = governing_residual(&mut graph, out, x, y)?;
        let targets = vec![
            Target::data_at(out, ids, values).labeled("data"),
            Target::zeros(residual).labeled("physics"),
        ];
        (grid, targets)
    } else {
        let grid = uniform_grid((-PI, PI), (-PI, PI), 51, 51)?;
        let gx = grid.column("x")?;
        let gy = grid.column("y")?;
        let values: Vec<f64> = gx.iter().zip(gy).map(|(&a, &b)| truth(a, b)).collect();
        (grid.clone(), vec![Target::data(out, values).labeled("data")])
    };

    let columns = vec![grid.column("x")?.to_vec(), grid.column("y")?.to_vec()];
    let model = build_model(
        &mut graph,
        &[x, y],
        targets,
        LossKind::Mse,
        OptimizerConfig::adam(cfg.learning_rate),
    )?;
    let store = WeightStore::initialize(&graph);
    Ok(CurveFitProblem {
        graph,
        store,
        functional: f,
        model,
        columns,
        cfg: cfg.clone(),
    })
}

impl CurveFitProblem {
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

    /// Predict on the evaluation grid and compare against the closed form.
    pub fn evaluate(&self) -> Result<(SampleSet, Metrics)> {
        let n = self.cfg.eval_grid;
        let mut grid = uniform_grid((-PI, PI), (-PI, PI), n, n)?;
        let pred = super::eval_on_set(
            &self.graph,
            self.functional.output(),
            &grid,
            &[("x", "x"), ("y", "y")],
            &self.store,
        )?;
        let gx = grid.column("x")?;
        let gy = grid.column("y")?;
        let reference: Vec<f64> = gx.iter().zip(gy).map(|(&a, &b)| truth(a, b)).collect();
        let report = error_report(&pred, &reference)?;
        grid.add_column("f_pred", pred);
        grid.add_column("f_true", reference);
        grid.add_column("abs_error", report.abs_errors.clone());
        let metrics = Metrics {
            relative_l2: report.relative_l2,
            l_inf: report.l_inf,
            final_loss: f64::NAN,
            params: Default::default(),
        };
        Ok((grid, metrics))
    }
}
