//! Viscous Burgers equation u_t + u u_x = nu u_xx on t in [0,1],
//! x in [-1,1] with u(0,x) = -sin(pi x) and u(t,+-1) = 0.
//!
//! Boundary conditions can be imposed either through sign-mask residual
//! targets or through an id-restricted data target; both styles share the
//! same sample set (random interior collocation points plus structured
//! initial/boundary rows appended at the end).
//!
//! The reference solution is a conservative finite-difference solve
//! (Rusanov flux, explicit RK4) on a fine grid.

use super::{error_report, Metrics, Result};
use crate::data::SampleSet;
use crate::graph::{EvalBatch, EvalOptions, Graph, WeightStore};
use crate::net::{functional, Activation, Functional};
use crate::train::{
    build_model, train, LossKind, OptimizerConfig, SciModel, Target, TrainConfig, TrainHistory,
};
use rand::Rng;
use rand::SeedableRng;
use std::f64::consts::PI;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BcStyle {
    /// Eq-style masks (1 - sign(t - t_min)) etc. as zero targets.
    SignMask,
    /// Data target restricted to the ids of the initial/boundary samples.
    Ids,
}

#[derive(Clone, Debug)]
pub struct BurgersConfig {
    pub bc_style: BcStyle,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Random interior collocation points.
    pub collocation: usize,
    /// Structured samples on the t = 0 row and each x = +-1 edge.
    pub n_initial: usize,
    pub n_boundary: usize,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    pub nu: f64,
    pub eval_times: Vec<f64>,
    pub reference_cells: usize,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        BurgersConfig {
            bc_style: BcStyle::Ids,
            hidden: vec![20; 8],
            activation: Activation::Tanh,
            collocation: 10_000,
            n_initial: 200,
            n_boundary: 100,
            epochs: 5_000,
            batch_size: Some(256),
            learning_rate: 1e-3,
            seed: 0,
            nu: 0.01 / PI,
            eval_times: vec![0.25, 0.5, 0.75],
            reference_cells: 4096,
        }
    }
}

pub fn initial_condition(x: f64) -> f64 {
    -(PI * x).sin()
}

/// Collocation samples: `collocation` random interior points followed by the
/// initial row and both boundary edges; ids of the appended rows are stored
/// under the `ic_bc` label with their target values in the `u_bc` column.
pub fn burgers_samples(cfg: &BurgersConfig) -> SampleSet {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.collocation;
    let mut ts: Vec<f64> = Vec::with_capacity(n);
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for _ in 0..n {
        ts.push(rng.random_range(0.0..1.0));
        xs.push(rng.random_range(-1.0..1.0));
    }
    let mut bc_vals = vec![0.0; n];
    let mut ids = Vec::with_capacity(cfg.n_initial + 2 * cfg.n_boundary);
    for i in 0..cfg.n_initial {
        let x = -1.0 + 2.0 * i as f64 / (cfg.n_initial - 1) as f64;
        ids.push(ts.len());
        ts.push(0.0);
        xs.push(x);
        bc_vals.push(initial_condition(x));
    }
    for i in 0..cfg.n_boundary {
        let t = i as f64 / (cfg.n_boundary - 1) as f64;
        for x in [-1.0, 1.0] {
            ids.push(ts.len());
            ts.push(t);
            xs.push(x);
            bc_vals.push(0.0);
        }
    }
    let mut set = SampleSet::new();
    set.add_column("t", ts);
    set.add_column("x", xs);
    set.add_column("u_bc", bc_vals);
    set.add_id_set("ic_bc", ids);
    set
}

pub struct BurgersProblem {
    pub graph: Graph,
    pub store: WeightStore,
    pub u: Functional,
    pub model: SciModel,
    pub columns: Vec<Vec<f64>>,
    pub samples: SampleSet,
    cfg: BurgersConfig,
}

pub fn burgers_problem(cfg: &BurgersConfig) -> Result<BurgersProblem> {
    let samples = burgers_samples(cfg);
    let mut graph = Graph::new();
    let t = graph.variable("t")?;
    let x = graph.variable("x")?;
    let u = functional(
        &mut graph,
        "u",
        &[t, x],
        &cfg.hidden,
        cfg.activation,
        cfg.seed,
    )?;
    let uo = u.output();

    let u_t = graph.diff(uo, t, 1)?;
    let u_x = graph.diff(uo, x, 1)?;
    let u_xx = graph.diff(uo, x, 2)?;
    let nu = graph.constant(cfg.nu);
    let pde = {
        let conv = graph.mul(uo, u_x);
        let visc = graph.mul(nu, u_xx);
        let lhs = graph.add(u_t, conv);
        graph.sub(lhs, visc)
    };

    let mut targets = vec![Target::zeros(pde).labeled("pde")];
    match cfg.bc_style {
        BcStyle::Ids => {
            let ids = samples.ids("ic_bc").unwrap().to_vec();
            let bc_col = samples.column("u_bc")?;
            let values: Vec<f64> = ids.iter().map(|&i| bc_col[i]).collect();
            targets.push(Target::data_at(uo, ids, values).labeled("ic_bc"));
        }
        BcStyle::SignMask => {
            // Masks vanish except below t_min (initial row) or beyond the
            // x extremes; tol is 1e-6 of each coordinate range.
            let t_min = graph.constant(1e-6);
            let x_min = graph.constant(-1.0 + 2e-6);
            let x_max = graph.constant(1.0 - 2e-6);
            let one = graph.constant(1.0);

            let dt = graph.sub(t, t_min);
            let sg_t = graph.sign(dt);
            let mask_ic = graph.sub(one, sg_t);
            let pi_c = graph.constant(PI);
            let pix = graph.mul(pi_c, x);
            let sin_pix = graph.sin(pix);
            let u_plus = graph.add(uo, sin_pix);
            let l2 = graph.mul(mask_ic, u_plus);

            let dxl = graph.sub(x, x_min);
            let sg_l = graph.sign(dxl);
            let mask_l = graph.sub(one, sg_l);
            let l3 = graph.mul(mask_l, uo);

            let dxr = graph.sub(x, x_max);
            let sg_r = graph.sign(dxr);
            let mask_r = graph.add(one, sg_r);
            let l4 = graph.mul(mask_r, uo);

            targets.push(Target::zeros(l2).labeled("ic"));
            targets.push(Target::zeros(l3).labeled("bc_left"));
            targets.push(Target::zeros(l4).labeled("bc_right"));
        }
    }

    let columns = vec![samples.column("t")?.to_vec(), samples.column("x")?.to_vec()];
    let model = build_model(
        &mut graph,
        &[t, x],
        targets,
        LossKind::Mse,
        OptimizerConfig::adam(cfg.learning_rate),
    )?;
    let store = WeightStore::initialize(&graph);
    Ok(BurgersProblem {
        graph,
        store,
        u,
        model,
        columns,
        samples,
        cfg: cfg.clone(),
    })
}

impl BurgersProblem {
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

    /// Compare the trained network against the finite-difference reference
    /// at the configured evaluation times. The prediction set has one row
    /// per (t, x) pair on a subsampled reference grid.
    pub fn evaluate(&self) -> Result<(SampleSet, Metrics)> {
        let reference = solve_burgers_reference(
            self.cfg.reference_cells,
            self.cfg.nu,
            &self.cfg.eval_times,
            0.25,
        );
        // Subsample the fine reference grid for the exported prediction.
        let stride = (reference.x.len() / 512).max(1);
        let xs: Vec<f64> = reference.x.iter().step_by(stride).copied().collect();

        let mut out = SampleSet::new();
        let mut col_t = Vec::new();
        let mut col_x = Vec::new();
        let mut col_pred = Vec::new();
        let mut col_true = Vec::new();
        let mut col_err = Vec::new();
        let mut metrics = Metrics::default();
        let mut worst_rel = 0.0f64;
        let mut worst_inf = 0.0f64;
        for (k, &tv) in self.cfg.eval_times.iter().enumerate() {
            let truth: Vec<f64> = reference.u[k].iter().step_by(stride).copied().collect();
            let batch = EvalBatch::new()
                .bind("t", vec![tv; xs.len()])
                .bind("x", xs.clone());
            let pred = self.graph.eval_with(
                self.u.output(),
                &batch,
                &self.store,
                &EvalOptions { check_finite: false },
            )?;
            let report = error_report(&pred, &truth)?;
            worst_rel = worst_rel.max(report.relative_l2);
            worst_inf = worst_inf.max(report.l_inf);
            metrics
                .params
                .insert(format!("relative_l2_t{tv}"), report.relative_l2);
            if (tv - 0.75).abs() < 1e-12 {
                if let Some(x0) = zero_crossing(&xs, &pred) {
                    metrics.params.insert("zero_crossing_t0.75".into(), x0);
                }
            }
            col_t.extend(std::iter::repeat_n(tv, xs.len()));
            col_x.extend_from_slice(&xs);
            col_pred.extend_from_slice(&pred);
            col_true.extend_from_slice(&truth);
            col_err.extend_from_slice(&report.abs_errors);
        }
        out.add_column("t", col_t);
        out.add_column("x", col_x);
        out.add_column("u_pred", col_pred);
        out.add_column("u_true", col_true);
        out.add_column("abs_error", col_err);
        metrics.relative_l2 = worst_rel;
        metrics.l_inf = worst_inf;
        metrics.final_loss = f64::NAN;
        Ok((out, metrics))
    }
}

/// Location where the solution changes sign in the interior (linear
/// interpolation between the bracketing grid points).
pub fn zero_crossing(xs: &[f64], us: &[f64]) -> Option<f64> {
    // The shock profile goes from positive (left) to negative (right);
    // search the central half of the domain to skip the boundary zeros.
    let lo = xs.len() / 4;
    let hi = 3 * xs.len() / 4;
    for i in lo..hi {
        let (u0, u1) = (us[i], us[i + 1]);
        if u0 > 0.0 && u1 <= 0.0 {
            let frac = u0 / (u0 - u1);
            return Some(xs[i] + frac * (xs[i + 1] - xs[i]));
        }
    }
    None
}

pub struct BurgersReference {
    pub x: Vec<f64>,
    pub times: Vec<f64>,
    /// One snapshot per requested time.
    pub u: Vec<Vec<f64>>,
}

/// Conservative finite-difference solve of the viscous Burgers equation:
/// Rusanov (local Lax-Friedrichs) flux for u^2/2, central second difference
/// for the viscous term, explicit RK4 in time, Dirichlet zero ends.
pub fn solve_burgers_reference(
    n_cells: usize,
    nu: f64,
    times: &[f64],
    cfl: f64,
) -> BurgersReference {
    let n = n_cells + 1;
    let dx = 2.0 / n_cells as f64;
    let x: Vec<f64> = (0..n).map(|i| -1.0 + i as f64 * dx).collect();
    let mut u: Vec<f64> = x.iter().map(|&xi| initial_condition(xi)).collect();
    u[0] = 0.0;
    u[n - 1] = 0.0;

    let rhs = |u: &[f64], out: &mut [f64]| {
        // Central flux average; the physical viscosity resolves the shock
        // at these resolutions (cell Peclet << 1), so no upwinding is
        // needed and the scheme stays second order.
        let flux = |a: f64, b: f64| 0.25 * (a * a + b * b);
        out[0] = 0.0;
        out[n - 1] = 0.0;
        for i in 1..n - 1 {
            let f_right = flux(u[i], u[i + 1]);
            let f_left = flux(u[i - 1], u[i]);
            let visc = nu * (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (dx * dx);
            out[i] = -(f_right - f_left) / dx + visc;
        }
    };

    let mut sorted_times: Vec<f64> = times.to_vec();
    sorted_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut snapshots: Vec<Vec<f64>> = Vec::with_capacity(times.len());
    let mut t = 0.0;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for &target in &sorted_times {
        while t < target - 1e-14 {
            let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            let dt_stable = cfl * (dx / umax).min(dx * dx / (2.0 * nu));
            let dt = dt_stable.min(target - t);
            rhs(&u, &mut k1);
            for i in 0..n {
                tmp[i] = u[i] + 0.5 * dt * k1[i];
            }
            rhs(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = u[i] + 0.5 * dt * k2[i];
            }
            rhs(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = u[i] + dt * k3[i];
            }
            rhs(&tmp, &mut k4);
            for i in 0..n {
                u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            t += dt;
        }
        snapshots.push(u.clone());
    }
    // Reorder snapshots to match the caller's time order.
    let mut reordered = Vec::with_capacity(times.len());
    for &tv in times {
        let pos = sorted_times
            .iter()
            .position(|s| (s - tv).abs() < 1e-14)
            .unwrap();
        reordered.push(snapshots[pos].clone());
    }
    BurgersReference {
        x,
        times: times.to_vec(),
        u: reordered,
    }
}
