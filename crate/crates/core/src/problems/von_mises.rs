//! Von Mises elastoplastic constitutive residuals for plane-strain fields.
//!
//! Displacements and stress components are independent approximations (or
//! injected closed forms); the residuals tie them together through the
//! volumetric/deviatoric elastic relations, the yield-surface penalty, and
//! momentum balance without body forces. Internal units are MPa and mm so
//! all residuals live on comparable scales.

use super::{ProblemError, Result};
use crate::data::SampleSet;
use crate::graph::{EvalBatch, EvalOptions, ExprId, Graph, WeightStore};
use crate::net::{functional, parameter, Activation, Functional, Parameter};
use crate::train::Target;
use rand::Rng;
use rand::SeedableRng;

/// Material constants in MPa.
#[derive(Clone, Copy, Debug)]
pub struct MaterialParams {
    pub lambda: f64,
    pub mu: f64,
    pub sigma_y: f64,
}

impl Default for MaterialParams {
    /// The perforated-plate constants: lambda = 19.44 GPa, mu = 29.17 GPa,
    /// sigma_Y = 243 MPa, expressed in MPa.
    fn default() -> Self {
        MaterialParams {
            lambda: 19_440.0,
            mu: 29_170.0,
            sigma_y: 243.0,
        }
    }
}

/// Field expressions entering the constitutive residuals.
#[derive(Clone, Copy, Debug)]
pub struct FieldExprs {
    pub ux: ExprId,
    pub uy: ExprId,
    pub sxx: ExprId,
    pub syy: ExprId,
    pub szz: ExprId,
    pub sxy: ExprId,
}

/// Derived strain/stress expressions of the plane-strain elastoplastic
/// state. All members are per-sample scalars in the owning graph.
pub struct ElastoplasticState {
    pub fields: FieldExprs,
    pub eps_xx: ExprId,
    pub eps_yy: ExprId,
    pub eps_xy: ExprId,
    pub eps_vol: ExprId,
    pub e_xx: ExprId,
    pub e_yy: ExprId,
    pub e_zz: ExprId,
    /// Deviatoric strain trace (identically zero by construction).
    pub e_trace: ExprId,
    pub ebar: ExprId,
    pub pressure: ExprId,
    pub d_xx: ExprId,
    pub d_yy: ExprId,
    pub d_zz: ExprId,
    /// Deviatoric stress trace (identically zero by construction).
    pub d_trace: ExprId,
    pub q: ExprId,
    pub pebar: ExprId,
    pub pe_xx: ExprId,
    pub pe_yy: ExprId,
    pub pe_zz: ExprId,
    pub pe_xy: ExprId,
    pub yield_f: ExprId,
    pub lambda: ExprId,
    pub mu: ExprId,
    pub sigma_y: ExprId,
    pub kappa: ExprId,
}

/// Assemble the kinematic, deviatoric, and plastic-strain expressions from
/// displacement and stress fields over (x, y).
pub fn elastoplastic_state(
    graph: &mut Graph,
    x: ExprId,
    y: ExprId,
    fields: FieldExprs,
    lambda: ExprId,
    mu: ExprId,
    sigma_y: ExprId,
) -> crate::graph::Result<ElastoplasticState> {
    let third = graph.constant(1.0 / 3.0);
    let half = graph.constant(0.5);
    let two = graph.constant(2.0);
    let c23 = graph.constant(2.0 / 3.0);
    let c32 = graph.constant(1.5);

    let eps_xx = graph.diff(fields.ux, x, 1)?;
    let eps_yy = graph.diff(fields.uy, y, 1)?;
    let ux_y = graph.diff(fields.ux, y, 1)?;
    let uy_x = graph.diff(fields.uy, x, 1)?;
    let eps_xy = {
        let s = graph.add(ux_y, uy_x);
        graph.mul(half, s)
    };
    let eps_vol = graph.add(eps_xx, eps_yy);
    let vol_third = graph.mul(third, eps_vol);
    let e_xx = graph.sub(eps_xx, vol_third);
    let e_yy = graph.sub(eps_yy, vol_third);
    // Plane strain: eps_zz = 0, so the deviatoric zz part is -eps_vol / 3.
    let e_zz = graph.neg(vol_third);
    let e_trace = {
        let s = graph.add(e_xx, e_yy);
        graph.add(s, e_zz)
    };
    let ebar = {
        let a = graph.square(e_xx);
        let b = graph.square(e_yy);
        let c = graph.square(e_zz);
        let d = graph.square(eps_xy);
        let d2 = graph.mul(two, d);
        let s = graph.add(a, b);
        let s = graph.add(s, c);
        let s = graph.add(s, d2);
        let scaled = graph.mul(c23, s);
        graph.sqrt(scaled)
    };

    let pressure = {
        let s = graph.add(fields.sxx, fields.syy);
        let s = graph.add(s, fields.szz);
        let s3 = graph.mul(third, s);
        graph.neg(s3)
    };
    let d_xx = graph.add(fields.sxx, pressure);
    let d_yy = graph.add(fields.syy, pressure);
    let d_zz = graph.add(fields.szz, pressure);
    let d_trace = {
        let s = graph.add(d_xx, d_yy);
        graph.add(s, d_zz)
    };
    let q = {
        let a = graph.square(d_xx);
        let b = graph.square(d_yy);
        let c = graph.square(d_zz);
        let d = graph.square(fields.sxy);
        let d2 = graph.mul(two, d);
        let s = graph.add(a, b);
        let s = graph.add(s, c);
        let s = graph.add(s, d2);
        let scaled = graph.mul(c32, s);
        graph.sqrt(scaled)
    };

    // Equivalent plastic strain: positive part of ebar - sigma_y / (3 mu).
    let pebar = {
        let three_mu = {
            let three = graph.constant(3.0);
            graph.mul(three, mu)
        };
        let elastic_limit = graph.div(sigma_y, three_mu);
        let excess = graph.sub(ebar, elastic_limit);
        graph.relu(excess)
    };
    // Associative flow rule: plastic strain is coaxial with the deviatoric
    // stress, e^p_ij = 1.5 pebar d_ij / q.
    let flow = |graph: &mut Graph, d: ExprId| {
        let num = graph.mul(pebar, d);
        let scaled = graph.mul(c32, num);
        graph.div(scaled, q)
    };
    let pe_xx = flow(graph, d_xx);
    let pe_yy = flow(graph, d_yy);
    let pe_zz = flow(graph, d_zz);
    let pe_xy = flow(graph, fields.sxy);

    let yield_f = graph.sub(q, sigma_y);
    let kappa = {
        let t = graph.mul(c23, mu);
        graph.add(lambda, t)
    };

    Ok(ElastoplasticState {
        fields,
        eps_xx,
        eps_yy,
        eps_xy,
        eps_vol,
        e_xx,
        e_yy,
        e_zz,
        e_trace,
        ebar,
        pressure,
        d_xx,
        d_yy,
        d_zz,
        d_trace,
        q,
        pebar,
        pe_xx,
        pe_yy,
        pe_zz,
        pe_xy,
        yield_f,
        lambda,
        mu,
        sigma_y,
        kappa,
    })
}

/// The eight constitutive targets: pressure tie, four deviatoric stress
/// ties, the yield-surface penalty, and both momentum balances (no body
/// forces).
pub fn von_mises_residuals(
    graph: &mut Graph,
    x: ExprId,
    y: ExprId,
    state: &ElastoplasticState,
) -> crate::graph::Result<Vec<Target>> {
    let two = graph.constant(2.0);
    let two_mu = graph.mul(two, state.mu);
    let elastic_dev = |graph: &mut Graph, e: ExprId, pe: ExprId| {
        let diff = graph.sub(e, pe);
        graph.mul(two_mu, diff)
    };

    let l1 = {
        let rhs = {
            let prod = graph.mul(state.kappa, state.eps_vol);
            graph.neg(prod)
        };
        Target::tie(state.pressure, rhs).labeled("pressure")
    };
    let rhs_xx = elastic_dev(graph, state.e_xx, state.pe_xx);
    let l2 = Target::tie(state.d_xx, rhs_xx).labeled("dev_xx");
    let rhs_yy = elastic_dev(graph, state.e_yy, state.pe_yy);
    let l3 = Target::tie(state.d_yy, rhs_yy).labeled("dev_yy");
    let rhs_zz = elastic_dev(graph, state.e_zz, state.pe_zz);
    let l4 = Target::tie(state.d_zz, rhs_zz).labeled("dev_zz");
    let rhs_xy = elastic_dev(graph, state.eps_xy, state.pe_xy);
    let l5 = Target::tie(state.fields.sxy, rhs_xy).labeled("dev_xy");
    let l6 = {
        let pos = graph.relu(state.yield_f);
        Target::zeros(pos).labeled("yield")
    };
    let l7 = {
        let a = graph.diff(state.fields.sxx, x, 1)?;
        let b = graph.diff(state.fields.sxy, y, 1)?;
        Target::zeros(graph.add(a, b)).labeled("momentum_x")
    };
    let l8 = {
        let a = graph.diff(state.fields.sxy, x, 1)?;
        let b = graph.diff(state.fields.syy, y, 1)?;
        Target::zeros(graph.add(a, b)).labeled("momentum_y")
    };
    Ok(vec![l1, l2, l3, l4, l5, l6, l7, l8])
}

/// Outcome of the analytic validity battery.
#[derive(Clone, Debug)]
pub struct VonMisesReport {
    /// Max |residual| of each of the eight targets on the analytic elastic
    /// field (MPa / MPa/mm units).
    pub elastic_residuals: [f64; 8],
    /// Max |e_xx + e_yy + e_zz| and |d_xx + d_yy + d_zz| on random states.
    pub max_strain_trace: f64,
    pub max_stress_trace: f64,
    /// Random elastic states (q < sigma_y) with nonzero plastic strain.
    pub pebar_violations: usize,
    /// Random states checked.
    pub states: usize,
    /// Max pebar observed below yield (should be exactly zero).
    pub max_pebar_below_yield: f64,
}

/// Hooke plane-strain stresses for the homogeneous field
/// u = (a x, -b y): constant strains and stresses everywhere.
pub fn hooke_plane_strain(params: &MaterialParams, a: f64, b: f64) -> (f64, f64, f64, f64) {
    let eps_v = a - b;
    let sxx = params.lambda * eps_v + 2.0 * params.mu * a;
    let syy = params.lambda * eps_v + 2.0 * params.mu * (-b);
    let szz = params.lambda * eps_v;
    let sxy = 0.0;
    (sxx, syy, szz, sxy)
}

/// Run the residual validity battery: analytic elastic injection plus
/// random-state invariants.
pub fn vonmises_check(n_states: usize, seed: u64, params: &MaterialParams) -> Result<VonMisesReport> {
    // Part 1: closed-form elastic field u_x = a x, u_y = -b y with Hooke
    // stresses drives every residual to zero.
    let (a, b) = (5e-4, 3e-4);
    let (sxx_v, syy_v, szz_v, sxy_v) = hooke_plane_strain(params, a, b);
    let mut graph = Graph::new();
    let x = graph.variable("x")?;
    let y = graph.variable("y")?;
    let fields = {
        let ac = graph.constant(a);
        let bc = graph.constant(b);
        let ux = graph.mul(ac, x);
        let minus_by = graph.mul(bc, y);
        let uy = graph.neg(minus_by);
        FieldExprs {
            ux,
            uy,
            sxx: graph.constant(sxx_v),
            syy: graph.constant(syy_v),
            szz: graph.constant(szz_v),
            sxy: graph.constant(sxy_v),
        }
    };
    let lambda = graph.constant(params.lambda);
    let mu = graph.constant(params.mu);
    let sigma_y = graph.constant(params.sigma_y);
    let state = elastoplastic_state(&mut graph, x, y, fields, lambda, mu, sigma_y)?;
    let targets = von_mises_residuals(&mut graph, x, y, &state)?;
    let store = WeightStore::initialize(&graph);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n_probe = 64;
    let batch = EvalBatch::new()
        .bind(
            "x",
            (0..n_probe)
                .map(|_| rng.random_range(0.0..100.0))
                .collect::<Vec<_>>(),
        )
        .bind(
            "y",
            (0..n_probe)
                .map(|_| rng.random_range(0.0..180.0))
                .collect::<Vec<_>>(),
        );
    let opts = EvalOptions { check_finite: false };
    let mut elastic_residuals = [0.0f64; 8];
    for (k, target) in targets.iter().enumerate() {
        let expr = match &target.kind {
            crate::train::TargetKind::Tie { lhs, rhs } => graph.sub(*lhs, *rhs),
            crate::train::TargetKind::Zeros { expr } => *expr,
            crate::train::TargetKind::Data { expr, .. } => *expr,
        };
        let vals = graph.eval_with(expr, &batch, &store, &opts)?;
        elastic_residuals[k] = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }

    // Part 2: random strain states via per-sample strain variables; the
    // stresses follow Hooke's law inside the graph. Below the yield surface
    // the equivalent plastic strain must vanish, and both deviatoric traces
    // must be zero everywhere.
    let mut g2 = Graph::new();
    let x2 = g2.variable("x")?;
    let y2 = g2.variable("y")?;
    let exx_v = g2.variable("exx")?;
    let eyy_v = g2.variable("eyy")?;
    let exy_v = g2.variable("exy")?;
    // Displacements whose strains are exactly the bound columns:
    // ux = exx x + exy y, uy = exy x + eyy y.
    let fields2 = {
        let t1 = g2.mul(exx_v, x2);
        let t2 = g2.mul(exy_v, y2);
        let ux = g2.add(t1, t2);
        let t3 = g2.mul(exy_v, x2);
        let t4 = g2.mul(eyy_v, y2);
        let uy = g2.add(t3, t4);
        let lam = g2.constant(params.lambda);
        let mu2 = g2.constant(params.mu);
        let two = g2.constant(2.0);
        let eps_v = g2.add(exx_v, eyy_v);
        let lam_tr = g2.mul(lam, eps_v);
        let two_mu = g2.mul(two, mu2);
        let sxx = {
            let t = g2.mul(two_mu, exx_v);
            g2.add(lam_tr, t)
        };
        let syy = {
            let t = g2.mul(two_mu, eyy_v);
            g2.add(lam_tr, t)
        };
        let szz = lam_tr;
        let sxy = g2.mul(two_mu, exy_v);
        // Plane-strain shear: sigma_xy = 2 mu eps_xy.
        let _ = &sxy;
        FieldExprs {
            ux,
            uy,
            sxx,
            syy,
            szz,
            sxy,
        }
    };
    let lam2 = g2.constant(params.lambda);
    let mu2 = g2.constant(params.mu);
    let sy2 = g2.constant(params.sigma_y);
    let state2 = elastoplastic_state(&mut g2, x2, y2, fields2, lam2, mu2, sy2)?;
    let store2 = WeightStore::initialize(&g2);
    let range = 5e-3;
    let cols = |rng: &mut rand_chacha::ChaCha8Rng| {
        (0..n_states)
            .map(|_| rng.random_range(-range..range))
            .collect::<Vec<f64>>()
    };
    let batch2 = EvalBatch::new()
        .bind("x", (0..n_states).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>())
        .bind("y", (0..n_states).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>())
        .bind("exx", cols(&mut rng))
        .bind("eyy", cols(&mut rng))
        .bind("exy", cols(&mut rng));
    let outputs = g2.eval_many(
        &[
            state2.q,
            state2.pebar,
            state2.e_trace,
            state2.d_trace,
        ],
        &batch2,
        &store2,
        &opts,
    )?;
    let (q_col, pebar_col, etr_col, dtr_col) =
        (&outputs[0], &outputs[1], &outputs[2], &outputs[3]);
    let mut pebar_violations = 0;
    let mut max_pebar_below_yield = 0.0f64;
    for i in 0..n_states {
        if q_col[i] < params.sigma_y {
            if pebar_col[i] != 0.0 {
                pebar_violations += 1;
            }
            max_pebar_below_yield = max_pebar_below_yield.max(pebar_col[i].abs());
        }
        debug_assert!(pebar_col[i] >= 0.0);
    }
    let max_strain_trace = etr_col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_stress_trace = dtr_col.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    Ok(VonMisesReport {
        elastic_residuals,
        max_strain_trace,
        max_stress_trace,
        pebar_violations,
        states: n_states,
        max_pebar_below_yield,
    })
}

/// Full data-driven problem over a user dataset: six field networks, three
/// trainable material parameters, data targets for every provided column,
/// and the eight constitutive residuals.
pub struct VonMisesProblem {
    pub graph: Graph,
    pub store: WeightStore,
    pub networks: Vec<Functional>,
    pub params: Vec<Parameter>,
    pub model: crate::train::SciModel,
    pub columns: Vec<Vec<f64>>,
}

/// Build the inversion problem from a dataset with columns
/// x, y, ux, uy, sxx, syy, szz, sxy (lengths in mm, stresses in MPa).
pub fn von_mises_problem(
    dataset: &SampleSet,
    hidden: &[usize],
    seed: u64,
) -> Result<VonMisesProblem> {
    for col in ["x", "y", "ux", "uy", "sxx", "syy", "szz", "sxy"] {
        if !dataset.has_column(col) {
            return Err(ProblemError::MissingColumn(col.to_string()));
        }
    }
    let mut graph = Graph::new();
    let x = graph.variable("x")?;
    let y = graph.variable("y")?;
    let names = ["ux", "uy", "sxx", "syy", "szz", "sxy"];
    let mut networks = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        networks.push(functional(
            &mut graph,
            name,
            &[x, y],
            hidden,
            Activation::Tanh,
            seed.wrapping_add(i as u64),
        )?);
    }
    let lambda = parameter(&mut graph, "lambda", 1.0);
    let mu = parameter(&mut graph, "mu", 1.0);
    let sigma_y = parameter(&mut graph, "sigma_y", 1.0);
    let fields = FieldExprs {
        ux: networks[0].output(),
        uy: networks[1].output(),
        sxx: networks[2].output(),
        syy: networks[3].output(),
        szz: networks[4].output(),
        sxy: networks[5].output(),
    };
    let state = elastoplastic_state(
        &mut graph,
        x,
        y,
        fields,
        lambda.expr(),
        mu.expr(),
        sigma_y.expr(),
    )?;
    let mut targets = von_mises_residuals(&mut graph, x, y, &state)?;
    for (net, col) in networks.iter().zip(names) {
        targets.push(
            Target::data(net.output(), dataset.column(col)?.to_vec())
                .labeled(&format!("{col}_data")),
        );
    }
    let model = crate::train::build_model(
        &mut graph,
        &[x, y],
        targets,
        crate::train::LossKind::Mse,
        crate::train::OptimizerConfig::default(),
    )?;
    let columns = vec![dataset.column("x")?.to_vec(), dataset.column("y")?.to_vec()];
    let store = WeightStore::initialize(&graph);
    Ok(VonMisesProblem {
        graph,
        store,
        networks,
        params: vec![lambda, mu, sigma_y],
        model,
        columns,
    })
}
