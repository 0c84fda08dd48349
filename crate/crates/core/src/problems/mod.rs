//! Ready-to-run case studies: residual construction, targets, reference
//! solutions, and error metrics.

pub mod burgers;
pub mod curve_fit;
pub mod gradcheck;
pub mod ns_inverse;
pub mod von_mises;
pub mod vpinn_heat;

use crate::data::DataError;
use crate::graph::{EvalBatch, ExprId, Graph, GraphError, WeightStore};
use crate::net::NetError;
use crate::train::TrainError;
use std::collections::BTreeMap;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, ProblemError>;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dataset is missing column `{0}`")]
    MissingColumn(String),
    #[error("prediction and reference have different lengths: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("non-finite value in prediction at sample {0}")]
    NonFiniteValue(usize),
    #[error(
        "test function is degenerate after pre-training (interior RMS {rms:.3e} < {min:.3e})"
    )]
    DegenerateTestFunction { rms: f64, min: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Pointwise error summary between a prediction and a reference column.
#[derive(Clone, Debug)]
pub struct ErrorReport {
    /// ||truth - prediction||_2 / ||truth||_2 over the evaluation set.
    pub relative_l2: f64,
    pub l_inf: f64,
    pub abs_errors: Vec<f64>,
}

/// Compare a prediction against a reference; rejects NaN predictions.
pub fn error_report(prediction: &[f64], truth: &[f64]) -> Result<ErrorReport> {
    if prediction.len() != truth.len() {
        return Err(ProblemError::ShapeMismatch(prediction.len(), truth.len()));
    }
    if let Some(pos) = prediction.iter().position(|v| !v.is_finite()) {
        return Err(ProblemError::NonFiniteValue(pos));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut l_inf: f64 = 0.0;
    let mut abs_errors = Vec::with_capacity(prediction.len());
    for (p, t) in prediction.iter().zip(truth) {
        let e = (t - p).abs();
        abs_errors.push(e);
        num += e * e;
        den += t * t;
        l_inf = l_inf.max(e);
    }
    Ok(ErrorReport {
        relative_l2: num.sqrt() / den.sqrt(),
        l_inf,
        abs_errors,
    })
}

/// Scalar metrics of one problem run, exported as `metrics.json` by the CLI.
#[derive(Clone, Debug, Default)]
pub struct Metrics {
    pub relative_l2: f64,
    pub l_inf: f64,
    pub final_loss: f64,
    /// Identified parameters and any per-problem extras.
    pub params: BTreeMap<String, f64>,
}

/// Evaluate a scalar expression over sample-set columns, binding each listed
/// (variable, column) pair.
pub fn eval_on_set(
    graph: &Graph,
    expr: ExprId,
    set: &crate::data::SampleSet,
    bindings: &[(&str, &str)],
    store: &WeightStore,
) -> Result<Vec<f64>> {
    let mut batch = EvalBatch::new();
    for (var, col) in bindings {
        batch.insert(var, set.column(col)?.to_vec());
    }
    Ok(graph.eval_with(
        expr,
        &batch,
        store,
        &crate::graph::EvalOptions { check_finite: false },
    )?)
}
