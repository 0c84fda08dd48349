//! Optimization problems over graph expressions: targets, loss reduction,
//! mini-batch gradient descent with Adam or SGD, and training history.
//!
//! A target is one objective term: observed data for an expression (optionally
//! restricted to a set of sample ids), an equality tie between two
//! expressions, or a zero residual. The total loss is the weighted sum of
//! per-target reductions.

use crate::graph::{
    EvalBatch, ExprId, Graph, GraphError, Program, WeightId, WeightStore,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;
use thiserror::Error;

mod step;

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("model has no targets")]
    EmptyTargets,
    #[error("target references variable `{0}` not listed in model inputs")]
    UnboundVariableInTarget(String),
    #[error("batch size {batch} exceeds dataset size {n}")]
    BatchLargerThanDataset { batch: usize, n: usize },
    #[error("non-finite loss at epoch {epoch}; training aborted")]
    NonFiniteLoss {
        epoch: usize,
        partial: Box<TrainHistory>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid target data: {0}")]
    InvalidTarget(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LossKind {
    Mse,
    Mae,
}

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum OptimizerKind {
    Adam(AdamParams),
    Sgd,
}

#[derive(Clone, Copy, Debug)]
pub enum Schedule {
    Constant,
    /// lr(step) = lr0 * rate^(step / steps)
    ExponentialDecay { rate: f64, steps: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub schedule: Schedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam(AdamParams::default()),
            learning_rate: 1e-3,
            schedule: Schedule::Constant,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam(AdamParams::default()),
            learning_rate,
            schedule: Schedule::Constant,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            schedule: Schedule::Constant,
        }
    }

    pub fn with_decay(mut self, rate: f64, steps: usize) -> Self {
        self.schedule = Schedule::ExponentialDecay { rate, steps };
        self
    }

    fn lr_at(&self, step: u64) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::ExponentialDecay { rate, steps } => {
                self.learning_rate * rate.powf(step as f64 / steps as f64)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        if let OptimizerKind::Adam(p) = self.kind {
            if !(0.0..1.0).contains(&p.beta1) || !(0.0..1.0).contains(&p.beta2) {
                return Err(TrainError::InvalidConfig(
                    "adam betas must lie in [0, 1)".into(),
                ));
            }
            if !(p.epsilon > 0.0) {
                return Err(TrainError::InvalidConfig("adam epsilon must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum TargetKind {
    /// Observed values for an expression. With `ids`, only the listed global
    /// sample indices carry data (boundary/initial/data points).
    Data {
        expr: ExprId,
        values: Vec<f64>,
        ids: Option<Vec<usize>>,
    },
    /// Equality of two expressions, enforced as `lhs - rhs -> 0`.
    Tie { lhs: ExprId, rhs: ExprId },
    /// The expression itself is driven to zero (PDE residuals).
    Zeros { expr: ExprId },
}

/// How one target's residual column becomes a scalar loss.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Reduction {
    /// Mean of per-sample residual losses (MSE/MAE over the active set).
    PerSample,
    /// Square of the residual sum: loss = (sum_q r_q)^2. Used for weak-form
    /// integral targets where the sum approximates a domain integral.
    SumSquared,
}

#[derive(Clone, Debug)]
pub struct Target {
    pub kind: TargetKind,
    pub weight: f64,
    pub reduction: Reduction,
    pub label: Option<String>,
}

impl Target {
    pub fn data(expr: ExprId, values: impl Into<Vec<f64>>) -> Self {
        Target {
            kind: TargetKind::Data {
                expr,
                values: values.into(),
                ids: None,
            },
            weight: 1.0,
            reduction: Reduction::PerSample,
            label: None,
        }
    }

    /// Data given only at the listed global sample ids.
    pub fn data_at(expr: ExprId, ids: impl Into<Vec<usize>>, values: impl Into<Vec<f64>>) -> Self {
        Target {
            kind: TargetKind::Data {
                expr,
                values: values.into(),
                ids: Some(ids.into()),
            },
            weight: 1.0,
            reduction: Reduction::PerSample,
            label: None,
        }
    }

    pub fn tie(lhs: ExprId, rhs: ExprId) -> Self {
        Target {
            kind: TargetKind::Tie { lhs, rhs },
            weight: 1.0,
            reduction: Reduction::PerSample,
            label: None,
        }
    }

    pub fn zeros(expr: ExprId) -> Self {
        Target {
            kind: TargetKind::Zeros { expr },
            weight: 1.0,
            reduction: Reduction::PerSample,
            label: None,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn labeled(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }
}

/// Per-target compiled form: the expression evaluated per sample plus the
/// data binding used to form residuals.
pub(crate) struct CompiledTarget {
    pub expr: ExprId,
    pub binding: Binding,
    pub weight: f64,
    pub reduction: Reduction,
}

pub(crate) enum Binding {
    /// Residual is the expression value itself.
    None,
    /// Residual is `expr - values[global_index]` at every sample.
    Full(Vec<f64>),
    /// Residual applies only where the global index is in the id set.
    Masked(HashMap<usize, f64>),
}

/// A compiled optimization problem: inputs, targets, loss kind, optimizer.
pub struct SciModel {
    pub inputs: Vec<ExprId>,
    pub loss_kind: LossKind,
    pub optimizer: OptimizerConfig,
    pub(crate) targets: Vec<CompiledTarget>,
    labels: Vec<String>,
}

/// Validate and compile targets into a model.
pub fn build_model(
    graph: &mut Graph,
    inputs: &[ExprId],
    targets: Vec<Target>,
    loss_kind: LossKind,
    optimizer: OptimizerConfig,
) -> Result<SciModel> {
    if targets.is_empty() {
        return Err(TrainError::EmptyTargets);
    }
    optimizer.validate()?;
    let input_set: HashSet<ExprId> = inputs.iter().copied().collect();
    let mut compiled = Vec::with_capacity(targets.len());
    let mut labels = Vec::with_capacity(targets.len());
    for (i, t) in targets.into_iter().enumerate() {
        if !(t.weight >= 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "target {i} has negative weight"
            )));
        }
        let (expr, binding) = match t.kind {
            TargetKind::Data { expr, values, ids } => match ids {
                None => (expr, Binding::Full(values)),
                Some(ids) => {
                    if ids.len() != values.len() {
                        return Err(TrainError::InvalidTarget(format!(
                            "target {i}: {} ids but {} values",
                            ids.len(),
                            values.len()
                        )));
                    }
                    let mut map = HashMap::with_capacity(ids.len());
                    for (id, v) in ids.iter().zip(&values) {
                        if map.insert(*id, *v).is_some() {
                            return Err(TrainError::InvalidTarget(format!(
                                "target {i}: duplicate id {id}"
                            )));
                        }
                    }
                    (expr, Binding::Masked(map))
                }
            },
            TargetKind::Tie { lhs, rhs } => (graph.sub(lhs, rhs), Binding::None),
            TargetKind::Zeros { expr } => (expr, Binding::None),
        };
        if graph.width(expr) != 1 {
            return Err(TrainError::InvalidTarget(format!(
                "target {i} is not a per-sample scalar"
            )));
        }
        for node in graph.reachable_sorted(&[expr]) {
            if let Some(name) = graph.variable_name(node) {
                if !input_set.contains(&node) {
                    return Err(TrainError::UnboundVariableInTarget(name.to_string()));
                }
            }
        }
        labels.push(t.label.unwrap_or_else(|| format!("target_{i}")));
        compiled.push(CompiledTarget {
            expr,
            binding,
            weight: t.weight,
            reduction: t.reduction,
        });
    }
    Ok(SciModel {
        inputs: inputs.to_vec(),
        loss_kind,
        optimizer,
        targets: compiled,
        labels,
    })
}

/// Reduce a residual column to a scalar loss. With a mask, only the listed
/// positions participate; an empty mask yields 0.
pub fn loss_reduce(kind: LossKind, residuals: &[f64], mask: Option<&[usize]>) -> f64 {
    let term = |r: f64| match kind {
        LossKind::Mse => r * r,
        LossKind::Mae => r.abs(),
    };
    match mask {
        None => {
            if residuals.is_empty() {
                return 0.0;
            }
            residuals.iter().map(|&r| term(r)).sum::<f64>() / residuals.len() as f64
        }
        Some(ids) => {
            if ids.is_empty() {
                return 0.0;
            }
            ids.iter().map(|&i| term(residuals[i])).sum::<f64>() / ids.len() as f64
        }
    }
}

/// One bias-corrected Adam update over flat tensors.
pub fn adam_step(
    weights: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    params: &AdamParams,
    lr: f64,
) {
    let b1t = 1.0 - params.beta1.powi(t as i32);
    let b2t = 1.0 - params.beta2.powi(t as i32);
    for i in 0..weights.len() {
        let g = grads[i];
        m[i] = params.beta1 * m[i] + (1.0 - params.beta1) * g;
        v[i] = params.beta2 * v[i] + (1.0 - params.beta2) * g * g;
        let m_hat = m[i] / b1t;
        let v_hat = v[i] / b2t;
        weights[i] -= lr * m_hat / (v_hat.sqrt() + params.epsilon);
    }
}

/// Plain gradient-descent update.
pub fn sgd_step(weights: &mut [f64], grads: &[f64], lr: f64) {
    for (w, g) in weights.iter_mut().zip(grads) {
        *w -= lr * g;
    }
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub total: f64,
    pub per_target: Vec<f64>,
    pub seconds: f64,
    pub empty_mask_batches: u32,
}

#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub target_labels: Vec<String>,
    /// Final values of named scalar parameters (inversion results).
    pub final_params: BTreeMap<String, f64>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map(|e| e.total).unwrap_or(f64::NAN)
    }

    pub fn total_empty_mask_batches(&self) -> u64 {
        self.epochs.iter().map(|e| e.empty_mask_batches as u64).sum()
    }

    /// CSV export: `epoch,total_loss,<per-target losses...>,seconds`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "epoch,total_loss")?;
        for label in &self.target_labels {
            write!(w, ",{label}")?;
        }
        writeln!(w, ",seconds")?;
        for (i, rec) in self.epochs.iter().enumerate() {
            write!(w, "{i},{:.17e}", rec.total)?;
            for l in &rec.per_target {
                write!(w, ",{l:.17e}")?;
            }
            writeln!(w, ",{:.6}", rec.seconds)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    /// None trains full-batch.
    pub batch_size: Option<usize>,
    pub shuffle_seed: u64,
    /// Print a progress line to stderr every this many epochs (0 = silent).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: None,
            shuffle_seed: 0,
            log_every: 0,
        }
    }
}

/// Run mini-batch training of `model` on the given input columns (ordered
/// like `model.inputs`).
pub fn train(
    graph: &Graph,
    store: &mut WeightStore,
    model: &SciModel,
    columns: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if columns.len() != model.inputs.len() {
        return Err(TrainError::InvalidConfig(format!(
            "model has {} inputs but {} columns were provided",
            model.inputs.len(),
            columns.len()
        )));
    }
    let n = columns.first().map(|c| c.len()).unwrap_or(0);
    if n == 0 {
        return Err(TrainError::InvalidConfig("empty dataset".into()));
    }
    for c in columns {
        if c.len() != n {
            return Err(TrainError::InvalidConfig(
                "input columns have unequal lengths".into(),
            ));
        }
    }
    let batch = model_batch(cfg, n)?;
    for (i, t) in model.targets.iter().enumerate() {
        match &t.binding {
            Binding::Full(values) => {
                if values.len() != n {
                    return Err(TrainError::InvalidTarget(format!(
                        "target {i}: {} values for {} samples",
                        values.len(),
                        n
                    )));
                }
            }
            Binding::Masked(map) => {
                if let Some(bad) = map.keys().find(|id| **id >= n) {
                    return Err(TrainError::InvalidTarget(format!(
                        "target {i}: id {bad} outside [0, {n})"
                    )));
                }
            }
            Binding::None => {}
        }
    }

    let exprs: Vec<ExprId> = model.targets.iter().map(|t| t.expr).collect();
    let program = Program::compile(graph, &exprs)?;
    {
        // Surface missing bindings/weights before the epoch loop.
        let mut probe = EvalBatch::new();
        for (expr_var, col) in model.inputs.iter().zip(columns) {
            let name = graph
                .variable_name(*expr_var)
                .ok_or(GraphError::NotAVariable)?;
            probe.insert(name, col.clone());
        }
        program.validate(graph, &probe, store)?;
    }
    let var_names: Vec<String> = model
        .inputs
        .iter()
        .map(|v| graph.variable_name(*v).unwrap().to_string())
        .collect();

    let mut engine = step::StepEngine::new(graph, store, model, &program, &var_names, columns, n);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let steps_per_epoch = n.div_ceil(batch);
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(cfg.epochs),
        target_labels: model.labels.clone(),
        final_params: BTreeMap::new(),
    };
    let mut global_step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        if batch < n {
            perm.shuffle(&mut rng);
        }
        let mut epoch_total = 0.0;
        let mut epoch_targets = vec![0.0; model.targets.len()];
        let mut empty_masks = 0u32;
        for s in 0..steps_per_epoch {
            let lo = s * batch;
            let hi = (lo + batch).min(n);
            global_step += 1;
            let lr = model.optimizer.lr_at(global_step);
            let stats = engine.step(store, &perm[lo..hi], lr, global_step)?;
            empty_masks += stats.empty_masks;
            epoch_total += stats.total;
            for (acc, l) in epoch_targets.iter_mut().zip(&stats.per_target) {
                *acc += l;
            }
            if !stats.total.is_finite() {
                history.epochs.push(EpochRecord {
                    total: stats.total,
                    per_target: stats.per_target,
                    seconds: started.elapsed().as_secs_f64(),
                    empty_mask_batches: empty_masks,
                });
                collect_params(graph, store, &mut history);
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    partial: Box::new(history),
                });
            }
        }
        let inv = 1.0 / steps_per_epoch as f64;
        history.epochs.push(EpochRecord {
            total: epoch_total * inv,
            per_target: epoch_targets.iter().map(|l| l * inv).collect(),
            seconds: started.elapsed().as_secs_f64(),
            empty_mask_batches: empty_masks,
        });
        if cfg.log_every > 0 && (epoch + 1) % cfg.log_every == 0 {
            eprintln!(
                "epoch {:>6}: loss {:.6e}",
                epoch + 1,
                epoch_total * inv
            );
        }
    }
    collect_params(graph, store, &mut history);
    Ok(history)
}

fn model_batch(cfg: &TrainConfig, n: usize) -> Result<usize> {
    match cfg.batch_size {
        None => Ok(n),
        Some(b) if b == 0 => Err(TrainError::InvalidConfig("batch size 0".into())),
        Some(b) if b > n => Err(TrainError::BatchLargerThanDataset { batch: b, n }),
        Some(b) => Ok(b),
    }
}

fn collect_params(graph: &Graph, store: &WeightStore, history: &mut TrainHistory) {
    for (idx, meta) in graph.weight_metas().iter().enumerate() {
        if meta.is_parameter {
            let id = WeightId(idx as u32);
            history
                .final_params
                .insert(meta.name.clone(), store.scalar(id));
        }
    }
}
