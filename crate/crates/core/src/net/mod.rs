//! Dense feed-forward functionals, residual blocks, and trainable scalar
//! parameters, plus weight persistence.
//!
//! A [`Functional`] is a named multi-layer network mapping input expressions
//! to one or more scalar output fields. Hidden layers use the configured
//! activation; the output layer is linear. Weights are Glorot-uniform, biases
//! zero, both derived deterministically from the construction seed.

mod persist;

pub use persist::{load_weights, save_weights, write_json_f17};

use crate::graph::{
    ExprId, Graph, GraphError, UnaryOp, WeightId, WeightInit, WeightMeta, WeightStore,
};
use ndarray::Array2;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("functional must have at least one hidden layer and one input")]
    EmptyArchitecture,
    #[error("shape mismatch at {location}: expected {expected}, got {got}")]
    ShapeMismatch {
        location: String,
        expected: String,
        got: String,
    },
    #[error("residual block output width {got} must equal input width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("weights file format version {got} is not supported (expected {expected})")]
    FormatVersionMismatch { expected: u32, got: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("weights file is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Activation tag for hidden layers.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    fn unary(&self) -> UnaryOp {
        match self {
            Activation::Tanh => UnaryOp::Tanh,
            Activation::Sigmoid => UnaryOp::Sigmoid,
            Activation::Relu => UnaryOp::Relu,
        }
    }
}

/// One dense layer: weight and bias handles plus the activation applied to
/// its output (`None` for the linear output layer).
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub w: WeightId,
    pub b: WeightId,
    pub activation: Option<Activation>,
    pub d_in: usize,
    pub d_out: usize,
}

/// A named dense network over input expressions, with one scalar output
/// field per declared name.
pub struct Functional {
    name: String,
    field_names: Vec<String>,
    layers: Vec<DenseLayer>,
    outputs: Vec<ExprId>,
}

/// Mix the functional seed with a per-layer counter so every tensor draws
/// from an independent deterministic stream.
fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(layer as u64 + 1)
}

/// Build a dense functional with the given hidden widths and a linear output
/// layer, one output field named after the functional.
pub fn functional(
    graph: &mut Graph,
    name: &str,
    inputs: &[ExprId],
    hidden: &[usize],
    activation: Activation,
    seed: u64,
) -> Result<Functional> {
    functional_fields(graph, name, &[name], inputs, hidden, activation, seed)
}

/// Build a dense functional with several named output fields sharing one
/// network (the multi-output form used for split field approximations).
pub fn functional_fields(
    graph: &mut Graph,
    name: &str,
    fields: &[&str],
    inputs: &[ExprId],
    hidden: &[usize],
    activation: Activation,
    seed: u64,
) -> Result<Functional> {
    if inputs.is_empty() || hidden.is_empty() || fields.is_empty() || hidden.contains(&0) {
        return Err(NetError::EmptyArchitecture);
    }
    for &e in inputs {
        if !graph.contains(e) {
            return Err(NetError::Graph(GraphError::GraphMismatch));
        }
    }
    let input = graph.concat(inputs);
    let mut widths: Vec<usize> = Vec::with_capacity(hidden.len() + 1);
    widths.extend_from_slice(hidden);
    widths.push(fields.len());

    let mut layers = Vec::with_capacity(widths.len());
    let mut current = input;
    let mut d_in = inputs.len();
    for (i, &d_out) in widths.iter().enumerate() {
        let is_output = i == widths.len() - 1;
        let w = graph.register_weight(
            &format!("{name}/{i}/w"),
            d_out,
            d_in,
            WeightInit::GlorotUniform {
                seed: layer_seed(seed, i),
            },
        );
        let b = graph.register_weight(&format!("{name}/{i}/b"), d_out, 1, WeightInit::Zeros);
        current = graph.affine(w, Some(b), current)?;
        let activation = if is_output { None } else { Some(activation) };
        if let Some(act) = activation {
            current = graph.unary(act.unary(), current);
        }
        layers.push(DenseLayer {
            w,
            b,
            activation,
            d_in,
            d_out,
        });
        d_in = d_out;
    }
    let outputs = (0..fields.len())
        .map(|i| graph.extract(current, i))
        .collect();
    Ok(Functional {
        name: name.to_string(),
        field_names: fields.iter().map(|s| s.to_string()).collect(),
        layers,
        outputs,
    })
}

impl Functional {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn field_names(&self) -> &[String] {
        &self.field_names
    }

    /// The single output field (panics if the functional declares several).
    pub fn output(&self) -> ExprId {
        assert_eq!(
            self.outputs.len(),
            1,
            "functional `{}` has {} fields; use `field`",
            self.name,
            self.outputs.len()
        );
        self.outputs[0]
    }

    pub fn field(&self, index: usize) -> ExprId {
        self.outputs[index]
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Ordered (W, b) pairs, cloned out of the store.
    pub fn get_weights(&self, store: &WeightStore) -> Vec<(Array2<f64>, Array2<f64>)> {
        self.layers
            .iter()
            .map(|l| (store.tensor(l.w).clone(), store.tensor(l.b).clone()))
            .collect()
    }

    /// Replace all layer weights; shapes must match the architecture.
    pub fn set_weights(
        &self,
        store: &mut WeightStore,
        weights: &[(Array2<f64>, Array2<f64>)],
    ) -> Result<()> {
        if weights.len() != self.layers.len() {
            return Err(NetError::ShapeMismatch {
                location: format!("functional `{}`", self.name),
                expected: format!("{} layers", self.layers.len()),
                got: format!("{} layers", weights.len()),
            });
        }
        for (i, (layer, (w, b))) in self.layers.iter().zip(weights).enumerate() {
            if w.dim() != (layer.d_out, layer.d_in) || b.dim() != (layer.d_out, 1) {
                return Err(NetError::ShapeMismatch {
                    location: format!("{}/layer {i}", self.name),
                    expected: format!("W {}x{}, b {}x1", layer.d_out, layer.d_in, layer.d_out),
                    got: format!(
                        "W {}x{}, b {}x{}",
                        w.dim().0,
                        w.dim().1,
                        b.dim().0,
                        b.dim().1
                    ),
                });
            }
        }
        for (layer, (w, b)) in self.layers.iter().zip(weights) {
            store.set_tensor(layer.w, w.clone())?;
            store.set_tensor(layer.b, b.clone())?;
        }
        Ok(())
    }

    /// Freeze or unfreeze every layer of this functional.
    pub fn set_trainable(&self, store: &mut WeightStore, flag: bool) {
        for layer in &self.layers {
            store.set_trainable(layer.w, flag);
            store.set_trainable(layer.b, flag);
        }
    }

    pub fn is_trainable(&self, store: &WeightStore) -> bool {
        self.layers
            .iter()
            .any(|l| store.is_trainable(l.w) || store.is_trainable(l.b))
    }
}

/// A trainable scalar broadcast over the batch, used for inverse parameter
/// identification.
#[derive(Clone, Copy, Debug)]
pub struct Parameter {
    id: WeightId,
    node: ExprId,
}

/// Register a trainable scalar initialized to `initial`.
pub fn parameter(graph: &mut Graph, name: &str, initial: f64) -> Parameter {
    let id = graph.register_weight_meta(WeightMeta {
        name: name.to_string(),
        rows: 1,
        cols: 1,
        init: WeightInit::Const(initial),
        is_parameter: true,
    });
    let node = graph.weight_node(id);
    Parameter { id, node }
}

impl Parameter {
    pub fn expr(&self) -> ExprId {
        self.node
    }

    pub fn id(&self) -> WeightId {
        self.id
    }

    pub fn value(&self, store: &WeightStore) -> f64 {
        store.scalar(self.id)
    }

    pub fn set_value(&self, store: &mut WeightStore, value: f64) {
        store.set_scalar(self.id, value);
    }

    pub fn set_trainable(&self, store: &mut WeightStore, flag: bool) {
        store.set_trainable(self.id, flag);
    }
}

/// One ResNet-style block: three activated dense layers plus the skip
/// connection, `block(z) = act(W2 act(W1 act(W0 z + b0) + b1) + b2) + z`.
pub fn residual_block(
    graph: &mut Graph,
    name: &str,
    input: ExprId,
    widths: [usize; 3],
    activation: Activation,
    seed: u64,
) -> Result<ExprId> {
    let in_width = graph.width(input) as usize;
    if widths[2] != in_width {
        return Err(NetError::WidthMismatch {
            expected: in_width,
            got: widths[2],
        });
    }
    let mut current = input;
    let mut d_in = in_width;
    for (i, &d_out) in widths.iter().enumerate() {
        let w = graph.register_weight(
            &format!("{name}/{i}/w"),
            d_out,
            d_in,
            WeightInit::GlorotUniform {
                seed: layer_seed(seed, i),
            },
        );
        let b = graph.register_weight(&format!("{name}/{i}/b"), d_out, 1, WeightInit::Zeros);
        current = graph.affine(w, Some(b), current)?;
        current = graph.unary(activation.unary(), current);
        d_in = d_out;
    }
    Ok(graph.add(current, input))
}

#[cfg(test)]
mod tests;
