//! Computational-graph construction and graph-to-graph differentiation.
//!
//! A [`Graph`] is an append-only arena of expression nodes. Every node
//! produces, per sample of a batch, either a scalar or a fixed-width vector
//! (dense layers are single `Affine` nodes so evaluation stays at matrix
//! speed). Nodes are deduplicated by structure, which keeps repeated
//! differentiation from exploding the arena.
//!
//! Differentiation with respect to an input variable is symbolic: `diff`
//! appends new nodes computing the derivative expression, so the result can
//! be differentiated again and participates in weight-gradient
//! backpropagation like any other expression.

mod eval;
mod grad;

pub use eval::{EvalBatch, EvalOptions};
pub use grad::GradientMap;

use std::collections::HashMap;
use std::fmt;

use ndarray::Array2;
use thiserror::Error;

pub(crate) use eval::{chunk_ranges, Program};
pub(crate) use grad::{AdjointMask, GradAccum};

/// Handle to a node inside its owning [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ExprId(pub(crate) u32);

/// Handle to a weight tensor registered on a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct WeightId(pub(crate) u32);

impl WeightId {
    pub fn index(&self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tanh,
    Sigmoid,
    Relu,
    Sqrt,
    Sign,
    Abs,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Operation tag accepted by the generic [`Graph::apply`] entry point.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Neg,
    Sin,
    Cos,
    Tanh,
    Sigmoid,
    Relu,
    Sqrt,
    Sign,
    Abs,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Pow,
        OpKind::Neg,
        OpKind::Sin,
        OpKind::Cos,
        OpKind::Tanh,
        OpKind::Sigmoid,
        OpKind::Relu,
        OpKind::Sqrt,
        OpKind::Sign,
        OpKind::Abs,
    ];

    pub fn arity(&self) -> usize {
        match self {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::Pow => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    /// Input variable (index into `Graph::var_names`).
    Var(u32),
    Const(f64),
    /// A 1x1 weight broadcast over the batch (trainable scalar).
    Weight(WeightId),
    Unary(UnaryOp, ExprId),
    Binary(BinaryOp, ExprId, ExprId),
    /// Elementwise power with a constant exponent.
    Pow(ExprId, f64),
    /// `out = W * arg + b`, applied per sample.
    Affine {
        w: WeightId,
        b: Option<WeightId>,
        arg: ExprId,
    },
    /// Juxtapose width-1 expressions into one vector.
    Concat(Vec<ExprId>),
    /// Scalar component of a vector expression.
    Extract(ExprId, u32),
}

pub(crate) struct Node {
    pub op: Op,
    pub width: u32,
}

/// Structural key for node deduplication.
#[derive(PartialEq, Eq, Hash)]
enum Key {
    Var(u32),
    Const(u64),
    Weight(u32),
    Unary(UnaryOp, u32),
    Binary(BinaryOp, u32, u32),
    Pow(u32, u64),
    Affine(u32, u32, u32), // bias id + 1, 0 = none
    Concat(Vec<u32>),
    Extract(u32, u32),
}

fn key_of(op: &Op) -> Key {
    match op {
        Op::Var(i) => Key::Var(*i),
        Op::Const(c) => Key::Const(c.to_bits()),
        Op::Weight(w) => Key::Weight(w.0),
        Op::Unary(k, a) => Key::Unary(*k, a.0),
        Op::Binary(k, a, b) => Key::Binary(*k, a.0, b.0),
        Op::Pow(a, p) => Key::Pow(a.0, p.to_bits()),
        Op::Affine { w, b, arg } => Key::Affine(w.0, b.map(|x| x.0 + 1).unwrap_or(0), arg.0),
        Op::Concat(parts) => Key::Concat(parts.iter().map(|p| p.0).collect()),
        Op::Extract(a, i) => Key::Extract(a.0, *i),
    }
}

/// How a weight tensor is filled when a store is materialized.
#[derive(Clone, Copy, Debug)]
pub enum WeightInit {
    Zeros,
    Const(f64),
    /// Uniform on ±sqrt(6 / (fan_in + fan_out)).
    GlorotUniform { seed: u64 },
}

#[derive(Clone, Debug)]
pub struct WeightMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: WeightInit,
    /// Marks 1x1 weights created through `net::parameter` so training
    /// history can report identified values by name.
    pub is_parameter: bool,
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("variable `{0}` is already defined in this graph")]
    DuplicateVariableName(String),
    #[error("`{kind}` expects {expected} operands, got {got}")]
    ArityMismatch {
        kind: OpKind,
        expected: usize,
        got: usize,
    },
    #[error("differentiation target is not an input variable")]
    NotAVariable,
    #[error("no binding for variable `{0}`")]
    MissingBinding(String),
    #[error("weight `{0}` is missing from the store")]
    MissingWeight(String),
    #[error("non-finite value produced by `{node}` at sample {sample}")]
    NonFiniteValue { node: String, sample: usize },
    #[error("expression does not belong to this graph")]
    GraphMismatch,
    #[error("width mismatch: {0}")]
    WidthMismatch(String),
    #[error("binding for `{name}` has length {got}, expected {expected}")]
    LengthMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("batch has no samples")]
    EmptyBatch,
    #[error("expression is not a per-sample scalar")]
    NotScalar,
    #[error("pow exponent must be a constant expression")]
    NonConstExponent,
}

/// Values and trainability flags for every weight registered on a graph.
///
/// The store is separate from the graph so that evaluation stays read-only
/// and several stores (e.g. saved checkpoints) can serve one graph.
#[derive(Clone)]
pub struct WeightStore {
    tensors: Vec<Array2<f64>>,
    trainable: Vec<bool>,
}

impl WeightStore {
    /// Materialize initial values for all weights currently registered.
    pub fn initialize(graph: &Graph) -> Self {
        let mut store = WeightStore {
            tensors: Vec::new(),
            trainable: Vec::new(),
        };
        store.sync(graph);
        store
    }

    /// Append freshly initialized tensors for weights registered after this
    /// store was created. Existing tensors are untouched.
    pub fn sync(&mut self, graph: &Graph) {
        use rand::Rng;
        use rand::SeedableRng;
        for meta in graph.weights.iter().skip(self.tensors.len()) {
            let tensor = match meta.init {
                WeightInit::Zeros => Array2::zeros((meta.rows, meta.cols)),
                WeightInit::Const(c) => Array2::from_elem((meta.rows, meta.cols), c),
                WeightInit::GlorotUniform { seed } => {
                    let limit = (6.0 / (meta.rows + meta.cols) as f64).sqrt();
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                    Array2::from_shape_fn((meta.rows, meta.cols), |_| {
                        rng.random_range(-limit..limit)
                    })
                }
            };
            self.tensors.push(tensor);
            self.trainable.push(true);
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, id: WeightId) -> &Array2<f64> {
        &self.tensors[id.index()]
    }

    pub fn tensor_mut(&mut self, id: WeightId) -> &mut Array2<f64> {
        &mut self.tensors[id.index()]
    }

    pub fn set_tensor(&mut self, id: WeightId, value: Array2<f64>) -> Result<()> {
        let old = &self.tensors[id.index()];
        if old.dim() != value.dim() {
            return Err(GraphError::WidthMismatch(format!(
                "weight tensor expects {:?}, got {:?}",
                old.dim(),
                value.dim()
            )));
        }
        self.tensors[id.index()] = value;
        Ok(())
    }

    pub fn is_trainable(&self, id: WeightId) -> bool {
        self.trainable[id.index()]
    }

    pub fn set_trainable(&mut self, id: WeightId, flag: bool) {
        self.trainable[id.index()] = flag;
    }

    /// Scalar accessor for 1x1 weights (parameters).
    pub fn scalar(&self, id: WeightId) -> f64 {
        self.tensors[id.index()][[0, 0]]
    }

    pub fn set_scalar(&mut self, id: WeightId, value: f64) {
        self.tensors[id.index()][[0, 0]] = value;
    }
}

/// Append-only DAG of expression nodes plus weight metadata.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    intern: HashMap<Key, ExprId>,
    var_names: Vec<String>,
    var_ids: HashMap<String, ExprId>,
    weights: Vec<WeightMeta>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn width(&self, expr: ExprId) -> u32 {
        self.nodes[expr.0 as usize].width
    }

    pub(crate) fn node(&self, expr: ExprId) -> &Node {
        &self.nodes[expr.0 as usize]
    }

    pub(crate) fn weight_meta(&self, id: WeightId) -> &WeightMeta {
        &self.weights[id.index()]
    }

    pub fn weight_metas(&self) -> &[WeightMeta] {
        &self.weights
    }

    pub fn contains(&self, expr: ExprId) -> bool {
        (expr.0 as usize) < self.nodes.len()
    }

    fn push(&mut self, op: Op, width: u32) -> ExprId {
        let key = key_of(&op);
        if let Some(&id) = self.intern.get(&key) {
            return id;
        }
        let id = ExprId(self.nodes.len() as u32);
        self.nodes.push(Node { op, width });
        self.intern.insert(key, id);
        id
    }

    fn const_value(&self, expr: ExprId) -> Option<f64> {
        match self.node(expr).op {
            Op::Const(c) => Some(c),
            _ => None,
        }
    }

    fn is_const(&self, expr: ExprId, value: f64) -> bool {
        self.const_value(expr) == Some(value)
    }

    // ---- node constructors -------------------------------------------------

    /// Define a named input variable.
    pub fn variable(&mut self, name: &str) -> Result<ExprId> {
        if self.var_ids.contains_key(name) {
            return Err(GraphError::DuplicateVariableName(name.to_string()));
        }
        let index = self.var_names.len() as u32;
        self.var_names.push(name.to_string());
        let id = self.push(Op::Var(index), 1);
        self.var_ids.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn variable_id(&self, name: &str) -> Option<ExprId> {
        self.var_ids.get(name).copied()
    }

    pub fn variable_name(&self, expr: ExprId) -> Option<&str> {
        match self.node(expr).op {
            Op::Var(i) => Some(&self.var_names[i as usize]),
            _ => None,
        }
    }

    pub fn constant(&mut self, value: f64) -> ExprId {
        self.push(Op::Const(value), 1)
    }

    /// Register a weight tensor; values live in a [`WeightStore`].
    pub fn register_weight(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: WeightInit,
    ) -> WeightId {
        self.register_weight_meta(WeightMeta {
            name: name.to_string(),
            rows,
            cols,
            init,
            is_parameter: false,
        })
    }

    pub(crate) fn register_weight_meta(&mut self, meta: WeightMeta) -> WeightId {
        let id = WeightId(self.weights.len() as u32);
        self.weights.push(meta);
        id
    }

    /// Broadcast a 1x1 weight over the batch.
    pub fn weight_node(&mut self, id: WeightId) -> ExprId {
        debug_assert_eq!((self.weights[id.index()].rows, self.weights[id.index()].cols), (1, 1));
        self.push(Op::Weight(id), 1)
    }

    pub fn unary(&mut self, kind: UnaryOp, arg: ExprId) -> ExprId {
        if let Some(c) = self.const_value(arg) {
            return self.constant(apply_unary(kind, c));
        }
        if kind == UnaryOp::Neg {
            if let Op::Unary(UnaryOp::Neg, inner) = self.node(arg).op {
                return inner;
            }
        }
        let width = self.width(arg);
        self.push(Op::Unary(kind, arg), width)
    }

    pub fn binary(&mut self, kind: BinaryOp, lhs: ExprId, rhs: ExprId) -> ExprId {
        if let (Some(a), Some(b)) = (self.const_value(lhs), self.const_value(rhs)) {
            return self.constant(apply_binary(kind, a, b));
        }
        match kind {
            BinaryOp::Add => {
                if self.is_const(lhs, 0.0) {
                    return rhs;
                }
                if self.is_const(rhs, 0.0) {
                    return lhs;
                }
            }
            BinaryOp::Sub => {
                if self.is_const(rhs, 0.0) {
                    return lhs;
                }
                if lhs == rhs {
                    return self.constant(0.0);
                }
                if self.is_const(lhs, 0.0) {
                    return self.unary(UnaryOp::Neg, rhs);
                }
            }
            BinaryOp::Mul => {
                if self.is_const(lhs, 0.0) || self.is_const(rhs, 0.0) {
                    return self.constant(0.0);
                }
                if self.is_const(lhs, 1.0) {
                    return rhs;
                }
                if self.is_const(rhs, 1.0) {
                    return lhs;
                }
                if self.is_const(lhs, -1.0) {
                    return self.unary(UnaryOp::Neg, rhs);
                }
                if self.is_const(rhs, -1.0) {
                    return self.unary(UnaryOp::Neg, lhs);
                }
            }
            BinaryOp::Div => {
                if self.is_const(rhs, 1.0) {
                    return lhs;
                }
                if self.is_const(lhs, 0.0) {
                    return self.constant(0.0);
                }
            }
        }
        // Canonical operand order for commutative ops improves sharing.
        let (lhs, rhs) = match kind {
            BinaryOp::Add | BinaryOp::Mul if lhs.0 > rhs.0 => (rhs, lhs),
            _ => (lhs, rhs),
        };
        let (wl, wr) = (self.width(lhs), self.width(rhs));
        let width = if wl == wr {
            wl
        } else if wl == 1 {
            wr
        } else if wr == 1 {
            wl
        } else {
            // Construction sites control widths; mixing distinct vector
            // widths is a programming error, not a data error.
            panic!("binary op on incompatible widths {wl} and {wr}");
        };
        self.push(Op::Binary(kind, lhs, rhs), width)
    }

    pub fn add(&mut self, a: ExprId, b: ExprId) -> ExprId {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: ExprId, b: ExprId) -> ExprId {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: ExprId, b: ExprId) -> ExprId {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: ExprId, b: ExprId) -> ExprId {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn neg(&mut self, a: ExprId) -> ExprId {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn sin(&mut self, a: ExprId) -> ExprId {
        self.unary(UnaryOp::Sin, a)
    }

    pub fn cos(&mut self, a: ExprId) -> ExprId {
        self.unary(UnaryOp::Cos, a)
    }

    pub fn tanh(&mut self, a: ExprId) -> ExprId {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: ExprId) -> ExprId {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn relu(&mut self, a: ExprId) -> ExprId {
        self.unary(UnaryOp::Relu, a)
    }

    /// Square root; the construction site must guarantee a non-negative
    /// operand (checked during debug-mode evaluation).
    pub fn sqrt(&mut self, a: ExprId) -> ExprId {
        self.unary(UnaryOp::Sqrt, a)
    }

    pub fn sign(&mut self, a: ExprId) -> ExprId {
        self.unary(UnaryOp::Sign, a)
    }

    pub fn abs(&mut self, a: ExprId) -> ExprId {
        self.unary(UnaryOp::Abs, a)
    }

    /// Elementwise power with constant exponent.
    pub fn powf(&mut self, base: ExprId, exponent: f64) -> ExprId {
        if exponent == 1.0 {
            return base;
        }
        if exponent == 0.0 {
            return self.constant(1.0);
        }
        if let Some(c) = self.const_value(base) {
            return self.constant(c.powf(exponent));
        }
        let width = self.width(base);
        self.push(Op::Pow(base, exponent), width)
    }

    /// Convenience: `a - b` squared, the usual residual building block.
    pub fn square(&mut self, a: ExprId) -> ExprId {
        self.powf(a, 2.0)
    }

    /// Generic entry point by operation tag. `Pow` expects its exponent as a
    /// constant second operand.
    pub fn apply(&mut self, kind: OpKind, operands: &[ExprId]) -> Result<ExprId> {
        let expected = kind.arity();
        if operands.len() != expected {
            return Err(GraphError::ArityMismatch {
                kind,
                expected,
                got: operands.len(),
            });
        }
        Ok(match kind {
            OpKind::Add => self.add(operands[0], operands[1]),
            OpKind::Sub => self.sub(operands[0], operands[1]),
            OpKind::Mul => self.mul(operands[0], operands[1]),
            OpKind::Div => self.div(operands[0], operands[1]),
            OpKind::Pow => {
                let p = self
                    .const_value(operands[1])
                    .ok_or(GraphError::NonConstExponent)?;
                self.powf(operands[0], p)
            }
            OpKind::Neg => self.neg(operands[0]),
            OpKind::Sin => self.sin(operands[0]),
            OpKind::Cos => self.cos(operands[0]),
            OpKind::Tanh => self.tanh(operands[0]),
            OpKind::Sigmoid => self.sigmoid(operands[0]),
            OpKind::Relu => self.relu(operands[0]),
            OpKind::Sqrt => self.sqrt(operands[0]),
            OpKind::Sign => self.sign(operands[0]),
            OpKind::Abs => self.abs(operands[0]),
        })
    }

    /// Per-sample affine transform `W * arg + b`.
    pub fn affine(&mut self, w: WeightId, b: Option<WeightId>, arg: ExprId) -> Result<ExprId> {
        let meta = &self.weights[w.index()];
        let (rows, cols) = (meta.rows, meta.cols);
        let arg_width = self.width(arg) as usize;
        if cols != arg_width {
            return Err(GraphError::WidthMismatch(format!(
                "affine `{}` expects input width {}, got {}",
                meta.name, cols, arg_width
            )));
        }
        if let Some(bid) = b {
            let bm = &self.weights[bid.index()];
            if bm.rows != rows || bm.cols != 1 {
                return Err(GraphError::WidthMismatch(format!(
                    "bias `{}` must be {}x1, got {}x{}",
                    bm.name, rows, bm.rows, bm.cols
                )));
            }
        }
        // A zero input with no bias is identically zero.
        if b.is_none() && self.is_const(arg, 0.0) {
            return Ok(self.constant(0.0));
        }
        Ok(self.push(Op::Affine { w, b, arg }, rows as u32))
    }

    /// Juxtapose width-1 expressions into one vector expression.
    pub fn concat(&mut self, parts: &[ExprId]) -> ExprId {
        assert!(!parts.is_empty(), "concat of zero expressions");
        for &p in parts {
            assert_eq!(self.width(p), 1, "concat parts must be per-sample scalars");
        }
        if parts.len() == 1 {
            return parts[0];
        }
        self.push(Op::Concat(parts.to_vec()), parts.len() as u32)
    }

    /// Scalar component `index` of a vector expression.
    pub fn extract(&mut self, arg: ExprId, index: usize) -> ExprId {
        let w = self.width(arg) as usize;
        assert!(index < w, "extract index {index} out of width {w}");
        if w == 1 {
            return arg;
        }
        if self.is_const(arg, 0.0) {
            return self.constant(0.0);
        }
        self.push(Op::Extract(arg, index as u32), 1)
    }

    // ---- differentiation ---------------------------------------------------

    /// Symbolic derivative of order `order` with respect to input variable
    /// `var`. The result is a new expression in the same graph, so it can be
    /// differentiated again and weight gradients flow through it.
    pub fn diff(&mut self, expr: ExprId, var: ExprId, order: u32) -> Result<ExprId> {
        if !matches!(self.node(var).op, Op::Var(_)) {
            return Err(GraphError::NotAVariable);
        }
        assert!(order >= 1, "derivative order must be at least 1");
        let mut current = expr;
        for _ in 0..order {
            current = self.derive_once(current, var);
        }
        Ok(current)
    }

    fn derive_once(&mut self, expr: ExprId, var: ExprId) -> ExprId {
        let mut memo: HashMap<ExprId, ExprId> = HashMap::new();
        // Nodes only reference earlier nodes, so a forward sweep over the
        // reachable set visits operands before users.
        let reachable = self.reachable_sorted(&[expr]);
        for id in reachable {
            let d = self.derive_node(id, var, &memo);
            memo.insert(id, d);
        }
        memo[&expr]
    }

    fn derive_node(&mut self, id: ExprId, var: ExprId, memo: &HashMap<ExprId, ExprId>) -> ExprId {
        let op = self.node(id).op.clone();
        match op {
            Op::Var(_) => {
                if id == var {
                    self.constant(1.0)
                } else {
                    self.constant(0.0)
                }
            }
            Op::Const(_) | Op::Weight(_) => self.constant(0.0),
            Op::Unary(kind, a) => {
                let da = memo[&a];
                if self.is_const(da, 0.0) {
                    return self.constant(0.0);
                }
                match kind {
                    UnaryOp::Neg => self.neg(da),
                    UnaryOp::Sin => {
                        let c = self.cos(a);
                        self.mul(c, da)
                    }
                    UnaryOp::Cos => {
                        let s = self.sin(a);
                        let m = self.mul(s, da);
                        self.neg(m)
                    }
                    UnaryOp::Tanh => {
                        let t = self.tanh(a);
                        let t2 = self.mul(t, t);
                        let one = self.constant(1.0);
                        let f = self.sub(one, t2);
                        self.mul(f, da)
                    }
                    UnaryOp::Sigmoid => {
                        let s = self.sigmoid(a);
                        let one = self.constant(1.0);
                        let om = self.sub(one, s);
                        let f = self.mul(s, om);
                        self.mul(f, da)
                    }
                    UnaryOp::Relu => {
                        // (sign(x) + sign(x)^2) / 2: 1 for x > 0, 0 at 0 and below.
                        let sg = self.sign(a);
                        let sg2 = self.mul(sg, sg);
                        let sum = self.add(sg, sg2);
                        let half = self.constant(0.5);
                        let f = self.mul(half, sum);
                        self.mul(f, da)
                    }
                    UnaryOp::Sqrt => {
                        let r = self.sqrt(a);
                        let two = self.constant(2.0);
                        let denom = self.mul(two, r);
                        self.div(da, denom)
                    }
                    UnaryOp::Sign => self.constant(0.0),
                    UnaryOp::Abs => {
                        let sg = self.sign(a);
                        self.mul(sg, da)
                    }
                }
            }
            Op::Binary(kind, a, b) => {
                let (da, db) = (memo[&a], memo[&b]);
                match kind {
                    BinaryOp::Add => self.add(da, db),
                    BinaryOp::Sub => self.sub(da, db),
                    BinaryOp::Mul => {
                        let l = self.mul(da, b);
                        let r = self.mul(a, db);
                        self.add(l, r)
                    }
                    BinaryOp::Div => {
                        let l = self.mul(da, b);
                        let r = self.mul(a, db);
                        let num = self.sub(l, r);
                        let den = self.mul(b, b);
                        self.div(num, den)
                    }
                }
            }
            Op::Pow(a, p) => {
                let da = memo[&a];
                if self.is_const(da, 0.0) {
                    return self.constant(0.0);
                }
                let coeff = self.constant(p);
                let inner = self.powf(a, p - 1.0);
                let f = self.mul(coeff, inner);
                self.mul(f, da)
            }
            Op::Affine { w, b: _, arg } => {
                let da = memo[&arg];
                if self.is_const(da, 0.0) {
                    return self.constant(0.0);
                }
                // Bias drops; weights are constant w.r.t. input variables.
                self.affine(w, None, da)
                    .expect("derivative affine has the same widths")
            }
            Op::Concat(parts) => {
                let dparts: Vec<ExprId> = parts.iter().map(|p| memo[p]).collect();
                if dparts.iter().all(|d| self.is_const(*d, 0.0)) {
                    return self.constant(0.0);
                }
                self.concat(&dparts)
            }
            Op::Extract(a, i) => {
                let da = memo[&a];
                if self.is_const(da, 0.0) {
                    return self.constant(0.0);
                }
                self.extract(da, i as usize)
            }
        }
    }

    /// Reachable node ids from `roots`, ascending (operands before users).
    pub(crate) fn reachable_sorted(&self, roots: &[ExprId]) -> Vec<ExprId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<ExprId> = roots.to_vec();
        while let Some(id) = stack.pop() {
            if seen[id.0 as usize] {
                continue;
            }
            seen[id.0 as usize] = true;
            match &self.node(id).op {
                Op::Unary(_, a) | Op::Pow(a, _) | Op::Extract(a, _) => stack.push(*a),
                Op::Binary(_, a, b) => {
                    stack.push(*a);
                    stack.push(*b);
                }
                Op::Affine { arg, .. } => stack.push(*arg),
                Op::Concat(parts) => stack.extend(parts.iter().copied()),
                Op::Var(_) | Op::Const(_) | Op::Weight(_) => {}
            }
        }
        (0..self.nodes.len() as u32)
            .map(ExprId)
            .filter(|id| seen[id.0 as usize])
            .collect()
    }

    /// Short human-readable description of a node, for error messages.
    pub(crate) fn describe(&self, id: ExprId) -> String {
        match &self.node(id).op {
            Op::Var(i) => format!("var {}", self.var_names[*i as usize]),
            Op::Const(c) => format!("const {c}"),
            Op::Weight(w) => format!("weight {}", self.weights[w.index()].name),
            Op::Unary(k, _) => format!("{k:?}"),
            Op::Binary(k, _, _) => format!("{k:?}"),
            Op::Pow(_, p) => format!("Pow({p})"),
            Op::Affine { w, .. } => format!("Affine({})", self.weights[w.index()].name),
            Op::Concat(_) => "Concat".to_string(),
            Op::Extract(_, i) => format!("Extract({i})"),
        }
    }
}

pub(crate) fn apply_unary(kind: UnaryOp, x: f64) -> f64 {
    match kind {
        UnaryOp::Neg => -x,
        UnaryOp::Sin => x.sin(),
        UnaryOp::Cos => x.cos(),
        UnaryOp::Tanh => x.tanh(),
        UnaryOp::Sigmoid => sigmoid(x),
        UnaryOp::Relu => x.max(0.0),
        UnaryOp::Sqrt => x.sqrt(),
        UnaryOp::Sign => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryOp::Abs => x.abs(),
    }
}

pub(crate) fn apply_binary(kind: BinaryOp, a: f64, b: f64) -> f64 {
    match kind {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a / b,
    }
}

/// Standard logistic 1 / (1 + exp(-x)), computed without large exponentials.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests;
