//! Batched forward evaluation.
//!
//! Evaluation compiles the reachable subgraph into a flat program (node ids
//! resolved to dense slot indices with precomputed buffer offsets), then
//! runs it over the batch in fixed-size chunks. Chunks are independent, so
//! they run in parallel; results are stitched back in chunk order, which
//! keeps evaluation bit-deterministic regardless of thread count.

use super::{
    apply_binary, apply_unary, sigmoid, BinaryOp, ExprId, Graph, GraphError, Op, Result, UnaryOp,
    WeightId, WeightStore,
};
use indexmap::IndexMap;
use ndarray::{ArrayView2, ArrayViewMut2};
use rayon::prelude::*;
use std::collections::HashMap;

/// Fixed chunk length for batched execution. Constant (rather than derived
/// from the thread count) so results do not depend on the machine's
/// parallelism.
pub(crate) const CHUNK: usize = 64;

/// Columns of input-variable values, keyed by variable name.
#[derive(Clone, Default)]
pub struct EvalBatch {
    cols: IndexMap<String, Vec<f64>>,
}

impl EvalBatch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builder-style bind; replaces any previous binding of `name`.
    pub fn bind(mut self, name: &str, col: impl Into<Vec<f64>>) -> Self {
        self.cols.insert(name.to_string(), col.into());
        self
    }

    pub fn insert(&mut self, name: &str, col: impl Into<Vec<f64>>) {
        self.cols.insert(name.to_string(), col.into());
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.cols.get(name).map(|c| c.as_slice())
    }

    /// Sample count; validates that all bound columns agree.
    pub fn len_checked(&self) -> Result<usize> {
        let mut n = None;
        for (name, col) in &self.cols {
            match n {
                None => n = Some(col.len()),
                Some(expected) if expected != col.len() => {
                    return Err(GraphError::LengthMismatch {
                        name: name.clone(),
                        got: col.len(),
                        expected,
                    })
                }
                _ => {}
            }
        }
        let n = n.ok_or(GraphError::EmptyBatch)?;
        if n == 0 {
            return Err(GraphError::EmptyBatch);
        }
        Ok(n)
    }
}

#[derive(Clone, Copy)]
pub struct EvalOptions {
    /// Scan every node's output for NaN/Inf. Defaults to on in debug
    /// builds, off in release (costs ~20% throughput).
    pub check_finite: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            check_finite: cfg!(debug_assertions),
        }
    }
}

/// Program instruction with operands resolved to program slots.
#[derive(Clone, Debug)]
pub(crate) enum Instr {
    /// Index into `Program::var_slots`.
    Var(u32),
    Const(f64),
    Weight(WeightId),
    Unary(UnaryOp, u32),
    Binary(BinaryOp, u32, u32),
    Pow(u32, f64),
    Affine {
        w: WeightId,
        b: Option<WeightId>,
        arg: u32,
    },
    Concat(Vec<u32>),
    Extract(u32, u32),
}

pub(crate) struct Slot {
    pub instr: Instr,
    pub width: usize,
    /// Offset of this slot's block in width units; the block for a chunk of
    /// length `len` is `values[off * len .. (off + width) * len]`.
    pub off: usize,
    /// Original node id (for error messages).
    pub id: ExprId,
}

/// Reachable subgraph flattened for execution.
pub(crate) struct Program {
    pub slots: Vec<Slot>,
    pub outputs: Vec<u32>,
    pub total_width: usize,
    /// (slot, variable name) pairs that must be fed per batch.
    pub var_slots: Vec<(u32, String)>,
}

impl Program {
    pub fn compile(graph: &Graph, outputs: &[ExprId]) -> Result<Program> {
        for &o in outputs {
            if !graph.contains(o) {
                return Err(GraphError::GraphMismatch);
            }
        }
        let order = graph.reachable_sorted(outputs);
        let mut slot_of: HashMap<ExprId, u32> = HashMap::with_capacity(order.len());
        let mut slots = Vec::with_capacity(order.len());
        let mut var_slots = Vec::new();
        let mut off = 0usize;
        for (i, id) in order.iter().enumerate() {
            let node = graph.node(*id);
            let s = |e: &ExprId| slot_of[e];
            let instr = match &node.op {
                Op::Var(_) => {
                    let var_index = var_slots.len() as u32;
                    var_slots.push((i as u32, graph.variable_name(*id).unwrap().to_string()));
                    Instr::Var(var_index)
                }
                Op::Const(c) => Instr::Const(*c),
                Op::Weight(w) => Instr::Weight(*w),
                Op::Unary(k, a) => Instr::Unary(*k, s(a)),
                Op::Binary(k, a, b) => Instr::Binary(*k, s(a), s(b)),
                Op::Pow(a, p) => Instr::Pow(s(a), *p),
                Op::Affine { w, b, arg } => Instr::Affine {
                    w: *w,
                    b: *b,
                    arg: s(arg),
                },
                Op::Concat(parts) => Instr::Concat(parts.iter().map(|p| slot_of[p]).collect()),
                Op::Extract(a, idx) => Instr::Extract(s(a), *idx),
            };
            slot_of.insert(*id, i as u32);
            let width = node.width as usize;
            slots.push(Slot {
                instr,
                width,
                off,
                id: *id,
            });
            off += width;
        }
        Ok(Program {
            slots,
            outputs: outputs.iter().map(|o| slot_of[o]).collect(),
            total_width: off,
            var_slots,
        })
    }

    /// Check bindings and weight availability up front so chunk workers
    /// cannot fail on missing data.
    pub fn validate(&self, graph: &Graph, batch: &EvalBatch, store: &WeightStore) -> Result<usize> {
        let n = batch.len_checked()?;
        for (_, name) in &self.var_slots {
            if batch.column(name).is_none() {
                return Err(GraphError::MissingBinding(name.clone()));
            }
        }
        for slot in &self.slots {
            let ids: [Option<WeightId>; 2] = match &slot.instr {
                Instr::Weight(w) => [Some(*w), None],
                Instr::Affine { w, b, .. } => [Some(*w), *b],
                _ => [None, None],
            };
            for id in ids.into_iter().flatten() {
                if id.index() >= store.len() {
                    return Err(GraphError::MissingWeight(
                        graph.weight_meta(id).name.clone(),
                    ));
                }
                let meta = graph.weight_meta(id);
                let dim = store.tensor(id).dim();
                if dim != (meta.rows, meta.cols) {
                    return Err(GraphError::WidthMismatch(format!(
                        "weight `{}` expects {}x{}, store has {}x{}",
                        meta.name, meta.rows, meta.cols, dim.0, dim.1
                    )));
                }
            }
        }
        Ok(n)
    }

    /// Forward pass over one chunk. `get_var` fills a slot's buffer with the
    /// chunk's values for a named variable.
    pub fn forward(
        &self,
        store: &WeightStore,
        len: usize,
        values: &mut Vec<f64>,
        get_var: &mut dyn FnMut(&str, &mut [f64]),
        check_finite: bool,
        graph: &Graph,
    ) -> Result<()> {
        values.clear();
        values.resize(self.total_width * len, 0.0);
        for slot in &self.slots {
            let (done, rest) = values.split_at_mut(slot.off * len);
            let out = &mut rest[..slot.width * len];
            let block = |s: u32| {
                let sl = &self.slots[s as usize];
                &done[sl.off * len..(sl.off + sl.width) * len]
            };
            match &slot.instr {
                Instr::Var(v) => {
                    let name = &self.var_slots[*v as usize].1;
                    get_var(name, out);
                }
                Instr::Const(c) => out.fill(*c),
                Instr::Weight(w) => out.fill(store.scalar(*w)),
                Instr::Unary(kind, a) => {
                    let a = block(*a);
                    unary_block(*kind, a, out);
                }
                Instr::Binary(kind, a, b) => {
                    let (wa, wb) = (
                        self.slots[*a as usize].width,
                        self.slots[*b as usize].width,
                    );
                    binary_block(*kind, block(*a), wa, block(*b), wb, out, slot.width, len);
                }
                Instr::Pow(a, p) => {
                    let a = block(*a);
                    if *p == 2.0 {
                        for (o, x) in out.iter_mut().zip(a) {
                            *o = x * x;
                        }
                    } else {
                        for (o, x) in out.iter_mut().zip(a) {
                            *o = x.powf(*p);
                        }
                    }
                }
                Instr::Affine { w, b, arg } => {
                    let arg_slot = &self.slots[*arg as usize];
                    let input = ArrayView2::from_shape(
                        (len, arg_slot.width),
                        block(*arg),
                    )
                    .expect("block shape");
                    let wt = store.tensor(*w);
                    let mut out_view =
                        ArrayViewMut2::from_shape((len, slot.width), out).expect("block shape");
                    ndarray::linalg::general_mat_mul(1.0, &input, &wt.t(), 0.0, &mut out_view);
                    if let Some(bid) = b {
                        let bias = store.tensor(*bid);
                        for s in 0..len {
                            for j in 0..slot.width {
                                out[s * slot.width + j] += bias[[j, 0]];
                            }
                        }
                    }
                }
                Instr::Concat(parts) => {
                    let k = parts.len();
                    for (j, p) in parts.iter().enumerate() {
                        let src = block(*p);
                        for s in 0..len {
                            out[s * k + j] = src[s];
                        }
                    }
                }
                Instr::Extract(a, idx) => {
                    let aw = self.slots[*a as usize].width;
                    let src = block(*a);
                    let idx = *idx as usize;
                    for s in 0..len {
                        out[s] = src[s * aw + idx];
                    }
                }
            }
            if check_finite {
                if let Some(pos) = out.iter().position(|v| !v.is_finite()) {
                    return Err(GraphError::NonFiniteValue {
                        node: graph.describe(slot.id),
                        sample: pos / slot.width,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn output_block<'a>(&self, values: &'a [f64], len: usize, output: usize) -> &'a [f64] {
        let slot = &self.slots[self.outputs[output] as usize];
        &values[slot.off * len..(slot.off + slot.width) * len]
    }
}

fn unary_block(kind: UnaryOp, a: &[f64], out: &mut [f64]) {
    match kind {
        UnaryOp::Neg => {
            for (o, x) in out.iter_mut().zip(a) {
                *o = -x;
            }
        }
        UnaryOp::Tanh => {
            for (o, x) in out.iter_mut().zip(a) {
                *o = x.tanh();
            }
        }
        UnaryOp::Sigmoid => {
            for (o, x) in out.iter_mut().zip(a) {
                *o = sigmoid(*x);
            }
        }
        UnaryOp::Relu => {
            for (o, x) in out.iter_mut().zip(a) {
                *o = x.max(0.0);
            }
        }
        _ => {
            for (o, x) in out.iter_mut().zip(a) {
                *o = apply_unary(kind, *x);
            }
        }
    }
}

fn binary_block(
    kind: BinaryOp,
    a: &[f64],
    wa: usize,
    b: &[f64],
    wb: usize,
    out: &mut [f64],
    w: usize,
    len: usize,
) {
    if wa == wb {
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o = apply_binary(kind, *x, *y);
        }
    } else if wa == 1 {
        for s in 0..len {
            let x = a[s];
            for j in 0..w {
                out[s * w + j] = apply_binary(kind, x, b[s * w + j]);
            }
        }
    } else {
        for s in 0..len {
            let y = b[s];
            for j in 0..w {
                out[s * w + j] = apply_binary(kind, a[s * w + j], y);
            }
        }
    }
}

impl Graph {
    /// Evaluate a per-sample scalar expression over a batch.
    pub fn eval(&self, expr: ExprId, batch: &EvalBatch, store: &WeightStore) -> Result<Vec<f64>> {
        self.eval_with(expr, batch, store, &EvalOptions::default())
    }

    pub fn eval_with(
        &self,
        expr: ExprId,
        batch: &EvalBatch,
        store: &WeightStore,
        opts: &EvalOptions,
    ) -> Result<Vec<f64>> {
        let mut out = self.eval_many(&[expr], batch, store, opts)?;
        Ok(out.pop().unwrap())
    }

    /// Evaluate several per-sample scalar expressions in one pass over the
    /// shared subgraph.
    pub fn eval_many(
        &self,
        exprs: &[ExprId],
        batch: &EvalBatch,
        store: &WeightStore,
        opts: &EvalOptions,
    ) -> Result<Vec<Vec<f64>>> {
        for &e in exprs {
            if self.width(e) != 1 {
                return Err(GraphError::NotScalar);
            }
        }
        let program = Program::compile(self, exprs)?;
        let n = program.validate(self, batch, store)?;
        let ranges: Vec<(usize, usize)> = chunk_ranges(n);
        let chunks: Vec<Result<Vec<Vec<f64>>>> = ranges
            .par_iter()
            .map(|&(start, len)| {
                let mut values = Vec::new();
                program.forward(
                    store,
                    len,
                    &mut values,
                    &mut |name, out| {
                        out.copy_from_slice(&batch.column(name).unwrap()[start..start + len]);
                    },
                    opts.check_finite,
                    self,
                )?;
                Ok((0..exprs.len())
                    .map(|o| program.output_block(&values, len, o).to_vec())
                    .collect())
            })
            .collect();
        let mut outputs: Vec<Vec<f64>> = vec![Vec::with_capacity(n); exprs.len()];
        for chunk in chunks {
            let chunk = chunk?;
            for (o, col) in chunk.into_iter().enumerate() {
                outputs[o].extend_from_slice(&col);
            }
        }
        Ok(outputs)
    }
}

pub(crate) fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    let mut ranges = Vec::with_capacity(n.div_ceil(CHUNK));
    let mut start = 0;
    while start < n {
        let len = CHUNK.min(n - start);
        ranges.push((start, len));
        start += len;
    }
    ranges
}
