//! Reverse-mode accumulation of weight gradients.
//!
//! The forward values of a chunk stay resident while adjoints are pushed
//! backwards through the same program. Subtrees that contain no trainable
//! weight are skipped entirely (frozen networks cost nothing on the
//! backward pass).

use super::eval::{chunk_ranges, Instr, Program};
use super::{BinaryOp, ExprId, Graph, GraphError, Result, UnaryOp, WeightStore};
use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Gradients of a scalar objective with respect to trainable weights.
///
/// Contains one entry per trainable weight tensor reachable from the
/// differentiated expression; frozen weights receive no entry.
#[derive(Debug, Default)]
pub struct GradientMap {
    grads: BTreeMap<super::WeightId, Array2<f64>>,
}

impl GradientMap {
    pub fn get(&self, id: super::WeightId) -> Option<&Array2<f64>> {
        self.grads.get(&id)
    }

    pub fn contains(&self, id: super::WeightId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (super::WeightId, &Array2<f64>)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Per-weight flat gradient accumulators for one backward run.
pub(crate) struct GradAccum {
    pub by_id: Vec<Option<Vec<f64>>>,
}

impl GradAccum {
    pub fn new(n_weights: usize) -> Self {
        GradAccum {
            by_id: (0..n_weights).map(|_| None).collect(),
        }
    }

    fn slot(&mut self, id: super::WeightId, len: usize) -> &mut Vec<f64> {
        self.by_id[id.index()].get_or_insert_with(|| vec![0.0; len])
    }

    /// Merge another accumulator (same layout) into this one.
    pub fn merge(&mut self, other: GradAccum) {
        for (mine, theirs) in self.by_id.iter_mut().zip(other.by_id) {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
                (None, Some(b)) => *mine = Some(b),
                _ => {}
            }
        }
    }
}

/// Which program slots need adjoints, given the store's trainable flags.
pub(crate) struct AdjointMask {
    pub need: Vec<bool>,
}

impl Program {
    /// A slot needs an adjoint iff its subtree contains a trainable weight.
    pub(crate) fn adjoint_mask(&self, store: &WeightStore) -> AdjointMask {
        let mut need = vec![false; self.slots.len()];
        for (i, slot) in self.slots.iter().enumerate() {
            need[i] = match &slot.instr {
                Instr::Weight(w) => store.is_trainable(*w),
                Instr::Affine { w, b, arg } => {
                    store.is_trainable(*w)
                        || b.map(|bid| store.is_trainable(bid)).unwrap_or(false)
                        || need[*arg as usize]
                }
                Instr::Unary(_, a) | Instr::Pow(a, _) | Instr::Extract(a, _) => need[*a as usize],
                Instr::Binary(_, a, b) => need[*a as usize] || need[*b as usize],
                Instr::Concat(parts) => parts.iter().any(|p| need[*p as usize]),
                Instr::Var(_) | Instr::Const(_) => false,
            };
        }
        AdjointMask { need }
    }

    /// Reverse pass over one chunk. `seeds` maps output positions to
    /// per-sample seed columns (chunk-local, width-1 outputs).
    pub(crate) fn backward(
        &self,
        store: &WeightStore,
        values: &[f64],
        len: usize,
        seeds: &[(usize, &[f64])],
        mask: &AdjointMask,
        adj: &mut Vec<f64>,
        accum: &mut GradAccum,
    ) {
        adj.clear();
        adj.resize(self.total_width * len, 0.0);
        for (output, seed) in seeds {
            let slot = &self.slots[self.outputs[*output] as usize];
            debug_assert_eq!(slot.width, 1);
            let block = &mut adj[slot.off * len..(slot.off + 1) * len];
            for (a, s) in block.iter_mut().zip(*seed) {
                *a += s;
            }
        }
        for (i, slot) in self.slots.iter().enumerate().rev() {
            if !mask.need[i] {
                continue;
            }
            let w = slot.width;
            let (lower, rest) = adj.split_at_mut(slot.off * len);
            let adj_i = &rest[..w * len];
            let val = |s: u32| {
                let sl = &self.slots[s as usize];
                &values[sl.off * len..(sl.off + sl.width) * len]
            };
            // Operand blocks always live below this slot's offset.
            let adj_of = |s: u32| -> std::ops::Range<usize> {
                let sl = &self.slots[s as usize];
                sl.off * len..(sl.off + sl.width) * len
            };
            match &slot.instr {
                Instr::Var(_) | Instr::Const(_) => {}
                Instr::Weight(id) => {
                    if store.is_trainable(*id) {
                        let g = accum.slot(*id, 1);
                        g[0] += adj_i.iter().sum::<f64>();
                    }
                }
                Instr::Unary(kind, a) => {
                    if !mask.need[*a as usize] {
                        continue;
                    }
                    let range = adj_of(*a);
                    let target = &mut lower[range];
                    let a_vals = val(*a);
                    let out_vals = &values[slot.off * len..(slot.off + w) * len];
                    match kind {
                        UnaryOp::Neg => {
                            for (t, g) in target.iter_mut().zip(adj_i) {
                                *t -= g;
                            }
                        }
                        UnaryOp::Sin => {
                            for ((t, g), x) in target.iter_mut().zip(adj_i).zip(a_vals) {
                                *t += g * x.cos();
                            }
                        }
                        UnaryOp::Cos => {
                            for ((t, g), x) in target.iter_mut().zip(adj_i).zip(a_vals) {
                                *t -= g * x.sin();
                            }
                        }
                        UnaryOp::Tanh => {
                            for ((t, g), y) in target.iter_mut().zip(adj_i).zip(out_vals) {
                                *t += g * (1.0 - y * y);
                            }
                        }
                        UnaryOp::Sigmoid => {
                            for ((t, g), y) in target.iter_mut().zip(adj_i).zip(out_vals) {
                                *t += g * y * (1.0 - y);
                            }
                        }
                        UnaryOp::Relu => {
                            for ((t, g), x) in target.iter_mut().zip(adj_i).zip(a_vals) {
                                if *x > 0.0 {
                                    *t += g;
                                }
                            }
                        }
                        UnaryOp::Sqrt => {
                            for ((t, g), y) in target.iter_mut().zip(adj_i).zip(out_vals) {
                                *t += g / (2.0 * y);
                            }
                        }
                        UnaryOp::Sign => {}
                        UnaryOp::Abs => {
                            for ((t, g), x) in target.iter_mut().zip(adj_i).zip(a_vals) {
                                *t += g * sign_of(*x);
                            }
                        }
                    }
                }
                Instr::Binary(kind, a, b) => {
                    let (wa, wb) = (
                        self.slots[*a as usize].width,
                        self.slots[*b as usize].width,
                    );
                    let (a_vals, b_vals) = (val(*a), val(*b));
                    if mask.need[*a as usize] {
                        let range = adj_of(*a);
                        let target = &mut lower[range];
                        match kind {
                            BinaryOp::Add => acc_into(target, wa, w, len, |s, j| {
                                adj_i[s * w + j]
                            }),
                            BinaryOp::Sub => acc_into(target, wa, w, len, |s, j| {
                                adj_i[s * w + j]
                            }),
                            BinaryOp::Mul => acc_into(target, wa, w, len, |s, j| {
                                adj_i[s * w + j] * bcast(b_vals, wb, s, j)
                            }),
                            BinaryOp::Div => acc_into(target, wa, w, len, |s, j| {
                                adj_i[s * w + j] / bcast(b_vals, wb, s, j)
                            }),
                        }
                    }
                    if mask.need[*b as usize] {
                        let range = adj_of(*b);
                        let target = &mut lower[range];
                        let out_vals = &values[slot.off * len..(slot.off + w) * len];
                        match kind {
                            BinaryOp::Add => acc_into(target, wb, w, len, |s, j| {
                                adj_i[s * w + j]
                            }),
                            BinaryOp::Sub => acc_into(target, wb, w, len, |s, j| {
                                -adj_i[s * w + j]
                            }),
                            BinaryOp::Mul => acc_into(target, wb, w, len, |s, j| {
                                adj_i[s * w + j] * bcast(a_vals, wa, s, j)
                            }),
                            BinaryOp::Div => acc_into(target, wb, w, len, |s, j| {
                                -adj_i[s * w + j] * out_vals[s * w + j]
                                    / bcast(b_vals, wb, s, j)
                            }),
                        }
                    }
                }
                Instr::Pow(a, p) => {
                    if !mask.need[*a as usize] {
                        continue;
                    }
                    let range = adj_of(*a);
                    let target = &mut lower[range];
                    let a_vals = val(*a);
                    if *p == 2.0 {
                        for ((t, g), x) in target.iter_mut().zip(adj_i).zip(a_vals) {
                            *t += g * 2.0 * x;
                        }
                    } else {
                        for ((t, g), x) in target.iter_mut().zip(adj_i).zip(a_vals) {
                            *t += g * p * x.powf(p - 1.0);
                        }
                    }
                }
                Instr::Affine { w: wid, b, arg } => {
                    let arg_slot = &self.slots[*arg as usize];
                    let d_in = arg_slot.width;
                    let adj_view = ArrayView2::from_shape((len, w), adj_i).expect("adj shape");
                    if store.is_trainable(*wid) {
                        let input =
                            ArrayView2::from_shape((len, d_in), val(*arg)).expect("val shape");
                        let gw = accum.slot(*wid, w * d_in);
                        let mut gw_view =
                            ArrayViewMut2::from_shape((w, d_in), gw).expect("grad shape");
                        ndarray::linalg::general_mat_mul(
                            1.0,
                            &adj_view.t(),
                            &input,
                            1.0,
                            &mut gw_view,
                        );
                    }
                    if let Some(bid) = b {
                        if store.is_trainable(*bid) {
                            let gb = accum.slot(*bid, w);
                            for s in 0..len {
                                for j in 0..w {
                                    gb[j] += adj_i[s * w + j];
                                }
                            }
                        }
                    }
                    if mask.need[*arg as usize] {
                        let range = adj_of(*arg);
                        let target = &mut lower[range];
                        let mut target_view =
                            ArrayViewMut2::from_shape((len, d_in), target).expect("adj shape");
                        let wt = store.tensor(*wid);
                        ndarray::linalg::general_mat_mul(
                            1.0,
                            &adj_view,
                            &wt.view(),
                            1.0,
                            &mut target_view,
                        );
                    }
                }
                Instr::Concat(parts) => {
                    let k = parts.len();
                    for (j, p) in parts.iter().enumerate() {
                        if !mask.need[*p as usize] {
                            continue;
                        }
                        let range = adj_of(*p);
                        let target = &mut lower[range];
                        for s in 0..len {
                            target[s] += adj_i[s * k + j];
                        }
                    }
                }
                Instr::Extract(a, idx) => {
                    if !mask.need[*a as usize] {
                        continue;
                    }
                    let wa = self.slots[*a as usize].width;
                    let range = adj_of(*a);
                    let target = &mut lower[range];
                    let idx = *idx as usize;
                    for s in 0..len {
                        target[s * wa + idx] += adj_i[s];
                    }
                }
            }
        }
    }
}

#[inline]
fn sign_of(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn bcast(block: &[f64], wb: usize, s: usize, j: usize) -> f64 {
    if wb == 1 {
        block[s]
    } else {
        block[s * wb + j]
    }
}

/// Accumulate per-lane values into a target of width `wt` (either the full
/// width `w` or 1, in which case lanes are reduced per sample).
#[inline]
fn acc_into(
    target: &mut [f64],
    wt: usize,
    w: usize,
    len: usize,
    mut f: impl FnMut(usize, usize) -> f64,
) {
    if wt == w {
        for s in 0..len {
            for j in 0..w {
                target[s * w + j] += f(s, j);
            }
        }
    } else {
        debug_assert_eq!(wt, 1);
        for s in 0..len {
            let mut acc = 0.0;
            for j in 0..w {
                acc += f(s, j);
            }
            target[s] += acc;
        }
    }
}

impl Graph {
    /// Gradient of the mean over samples of a per-sample scalar loss with
    /// respect to every trainable weight reachable from it.
    pub fn weight_gradients(
        &self,
        loss: ExprId,
        batch: &super::EvalBatch,
        store: &WeightStore,
    ) -> Result<GradientMap> {
        if self.width(loss) != 1 {
            return Err(GraphError::NotScalar);
        }
        let program = Program::compile(self, &[loss])?;
        let n = program.validate(self, batch, store)?;
        let mask = program.adjoint_mask(store);
        let seed = 1.0 / n as f64;
        let check = super::EvalOptions::default().check_finite;
        let ranges = chunk_ranges(n);
        let parts: Vec<Result<GradAccum>> = ranges
            .par_iter()
            .map(|&(start, len)| {
                let mut values = Vec::new();
                let mut adj = Vec::new();
                let mut accum = GradAccum::new(self.weights.len());
                program.forward(
                    store,
                    len,
                    &mut values,
                    &mut |name, out| {
                        out.copy_from_slice(&batch.column(name).unwrap()[start..start + len]);
                    },
                    check,
                    self,
                )?;
                let seeds = vec![seed; len];
                program.backward(store, &values, len, &[(0, &seeds)], &mask, &mut adj, &mut accum);
                Ok(accum)
            })
            .collect();
        let mut total = GradAccum::new(self.weights.len());
        for part in parts {
            total.merge(part?);
        }
        let mut grads = BTreeMap::new();
        for (idx, flat) in total.by_id.into_iter().enumerate() {
            if let Some(flat) = flat {
                let meta = &self.weights[idx];
                let arr = Array2::from_shape_vec((meta.rows, meta.cols), flat)
                    .expect("gradient shape matches weight meta");
                grads.insert(super::WeightId(idx as u32), arr);
            }
        }
        Ok(GradientMap { grads })
    }
}
