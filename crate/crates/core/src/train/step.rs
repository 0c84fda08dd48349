//! One optimizer step: two-phase chunked forward/backward over a mini-batch.
//!
//! Phase A runs the forward program per chunk (in parallel) and keeps the
//! value arenas; after per-target losses and seed factors are known, phase B
//! replays the chunks backwards to accumulate weight gradients. Chunk
//! results are merged in chunk order, so steps are bit-deterministic.

use super::{Binding, LossKind, OptimizerKind, Reduction, Result, SciModel};
use crate::graph::{Graph, Program, WeightStore};
use crate::graph::{AdjointMask, GradAccum};
use rayon::prelude::*;
use std::collections::HashMap;

pub(crate) struct StepStats {
    pub total: f64,
    pub per_target: Vec<f64>,
    pub empty_masks: u32,
}

struct ChunkWork {
    values: Vec<f64>,
    residuals: Vec<Vec<f64>>,
    start: usize,
    len: usize,
}

pub(crate) struct StepEngine<'a> {
    graph: &'a Graph,
    model: &'a SciModel,
    program: &'a Program,
    columns: &'a [Vec<f64>],
    col_of_var: HashMap<String, usize>,
    n_total: usize,
    mask: AdjointMask,
    opt_state: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    check_finite: bool,
}

impl<'a> StepEngine<'a> {
    pub fn new(
        graph: &'a Graph,
        store: &WeightStore,
        model: &'a SciModel,
        program: &'a Program,
        var_names: &'a [String],
        columns: &'a [Vec<f64>],
        n_total: usize,
    ) -> Self {
        let col_of_var = var_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        StepEngine {
            graph,
            model,
            program,
            columns,
            col_of_var,
            n_total,
            mask: program.adjoint_mask(store),
            opt_state: (0..graph.weight_metas().len()).map(|_| None).collect(),
            // Divergence is caught by the per-step loss check; per-node
            // scanning here would cost ~20% of training throughput.
            check_finite: false,
        }
    }

    pub fn step(
        &mut self,
        store: &mut WeightStore,
        batch_idx: &[usize],
        lr: f64,
        t: u64,
    ) -> Result<StepStats> {
        let blen = batch_idx.len();
        let n_targets = self.model.targets.len();

        // Active-sample masks and counts for id-restricted data targets.
        let mut active: Vec<Option<Vec<bool>>> = Vec::with_capacity(n_targets);
        let mut m_counts: Vec<usize> = Vec::with_capacity(n_targets);
        let mut empty_masks = 0u32;
        for target in &self.model.targets {
            match &target.binding {
                Binding::Masked(map) => {
                    let flags: Vec<bool> =
                        batch_idx.iter().map(|g| map.contains_key(g)).collect();
                    let m = flags.iter().filter(|f| **f).count();
                    if m == 0 {
                        empty_masks += 1;
                    }
                    active.push(Some(flags));
                    m_counts.push(m);
                }
                _ => {
                    active.push(None);
                    m_counts.push(blen);
                }
            }
        }

        // Phase A: forward every chunk, retaining values and residuals.
        let ranges = crate::graph::chunk_ranges(blen);
        let chunks: Vec<crate::graph::Result<ChunkWork>> = ranges
            .par_iter()
            .map(|&(start, len)| {
                let mut values = Vec::new();
                self.program.forward(
                    store,
                    len,
                    &mut values,
                    &mut |name, out| {
                        let col = &self.columns[self.col_of_var[name]];
                        for (o, s) in out.iter_mut().zip(start..start + len) {
                            *o = col[batch_idx[s]];
                        }
                    },
                    self.check_finite,
                    self.graph,
                )?;
                let mut residuals = Vec::with_capacity(n_targets);
                for (k, target) in self.model.targets.iter().enumerate() {
                    let out = self.program.output_block(&values, len, k);
                    let mut r = vec![0.0; len];
                    match &target.binding {
                        Binding::None => r.copy_from_slice(out),
                        Binding::Full(vals) => {
                            for s in 0..len {
                                r[s] = out[s] - vals[batch_idx[start + s]];
                            }
                        }
                        Binding::Masked(map) => {
                            let flags = active[k].as_ref().unwrap();
                            for s in 0..len {
                                if flags[start + s] {
                                    r[s] = out[s] - map[&batch_idx[start + s]];
                                }
                            }
                        }
                    }
                    residuals.push(r);
                }
                Ok(ChunkWork {
                    values,
                    residuals,
                    start,
                    len,
                })
            })
            .collect();
        let chunks: Vec<ChunkWork> = chunks.into_iter().collect::<crate::graph::Result<_>>()?;

        // Per-target reductions over the whole batch.
        let mut per_target = vec![0.0; n_targets];
        let mut integral_sums = vec![0.0; n_targets];
        for (k, target) in self.model.targets.iter().enumerate() {
            let m = m_counts[k];
            match target.reduction {
                Reduction::PerSample => {
                    if m == 0 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for c in &chunks {
                        let flags = active[k].as_ref();
                        for (s, r) in c.residuals[k].iter().enumerate() {
                            if flags.map(|f| f[c.start + s]).unwrap_or(true) {
                                acc += match self.model.loss_kind {
                                    LossKind::Mse => r * r,
                                    LossKind::Mae => r.abs(),
                                };
                            }
                        }
                    }
                    per_target[k] = acc / m as f64;
                }
                Reduction::SumSquared => {
                    let scale = self.n_total as f64 / blen as f64;
                    let mut sum = 0.0;
                    for c in &chunks {
                        sum += c.residuals[k].iter().sum::<f64>();
                    }
                    let integral = scale * sum;
                    integral_sums[k] = integral;
                    per_target[k] = integral * integral;
                }
            }
        }
        let total: f64 = per_target
            .iter()
            .zip(&self.model.targets)
            .map(|(l, t)| l * t.weight)
            .sum();

        // Phase B: seed adjoints per target and replay chunks backwards.
        let grads: Vec<GradAccum> = chunks
            .par_iter()
            .map(|c| {
                let mut seeds: Vec<Vec<f64>> = Vec::with_capacity(n_targets);
                for (k, target) in self.model.targets.iter().enumerate() {
                    let m = m_counts[k];
                    let mut seed = vec![0.0; c.len];
                    match target.reduction {
                        Reduction::PerSample => {
                            if m > 0 {
                                let factor = target.weight / m as f64;
                                let flags = active[k].as_ref();
                                for (s, r) in c.residuals[k].iter().enumerate() {
                                    if flags.map(|f| f[c.start + s]).unwrap_or(true) {
                                        seed[s] = match self.model.loss_kind {
                                            LossKind::Mse => 2.0 * factor * r,
                                            LossKind::Mae => factor * r.signum_zero(),
                                        };
                                    }
                                }
                            }
                        }
                        Reduction::SumSquared => {
                            let scale = self.n_total as f64 / blen as f64;
                            let factor = 2.0 * target.weight * integral_sums[k] * scale;
                            seed.fill(factor);
                        }
                    }
                    seeds.push(seed);
                }
                let seed_refs: Vec<(usize, &[f64])> = seeds
                    .iter()
                    .enumerate()
                    .map(|(k, s)| (k, s.as_slice()))
                    .collect();
                let mut adj = Vec::new();
                let mut accum = GradAccum::new(self.opt_state.len());
                self.program.backward(
                    store,
                    &c.values,
                    c.len,
                    &seed_refs,
                    &self.mask,
                    &mut adj,
                    &mut accum,
                );
                accum
            })
            .collect();
        let mut total_grads = GradAccum::new(self.opt_state.len());
        for g in grads {
            total_grads.merge(g);
        }

        // Optimizer update, in weight-id order.
        for (idx, grad) in total_grads.by_id.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let id = crate::graph::WeightId(idx as u32);
            if !store.is_trainable(id) {
                continue;
            }
            let tensor = store.tensor_mut(id);
            let flat = tensor.as_slice_mut().expect("weights are contiguous");
            match self.model.optimizer.kind {
                OptimizerKind::Adam(params) => {
                    let (m, v) = self.opt_state[idx]
                        .get_or_insert_with(|| (vec![0.0; flat.len()], vec![0.0; flat.len()]));
                    super::adam_step(flat, grad, m, v, t, &params, lr);
                }
                OptimizerKind::Sgd => super::sgd_step(flat, grad, lr),
            }
        }

        Ok(StepStats {
            total,
            per_target,
            empty_masks,
        })
    }
}

trait SignumZero {
    fn signum_zero(&self) -> f64;
}

impl SignumZero for f64 {
    /// signum with sign(0) = 0, matching the graph's `Sign` op.
    fn signum_zero(&self) -> f64 {
        if *self > 0.0 {
            1.0
        } else if *self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}
