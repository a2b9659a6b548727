//! Central finite-difference oracle for [`ModelState::total_loss`].
//!
//! Perturbs one scalar parameter at a time on a cloned model and compares the
//! symmetric difference quotient with the analytic gradient. When a
//! projection basis is supplied, the current block's keys are treated as free
//! parameters seen through `K (I - Q Q^T)`, as during look-ahead training.

use alloc::vec::Vec;

use rand::Rng;

use crate::buffer::Prototype;
use crate::linalg::{self, Matrix};
use crate::model::{LossWeights, ModelState, ParamKey};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub key: ParamKey,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    /// `|a - n| / max(|a|, |n|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Batch, prototypes and loss weights the loss is evaluated on.
pub struct LossInputs<'a> {
    pub inputs: &'a [&'a [f64]],
    pub labels: &'a [usize],
    pub prototypes: &'a [Prototype],
    pub weights: LossWeights,
}

/// Free keys of block `task` seen through the projection off `basis`.
pub struct ProjectedKeys<'a> {
    pub task: usize,
    pub free: &'a Matrix,
    pub basis: &'a Matrix,
}

fn loss_with(model: &ModelState, inputs: &LossInputs<'_>) -> f64 {
    model
        .total_loss(
            inputs.inputs,
            inputs.labels,
            inputs.prototypes,
            inputs.weights,
        )
        .0
}

/// Checks `coords` random coordinates. Keys are chosen uniformly among the
/// trainable tensors, then an entry uniformly within the tensor.
pub fn check_total_loss<R: Rng>(
    model: &ModelState,
    inputs: &LossInputs<'_>,
    projected: Option<ProjectedKeys<'_>>,
    coords: usize,
    step: f64,
    rng: &mut R,
) -> Vec<Probe> {
    let mut base = model.clone();
    if let Some(p) = &projected {
        let keys = linalg::project_onto_complement(p.free, p.basis).expect("conformant");
        base.pool.block_mut(p.task).expect("trainable block").keys = keys;
    }
    let (_, grads) = base.total_loss(
        inputs.inputs,
        inputs.labels,
        inputs.prototypes,
        inputs.weights,
    );
    let tensors: Vec<ParamKey> = grads.tensors.keys().copied().collect();

    let mut probes = Vec::with_capacity(coords);
    for _ in 0..coords {
        let key = tensors[rng.random_range(0..tensors.len())];
        let g = grads.get(key).expect("listed key");
        let index = rng.random_range(0..g.len());
        let (analytic, numeric) = match (&projected, key) {
            (Some(p), ParamKey::Keys(t)) if t == p.task => {
                let gm = Matrix::new(p.free.rows(), p.free.cols(), g.to_vec()).expect("shape");
                let analytic = linalg::project_onto_complement(&gm, p.basis)
                    .expect("conformant")
                    .as_slice()[index];
                let eval = |delta: f64| {
                    let mut free = p.free.clone();
                    free.as_mut_slice()[index] += delta;
                    let mut m = base.clone();
                    m.pool.block_mut(t).expect("trainable").keys =
                        linalg::project_onto_complement(&free, p.basis).expect("conformant");
                    loss_with(&m, inputs)
                };
                (analytic, (eval(step) - eval(-step)) / (2.0 * step))
            }
            _ => {
                let eval = |delta: f64| {
                    let mut m = base.clone();
                    m.param_mut(key).expect("trainable")[index] += delta;
                    loss_with(&m, inputs)
                };
                (g[index], (eval(step) - eval(-step)) / (2.0 * step))
            }
        };
        probes.push(Probe {
            key,
            index,
            analytic,
            numeric,
        });
    }
    probes
}
