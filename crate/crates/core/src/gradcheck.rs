//! Central finite-difference checks of tape gradients.
//!
//! Errors are norm-wise per input: `|g - n| / max(|g| + |n|, NORM_FLOOR)`
//! with `g` the backward gradient and `n` the numerical one. The floor keeps
//! gradients that vanish exactly (attention key biases) from dividing
//! difference noise of order `1e-10` by zero.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::math;
use crate::model::Model;
use crate::tensor::Tensor;
use crate::train::{batch_loss, loss_and_grads, Batch};

pub const STEP: f64 = 1e-5;
pub const NORM_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    /// Largest per-input relative error.
    pub max_rel: f64,
    /// Input index where it occurred.
    pub worst_input: usize,
    /// Number of coordinates differenced.
    pub coordinates: usize,
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum();
    let na: f64 = analytic.iter().map(|a| a * a).sum();
    let nn: f64 = numeric.iter().map(|n| n * n).sum();
    math::sqrt(diff) / (math::sqrt(na) + math::sqrt(nn)).max(NORM_FLOOR)
}

fn evaluate<F>(inputs: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = build(&mut tape, &vars)?;
    Ok(tape.value(out).data()[0])
}

/// Differentiates the scalar produced by `build` with respect to every
/// element of every input.
pub fn check<F>(inputs: &[Tensor], build: F, h: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    tape.backward(out)?;
    let mut report = GradReport {
        max_rel: 0.0,
        worst_input: 0,
        coordinates: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .map_or_else(|| alloc::vec![0.0; inputs[i].len()], <[f64]>::to_vec);
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            probe[i].data_mut()[j] = x + h;
            let up = evaluate(&probe, &build)?;
            probe[i].data_mut()[j] = x - h;
            let down = evaluate(&probe, &build)?;
            probe[i].data_mut()[j] = x;
            numeric.push((up - down) / (2.0 * h));
        }
        report.coordinates += numeric.len();
        let r = rel_error(&analytic, &numeric);
        if r > report.max_rel {
            report.max_rel = r;
            report.worst_input = i;
        }
    }
    Ok(report)
}

/// Checks the training loss of `model` on `batch` against finite
/// differences on `per_tensor` randomly chosen coordinates of each
/// parameter tensor (all coordinates when the tensor is smaller).
pub fn check_model(
    model: &Model,
    batch: &Batch,
    per_tensor: usize,
    seed: u64,
    h: f64,
) -> Result<GradReport> {
    let (_, grads) = loss_and_grads(model, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut report = GradReport {
        max_rel: 0.0,
        worst_input: 0,
        coordinates: 0,
    };
    for (i, g) in grads.iter().enumerate() {
        let n = g.len();
        let coords: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        for &j in &coords {
            let x = model.params.tensors[i].data()[j];
            probe.params.tensors[i].data_mut()[j] = x + h;
            let up = batch_loss(&probe, batch)?;
            probe.params.tensors[i].data_mut()[j] = x - h;
            let down = batch_loss(&probe, batch)?;
            probe.params.tensors[i].data_mut()[j] = x;
            analytic.push(g[j]);
            numeric.push((up - down) / (2.0 * h));
        }
        report.coordinates += coords.len();
        let r = rel_error(&analytic, &numeric);
        if r > report.max_rel {
            report.max_rel = r;
            report.worst_input = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn quadratic_through_matmul() {
        let a = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![3, 1], vec![1.5, 0.25, -0.75]).unwrap();
        let r = check(
            &[a, b],
            |t, v| {
                let m = t.matmul(v[0], v[1])?;
                let m2 = t.matmul(m, m)?;
                Ok(t.sum(m2))
            },
            STEP,
        )
        .unwrap();
        assert!(r.max_rel < 1e-8, "{r:?}");
        assert_eq!(r.coordinates, 6);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        assert!(rel_error(&[1.0, 2.0], &[1.0, 2.1]) > 1e-2);
        assert_eq!(rel_error(&[0.0], &[0.0]), 0.0);
    }
}
