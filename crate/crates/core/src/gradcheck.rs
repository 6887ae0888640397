//! Central finite-difference gradient checking.
//!
//! The function under test may return a tensor of any shape; it is reduced
//! to a scalar by an inner product with fixed pseudo-random weights so that
//! every output element contributes to the checked gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn reduce<'a>(tape: &mut Tape<'a>, out: Var, weights: &[f64]) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(Tensor::new(shape, weights.to_vec())?);
    tape.dot(out, w)
}

fn evaluate<F>(f: &F, inputs: &[Tensor], weights: &[f64]) -> Result<f64>
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let s = reduce(&mut tape, out, weights)?;
    Ok(tape.value(s).item())
}

/// Compares the tape's gradients for every element of every input against
/// `(f(x + eps) - f(x - eps)) / 2 eps`.
pub fn check<F>(inputs: &[Tensor], f: F, eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let weights = weights_for(tape.value(out).len(), seed);
    let loss = reduce(&mut tape, out, &weights)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
    };
    let mut perturbed = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[k].shape());
        let analytic = grads.get(*v).unwrap_or(&zeros).data().to_vec();
        for j in 0..inputs[k].len() {
            let orig = inputs[k].data()[j];
            perturbed[k].data_mut()[j] = orig + eps;
            let plus = evaluate(&f, &perturbed, &weights)?;
            perturbed[k].data_mut()[j] = orig - eps;
            let minus = evaluate(&f, &perturbed, &weights)?;
            perturbed[k].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[j], numeric);
            report.max_relative_error = report.max_relative_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

fn weights_for(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| rng.gen_range(0.5..1.5) * if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// Like [`check`], but differentiates w.r.t. every tensor of a
/// [`ParamStore`], so layer code is exercised exactly as in training.
pub fn check_params<F>(store: &ParamStore, f: F, eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&'a ParamStore, &mut Tape<'a>) -> Result<Var>,
{
    let (analytic, weights) = {
        let mut tape = Tape::new();
        let out = f(store, &mut tape)?;
        let weights = weights_for(tape.value(out).len(), seed);
        let loss = reduce(&mut tape, out, &weights)?;
        let grads = tape.backward(loss)?;
        (store.gradients(&tape, &grads), weights)
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(s, &mut tape)?;
        let l = reduce(&mut tape, out, &weights)?;
        Ok(tape.value(l).item())
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
    };
    let mut perturbed = store.clone();
    for k in 0..store.len() {
        for j in 0..store.tensors()[k].len() {
            let orig = store.tensors()[k].data()[j];
            perturbed.tensors_mut()[k].data_mut()[j] = orig + eps;
            let plus = eval(&perturbed)?;
            perturbed.tensors_mut()[k].data_mut()[j] = orig - eps;
            let minus = eval(&perturbed)?;
            perturbed.tensors_mut()[k].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[k].data()[j], numeric);
            report.max_relative_error = report.max_relative_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
