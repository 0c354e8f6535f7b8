//! Finite-difference verification of the tape's analytic gradients.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{arg_err, Error, Result};
use crate::ops::conv::ConvSpec;
use crate::ops::norm::BnMode;
use crate::ops::resample::UpsampleMode;
use crate::real::Real;
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-3;
/// Upper bound on the total number of perturbed elements.
pub const MAX_ELEMENTS: usize = 10_000;

/// Ops that can be checked, by name.
pub const DIFFERENTIABLE_OPS: &[&str] = &[
    "conv2d",
    "depthwise_conv2d",
    "cdc",
    "batchnorm",
    "batchnorm_infer",
    "relu6",
    "sigmoid",
    "softplus",
    "normalize_sum",
    "linear",
    "upsample_nearest",
    "upsample_bilinear",
    "max_pool2d",
    "concat_channels",
    "add",
];

const NON_DIFFERENTIABLE_OPS: &[&str] = &["argmax"];

fn kinkless(rng: &mut ChaCha8Rng, lo: f64, hi: f64, kinks: &[f64]) -> f64 {
    loop {
        let v = rng.random_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > 0.05) {
            return v;
        }
    }
}

/// Builds the inputs an op needs. Values avoid kinks and ties so that a
/// central difference of width `2 * FD_STEP` stays on one smooth piece.
fn make_inputs<T: Real>(op: &str, shapes: &[&[usize]], rng: &mut ChaCha8Rng) -> Result<Vec<Tensor<T>>> {
    let need = |k: usize| -> Result<()> {
        if shapes.len() < k {
            return Err(arg_err("grad_check", format!("{op} needs {k} shapes, got {}", shapes.len())));
        }
        Ok(())
    };
    let uniform = |shape: &[usize], rng: &mut ChaCha8Rng| Tensor::<T>::uniform(shape, -1.0, 1.0, rng);
    let mut inputs = Vec::new();
    match op {
        "conv2d" | "cdc" | "linear" => {
            need(2)?;
            for s in shapes {
                inputs.push(uniform(s, rng));
            }
        }
        "depthwise_conv2d" | "add" => {
            need(2)?;
            inputs.push(uniform(shapes[0], rng));
            inputs.push(uniform(shapes[1], rng));
        }
        "batchnorm" | "batchnorm_infer" => {
            need(1)?;
            let c = shapes[0].get(1).copied().ok_or_else(|| arg_err("grad_check", "batchnorm needs N,C,H,W"))?;
            inputs.push(Tensor::uniform(shapes[0], -2.0, 2.0, rng));
            inputs.push(Tensor::uniform(&[c], 0.5, 1.5, rng));
            inputs.push(Tensor::uniform(&[c], -0.5, 0.5, rng));
        }
        "relu6" => {
            need(1)?;
            inputs.push(Tensor::from_fn(shapes[0], |_| T::from_f64(kinkless(rng, -1.0, 7.0, &[0.0, 6.0]))));
        }
        "normalize_sum" => {
            need(1)?;
            inputs.push(Tensor::uniform(shapes[0], 0.5, 1.5, rng));
        }
        "max_pool2d" => {
            need(1)?;
            let n: usize = shapes[0].iter().product();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            inputs.push(Tensor::from_fn(shapes[0], |i| T::from_f64(order[i] as f64 * 0.01 - 1.0)));
        }
        "sigmoid" | "softplus" | "upsample_nearest" | "upsample_bilinear" => {
            need(1)?;
            inputs.push(Tensor::uniform(shapes[0], -3.0, 3.0, rng));
        }
        "concat_channels" => {
            need(1)?;
            for s in shapes {
                inputs.push(uniform(s, rng));
            }
        }
        _ => unreachable!("checked by caller"),
    }
    Ok(inputs)
}

fn apply<T: Real>(tape: &mut Tape<T>, op: &str, vars: &[Var]) -> Result<Var> {
    match op {
        "conv2d" => tape.conv2d(vars[0], vars[1], vars.get(2).copied(), ConvSpec::same(tape.value(vars[1]).shape()[2])),
        "depthwise_conv2d" => {
            let (c, k) = (tape.value(vars[0]).shape()[1], tape.value(vars[1]).shape()[2]);
            tape.conv2d(vars[0], vars[1], None, ConvSpec::new(2, k / 2).grouped(c))
        }
        "cdc" => tape.cdc(vars[0], vars[1], vars.get(2).copied(), 0.7),
        "batchnorm" | "batchnorm_infer" => {
            let c = tape.value(vars[1]).numel();
            let mode = if op == "batchnorm" { BnMode::Train } else { BnMode::Infer };
            let rm = Tensor::from_fn(&[c], |i| T::from_f64(0.1 * i as f64));
            let rv = Tensor::from_fn(&[c], |i| T::from_f64(1.0 + 0.2 * i as f64));
            Ok(tape.batchnorm(vars[0], vars[1], vars[2], &rm, &rv, mode)?.0)
        }
        "relu6" => Ok(tape.relu6(vars[0])),
        "sigmoid" => Ok(tape.sigmoid(vars[0])),
        "softplus" => Ok(tape.softplus(vars[0])),
        "normalize_sum" => tape.normalize_sum(vars[0]),
        "linear" => tape.linear(vars[0], vars[1], vars.get(2).copied()),
        "upsample_nearest" => tape.upsample(vars[0], 2, UpsampleMode::Nearest),
        "upsample_bilinear" => tape.upsample(vars[0], 2, UpsampleMode::Bilinear),
        "max_pool2d" => tape.max_pool2d(vars[0]),
        "concat_channels" => tape.concat_channels(vars),
        "add" => tape.add(vars[0], vars[1]),
        _ => unreachable!("checked by caller"),
    }
}

fn projected_loss<T: Real>(y: &Tensor<T>, proj: &[f64]) -> f64 {
    y.data().iter().zip(proj).map(|(v, r)| v.to_f64() * r).sum()
}

fn evaluate<T: Real>(op: &str, inputs: &[Tensor<T>], proj: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let y = apply(&mut tape, op, &vars)?;
    Ok(projected_loss(tape.value(y), proj))
}

/// Worst relative gradient error of `op` over all of its differentiable
/// inputs, comparing tape gradients against central differences of the
/// scalar `sum(r * op(inputs))` for a fixed random `r`.
///
/// Per input tensor the error is `max|analytic - numeric| / max(|analytic|,
/// |numeric|)` using the largest magnitudes in that tensor.
pub fn grad_check<T: Real>(op: &str, shapes: &[&[usize]], seed: u64) -> Result<f64> {
    if NON_DIFFERENTIABLE_OPS.contains(&op) {
        return Err(Error::NotDifferentiable(op.to_string()));
    }
    if !DIFFERENTIABLE_OPS.contains(&op) {
        return Err(Error::UnknownOp(op.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<T>> = make_inputs(op, shapes, &mut rng)?;
    let total: usize = inputs.iter().map(Tensor::numel).sum();
    if total > MAX_ELEMENTS {
        return Err(arg_err(
            "grad_check",
            format!("{total} elements exceed the finite-difference budget of {MAX_ELEMENTS}"),
        ));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let y = apply(&mut tape, op, &vars)?;
    let proj: Vec<f64> = (0..tape.value(y).numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let seed_grad = Tensor::from_fn(tape.value(y).shape(), |i| T::from_f64(proj[i]));
    let grads = tape.backward(y, seed_grad)?;

    let step = T::from_f64(FD_STEP);
    let mut worst = 0.0f64;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let mut numeric = Vec::with_capacity(inputs[k].numel());
        let mut probe = inputs.clone();
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + step;
            let up = evaluate(op, &probe, &proj)?;
            probe[k].data_mut()[i] = orig - step;
            let down = evaluate(op, &probe, &proj)?;
            probe[k].data_mut()[i] = orig;
            // divide by the step actually representable in T
            let h = (orig + step).to_f64() - (orig - step).to_f64();
            numeric.push((up - down) / h);
        }
        let diff = analytic
            .data()
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a.to_f64() - n).abs()));
        let scale = numeric
            .iter()
            .fold(analytic.max_abs().to_f64(), |m, n| m.max(n.abs()));
        let err = if scale > 1e-12 { diff / scale } else { diff };
        worst = worst.max(err);
    }
    Ok(worst)
}
