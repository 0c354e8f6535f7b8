use alloc::format;
use alloc::vec;

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Infer,
}

/// Statistics a batchnorm forward pass leaves behind for its backward pass.
#[derive(Clone, Debug)]
pub struct BnSaved<T> {
    pub mode: BnMode,
    /// Normalized input `(x - mean) * inv_std`.
    pub xhat: Tensor<T>,
    pub inv_std: Tensor<T>,
    /// Batch mean and biased batch variance (train mode only).
    pub batch_mean: Tensor<T>,
    pub batch_var: Tensor<T>,
}

fn check<T: Real>(x: &Tensor<T>, params: &[&Tensor<T>]) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4("batchnorm")?;
    for p in params {
        if p.shape() != [c] {
            return Err(shape_err(
                "batchnorm",
                format!("parameter shape {:?} does not match {c} channels", p.shape()),
            ));
        }
    }
    Ok((n, c, h * w))
}

/// Per-channel normalization followed by the affine `gamma * xhat + beta`.
pub fn batchnorm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let (n, c, hw) = check(x, &[gamma, beta, running_mean, running_var])?;
    let eps = T::from_f64(BN_EPS);
    let (mean, var) = match mode {
        BnMode::Train => channel_moments(x, n, c, hw),
        BnMode::Infer => (running_mean.clone(), running_var.clone()),
    };
    let inv_std = var.map(|v| T::ONE / (v + eps).sqrt());
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * hw;
            let (m, is) = (mean.data()[ch], inv_std.data()[ch]);
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            for i in off..off + hw {
                let xh = (x.data()[i] - m) * is;
                xhat.data_mut()[i] = xh;
                y.data_mut()[i] = g * xh + b;
            }
        }
    }
    let saved = BnSaved {
        mode,
        xhat,
        inv_std,
        batch_mean: mean,
        batch_var: var,
    };
    Ok((y, saved))
}

/// Per-channel mean and biased variance over `N,H,W`.
pub fn channel_moments<T: Real>(
    x: &Tensor<T>,
    n: usize,
    c: usize,
    hw: usize,
) -> (Tensor<T>, Tensor<T>) {
    let count = T::from_usize(n * hw);
    let mut mean = vec![T::ZERO; c];
    let mut var = vec![T::ZERO; c];
    for ch in 0..c {
        let mut acc = T::ZERO;
        for s in 0..n {
            acc += x.data()[(s * c + ch) * hw..][..hw].iter().copied().sum::<T>();
        }
        let m = acc / count;
        let mut sq = T::ZERO;
        for s in 0..n {
            for &v in &x.data()[(s * c + ch) * hw..][..hw] {
                sq += (v - m) * (v - m);
            }
        }
        mean[ch] = m;
        var[ch] = sq / count;
    }
    (
        Tensor::new(&[c], mean).expect("c > 0"),
        Tensor::new(&[c], var).expect("c > 0"),
    )
}

/// Exponential moving average update of the running statistics; the
/// running variance tracks the unbiased batch variance.
pub fn update_running_stats<T: Real>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    saved: &BnSaved<T>,
    count: usize,
) {
    let m = T::from_f64(BN_MOMENTUM);
    let unbias = if count > 1 {
        T::from_usize(count) / T::from_usize(count - 1)
    } else {
        T::ONE
    };
    for (r, &b) in running_mean.data_mut().iter_mut().zip(saved.batch_mean.data()) {
        *r = (T::ONE - m) * *r + m * b;
    }
    for (r, &b) in running_var.data_mut().iter_mut().zip(saved.batch_var.data()) {
        *r = (T::ONE - m) * *r + m * b * unbias;
    }
}

#[derive(Clone, Debug)]
pub struct BnGrads<T> {
    pub x: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batchnorm_backward<T: Real>(
    saved: &BnSaved<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<BnGrads<T>> {
    saved.xhat.expect_same_shape(grad_out, "batchnorm_backward")?;
    let (n, c, h, w) = grad_out.dims4("batchnorm_backward")?;
    let hw = h * w;
    let count = T::from_usize(n * hw);
    let mut gx = Tensor::zeros(grad_out.shape());
    let mut ggamma = Tensor::zeros(&[c]);
    let mut gbeta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut sum_g = T::ZERO;
        let mut sum_gx = T::ZERO;
        for s in 0..n {
            let off = (s * c + ch) * hw;
            for i in off..off + hw {
                sum_g += grad_out.data()[i];
                sum_gx += grad_out.data()[i] * saved.xhat.data()[i];
            }
        }
        ggamma.data_mut()[ch] = sum_gx;
        gbeta.data_mut()[ch] = sum_g;
        let scale = gamma.data()[ch] * saved.inv_std.data()[ch];
        for s in 0..n {
            let off = (s * c + ch) * hw;
            for i in off..off + hw {
                let g = grad_out.data()[i];
                gx.data_mut()[i] = match saved.mode {
                    BnMode::Infer => scale * g,
                    BnMode::Train => {
                        scale * (g - sum_g / count - saved.xhat.data()[i] * sum_gx / count)
                    }
                };
            }
        }
    }
    Ok(BnGrads {
        x: gx,
        gamma: ggamma,
        beta: gbeta,
    })
}
