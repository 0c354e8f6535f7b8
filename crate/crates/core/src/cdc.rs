//! Central difference convolution.
//!
//! ```text
//! y(p0) = theta * sum_n w(pn) * (x(p0 + pn) - x(p0))
//!       + (1 - theta) * sum_n w(pn) * x(p0 + pn)
//! ```
//!
//! Expanding the sums gives `y = conv(x, w) - theta * S * x(p0)` where `S`
//! holds the spatial sum of every `(cout, cin)` kernel slice. Moving that
//! rank-1 correction into the kernel's center tap turns the whole layer into
//! one ordinary convolution, which is the fast path used here.

use alloc::format;

use crate::error::{arg_err, Result};
use crate::ops::conv::{conv2d, conv2d_backward, ConvGrads, ConvSpec};
use crate::real::Real;
use crate::tensor::Tensor;

/// Weights of one central difference convolution.
#[derive(Clone, Debug)]
pub struct CdcParams<'a, T> {
    /// `[Cout, Cin, k, k]`, `k` odd.
    pub w: &'a Tensor<T>,
    pub bias: Option<&'a Tensor<T>>,
    /// Mix between the gradient-level (1) and intensity-level (0) terms.
    pub theta: f64,
}

impl<T: Real> CdcParams<'_, T> {
    fn validate(&self) -> Result<(usize, usize)> {
        const OP: &str = "cdc";
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(arg_err(OP, format!("theta {} outside [0, 1]", self.theta)));
        }
        let (_, _, kh, kw) = self.w.dims4(OP)?;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(arg_err(OP, format!("kernel {kh}x{kw} has no center tap")));
        }
        Ok((kh, kw))
    }

    fn spec(&self) -> Result<ConvSpec> {
        let (kh, kw) = self.validate()?;
        if kh != kw {
            return Err(arg_err("cdc", "same padding needs a square kernel"));
        }
        Ok(ConvSpec::same(kh))
    }
}

/// Per-`(cout, cin)` spatial sums of the kernel as a `[Cout, Cin, 1, 1]` tensor.
pub fn kernel_sums<T: Real>(w: &Tensor<T>) -> Result<Tensor<T>> {
    let (cout, cin, kh, kw) = w.dims4("cdc")?;
    let sums = w.data().chunks(kh * kw).map(|k| k.iter().copied().sum()).collect();
    Tensor::new(&[cout, cin, 1, 1], sums)
}

/// Kernel whose plain convolution equals the central difference convolution
/// of `w`: the center tap absorbs `-theta * sum(w)`.
pub fn fold_kernel<T: Real>(w: &Tensor<T>, theta: f64) -> Result<Tensor<T>> {
    let (_, _, kh, kw) = w.dims4("cdc")?;
    let center = (kh / 2) * kw + kw / 2;
    let theta = T::from_f64(theta);
    let mut folded = w.clone();
    for k in folded.data_mut().chunks_mut(kh * kw) {
        let s: T = k.iter().copied().sum();
        k[center] -= theta * s;
    }
    Ok(folded)
}

/// Stride-1, size-preserving central difference convolution.
pub fn cdc_forward<T: Real>(x: &Tensor<T>, p: &CdcParams<'_, T>) -> Result<Tensor<T>> {
    let spec = p.spec()?;
    if p.theta == 0.0 {
        return conv2d(x, p.w, p.bias, spec);
    }
    conv2d(x, &fold_kernel(p.w, p.theta)?, p.bias, spec)
}

/// The same layer computed as a vanilla convolution minus a 1x1 correction
/// by the kernel sums. Kept as an independent route for cross-checking.
pub fn cdc_decomposed<T: Real>(x: &Tensor<T>, p: &CdcParams<'_, T>) -> Result<Tensor<T>> {
    let spec = p.spec()?;
    let vanilla = conv2d(x, p.w, p.bias, spec)?;
    let correction = conv2d(x, &kernel_sums(p.w)?, None, ConvSpec::new(1, 0))?;
    let theta = T::from_f64(p.theta);
    vanilla.zip_map(&correction, "cdc", |v, c| v - theta * c)
}

/// Gradients for input, kernel and bias; `theta` is a fixed hyperparameter.
pub fn cdc_backward<T: Real>(
    x: &Tensor<T>,
    p: &CdcParams<'_, T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let spec = p.spec()?;
    if p.theta == 0.0 {
        return conv2d_backward(x, p.w, p.bias.is_some(), spec, grad_out);
    }
    let folded = fold_kernel(p.w, p.theta)?;
    let mut grads = conv2d_backward(x, &folded, p.bias.is_some(), spec, grad_out)?;
    // d folded[k'] / d w[k] = [k == k'] - theta * [k' == center]
    let (_, _, kh, kw) = p.w.dims4("cdc")?;
    let center = (kh / 2) * kw + kw / 2;
    let theta = T::from_f64(p.theta);
    for k in grads.w.data_mut().chunks_mut(kh * kw) {
        let gc = k[center];
        k.iter_mut().for_each(|g| *g -= theta * gc);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn theta_zero_is_plain_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::uniform(&[1, 2, 6, 6], -1.0, 1.0, &mut rng);
        let w = Tensor::<f32>::uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::<f32>::uniform(&[3], -1.0, 1.0, &mut rng);
        let p = CdcParams { w: &w, bias: Some(&b), theta: 0.0 };
        assert_eq!(cdc_forward(&x, &p).unwrap(), conv2d(&x, &w, Some(&b), ConvSpec::same(3)).unwrap());
    }

    #[test]
    fn constant_input_with_full_theta_is_zero_in_interior() {
        let x = Tensor::<f64>::full(&[1, 1, 5, 5], 2.5);
        let w = Tensor::<f64>::from_fn(&[2, 1, 3, 3], |i| 0.3 * i as f64 - 1.0);
        let p = CdcParams { w: &w, bias: None, theta: 1.0 };
        let y = cdc_forward(&x, &p).unwrap();
        // zero padding breaks constancy on the border; interior differences vanish
        for c in 0..2 {
            for i in 1..4 {
                for j in 1..4 {
                    assert!(y.data()[c * 25 + i * 5 + j].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_theta_and_even_kernel() {
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(cdc_forward(&x, &CdcParams { w: &w, bias: None, theta: 1.5 }).is_err());
        let w2 = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(cdc_forward(&x, &CdcParams { w: &w2, bias: None, theta: 0.5 }).is_err());
    }

    #[test]
    fn zero_kernel_is_bias_only() {
        let x = Tensor::<f32>::full(&[1, 1, 4, 4], 3.0);
        let w = Tensor::<f32>::zeros(&[2, 1, 3, 3]);
        let b = Tensor::new(&[2], vec![0.5, -1.0]).unwrap();
        let y = cdc_forward(&x, &CdcParams { w: &w, bias: Some(&b), theta: 0.7 }).unwrap();
        assert!(y.data()[..16].iter().all(|&v| v == 0.5));
        assert!(y.data()[16..].iter().all(|&v| v == -1.0));
    }
}
