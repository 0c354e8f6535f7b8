use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub fn relu6<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let six = T::from_f64(6.0);
    x.map(|v| v.max(T::ZERO).min(six))
}

pub fn relu6_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let six = T::from_f64(6.0);
    x.zip_map(grad_out, "relu6_backward", |v, g| {
        if v > T::ZERO && v < six {
            g
        } else {
            T::ZERO
        }
    })
}

pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Backward from the saved output `y = sigmoid(x)`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(grad_out, "sigmoid_backward", |s, g| g * s * (T::ONE - s))
}

/// `ln(1 + e^x)`, evaluated without overflow.
pub fn softplus_scalar<T: Real>(v: T) -> T {
    v.max(T::ZERO) + (-v.abs()).exp().ln_1p()
}

pub fn softplus<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(softplus_scalar)
}

pub fn softplus_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(grad_out, "softplus_backward", |v, g| g * sigmoid_scalar(v))
}

/// Divides each sample (leading axis) by its sum, turning a positive map
/// into a density.
pub fn normalize_sum<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = x.shape()[0];
    let per = x.numel() / n;
    let mut y = x.clone();
    for s in 0..n {
        let chunk = &mut y.data_mut()[s * per..(s + 1) * per];
        // f64 accumulation keeps large maps summing to one in f32
        let total: f64 = chunk.iter().map(|v| v.to_f64()).sum();
        if !(total > 0.0) {
            return Err(crate::Error::Numeric(format!(
                "sample {s} has non-positive mass {total}; cannot normalize"
            )));
        }
        let total = T::from_f64(total);
        chunk.iter_mut().for_each(|v| *v /= total);
    }
    Ok(y)
}

/// Quotient-rule backward of [`normalize_sum`], given input `x` and output `y`.
pub fn normalize_sum_backward<T: Real>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    y.expect_same_shape(grad_out, "normalize_sum_backward")?;
    let n = x.shape()[0];
    let per = x.numel() / n;
    let mut gx = Tensor::zeros(x.shape());
    for s in 0..n {
        let xs = &x.data()[s * per..(s + 1) * per];
        let ys = &y.data()[s * per..(s + 1) * per];
        let gs = &grad_out.data()[s * per..(s + 1) * per];
        let total = T::from_f64(xs.iter().map(|v| v.to_f64()).sum());
        let dot = T::from_f64(ys.iter().zip(gs).map(|(a, b)| a.to_f64() * b.to_f64()).sum());
        for (i, d) in gx.data_mut()[s * per..(s + 1) * per].iter_mut().enumerate() {
            *d = (gs[i] - dot) / total;
        }
    }
    Ok(gx)
}

/// Concatenates rank-4 tensors along the channel axis.
pub fn concat_channels<T: Real>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| shape_err("concat_channels", "nothing to concatenate"))?;
    let (n, _, h, w) = first.dims4("concat_channels")?;
    let mut channels = Vec::with_capacity(xs.len());
    for x in xs {
        let (xn, xc, xh, xw) = x.dims4("concat_channels")?;
        if (xn, xh, xw) != (n, h, w) {
            return Err(shape_err(
                "concat_channels",
                format!("{:?} vs {:?} differ outside the channel axis", first.shape(), x.shape()),
            ));
        }
        channels.push(xc);
    }
    let total: usize = channels.iter().sum();
    let hw = h * w;
    let mut data = Vec::with_capacity(n * total * hw);
    for s in 0..n {
        for (x, &c) in xs.iter().zip(&channels) {
            data.extend_from_slice(&x.data()[s * c * hw..(s + 1) * c * hw]);
        }
    }
    Tensor::new(&[n, total, h, w], data)
}

/// Splits a channel-concatenated gradient back into per-input pieces.
pub fn split_channels<T: Real>(grad: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (n, c, h, w) = grad.dims4("split_channels")?;
    if channels.iter().sum::<usize>() != c {
        return Err(shape_err(
            "split_channels",
            format!("pieces {channels:?} do not sum to {c} channels"),
        ));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(channels.len());
    let mut start = 0;
    for &pc in channels {
        let mut data = Vec::with_capacity(n * pc * hw);
        for s in 0..n {
            data.extend_from_slice(&grad.data()[(s * c + start) * hw..(s * c + start + pc) * hw]);
        }
        out.push(Tensor::new(&[n, pc, h, w], data)?);
        start += pc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn relu6_clamps() {
        let x = Tensor::<f32>::new(&[3], vec![7.5, -1.0, 2.0]).unwrap();
        assert_eq!(relu6(&x).data(), &[6.0, 0.0, 2.0]);
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!((softplus_scalar(100.0f64) - 100.0).abs() < 1e-12);
        assert!(softplus_scalar(-100.0f64) > 0.0);
        assert!((softplus_scalar(0.0f64) - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn normalize_sum_makes_density() {
        let x = Tensor::<f64>::new(&[2, 2], vec![1.0, 3.0, 2.0, 2.0]).unwrap();
        let y = normalize_sum(&x).unwrap();
        assert_eq!(y.data(), &[0.25, 0.75, 0.5, 0.5]);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor::<f32>::from_fn(&[2, 1, 2, 2], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[2, 3, 2, 2], |i| 100.0 + i as f32);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 4, 2, 2]);
        let parts = split_channels(&c, &[1, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
