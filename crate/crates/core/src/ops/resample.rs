use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    #[default]
    Nearest,
    Bilinear,
}

/// Source taps of one output coordinate for half-pixel bilinear sampling.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel (`align_corners = false`) sampling positions for resizing
/// `src` samples onto `dst` samples.
pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (libm::floor(pos) as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            Tap {
                lo,
                hi,
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Integer-factor spatial upsampling of an `N,C,H,W` tensor.
pub fn upsample<T: Real>(x: &Tensor<T>, factor: usize, mode: UpsampleMode) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(arg_err("upsample", "factor must be positive"));
    }
    let (n, c, h, w) = x.dims4("upsample")?;
    let (ho, wo) = (h * factor, w * factor);
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    match mode {
        UpsampleMode::Nearest => {
            for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(ho * wo)) {
                for oh in 0..ho {
                    let row = &src[(oh / factor) * w..(oh / factor + 1) * w];
                    for (ow, d) in dst[oh * wo..(oh + 1) * wo].iter_mut().enumerate() {
                        *d = row[ow / factor];
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let (rows, cols) = (bilinear_taps(h, ho), bilinear_taps(w, wo));
            for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(ho * wo)) {
                for (oh, r) in rows.iter().enumerate() {
                    let fr = T::from_f64(r.frac);
                    for (ow, col) in cols.iter().enumerate() {
                        let fc = T::from_f64(col.frac);
                        let top = src[r.lo * w + col.lo] * (T::ONE - fc) + src[r.lo * w + col.hi] * fc;
                        let bot = src[r.hi * w + col.lo] * (T::ONE - fc) + src[r.hi * w + col.hi] * fc;
                        dst[oh * wo + ow] = top * (T::ONE - fr) + bot * fr;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Adjoint of [`upsample`].
pub fn upsample_backward<T: Real>(
    input_shape: &[usize],
    factor: usize,
    mode: UpsampleMode,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, ho, wo) = grad_out.dims4("upsample_backward")?;
    let (h, w) = (input_shape[2], input_shape[3]);
    if input_shape != [n, c, ho / factor, wo / factor] || ho != h * factor || wo != w * factor {
        return Err(crate::error::shape_err(
            "upsample_backward",
            format!("upstream {:?} is not x{factor} of {input_shape:?}", grad_out.shape()),
        ));
    }
    let mut gx = Tensor::zeros(input_shape);
    match mode {
        UpsampleMode::Nearest => {
            for (src, dst) in grad_out.data().chunks(ho * wo).zip(gx.data_mut().chunks_mut(h * w)) {
                for oh in 0..ho {
                    for ow in 0..wo {
                        dst[(oh / factor) * w + ow / factor] += src[oh * wo + ow];
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let (rows, cols) = (bilinear_taps(h, ho), bilinear_taps(w, wo));
            for (src, dst) in grad_out.data().chunks(ho * wo).zip(gx.data_mut().chunks_mut(h * w)) {
                for (oh, r) in rows.iter().enumerate() {
                    let fr = T::from_f64(r.frac);
                    for (ow, col) in cols.iter().enumerate() {
                        let fc = T::from_f64(col.frac);
                        let g = src[oh * wo + ow];
                        dst[r.lo * w + col.lo] += g * (T::ONE - fr) * (T::ONE - fc);
                        dst[r.lo * w + col.hi] += g * (T::ONE - fr) * fc;
                        dst[r.hi * w + col.lo] += g * fr * (T::ONE - fc);
                        dst[r.hi * w + col.hi] += g * fr * fc;
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and the flat
/// input index chosen for every output element.
pub fn max_pool2d<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4("max_pool2d")?;
    if h < 2 || w < 2 {
        return Err(crate::error::shape_err(
            "max_pool2d",
            format!("input {h}x{w} smaller than the 2x2 window"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    let mut idx = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = plane * h * w + (2 * oh) * w + 2 * ow;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = plane * h * w + (2 * oh + di) * w + 2 * ow + dj;
                    if x.data()[cand] > x.data()[best] {
                        best = cand;
                    }
                }
                y.data_mut()[(plane * ho + oh) * wo + ow] = x.data()[best];
                idx.push(best);
            }
        }
    }
    Ok((y, idx))
}

pub fn max_pool2d_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.numel() {
        return Err(crate::error::shape_err(
            "max_pool2d_backward",
            "upstream gradient does not match the pooled output",
        ));
    }
    let mut gx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gx.data_mut()[i] += g;
    }
    Ok(gx)
}
