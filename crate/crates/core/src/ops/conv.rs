//! Grouped 2D convolution (cross-correlation, zero padding).
//!
//! Dense and grouped convolutions lower to `im2col` + GEMM; depthwise
//! convolutions use a direct loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg_err, shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            groups: 1,
        }
    }

    /// Stride-1 convolution that preserves spatial size for odd `k`.
    pub const fn same(k: usize) -> Self {
        Self::new(1, k / 2)
    }

    pub const fn grouped(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn output_len(&self, input: usize, k: usize) -> usize {
        (input + 2 * self.padding - k) / self.stride + 1
    }
}

/// Resolved dimensions of one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub spec: ConvSpec,
}

impl ConvGeom {
    pub fn new<T: Real>(x: &Tensor<T>, w: &Tensor<T>, spec: ConvSpec) -> Result<Self> {
        const OP: &str = "conv2d";
        let (n, cin, h, wd) = x.dims4(OP)?;
        let (cout, cin_g, kh, kw) = w.dims4(OP)?;
        if spec.stride == 0 {
            return Err(arg_err(OP, "stride must be positive"));
        }
        if spec.groups == 0 || cin % spec.groups != 0 || cout % spec.groups != 0 {
            return Err(arg_err(
                OP,
                format!(
                    "groups={} must divide input channels {cin} and output channels {cout}",
                    spec.groups
                ),
            ));
        }
        if cin_g * spec.groups != cin {
            return Err(shape_err(
                OP,
                format!(
                    "kernel expects {} input channels per group ({} total), input has {cin}",
                    cin_g,
                    cin_g * spec.groups
                ),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(arg_err(OP, format!("kernel {kh}x{kw} must have odd sides")));
        }
        if h + 2 * spec.padding < kh || wd + 2 * spec.padding < kw {
            return Err(shape_err(
                OP,
                format!(
                    "padded input {}x{} smaller than kernel {kh}x{kw}",
                    h + 2 * spec.padding,
                    wd + 2 * spec.padding
                ),
            ));
        }
        Ok(Self {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            ho: spec.output_len(h, kh),
            wo: spec.output_len(wd, kw),
            spec,
        })
    }

    fn cin_g(&self) -> usize {
        self.cin / self.spec.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.spec.groups
    }

    fn is_depthwise(&self) -> bool {
        self.spec.groups == self.cin && self.cin == self.cout && self.spec.groups > 1
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.ho, self.wo]
    }

    /// Valid output columns for kernel column `kj`: `ow` with `0 <= ow*s+kj-p < w`.
    fn col_range(&self, kj: usize, out_len: usize, in_len: usize) -> (usize, usize) {
        let s = self.spec.stride as isize;
        let off = kj as isize - self.spec.padding as isize;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = (in_len as isize - 1 - off).div_euclid(s) + 1;
        let hi = hi.clamp(0, out_len as isize);
        (lo.min(hi) as usize, hi as usize)
    }
}

/// Unfolds the input planes of one group into a `K x (ho*wo)` matrix.
fn im2col<T: Real>(g: &ConvGeom, planes: &[T], cols: &mut [T]) {
    let p = g.ho * g.wo;
    let s = g.spec.stride;
    for c in 0..g.cin_g() {
        let plane = &planes[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.col_range(kj, g.wo, g.w);
                for oh in 0..g.ho {
                    let line = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    let ih = (oh * s + ki) as isize - g.spec.padding as isize;
                    if ih < 0 || ih >= g.h as isize {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    line[..lo].fill(T::ZERO);
                    line[hi..].fill(T::ZERO);
                    for ow in lo..hi {
                        line[ow] = src[ow * s + kj - g.spec.padding];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into input planes.
fn col2im<T: Real>(g: &ConvGeom, cols: &[T], planes: &mut [T]) {
    let p = g.ho * g.wo;
    let s = g.spec.stride;
    for c in 0..g.cin_g() {
        let plane = &mut planes[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.col_range(kj, g.wo, g.w);
                for oh in 0..g.ho {
                    let ih = (oh * s + ki) as isize - g.spec.padding as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let line = &src[oh * g.wo..(oh + 1) * g.wo];
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in lo..hi {
                        dst[ow * s + kj - g.spec.padding] += line[ow];
                    }
                }
            }
        }
    }
}

fn check_bias<T: Real>(b: Option<&Tensor<T>>, cout: usize) -> Result<()> {
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(shape_err(
                "conv2d",
                format!("bias shape {:?} does not match {cout} output channels", b.shape()),
            ));
        }
    }
    Ok(())
}

/// `y[n,co] = sum_ci w[co,ci] (*) x[n,ci] + b[co]` with grouped channels.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, w, spec)?;
    check_bias(b, g.cout)?;
    let mut y = Tensor::zeros(&g.out_shape());
    if g.is_depthwise() {
        depthwise_forward(&g, x.data(), w.data(), y.data_mut());
    } else {
        dense_forward(&g, x.data(), w.data(), y.data_mut());
    }
    if let Some(b) = b {
        let p = g.ho * g.wo;
        for (i, chunk) in y.data_mut().chunks_mut(p).enumerate() {
            let bias = b.data()[i % g.cout];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
    }
    Ok(y)
}

/// Depthwise convolution: `w` is `[C,1,kh,kw]`; channel `c` of the output
/// only sees channel `c` of the input.
pub fn depthwise_conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let c = x.dims4("depthwise_conv2d")?.1;
    conv2d(x, w, None, ConvSpec::new(stride, padding).grouped(c))
}

fn dense_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], y: &mut [T]) {
    let p = g.ho * g.wo;
    let k = g.k();
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::ZERO; k * p]
    };
    for n in 0..g.n {
        for grp in 0..g.spec.groups {
            let planes = &x[(n * g.cin + grp * cin_g) * g.h * g.w..][..cin_g * g.h * g.w];
            let rhs: &[T] = if g.is_pointwise() {
                planes
            } else {
                im2col(g, planes, &mut cols);
                &cols
            };
            let lhs = &w[grp * cout_g * k..(grp + 1) * cout_g * k];
            let out = &mut y[(n * g.cout + grp * cout_g) * p..][..cout_g * p];
            T::gemm(
                cout_g,
                k,
                p,
                T::ONE,
                lhs,
                (k as isize, 1),
                rhs,
                (p as isize, 1),
                T::ZERO,
                out,
            );
        }
    }
}

fn depthwise_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], y: &mut [T]) {
    let s = g.spec.stride;
    let (hw, p) = (g.h * g.w, g.ho * g.wo);
    for n in 0..g.n {
        for c in 0..g.cin {
            let plane = &x[(n * g.cin + c) * hw..][..hw];
            let kern = &w[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
            let out = &mut y[(n * g.cout + c) * p..][..p];
            for ki in 0..g.kh {
                let (row_lo, row_hi) = g.col_range(ki, g.ho, g.h);
                for kj in 0..g.kw {
                    let wv = kern[ki * g.kw + kj];
                    let (lo, hi) = g.col_range(kj, g.wo, g.w);
                    for oh in row_lo..row_hi {
                        let ih = oh * s + ki - g.spec.padding;
                        let src = &plane[ih * g.w..(ih + 1) * g.w];
                        let dst = &mut out[oh * g.wo..(oh + 1) * g.wo];
                        if s == 1 {
                            let shift = kj as isize - g.spec.padding as isize;
                            let src = &src[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                            for (d, &v) in dst[lo..hi].iter_mut().zip(src) {
                                *d += wv * v;
                            }
                        } else {
                            for ow in lo..hi {
                                dst[ow] += wv * src[ow * s + kj - g.spec.padding];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of a convolution with respect to its input, kernel and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    spec: ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(x, w, spec)?;
    if grad_out.shape() != g.out_shape() {
        return Err(shape_err(
            "conv2d_backward",
            format!(
                "upstream gradient {:?} does not match output {:?}",
                grad_out.shape(),
                g.out_shape()
            ),
        ));
    }
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    if g.is_depthwise() {
        depthwise_backward(&g, x.data(), w.data(), grad_out.data(), gx.data_mut(), gw.data_mut());
    } else {
        dense_backward(&g, x.data(), w.data(), grad_out.data(), gx.data_mut(), gw.data_mut());
    }
    let gb = with_bias.then(|| {
        let p = g.ho * g.wo;
        let mut gb = Tensor::zeros(&[g.cout]);
        for (i, chunk) in grad_out.data().chunks(p).enumerate() {
            gb.data_mut()[i % g.cout] += chunk.iter().copied().sum::<T>();
        }
        gb
    });
    Ok(ConvGrads { x: gx, w: gw, b: gb })
}

fn dense_backward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], gy: &[T], gx: &mut [T], gw: &mut [T]) {
    let p = g.ho * g.wo;
    let k = g.k();
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::ZERO; k * p] };
    let mut gcols = vec![T::ZERO; k * p];
    for n in 0..g.n {
        for grp in 0..g.spec.groups {
            let plane_off = (n * g.cin + grp * cin_g) * g.h * g.w;
            let planes = &x[plane_off..][..cin_g * g.h * g.w];
            let rhs: &[T] = if pointwise {
                planes
            } else {
                im2col(g, planes, &mut cols);
                &cols
            };
            let gy_g = &gy[(n * g.cout + grp * cout_g) * p..][..cout_g * p];
            let w_g = &w[grp * cout_g * k..(grp + 1) * cout_g * k];
            let gw_g = &mut gw[grp * cout_g * k..(grp + 1) * cout_g * k];
            // gw += gy * cols^T
            T::gemm(
                cout_g,
                p,
                k,
                T::ONE,
                gy_g,
                (p as isize, 1),
                rhs,
                (1, p as isize),
                T::ONE,
                gw_g,
            );
            // gcols = w^T * gy
            T::gemm(
                k,
                cout_g,
                p,
                T::ONE,
                w_g,
                (1, k as isize),
                gy_g,
                (p as isize, 1),
                T::ZERO,
                &mut gcols,
            );
            let gx_planes = &mut gx[plane_off..][..cin_g * g.h * g.w];
            if pointwise {
                for (d, &v) in gx_planes.iter_mut().zip(&gcols) {
                    *d += v;
                }
            } else {
                col2im(g, &gcols, gx_planes);
            }
        }
    }
}

fn depthwise_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gy: &[T],
    gx: &mut [T],
    gw: &mut [T],
) {
    let s = g.spec.stride;
    let (hw, p) = (g.h * g.w, g.ho * g.wo);
    for n in 0..g.n {
        for c in 0..g.cin {
            let plane = &x[(n * g.cin + c) * hw..][..hw];
            let gplane = &mut gx[(n * g.cin + c) * hw..][..hw];
            let kern = &w[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
            let gkern = &mut gw[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
            let up = &gy[(n * g.cout + c) * p..][..p];
            for ki in 0..g.kh {
                let (row_lo, row_hi) = g.col_range(ki, g.ho, g.h);
                for kj in 0..g.kw {
                    let wv = kern[ki * g.kw + kj];
                    let (lo, hi) = g.col_range(kj, g.wo, g.w);
                    let mut acc = T::ZERO;
                    for oh in row_lo..row_hi {
                        let ih = oh * s + ki - g.spec.padding;
                        let line = &up[oh * g.wo..(oh + 1) * g.wo];
                        for ow in lo..hi {
                            let iw = ow * s + kj - g.spec.padding;
                            acc += line[ow] * plane[ih * g.w + iw];
                            gplane[ih * g.w + iw] += wv * line[ow];
                        }
                    }
                    gkern[ki * g.kw + kj] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, ConvSpec::new(1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let x = Tensor::<f32>::zeros(&[2, 3, 6, 5]);
        let w = Tensor::<f32>::from_fn(&[4, 3, 3, 3], |i| i as f32 * 0.1 - 1.0);
        let y = conv2d(&x, &w, None, ConvSpec::new(2, 1)).unwrap();
        assert_eq!(y.shape(), &[2, 4, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_names_dimensions() {
        let x = Tensor::<f32>::zeros(&[1, 3, 5, 5]);
        let w = Tensor::<f32>::zeros(&[2, 4, 3, 3]);
        let err = conv2d(&x, &w, None, ConvSpec::same(3)).unwrap_err();
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains("4 input channels") && msg.contains("input has 3"), "{msg}");
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 5, 5]);
        let w = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(conv2d(&x, &w, None, ConvSpec::new(1, 0)).is_err());
    }

    #[test]
    fn depthwise_channels_are_isolated() {
        let mut x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        for v in &mut x.data_mut()[..16] {
            *v = 3.0;
        }
        let w = Tensor::<f32>::full(&[2, 1, 3, 3], 0.5);
        let y = depthwise_conv2d(&x, &w, 1, 1).unwrap();
        assert!(y.data()[16..].iter().all(|&v| v == 0.0));
        assert!(y.data()[..16].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn bias_only_gradient() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f64>::full(&[2, 1, 3, 3], 1.0);
        let gy = Tensor::<f64>::full(&[1, 2, 3, 3], 1.0);
        let g = conv2d_backward(&x, &w, true, ConvSpec::same(3), &gy).unwrap();
        assert_eq!(g.b.unwrap().data(), &[9.0, 9.0]);
    }
}
