use alloc::format;

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

fn dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, din) = match *x.shape() {
        [n, d] => (n, d),
        _ => return Err(shape_err("linear", format!("input must be [N,Din], got {:?}", x.shape()))),
    };
    let dout = match *w.shape() {
        [o, i] if i == din => o,
        _ => {
            return Err(shape_err(
                "linear",
                format!("weight {:?} does not accept {din} inputs", w.shape()),
            ))
        }
    };
    Ok((n, din, dout))
}

/// `y = x w^T + b` with `x: [N,Din]`, `w: [Dout,Din]`, `b: [Dout]`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, din, dout) = dims(x, w)?;
    let mut y = Tensor::zeros(&[n, dout]);
    if let Some(b) = b {
        if b.shape() != [dout] {
            return Err(shape_err("linear", format!("bias {:?} vs {dout} outputs", b.shape())));
        }
        for row in y.data_mut().chunks_mut(dout) {
            row.copy_from_slice(b.data());
        }
    }
    T::gemm(
        n,
        din,
        dout,
        T::ONE,
        x.data(),
        (din as isize, 1),
        w.data(),
        (1, din as isize),
        T::ONE,
        y.data_mut(),
    );
    Ok(y)
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Option<Tensor<T>>,
}

pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    with_bias: bool,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, din, dout) = dims(x, w)?;
    if grad_out.shape() != [n, dout] {
        return Err(shape_err(
            "linear_backward",
            format!("upstream {:?} vs output [{n}, {dout}]", grad_out.shape()),
        ));
    }
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    T::gemm(
        n,
        dout,
        din,
        T::ONE,
        grad_out.data(),
        (dout as isize, 1),
        w.data(),
        (din as isize, 1),
        T::ZERO,
        gx.data_mut(),
    );
    T::gemm(
        dout,
        n,
        din,
        T::ONE,
        grad_out.data(),
        (1, dout as isize),
        x.data(),
        (din as isize, 1),
        T::ZERO,
        gw.data_mut(),
    );
    let gb = with_bias.then(|| {
        let mut gb = Tensor::zeros(&[dout]);
        for row in grad_out.data().chunks(dout) {
            for (d, &g) in gb.data_mut().iter_mut().zip(row) {
                *d += g;
            }
        }
        gb
    });
    Ok(LinearGrads { x: gx, w: gw, b: gb })
}
