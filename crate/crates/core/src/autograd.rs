//! Reverse-mode differentiation over a linear tape of primitive ops.
//!
//! Every op records the values its backward pass needs; `backward` walks the
//! tape once in reverse, calling each op's backward function with the
//! accumulated upstream gradient.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::cdc::{cdc_backward, cdc_forward, CdcParams};
use crate::error::{shape_err, Error, Result};
use crate::ops::conv::{conv2d, conv2d_backward, ConvSpec};
use crate::ops::elementwise::{
    concat_channels, normalize_sum, normalize_sum_backward, relu6, relu6_backward, sigmoid,
    sigmoid_backward, softplus, softplus_backward, split_channels,
};
use crate::ops::linear::{linear, linear_backward};
use crate::ops::norm::{batchnorm, batchnorm_backward, BnMode, BnSaved};
use crate::ops::resample::{max_pool2d, max_pool2d_backward, upsample, upsample_backward, UpsampleMode};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Cdc {
        x: Var,
        w: Var,
        b: Option<Var>,
        theta: f64,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved<T>,
    },
    Relu6(Var),
    Sigmoid(Var),
    Softplus(Var),
    NormalizeSum(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Upsample {
        x: Var,
        factor: usize,
        mode: UpsampleMode,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat(Vec<Var>),
    Add(Var, Var),
    Reshape(Var),
    /// Channel argmax; piecewise constant, so it has no useful gradient.
    Argmax(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { .. } => "conv2d",
            Op::Cdc { .. } => "cdc",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Relu6(_) => "relu6",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::NormalizeSum(_) => "normalize_sum",
            Op::Linear { .. } => "linear",
            Op::Upsample { .. } => "upsample",
            Op::MaxPool { .. } => "max_pool2d",
            Op::Concat(_) => "concat_channels",
            Op::Add(..) => "add",
            Op::Reshape(_) => "reshape",
            Op::Argmax(_) => "argmax",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Conv { x, w, b, .. } | Op::Cdc { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Relu6(x)
            | Op::Sigmoid(x)
            | Op::Softplus(x)
            | Op::NormalizeSum(x)
            | Op::Reshape(x)
            | Op::Argmax(x)
            | Op::Upsample { x, .. }
            | Op::MaxPool { x, .. } => vec![*x],
            Op::Concat(xs) => xs.clone(),
            Op::Add(a, b) => vec![*a, *b],
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradient of one op with respect to each of its inputs.
#[derive(Clone, Debug)]
pub struct OpGradient<T> {
    pub output_grad: Tensor<T>,
    pub input_grads: Vec<(Var, Tensor<T>)>,
}

/// Gradients for every tape entry that requires one.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn opt<'a>(&'a self, v: Option<Var>) -> Option<&'a Tensor<T>> {
        v.map(|v| self.value(v))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let y = conv2d(self.value(x), self.value(w), self.opt(b), spec)?;
        Ok(self.push(y, Op::Conv { x, w, b, spec }))
    }

    pub fn cdc(&mut self, x: Var, w: Var, b: Option<Var>, theta: f64) -> Result<Var> {
        let params = CdcParams {
            w: self.value(w),
            bias: self.opt(b),
            theta,
        };
        let y = cdc_forward(self.value(x), &params)?;
        Ok(self.push(y, Op::Cdc { x, w, b, theta }))
    }

    /// Batchnorm; running statistics are read (infer mode) but never written
    /// here. Returns the saved batch statistics for the caller to fold into
    /// its running averages.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        mode: BnMode,
    ) -> Result<(Var, BnSaved<T>)> {
        let (y, saved) = batchnorm(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            mode,
        )?;
        let out = self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved: saved.clone(),
            },
        );
        Ok((out, saved))
    }

    pub fn relu6(&mut self, x: Var) -> Var {
        let y = relu6(self.value(x));
        self.push(y, Op::Relu6(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = sigmoid(self.value(x));
        self.push(y, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let y = softplus(self.value(x));
        self.push(y, Op::Softplus(x))
    }

    pub fn normalize_sum(&mut self, x: Var) -> Result<Var> {
        let y = normalize_sum(self.value(x))?;
        Ok(self.push(y, Op::NormalizeSum(x)))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = linear(self.value(x), self.value(w), self.opt(b))?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn upsample(&mut self, x: Var, factor: usize, mode: UpsampleMode) -> Result<Var> {
        let y = upsample(self.value(x), factor, mode)?;
        Ok(self.push(y, Op::Upsample { x, factor, mode }))
    }

    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = max_pool2d(self.value(x))?;
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = concat_channels(&values)?;
        Ok(self.push(y, Op::Concat(xs.to_vec())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x)))
    }

    /// Index of the largest channel at every pixel, as `[N,1,H,W]`.
    pub fn argmax_channels(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, c, h, w) = t.dims4("argmax")?;
        let hw = h * w;
        let mut out = Tensor::zeros(&[n, 1, h, w]);
        for s in 0..n {
            for p in 0..hw {
                let mut best = 0;
                for ch in 1..c {
                    if t.data()[(s * c + ch) * hw + p] > t.data()[(s * c + best) * hw + p] {
                        best = ch;
                    }
                }
                out.data_mut()[s * hw + p] = T::from_usize(best);
            }
        }
        Ok(self.push(out, Op::Argmax(x)))
    }

    /// Backward of the single op that produced `node`.
    pub fn op_backward(&self, node: Var, upstream: &Tensor<T>) -> Result<OpGradient<T>> {
        let n = &self.nodes[node.0];
        if upstream.shape() != n.value.shape() {
            return Err(shape_err(
                "backward",
                format!(
                    "upstream gradient {:?} does not match {} output {:?}",
                    upstream.shape(),
                    n.op.name(),
                    n.value.shape()
                ),
            ));
        }
        let v = |var: Var| &self.nodes[var.0].value;
        let mut out = Vec::new();
        match &n.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, spec } => {
                let g = conv2d_backward(v(*x), v(*w), b.is_some(), *spec, upstream)?;
                out.push((*x, g.x));
                out.push((*w, g.w));
                if let (Some(b), Some(gb)) = (b, g.b) {
                    out.push((*b, gb));
                }
            }
            Op::Cdc { x, w, b, theta } => {
                let params = CdcParams {
                    w: v(*w),
                    bias: b.map(v),
                    theta: *theta,
                };
                let g = cdc_backward(v(*x), &params, upstream)?;
                out.push((*x, g.x));
                out.push((*w, g.w));
                if let (Some(b), Some(gb)) = (b, g.b) {
                    out.push((*b, gb));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let g = batchnorm_backward(saved, v(*gamma), upstream)?;
                out.push((*x, g.x));
                out.push((*gamma, g.gamma));
                out.push((*beta, g.beta));
            }
            Op::Relu6(x) => out.push((*x, relu6_backward(v(*x), upstream)?)),
            Op::Sigmoid(x) => out.push((*x, sigmoid_backward(&n.value, upstream)?)),
            Op::Softplus(x) => out.push((*x, softplus_backward(v(*x), upstream)?)),
            Op::NormalizeSum(x) => {
                out.push((*x, normalize_sum_backward(v(*x), &n.value, upstream)?))
            }
            Op::Linear { x, w, b } => {
                let g = linear_backward(v(*x), v(*w), b.is_some(), upstream)?;
                out.push((*x, g.x));
                out.push((*w, g.w));
                if let (Some(b), Some(gb)) = (b, g.b) {
                    out.push((*b, gb));
                }
            }
            Op::Upsample { x, factor, mode } => {
                out.push((*x, upsample_backward(v(*x).shape(), *factor, *mode, upstream)?))
            }
            Op::MaxPool { x, argmax } => {
                out.push((*x, max_pool2d_backward(v(*x).shape(), argmax, upstream)?))
            }
            Op::Concat(xs) => {
                let channels: Vec<usize> = xs.iter().map(|&x| v(x).shape()[1]).collect();
                for (x, g) in xs.iter().zip(split_channels(upstream, &channels)?) {
                    out.push((*x, g));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, upstream.clone()));
                out.push((*b, upstream.clone()));
            }
            Op::Reshape(x) => out.push((*x, upstream.clone().reshape(v(*x).shape())?)),
            Op::Argmax(_) => return Err(Error::NotDifferentiable(n.op.name().to_string())),
        }
        Ok(OpGradient {
            output_grad: upstream.clone(),
            input_grads: out,
        })
    }

    /// Reverse sweep from `root`, seeded with `seed` (shaped like `root`).
    pub fn backward(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(root).shape() {
            return Err(shape_err(
                "backward",
                format!(
                    "seed {:?} does not match root {:?}",
                    seed.shape(),
                    self.value(root).shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let op_grad = self.op_backward(Var(i), &upstream)?;
            grads[i] = Some(upstream);
            for (input, g) in op_grad.input_grads {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.accumulate(&g)?,
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 2, 2], 1.5), true);
        let y = tape.add(x, x).unwrap();
        let grads = tape.backward(y, Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0; 4]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[1, 2, 3, 3], |i| i as f64 * 0.1), true);
        let w = tape.leaf(Tensor::from_fn(&[2, 2, 3, 3], |i| 0.05 * i as f64 - 0.4), true);
        let y = tape.conv2d(x, w, None, ConvSpec::same(3)).unwrap();
        let z = tape.relu6(y);
        let grads = tape.backward(z, Tensor::zeros(&[1, 2, 3, 3])).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&g| g == 0.0));
        assert!(grads.get(w).unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn argmax_refuses_backward() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_fn(&[1, 3, 2, 2], |i| i as f32), true);
        let a = tape.argmax_channels(x).unwrap();
        assert_eq!(tape.value(a).data(), &[2.0; 4]);
        let err = tape.backward(a, Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap_err();
        assert_eq!(err, Error::NotDifferentiable("argmax".into()));
    }
}
