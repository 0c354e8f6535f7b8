//! One forward definition, several interpretations.
//!
//! The architecture in `arch.rs` is written once against [`Backend`]. The
//! eager backend computes tensors, the graph backend records a tape for
//! training, and the shape backend walks shapes only: it creates the
//! parameters when a model is built and produces the per-layer cost table.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::cdc::{cdc_forward, CdcParams};
use crate::error::{shape_err, Error, Result};
use crate::net::params::{kaiming_uniform, ParamStore};
use crate::ops::conv::{conv2d, ConvSpec};
use crate::ops::elementwise::{concat_channels, normalize_sum, relu6, sigmoid, softplus};
use crate::ops::linear::linear;
use crate::ops::norm::{batchnorm, BnMode, BnSaved};
use crate::ops::resample::{upsample, UpsampleMode};
use crate::real::Real;
use crate::tensor::Tensor;

/// Shape-level description of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvLayer {
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub groups: usize,
    pub bias: bool,
    /// Central difference mixing factor; `None` for a plain convolution.
    pub theta: Option<f64>,
}

impl ConvLayer {
    pub const fn new(cout: usize, k: usize) -> Self {
        Self {
            cout,
            k,
            stride: 1,
            groups: 1,
            bias: false,
            theta: None,
        }
    }

    pub const fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub const fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub const fn bias(mut self, b: bool) -> Self {
        self.bias = b;
        self
    }

    pub const fn cdc(mut self, theta: Option<f64>) -> Self {
        self.theta = theta;
        self
    }

    fn spec(&self) -> ConvSpec {
        ConvSpec::new(self.stride, self.k / 2).grouped(self.groups)
    }
}

pub(crate) fn weight_name(layer: &str) -> String {
    format!("{layer}.weight")
}

pub(crate) fn bias_name(layer: &str) -> String {
    format!("{layer}.bias")
}

pub(crate) fn bn_names(layer: &str) -> [String; 4] {
    [
        format!("{layer}.bn.weight"),
        format!("{layer}.bn.bias"),
        format!("{layer}.bn.running_mean"),
        format!("{layer}.bn.running_var"),
    ]
}

/// The operations the architecture is written against. `layer` names the
/// parameter prefix and the cost-table row an op is charged to.
pub trait Backend<T: Real> {
    type V: Clone;

    fn shape(&self, v: &Self::V) -> Vec<usize>;
    fn conv(&mut self, layer: &str, x: &Self::V, c: ConvLayer) -> Result<Self::V>;
    fn batchnorm(&mut self, layer: &str, x: &Self::V) -> Result<Self::V>;
    fn linear(&mut self, layer: &str, x: &Self::V, dout: usize) -> Result<Self::V>;
    fn relu6(&mut self, layer: &str, x: &Self::V) -> Result<Self::V>;
    fn sigmoid(&mut self, layer: &str, x: &Self::V) -> Result<Self::V>;
    fn softplus(&mut self, layer: &str, x: &Self::V) -> Result<Self::V>;
    fn normalize_sum(&mut self, layer: &str, x: &Self::V) -> Result<Self::V>;
    fn upsample(&mut self, layer: &str, x: &Self::V, mode: UpsampleMode) -> Result<Self::V>;
    fn concat(&mut self, layer: &str, xs: &[Self::V]) -> Result<Self::V>;
    fn add(&mut self, layer: &str, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn reshape(&mut self, layer: &str, x: &Self::V, shape: &[usize]) -> Result<Self::V>;
}

fn expect_shape<T: Real>(t: &Tensor<T>, name: &str, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::Weights(format!(
            "{name} has shape {:?}, the architecture needs {shape:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Plain tensor evaluation; batchnorm uses running statistics.
pub struct Eager<'a, T> {
    pub params: &'a ParamStore<T>,
}

impl<T: Real> Backend<T> for Eager<'_, T> {
    type V = Tensor<T>;

    fn shape(&self, v: &Tensor<T>) -> Vec<usize> {
        v.shape().to_vec()
    }

    fn conv(&mut self, layer: &str, x: &Tensor<T>, c: ConvLayer) -> Result<Tensor<T>> {
        let w = self.params.get(&weight_name(layer))?;
        let b = if c.bias { Some(self.params.get(&bias_name(layer))?) } else { None };
        match c.theta {
            Some(theta) => cdc_forward(x, &CdcParams { w, bias: b, theta }),
            None => conv2d(x, w, b, c.spec()),
        }
    }

    fn batchnorm(&mut self, layer: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [g, b, m, v] = bn_names(layer);
        let p = self.params;
        Ok(batchnorm(x, p.get(&g)?, p.get(&b)?, p.get(&m)?, p.get(&v)?, BnMode::Infer)?.0)
    }

    fn linear(&mut self, layer: &str, x: &Tensor<T>, _dout: usize) -> Result<Tensor<T>> {
        let b = self.params.get(&bias_name(layer)).ok();
        linear(x, self.params.get(&weight_name(layer))?, b)
    }

    fn relu6(&mut self, _: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(relu6(x))
    }

    fn sigmoid(&mut self, _: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(sigmoid(x))
    }

    fn softplus(&mut self, _: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(softplus(x))
    }

    fn normalize_sum(&mut self, _: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
        normalize_sum(x)
    }

    fn upsample(&mut self, _: &str, x: &Tensor<T>, mode: UpsampleMode) -> Result<Tensor<T>> {
        upsample(x, 2, mode)
    }

    fn concat(&mut self, _: &str, xs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let refs: Vec<&Tensor<T>> = xs.iter().collect();
        concat_channels(&refs)
    }

    fn add(&mut self, _: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        a.add(b)
    }

    fn reshape(&mut self, _: &str, x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
        x.clone().reshape(shape)
    }
}

/// Batch statistics of one batchnorm layer observed in a train-mode pass.
#[derive(Clone, Debug)]
pub struct BnObservation<T> {
    pub layer: String,
    pub saved: BnSaved<T>,
    /// Number of values each channel was averaged over.
    pub count: usize,
}

/// Records the forward pass on a tape so it can be differentiated.
pub struct Graph<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a ParamStore<T>,
    pub mode: BnMode,
    /// Leaf variable of every parameter touched so far.
    pub vars: BTreeMap<String, Var>,
    pub observed: Vec<BnObservation<T>>,
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a ParamStore<T>, mode: BnMode) -> Self {
        Self {
            tape,
            params,
            mode,
            vars: BTreeMap::new(),
            observed: Vec::new(),
        }
    }

    fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let p = self.params.entry(name)?;
        let v = self.tape.leaf(p.value.clone(), p.trainable);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }
}

impl<T: Real> Backend<T> for Graph<'_, T> {
    type V = Var;

    fn shape(&self, v: &Var) -> Vec<usize> {
        self.tape.value(*v).shape().to_vec()
    }

    fn conv(&mut self, layer: &str, x: &Var, c: ConvLayer) -> Result<Var> {
        let w = self.param(&weight_name(layer))?;
        let b = if c.bias { Some(self.param(&bias_name(layer))?) } else { None };
        match c.theta {
            Some(theta) => self.tape.cdc(*x, w, b, theta),
            None => self.tape.conv2d(*x, w, b, c.spec()),
        }
    }

    fn batchnorm(&mut self, layer: &str, x: &Var) -> Result<Var> {
        let [g, b, m, v] = bn_names(layer);
        let (g, b) = (self.param(&g)?, self.param(&b)?);
        let (rm, rv) = (self.params.get(&m)?, self.params.get(&v)?);
        let (y, saved) = self.tape.batchnorm(*x, g, b, rm, rv, self.mode)?;
        if self.mode == BnMode::Train {
            let s = self.tape.value(*x).shape();
            self.observed.push(BnObservation {
                layer: layer.to_string(),
                saved,
                count: s[0] * s[2] * s[3],
            });
        }
        Ok(y)
    }

    fn linear(&mut self, layer: &str, x: &Var, _dout: usize) -> Result<Var> {
        let w = self.param(&weight_name(layer))?;
        let bn = bias_name(layer);
        let b = if self.params.contains(&bn) { Some(self.param(&bn)?) } else { None };
        self.tape.linear(*x, w, b)
    }

    fn relu6(&mut self, _: &str, x: &Var) -> Result<Var> {
        Ok(self.tape.relu6(*x))
    }

    fn sigmoid(&mut self, _: &str, x: &Var) -> Result<Var> {
        Ok(self.tape.sigmoid(*x))
    }

    fn softplus(&mut self, _: &str, x: &Var) -> Result<Var> {
        Ok(self.tape.softplus(*x))
    }

    fn normalize_sum(&mut self, _: &str, x: &Var) -> Result<Var> {
        self.tape.normalize_sum(*x)
    }

    fn upsample(&mut self, _: &str, x: &Var, mode: UpsampleMode) -> Result<Var> {
        self.tape.upsample(*x, 2, mode)
    }

    fn concat(&mut self, _: &str, xs: &[Var]) -> Result<Var> {
        self.tape.concat_channels(xs)
    }

    fn add(&mut self, _: &str, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn reshape(&mut self, _: &str, x: &Var, shape: &[usize]) -> Result<Var> {
        self.tape.reshape(*x, shape)
    }
}

/// Cost of one named layer: its parameters and the work of every op
/// charged to it.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerCost {
    pub name: String,
    /// Op kinds in call order, e.g. `conv3x3+bn+relu6`.
    pub ops: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub macs: u64,
    pub flops: u64,
}

enum Store<'a, T> {
    /// Parameters are created on first use.
    Declare { store: ParamStore<T>, rng: ChaCha8Rng },
    /// Parameters must already exist with matching shapes.
    Check(&'a ParamStore<T>),
}

/// Shape-only walk. Creates or checks parameters and tallies costs:
/// convolution MACs are `k*k*(Cin/groups)*Cout*H'*W'`, central difference
/// layers add `Cout*H'*W'`, linear layers `Din*Dout`, one MAC is two
/// FLOPs, and arithmetic elementwise ops cost one FLOP per output element.
/// Pure data movement (nearest upsampling, concatenation, reshape) is free.
pub struct Shapes<'a, T> {
    store: Store<'a, T>,
    pub rows: Vec<LayerCost>,
}

impl<'a, T: Real> Shapes<'a, T> {
    pub fn declare(rng: ChaCha8Rng) -> Self {
        Self {
            store: Store::Declare {
                store: ParamStore::new(),
                rng,
            },
            rows: Vec::new(),
        }
    }

    pub fn check(params: &'a ParamStore<T>) -> Self {
        Self {
            store: Store::Check(params),
            rows: Vec::new(),
        }
    }

    pub fn into_params(self) -> Option<ParamStore<T>> {
        match self.store {
            Store::Declare { store, .. } => Some(store),
            Store::Check(_) => None,
        }
    }

    /// Makes sure `name` exists with `shape`; returns its element count if
    /// it is trainable.
    fn require(&mut self, name: &str, shape: &[usize], init: Init) -> Result<usize> {
        match &mut self.store {
            Store::Declare { store, rng } => {
                let trainable = !matches!(init, Init::Zeros(false) | Init::Ones(false));
                let value = match init {
                    Init::Kaiming(fan_in) => kaiming_uniform(shape, fan_in, rng),
                    Init::Zeros(_) => Tensor::zeros(shape),
                    Init::Ones(_) => Tensor::full(shape, T::ONE),
                };
                store.insert(name, value, trainable)?;
                Ok(if trainable { shape.iter().product() } else { 0 })
            }
            Store::Check(store) => {
                let p = store.entry(name)?;
                expect_shape(&p.value, name, shape)?;
                Ok(if p.trainable { p.value.numel() } else { 0 })
            }
        }
    }

    fn charge(&mut self, layer: &str, op: &str, out: &[usize], params: usize, macs: u64, elementwise: u64) {
        let row = match self.rows.iter_mut().rev().find(|r| r.name == layer) {
            Some(r) => {
                r.ops.push('+');
                r
            }
            None => {
                self.rows.push(LayerCost {
                    name: layer.to_string(),
                    ops: String::new(),
                    output_shape: Vec::new(),
                    params: 0,
                    macs: 0,
                    flops: 0,
                });
                self.rows.last_mut().expect("just pushed")
            }
        };
        row.ops.push_str(op);
        row.output_shape = out.to_vec();
        row.params += params;
        row.macs += macs;
        row.flops += 2 * macs + elementwise;
    }

    fn elementwise(&mut self, layer: &str, op: &str, x: &[usize], flops_per: u64) -> Vec<usize> {
        let n: usize = x.iter().product();
        self.charge(layer, op, x, 0, 0, flops_per * n as u64);
        x.to_vec()
    }
}

#[derive(Clone, Copy)]
enum Init {
    Kaiming(usize),
    /// The flag says whether the tensor is trainable.
    Zeros(bool),
    Ones(bool),
}

fn dims4(op: &'static str, s: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *s {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(shape_err(op, format!("expected N,C,H,W, got {s:?}"))),
    }
}

impl<T: Real> Backend<T> for Shapes<'_, T> {
    type V = Vec<usize>;

    fn shape(&self, v: &Vec<usize>) -> Vec<usize> {
        v.clone()
    }

    fn conv(&mut self, layer: &str, x: &Vec<usize>, c: ConvLayer) -> Result<Vec<usize>> {
        let (n, cin, h, w) = dims4("conv2d", x)?;
        if c.groups == 0 || cin % c.groups != 0 || c.cout % c.groups != 0 {
            return Err(shape_err("conv2d", format!("{cin} -> {} channels in {} groups", c.cout, c.groups)));
        }
        if c.k % 2 == 0 || h + 2 * (c.k / 2) < c.k || c.stride == 0 {
            return Err(shape_err("conv2d", format!("kernel {} stride {} on {h}x{w}", c.k, c.stride)));
        }
        let cin_g = cin / c.groups;
        let spec = c.spec();
        let out = vec![n, c.cout, spec.output_len(h, c.k), spec.output_len(w, c.k)];
        let mut params = self.require(&weight_name(layer), &[c.cout, cin_g, c.k, c.k], Init::Kaiming(cin_g * c.k * c.k))?;
        if c.bias {
            params += self.require(&bias_name(layer), &[c.cout], Init::Zeros(true))?;
        }
        let positions = (n * out[2] * out[3]) as u64;
        let mut macs = (c.k * c.k * cin_g * c.cout) as u64 * positions;
        let kind = if c.theta.is_some() {
            macs += c.cout as u64 * positions;
            "cdc"
        } else if c.groups > 1 && c.groups == cin {
            "dwconv"
        } else {
            "conv"
        };
        self.charge(layer, &format!("{kind}{k}x{k}", k = c.k), &out, params, macs, 0);
        Ok(out)
    }

    fn batchnorm(&mut self, layer: &str, x: &Vec<usize>) -> Result<Vec<usize>> {
        let c = dims4("batchnorm", x)?.1;
        let [g, b, m, v] = bn_names(layer);
        let params = self.require(&g, &[c], Init::Ones(true))? + self.require(&b, &[c], Init::Zeros(true))?;
        self.require(&m, &[c], Init::Zeros(false))?;
        self.require(&v, &[c], Init::Ones(false))?;
        let n: usize = x.iter().product();
        self.charge(layer, "bn", x, params, 0, n as u64);
        Ok(x.clone())
    }

    fn linear(&mut self, layer: &str, x: &Vec<usize>, dout: usize) -> Result<Vec<usize>> {
        let [n, din] = x[..] else {
            return Err(shape_err("linear", format!("expected N,Din, got {x:?}")));
        };
        let params = self.require(&weight_name(layer), &[dout, din], Init::Kaiming(din))?
            + self.require(&bias_name(layer), &[dout], Init::Zeros(true))?;
        let out = vec![n, dout];
        self.charge(layer, "linear", &out, params, (n * din * dout) as u64, 0);
        Ok(out)
    }

    fn relu6(&mut self, layer: &str, x: &Vec<usize>) -> Result<Vec<usize>> {
        Ok(self.elementwise(layer, "relu6", x, 1))
    }

    fn sigmoid(&mut self, layer: &str, x: &Vec<usize>) -> Result<Vec<usize>> {
        Ok(self.elementwise(layer, "sigmoid", x, 1))
    }

    fn softplus(&mut self, layer: &str, x: &Vec<usize>) -> Result<Vec<usize>> {
        Ok(self.elementwise(layer, "softplus", x, 1))
    }

    fn normalize_sum(&mut self, layer: &str, x: &Vec<usize>) -> Result<Vec<usize>> {
        Ok(self.elementwise(layer, "normalize", x, 1))
    }

    fn upsample(&mut self, layer: &str, x: &Vec<usize>, mode: UpsampleMode) -> Result<Vec<usize>> {
        let (n, c, h, w) = dims4("upsample", x)?;
        let out = [n, c, 2 * h, 2 * w];
        let per = match mode {
            UpsampleMode::Nearest => 0,
            UpsampleMode::Bilinear => 1,
        };
        Ok(self.elementwise(layer, "upsample", &out, per))
    }

    fn concat(&mut self, layer: &str, xs: &[Vec<usize>]) -> Result<Vec<usize>> {
        let (n, _, h, w) = dims4("concat_channels", &xs[0])?;
        let mut c = 0;
        for s in xs {
            let (n2, c2, h2, w2) = dims4("concat_channels", s)?;
            if (n2, h2, w2) != (n, h, w) {
                return Err(shape_err("concat_channels", format!("{s:?} vs {:?}", xs[0])));
            }
            c += c2;
        }
        Ok(self.elementwise(layer, "concat", &[n, c, h, w], 0))
    }

    fn add(&mut self, layer: &str, a: &Vec<usize>, b: &Vec<usize>) -> Result<Vec<usize>> {
        if a != b {
            return Err(shape_err("add", format!("{a:?} vs {b:?}")));
        }
        Ok(self.elementwise(layer, "add", a, 1))
    }

    fn reshape(&mut self, layer: &str, x: &Vec<usize>, shape: &[usize]) -> Result<Vec<usize>> {
        if x.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(shape_err("reshape", format!("{x:?} -> {shape:?}")));
        }
        Ok(self.elementwise(layer, "reshape", shape, 0))
    }
}
