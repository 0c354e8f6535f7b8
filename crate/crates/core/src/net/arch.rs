use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg_err, Result};
use crate::net::backend::{Backend, ConvLayer};
use crate::net::config::{ModelConfig, SkipMode};
use crate::real::Real;

fn conv_bn_relu<T: Real, B: Backend<T>>(b: &mut B, layer: &str, x: &B::V, c: ConvLayer) -> Result<B::V> {
    let y = b.conv(layer, x, c)?;
    let y = b.batchnorm(layer, &y)?;
    b.relu6(layer, &y)
}

/// MobileNetV2 block: 1x1 expand, 3x3 depthwise, linear 1x1 projection and
/// a shortcut when shapes allow. Also returns the depthwise activation,
/// the widest feature of the block, which serves as its skip tap.
pub fn inverted_residual<T: Real, B: Backend<T>>(
    b: &mut B,
    name: &str,
    x: &B::V,
    expansion: usize,
    cout: usize,
    stride: usize,
) -> Result<(B::V, B::V)> {
    if stride != 1 && stride != 2 {
        return Err(arg_err("inverted_residual", format!("stride {stride} is not 1 or 2")));
    }
    let cin = b.shape(x)[1];
    let hidden = cin * expansion;
    let h = if expansion == 1 {
        x.clone()
    } else {
        conv_bn_relu(b, &format!("{name}.expand"), x, ConvLayer::new(hidden, 1))?
    };
    let tap = conv_bn_relu(
        b,
        &format!("{name}.depthwise"),
        &h,
        ConvLayer::new(hidden, 3).stride(stride).groups(hidden),
    )?;
    let proj = format!("{name}.project");
    let y = b.conv(&proj, &tap, ConvLayer::new(cout, 1))?;
    let mut y = b.batchnorm(&proj, &y)?;
    if stride == 1 && cin == cout {
        y = b.add(&format!("{name}.residual"), &y, x)?;
    }
    Ok((y, tap))
}

/// 1x1 convolution with bias, batchnorm and relu6 that shrinks a skip
/// feature to `reduced` channels.
pub fn skip_reduce<T: Real, B: Backend<T>>(b: &mut B, name: &str, x: &B::V, reduced: usize) -> Result<B::V> {
    let c = b.shape(x)[1];
    if reduced >= c {
        log::warn!("{name}: reducing {c} channels to {reduced} does not shrink the skip");
    }
    conv_bn_relu(b, name, x, ConvLayer::new(reduced, 1).bias(true))
}

/// 2D fully-connected branch: a 1x1 squeeze, a dense map from the whole
/// bottleneck to one neuron per grid cell, and a sigmoid. Returns
/// `[N,1,h,w]`.
pub fn fc2d<T: Real, B: Backend<T>>(b: &mut B, x: &B::V, pre_channels: usize) -> Result<B::V> {
    let s = b.shape(x);
    let (n, h, w) = (s[0], s[2], s[3]);
    let pre = b.conv("fc2d.pre", x, ConvLayer::new(pre_channels, 1).bias(true))?;
    let pre = b.relu6("fc2d.pre", &pre)?;
    let flat = b.reshape("fc2d.linear", &pre, &[n, pre_channels * h * w])?;
    let y = b.linear("fc2d.linear", &flat, h * w)?;
    let y = b.sigmoid("fc2d.linear", &y)?;
    b.reshape("fc2d.linear", &y, &[n, 1, h, w])
}

/// The full network; `x` is `[N,3,H,W]`, the result `[N,1,H,W]` with every
/// sample summing to one.
pub fn network<T: Real, B: Backend<T>>(cfg: &ModelConfig, b: &mut B, x: &B::V) -> Result<B::V> {
    let theta = cfg.uses_cdc().then_some(cfg.theta);
    let mut x = conv_bn_relu(b, "stem", x, ConvLayer::new(cfg.stem_channels, 3).stride(2))?;

    let mut taps = Vec::with_capacity(cfg.levels());
    for (si, st) in cfg.encoder_stages.iter().enumerate() {
        let mut tap = None;
        for bi in 0..st.blocks {
            let stride = if bi == 0 && si > 0 { 2 } else { 1 };
            let name = format!("encoder.stage{}.block{}", si + 1, bi + 1);
            let (y, t) = inverted_residual(b, &name, &x, st.expansion, st.channels, stride)?;
            x = y;
            tap = Some(t);
        }
        taps.push(tap.expect("stages have at least one block"));
    }

    let skips = match cfg.skip_mode {
        SkipMode::Copy => taps,
        SkipMode::Reduce => taps
            .iter()
            .enumerate()
            .map(|(i, t)| skip_reduce(b, &format!("skip.level{}", i + 1), t, cfg.skip_reduced_channels))
            .collect::<Result<Vec<_>>>()?,
    };

    let fc_map = if cfg.uses_fc() { Some(fc2d(b, &x, cfg.fc_pre_channels)?) } else { None };

    let levels = cfg.levels();
    let mut y = b.concat("center.concat", &[x, skips[levels - 1].clone()])?;
    for (k, &c) in cfg.center_channels.iter().enumerate() {
        let name = format!("center.conv{}", k + 1);
        let mut z = b.conv(&name, &y, ConvLayer::new(c, 3).cdc(theta))?;
        if k == 0 {
            if let Some(map) = &fc_map {
                // same as feeding the map to this conv as one more input channel
                let m = b.conv("fc2d.merge", map, ConvLayer::new(c, 3).cdc(theta))?;
                z = b.add("fc2d.merge", &z, &m)?;
            }
        }
        let z = b.batchnorm(&name, &z)?;
        y = b.relu6(&name, &z)?;
    }

    for (i, &c) in cfg.decoder_channels.iter().enumerate() {
        let name = format!("decoder.level{}", i + 1);
        let mut z = b.upsample(&format!("{name}.upsample"), &y, cfg.upsample_mode)?;
        if i + 2 <= levels {
            z = b.concat(&format!("{name}.concat"), &[z, skips[levels - 2 - i].clone()])?;
        }
        let z = conv_bn_relu(b, &format!("{name}.conv"), &z, ConvLayer::new(c, 3).cdc(theta))?;
        y = conv_bn_relu(b, &format!("{name}.fuse"), &z, ConvLayer::new(c, 1))?;
    }

    for (k, &c) in cfg.head_channels.iter().enumerate() {
        y = conv_bn_relu(b, &format!("head.conv{}", k + 1), &y, ConvLayer::new(c, 1))?;
    }
    let y = b.conv("head.out", &y, ConvLayer::new(1, 1).bias(true))?;
    let y = b.softplus("head.out", &y)?;
    b.normalize_sum("head.normalize", &y)
}

/// Dotted names of the parameters that belong to the fc2d branch.
pub fn is_fc2d_param(name: &str) -> bool {
    name.starts_with("fc2d.")
}

pub(crate) fn input_shape(cfg: &ModelConfig, n: usize) -> Vec<usize> {
    vec![n, 3, cfg.input_size.0, cfg.input_size.1]
}
