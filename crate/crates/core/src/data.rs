//! Image preprocessing, ground-truth density construction, seeded splits and
//! the synthetic saliency dataset used by tests and quick training runs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, shape_err, Result};
use crate::metrics::{DensityMap, FixationData};
use crate::ops::resample::bilinear_taps;
use crate::real::Real;
use crate::tensor::Tensor;

/// One image with its saliency ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[3,H,W]` in `[0,1]`.
    pub image: Tensor<f32>,
    pub density: DensityMap,
    pub fixations: FixationData,
}

fn dims3<T: Real>(image: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        ref s => Err(shape_err(op, format!("expected a non-empty [C,H,W] image, got {s:?}"))),
    }
}

/// Half-pixel bilinear resize of a `[C,H,W]` image.
pub fn resize_bilinear<T: Real>(image: &Tensor<T>, size: (usize, usize)) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(image, "resize_bilinear")?;
    let (oh, ow) = size;
    if oh == 0 || ow == 0 {
        return Err(arg_err("resize_bilinear", "target size must be positive"));
    }
    let (ty, tx) = (bilinear_taps(h, oh), bilinear_taps(w, ow));
    let src = image.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in &ty {
            for x in &tx {
                let at = |r: usize, col: usize| plane[r * w + col].to_f64();
                let top = at(y.lo, x.lo) * (1.0 - x.frac) + at(y.lo, x.hi) * x.frac;
                let bottom = at(y.hi, x.lo) * (1.0 - x.frac) + at(y.hi, x.hi) * x.frac;
                out.push(T::from_f64(top * (1.0 - y.frac) + bottom * y.frac));
            }
        }
    }
    Tensor::new(&[c, oh, ow], out)
}

/// Default per-channel statistics for from-scratch training.
pub const PIXEL_MEAN: [f64; 3] = [0.5; 3];
pub const PIXEL_STD: [f64; 3] = [0.5; 3];
/// ImageNet statistics, for imported backbones.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Channelwise `(x - mean) / std` on a `[C,H,W]` image.
pub fn normalize_pixels<T: Real>(image: &Tensor<T>, mean: &[f64], std: &[f64]) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(image, "normalize_pixels")?;
    if mean.len() != c || std.len() != c {
        return Err(arg_err(
            "normalize_pixels",
            format!("{c} channels but {} means and {} stds", mean.len(), std.len()),
        ));
    }
    if let Some(s) = std.iter().find(|s| !(**s > 0.0)) {
        return Err(arg_err("normalize_pixels", format!("std must be positive, got {s}")));
    }
    let plane = h * w;
    Ok(Tensor::from_fn(image.shape(), |i| {
        let ch = i / plane;
        T::from_f64((image.data()[i].to_f64() - mean[ch]) / std[ch])
    }))
}

/// Default ground-truth blur for a map of the given height.
pub fn default_sigma(height: usize) -> f64 {
    height as f64 / 16.0
}

/// Gaussian blob around one fixation, truncated at `4 sigma`, clipped to the
/// grid and scaled to unit mass.
fn splat(out: &mut [f64], (h, w): (usize, usize), (r, c): (usize, usize), sigma: f64, weight: f64) {
    let reach = libm::ceil(4.0 * sigma) as isize;
    let (r, c) = (r as isize, c as isize);
    let rows = (r - reach).max(0)..(r + reach + 1).min(h as isize);
    let cols = (c - reach).max(0)..(c + reach + 1).min(w as isize);
    let cut = 16.0 * sigma * sigma;
    let mut cells = Vec::new();
    let mut mass = 0.0;
    for y in rows {
        for x in cols.clone() {
            let d2 = ((y - r) * (y - r) + (x - c) * (x - c)) as f64;
            if d2 <= cut {
                let v = libm::exp(-d2 / (2.0 * sigma * sigma));
                mass += v;
                cells.push((y as usize * w + x as usize, v));
            }
        }
    }
    for (i, v) in cells {
        out[i] += weight * v / mass;
    }
}

/// Ground-truth density: the average of one unit-mass truncated Gaussian per
/// fixation. Because each blob is normalized on its own, the map is linear
/// in the fixation set and translation-equivariant away from the borders.
pub fn fixations_to_density(f: &FixationData, sigma: f64) -> Result<DensityMap> {
    if f.is_empty() {
        return Err(arg_err("fixations_to_density", "no fixations"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(arg_err("fixations_to_density", format!("sigma must be positive, got {sigma}")));
    }
    let size = f.size();
    let mut out = vec![0.0; size.0 * size.1];
    let weight = 1.0 / f.len() as f64;
    for &p in f.points() {
        splat(&mut out, size, p, sigma, weight);
    }
    DensityMap::new(size.0, size.1, out)
}

/// Seeded permutation of `0..n` cut into consecutive parts of the given
/// sizes. Parts are disjoint; indices beyond the counts are left out.
pub fn split_random(n: usize, counts: &[usize], seed: u64) -> Result<Vec<Vec<usize>>> {
    let total: usize = counts.iter().sum();
    if total > n {
        return Err(arg_err("split_random", format!("counts {counts:?} need {total} entries, only {n} available")));
    }
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            log::warn!("split {k} is empty");
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(counts.len());
    let mut at = 0;
    for &c in counts {
        parts.push(order[at..at + c].to_vec());
        at += c;
    }
    Ok(parts)
}

/// Fixations recorded per synthetic image.
pub const SYNTH_FIXATIONS: usize = 24;

/// A bright blob in a synthetic image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub row: f64,
    pub col: f64,
    pub sigma: f64,
    pub amplitude: f64,
}

fn gaussian_at(b: &Blob, r: f64, c: f64) -> f64 {
    let d2 = (r - b.row) * (r - b.row) + (c - b.col) * (c - b.col);
    libm::exp(-d2 / (2.0 * b.sigma * b.sigma))
}

/// One to three well separated blobs; the first is the brightest by a clear
/// margin.
pub fn synth_blobs(size: usize, rng: &mut impl Rng) -> Vec<Blob> {
    let s = size as f64;
    let count = rng.random_range(1..=3);
    let mut blobs: Vec<Blob> = Vec::with_capacity(count);
    let mut tries = 0;
    while blobs.len() < count && tries < 200 {
        tries += 1;
        let sigma = s * rng.random_range(1.0 / 14.0..1.0 / 9.0);
        let b = Blob {
            row: rng.random_range(0.15 * s..0.85 * s),
            col: rng.random_range(0.15 * s..0.85 * s),
            sigma,
            amplitude: if blobs.is_empty() { 1.0 } else { rng.random_range(0.3..0.6) },
        };
        let apart = blobs.iter().all(|o| {
            let d = libm::sqrt((o.row - b.row) * (o.row - b.row) + (o.col - b.col) * (o.col - b.col));
            d > 3.0 * (o.sigma + b.sigma)
        });
        if apart {
            blobs.push(b);
        }
    }
    blobs
}

/// Expected fixation density before any center bias: the amplitude-weighted
/// blob mixture.
pub fn blob_density(size: usize, blobs: &[Blob]) -> DensityMap {
    let values = (0..size * size)
        .map(|i| {
            let (r, c) = ((i / size) as f64, (i % size) as f64);
            blobs.iter().map(|b| b.amplitude * gaussian_at(b, r, c)).sum::<f64>()
        })
        .collect();
    DensityMap::new(size, size, values).expect("at least one blob")
}

/// Central Gaussian mixed into synthetic ground truth.
pub fn synth_center_prior(size: usize) -> DensityMap {
    DensityMap::center_gaussian(size, size, size as f64 / 6.0)
}

fn sample_fixations(d: &DensityMap, n: usize, rng: &mut impl Rng) -> Result<FixationData> {
    let mut cdf = Vec::with_capacity(d.values().len());
    let mut acc = 0.0;
    for v in d.values() {
        acc += v;
        cdf.push(acc);
    }
    let w = d.width();
    let points = (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            (i / w, i % w)
        })
        .collect();
    FixationData::new(d.height(), d.width(), points)
}

/// Synthetic saliency data: images with one to three bright blobs on noise,
/// ground truth mixing the blob densities with a fixed central Gaussian at
/// `center_bias_weight`, and fixations drawn from that ground truth.
/// Fully determined by `seed`.
pub fn synth_dataset(n: usize, size: usize, center_bias_weight: f64, seed: u64) -> Result<Vec<Sample>> {
    if size < 8 {
        return Err(arg_err("synth_dataset", format!("size {size} is too small")));
    }
    if !(0.0..=1.0).contains(&center_bias_weight) {
        return Err(arg_err("synth_dataset", format!("center bias weight {center_bias_weight} outside [0,1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = synth_center_prior(size);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let blobs = synth_blobs(size, &mut rng);
        let tint: [f64; 3] = core::array::from_fn(|_| rng.random_range(0.7..1.0));
        let mut image = Vec::with_capacity(3 * size * size);
        for t in tint {
            for i in 0..size * size {
                let (r, c) = ((i / size) as f64, (i % size) as f64);
                let bump: f64 = blobs.iter().map(|b| b.amplitude * gaussian_at(b, r, c)).sum();
                let v = rng.random_range(0.0..0.25) + 0.75 * t * bump;
                image.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        let density = if center_bias_weight >= 1.0 {
            prior.clone()
        } else {
            let blob = blob_density(size, &blobs);
            let mix = blob
                .values()
                .iter()
                .zip(prior.values())
                .map(|(b, p)| (1.0 - center_bias_weight) * b + center_bias_weight * p)
                .collect();
            DensityMap::new(size, size, mix)?
        };
        let fixations = sample_fixations(&density, SYNTH_FIXATIONS, &mut rng)?;
        out.push(Sample {
            id: format!("synth_{k:05}"),
            image: Tensor::new(&[3, size, size], image)?,
            density,
            fixations,
        });
    }
    Ok(out)
}
