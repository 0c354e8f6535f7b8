//! Distribution- and location-based scores that have closed forms.

use alloc::format;

use crate::error::{Error, Result};
use crate::metrics::maps::{DensityMap, FixationData};

pub const DEFAULT_EPS: f64 = 1e-12;

/// `sum_i G_i * ln(eps + G_i / (eps + P_i))`.
pub fn kl_div(p: &DensityMap, g: &DensityMap, eps: f64) -> Result<f64> {
    p.same_size(g, "kl_div")?;
    Ok(p.values()
        .iter()
        .zip(g.values())
        .map(|(&pi, &gi)| gi * libm::log(eps + gi / (eps + pi)))
        .sum())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Pearson correlation of the two maps.
pub fn cc(p: &DensityMap, g: &DensityMap) -> Result<f64> {
    p.same_size(g, "cc")?;
    let (mp, sp) = mean_std(p.values());
    let (mg, sg) = mean_std(g.values());
    if sp == 0.0 || sg == 0.0 || is_constant(p.values()) || is_constant(g.values()) {
        return Err(Error::Unavailable("cc is undefined for a constant map".into()));
    }
    let n = p.values().len() as f64;
    let cov = p.values().iter().zip(g.values()).map(|(a, b)| (a - mp) * (b - mg)).sum::<f64>() / n;
    Ok((cov / (sp * sg)).clamp(-1.0, 1.0))
}

/// Mean of the standardized map (population std) over the fixations.
pub fn nss(p: &DensityMap, f: &FixationData) -> Result<f64> {
    f.check(p, "nss")?;
    let (m, s) = mean_std(p.values());
    if s == 0.0 || is_constant(p.values()) {
        return Err(Error::Unavailable("nss is undefined for a constant map".into()));
    }
    let total: f64 = f.points().iter().map(|&(r, c)| (p.at(r, c) - m) / s).sum();
    Ok(total / f.len() as f64)
}

/// Histogram intersection of the two maps after normalizing each.
pub fn sim(p: &DensityMap, g: &DensityMap) -> Result<f64> {
    p.same_size(g, "sim")?;
    let (sp, sg) = (p.sum(), g.sum());
    if sp <= 0.0 || sg <= 0.0 {
        return Err(Error::Unavailable("sim needs maps with positive mass".into()));
    }
    Ok(p.values().iter().zip(g.values()).map(|(a, b)| (a / sp).min(b / sg)).sum())
}

/// Mean log2 likelihood gain of `p` over `baseline` at the fixations, in
/// bits.
pub fn info_gain(p: &DensityMap, f: &FixationData, baseline: &DensityMap, eps: f64) -> Result<f64> {
    f.check(p, "info_gain")?;
    p.same_size(baseline, "info_gain")?;
    let total: f64 = f
        .points()
        .iter()
        .map(|&(r, c)| libm::log2(eps + p.at(r, c)) - libm::log2(eps + baseline.at(r, c)))
        .sum();
    Ok(total / f.len() as f64)
}

/// Center-bias baseline used when none is supplied: a Gaussian with
/// `sigma = H / 4`.
pub fn default_baseline(h: usize, w: usize) -> DensityMap {
    DensityMap::center_gaussian(h, w, h as f64 / 4.0)
}

/// Ensures a value is usable, naming the metric otherwise.
pub(crate) fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{name} evaluated to {v}")))
    }
}
