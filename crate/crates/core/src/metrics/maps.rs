use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// A non-negative map over an `h x w` pixel grid, row-major.
///
/// [`DensityMap::new`] renormalizes to unit mass. [`DensityMap::raw`] keeps
/// the values as given, for metrics that accept arbitrary saliency scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMap {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl DensityMap {
    /// Builds a density, dividing by the total mass.
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        let mut m = Self::raw(h, w, values)?;
        let total: f64 = m.values.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Numeric(format!("map mass {total} cannot be normalized")));
        }
        m.values.iter_mut().for_each(|v| *v /= total);
        Ok(m)
    }

    /// Wraps values without normalizing. Values must be finite and
    /// non-negative.
    pub fn raw(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || values.len() != h * w {
            return Err(shape_err("density_map", format!("{} values for a {h}x{w} grid", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Numeric(format!("map value {v} is negative or not finite")));
        }
        Ok(Self { h, w, values })
    }

    /// Converts a `[H,W]`, `[1,H,W]` or `[1,1,H,W]` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
            return Err(shape_err("density_map", format!("tensor {s:?} is not a single map")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        Self::new(h, w, t.data().iter().map(|v| v.to_f64()).collect())
    }

    /// Splits an `[N,1,H,W]` batch into densities.
    pub fn batch_from_tensor<T: Real>(t: &Tensor<T>) -> Result<Vec<Self>> {
        let (n, c, h, w) = t.dims4("density_map")?;
        if c != 1 {
            return Err(shape_err("density_map", format!("{c} channels, expected 1")));
        }
        t.data()
            .chunks(h * w)
            .take(n)
            .map(|c| Self::new(h, w, c.iter().map(|v| v.to_f64()).collect()))
            .collect()
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, 1, self.h, self.w], |i| T::from_f64(self.values[i]))
    }

    pub fn uniform(h: usize, w: usize) -> Self {
        let v = 1.0 / (h * w) as f64;
        Self {
            h,
            w,
            values: alloc::vec![v; h * w],
        }
    }

    /// Isotropic Gaussian centered on the grid, normalized.
    pub fn center_gaussian(h: usize, w: usize, sigma: f64) -> Self {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let values = (0..h * w)
            .map(|i| {
                let (dy, dx) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
                libm::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma))
            })
            .collect();
        Self::new(h, w, values).expect("gaussian has positive mass")
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn size(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.w + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Flat index of the largest value (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub(crate) fn same_size(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.size() != other.size() {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.size(), other.size())));
        }
        Ok(())
    }

    /// Area-averaging resize to `h x w` followed by renormalization.
    pub fn downsample(&self, h: usize, w: usize) -> Result<Self> {
        let rows = area_weights(self.h, h);
        let cols = area_weights(self.w, w);
        let mut out = alloc::vec![0.0; h * w];
        for (r, rw) in rows.iter().enumerate() {
            for &(src_r, fr) in rw {
                for (c, cw) in cols.iter().enumerate() {
                    for &(src_c, fc) in cw {
                        out[r * w + c] += fr * fc * self.at(src_r, src_c);
                    }
                }
            }
        }
        Self::new(h, w, out)
    }
}

/// For every destination cell the overlapping source cells and their
/// overlap lengths in destination units.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let (lo, hi) = (d as f64 * scale, (d + 1) as f64 * scale);
            let first = libm::floor(lo) as usize;
            let last = (libm::ceil(hi) as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = hi.min(s as f64 + 1.0) - lo.max(s as f64);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Fixation locations on an `h x w` grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixationData {
    h: usize,
    w: usize,
    points: Vec<(usize, usize)>,
}

impl FixationData {
    pub fn new(h: usize, w: usize, points: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(p) = points.iter().find(|&&(r, c)| r >= h || c >= w) {
            return Err(Error::InvalidArgument {
                op: "fixations",
                detail: format!("point {p:?} outside the {h}x{w} map"),
            });
        }
        Ok(Self { h, w, points })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distinct fixated pixels as flat indices, sorted.
    pub fn unique_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.points.iter().map(|&(r, c)| r * self.w + c).collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    pub(crate) fn check(&self, map: &DensityMap, op: &'static str) -> Result<()> {
        if self.size() != map.size() {
            return Err(shape_err(op, format!("fixations on {:?}, map {:?}", self.size(), map.size())));
        }
        if self.points.is_empty() {
            return Err(Error::Unavailable(format!("{op} needs at least one fixation")));
        }
        Ok(())
    }
}
