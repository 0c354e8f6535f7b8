//! ROC areas. Every variant reduces to the pair statistic
//! `P(s+ > s-) + 0.5 * P(s+ == s-)` between positive and negative scores,
//! which equals the trapezoidal area of the exact ROC curve swept over
//! every distinct threshold.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::metrics::maps::{DensityMap, FixationData};

/// Pair statistic between two score samples. `O((P + N) log N)`.
pub fn pair_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut sorted = neg.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut wins = 0.0;
    for &s in pos {
        let below = sorted.partition_point(|&v| v < s);
        let tied = sorted[below..].partition_point(|&v| v <= s);
        wins += below as f64 + 0.5 * tied as f64;
    }
    wins / (pos.len() as f64 * neg.len() as f64)
}

/// Fixated pixels against every other pixel.
pub fn auc_judd(p: &DensityMap, f: &FixationData) -> Result<f64> {
    f.check(p, "auc_judd")?;
    let fixated = f.unique_indices();
    if fixated.len() == p.values().len() {
        return Err(Error::Unavailable("auc_judd: every pixel is fixated, no negatives".into()));
    }
    let mut pos = Vec::with_capacity(fixated.len());
    let mut neg = Vec::with_capacity(p.values().len() - fixated.len());
    let mut next = fixated.iter().peekable();
    for (i, &v) in p.values().iter().enumerate() {
        if next.peek() == Some(&&i) {
            next.next();
            pos.push(v);
        } else {
            neg.push(v);
        }
    }
    Ok(pair_auc(&pos, &neg))
}

/// `n` pixel indices drawn uniformly with replacement.
pub fn sample_uniform_pixels<R: Rng + ?Sized>(h: usize, w: usize, n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..h * w)).collect()
}

/// `n` entries drawn uniformly with replacement from `pool`.
pub fn sample_from_pool<R: Rng + ?Sized>(pool: &[usize], n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

fn fixation_scores(p: &DensityMap, f: &FixationData) -> Vec<f64> {
    f.points().iter().map(|&(r, c)| p.at(r, c)).collect()
}

fn split_mean(splits: usize, mut one: impl FnMut() -> f64) -> Result<f64> {
    if splits == 0 {
        return Err(Error::InvalidArgument {
            op: "auc",
            detail: "at least one split is required".into(),
        });
    }
    Ok((0..splits).map(|_| one()).sum::<f64>() / splits as f64)
}

/// Fixations against uniformly sampled pixels, averaged over `splits`
/// draws of `negatives` pixels each (`None`: as many as fixations).
pub fn auc_borji<R: Rng + ?Sized>(
    p: &DensityMap,
    f: &FixationData,
    splits: usize,
    negatives: Option<usize>,
    rng: &mut R,
) -> Result<f64> {
    f.check(p, "auc_borji")?;
    let pos = fixation_scores(p, f);
    let n = negatives.unwrap_or(f.len()).max(1);
    let (h, w) = p.size();
    split_mean(splits, || {
        let neg: Vec<f64> = sample_uniform_pixels(h, w, n, rng).into_iter().map(|i| p.values()[i]).collect();
        pair_auc(&pos, &neg)
    })
}

/// Fixation locations of other images, flattened, duplicates kept.
pub fn shuffled_pool(size: (usize, usize), others: &[FixationData]) -> Result<Vec<usize>> {
    let mut pool = Vec::new();
    for o in others {
        if o.size() != size {
            return Err(Error::Shape {
                op: "sauc",
                detail: alloc::format!("other fixations on {:?}, map {:?}", o.size(), size),
            });
        }
        pool.extend(o.points().iter().map(|&(r, c)| r * size.1 + c));
    }
    Ok(pool)
}

/// Fixations against locations fixated in other images, which cancels
/// the reward a pure center prior would get.
pub fn sauc<R: Rng + ?Sized>(
    p: &DensityMap,
    f: &FixationData,
    others: &[FixationData],
    splits: usize,
    rng: &mut R,
) -> Result<f64> {
    f.check(p, "sauc")?;
    let pool = shuffled_pool(p.size(), others)?;
    if pool.is_empty() {
        return Err(Error::Unavailable("sauc: no fixations from other images".into()));
    }
    let pos = fixation_scores(p, f);
    split_mean(splits, || {
        let neg: Vec<f64> = sample_from_pool(&pool, f.len(), rng).into_iter().map(|i| p.values()[i]).collect();
        pair_auc(&pos, &neg)
    })
}
