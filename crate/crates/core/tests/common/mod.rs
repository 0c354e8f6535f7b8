//! Independent reference computations shared by test targets.

#![allow(dead_code)]

use fastsal_core::metrics::DensityMap;

/// Every positive against every negative, one pair at a time.
pub fn brute_pairs(pos: &[f64], neg: &[f64]) -> f64 {
    let mut score = 0.0;
    for &a in pos {
        for &b in neg {
            score += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    score / (pos.len() * neg.len()) as f64
}

/// Dense two-phase simplex with Bland's rule for `min c.x, A x = b, x >= 0`
/// (`b >= 0`, `A` of full row rank).
pub fn lp_min(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    let (rows, vars) = (a.len(), c.len());
    let width = vars + rows + 1;
    let mut t: Vec<Vec<f64>> = (0..rows)
        .map(|r| {
            let mut row = vec![0.0; width];
            row[..vars].copy_from_slice(&a[r]);
            row[vars + r] = 1.0;
            row[width - 1] = b[r];
            row
        })
        .collect();
    let mut basis: Vec<usize> = (vars..vars + rows).collect();
    let pivot = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, r: usize, col: usize| {
        let p = t[r][col];
        t[r].iter_mut().for_each(|v| *v /= p);
        let pr = t[r].clone();
        for (k, row) in t.iter_mut().enumerate() {
            if k != r && row[col] != 0.0 {
                let f = row[col];
                row.iter_mut().zip(&pr).for_each(|(v, p)| *v -= f * p);
            }
        }
        basis[r] = col;
    };
    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, cost: &[f64], allowed: usize| loop {
        let reduced = |j: usize, t: &Vec<Vec<f64>>, basis: &Vec<usize>| {
            cost[j] - (0..rows).map(|r| cost[basis[r]] * t[r][j]).sum::<f64>()
        };
        let Some(enter) = (0..allowed).find(|&j| !basis.contains(&j) && reduced(j, t, basis) < -1e-12) else {
            return;
        };
        let mut leave: Option<usize> = None;
        for r in 0..rows {
            if t[r][enter] > 1e-12 {
                let ratio = t[r][width - 1] / t[r][enter];
                leave = match leave {
                    None => Some(r),
                    Some(l) => {
                        let lr = t[l][width - 1] / t[l][enter];
                        if ratio < lr - 1e-15 || ((ratio - lr).abs() <= 1e-15 && basis[r] < basis[l]) {
                            Some(r)
                        } else {
                            Some(l)
                        }
                    }
                };
            }
        }
        pivot(t, basis, leave.expect("bounded problem"), enter);
    };
    let mut phase1 = vec![0.0; vars + rows];
    phase1[vars..].iter_mut().for_each(|v| *v = 1.0);
    run(&mut t, &mut basis, &phase1, vars + rows);
    for r in 0..rows {
        if basis[r] >= vars {
            assert!(t[r][width - 1].abs() < 1e-9, "infeasible");
            if let Some(col) = (0..vars).find(|&j| t[r][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, r, col);
            }
        }
    }
    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat(0.0).take(rows));
    run(&mut t, &mut basis, &phase2, vars);
    (0..rows).map(|r| phase2[basis[r]] * t[r][width - 1]).sum()
}

pub fn lp_emd(p: &DensityMap, g: &DensityMap) -> f64 {
    let (h, w) = p.size();
    let k = h * w;
    let dist = |s: usize, d: usize| {
        let (dr, dc) = ((s / w) as f64 - (d / w) as f64, (s % w) as f64 - (d % w) as f64);
        (dr * dr + dc * dc).sqrt()
    };
    let mut a = Vec::new();
    let mut b = Vec::new();
    for s in 0..k {
        let mut row = vec![0.0; k * k];
        (0..k).for_each(|d| row[s * k + d] = 1.0);
        a.push(row);
        b.push(p.values()[s]);
    }
    // the last demand row is implied by the others
    for d in 0..k - 1 {
        let mut row = vec![0.0; k * k];
        (0..k).for_each(|s| row[s * k + d] = 1.0);
        a.push(row);
        b.push(g.values()[d]);
    }
    let c: Vec<f64> = (0..k * k).map(|i| dist(i / k, i % k)).collect();
    lp_min(&a, &b, &c)
}
