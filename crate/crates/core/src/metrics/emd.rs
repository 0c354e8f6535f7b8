//! Earth mover's distance as an exact transportation problem, solved with
//! the transportation simplex (least-cost start, MODI pricing).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::maps::DensityMap;

pub const DEFAULT_MAX_CELLS: usize = 1024;
/// Grid side used when a map is too large for the exact solver.
pub const DOWNSAMPLE_SIDE: usize = 32;

/// Optimal cost of shipping `supply` to `demand` (equal totals) with unit
/// cost `cost(i, j)`. Entries with zero mass are allowed.
pub fn transport(supply: &[f64], demand: &[f64], cost: impl Fn(usize, usize) -> f64) -> Result<f64> {
    let rows: Vec<usize> = (0..supply.len()).filter(|&i| supply[i] > 0.0).collect();
    let cols: Vec<usize> = (0..demand.len()).filter(|&j| demand[j] > 0.0).collect();
    let (ts, td): (f64, f64) = (rows.iter().map(|&i| supply[i]).sum(), cols.iter().map(|&j| demand[j]).sum());
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::Unavailable("transport needs positive supply and demand".into()));
    }
    if (ts - td).abs() > 1e-9 * ts.max(td) {
        return Err(Error::InvalidArgument {
            op: "transport",
            detail: format!("supply {ts} and demand {td} differ"),
        });
    }
    let a: Vec<f64> = rows.iter().map(|&i| supply[i]).collect();
    // absorb rounding so both sides balance exactly
    let b: Vec<f64> = cols.iter().map(|&j| demand[j] * ts / td).collect();
    let (m, n) = (a.len(), b.len());
    let c: Vec<f64> = rows.iter().flat_map(|&i| cols.iter().map(move |&j| (i, j))).map(|(i, j)| cost(i, j)).collect();
    let mut s = Simplex::new(m, n, c);
    s.initial(&a, &b);
    s.solve()?;
    Ok(s.objective())
}

#[derive(Clone, Copy, Debug)]
struct Basic {
    i: usize,
    j: usize,
    flow: f64,
}

struct Simplex {
    m: usize,
    n: usize,
    cost: Vec<f64>,
    basis: Vec<Basic>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

impl Simplex {
    fn new(m: usize, n: usize, cost: Vec<f64>) -> Self {
        Self {
            m,
            n,
            cost,
            basis: Vec::with_capacity(m + n - 1),
        }
    }

    fn c(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }

    /// Least-cost starting solution, padded with zero-flow cells into a
    /// spanning tree of the row/column graph.
    fn initial(&mut self, a: &[f64], b: &[f64]) {
        let (m, n) = (self.m, self.n);
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        let mut order: Vec<usize> = (0..m * n).collect();
        order.sort_unstable_by(|&x, &y| self.cost[x].total_cmp(&self.cost[y]));
        let mut uf = UnionFind((0..m + n).collect());
        let (mut row_done, mut col_done) = (vec![false; m], vec![false; n]);
        for k in order {
            let (i, j) = (k / n, k % n);
            if row_done[i] || col_done[j] {
                continue;
            }
            if !uf.union(i, m + j) {
                continue;
            }
            let q = a[i].min(b[j]);
            a[i] -= q;
            b[j] -= q;
            // the smaller side is exhausted; close exactly one line so the
            // allocations stay a forest
            if a[i] <= b[j] {
                row_done[i] = true;
                a[i] = 0.0;
            } else {
                col_done[j] = true;
                b[j] = 0.0;
            }
            self.basis.push(Basic { i, j, flow: q });
            if self.basis.len() == m + n - 1 {
                break;
            }
        }
        if self.basis.len() < m + n - 1 {
            for i in 0..m {
                for j in 0..n {
                    if uf.union(i, m + j) {
                        self.basis.push(Basic { i, j, flow: 0.0 });
                    }
                }
            }
        }
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, e) in self.basis.iter().enumerate() {
            adj[e.i].push(k);
            adj[self.m + e.j].push(k);
        }
        adj
    }

    fn other(&self, node: usize, k: usize) -> usize {
        let e = self.basis[k];
        if node < self.m {
            self.m + e.j
        } else {
            e.i
        }
    }

    /// Row potentials `u` followed by column potentials `v` with
    /// `u_i + v_j = c_ij` on every basic cell.
    fn potentials(&self, adj: &[Vec<usize>]) -> Vec<f64> {
        let mut pot = vec![f64::NAN; self.m + self.n];
        pot[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &k in &adj[node] {
                let next = self.other(node, k);
                if pot[next].is_nan() {
                    let e = self.basis[k];
                    pot[next] = self.c(e.i, e.j) - pot[node];
                    stack.push(next);
                }
            }
        }
        pot
    }

    /// Tree path from row node `i` to column node `m + j` as basis indices,
    /// starting at the column end.
    fn path(&self, adj: &[Vec<usize>], i: usize, j: usize) -> Vec<usize> {
        let mut via = vec![usize::MAX; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[i] = true;
        let mut stack = vec![i];
        let target = self.m + j;
        while let Some(node) = stack.pop() {
            if node == target {
                break;
            }
            for &k in &adj[node] {
                let next = self.other(node, k);
                if !seen[next] {
                    seen[next] = true;
                    via[next] = k;
                    stack.push(next);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while node != i {
            let k = via[node];
            path.push(k);
            node = self.other(node, k);
        }
        path
    }

    fn solve(&mut self) -> Result<()> {
        let scale = self.cost.iter().fold(0.0f64, |a, &c| a.max(c.abs())).max(1.0);
        let tol = 1e-12 * scale;
        let limit = 20 * self.m * self.n + 1000;
        for _ in 0..limit {
            let adj = self.adjacency();
            let pot = self.potentials(&adj);
            let (mut best, mut enter) = (-tol, None);
            for i in 0..self.m {
                let row = &self.cost[i * self.n..(i + 1) * self.n];
                for (j, &c) in row.iter().enumerate() {
                    let r = c - pot[i] - pot[self.m + j];
                    if r < best {
                        best = r;
                        enter = Some((i, j));
                    }
                }
            }
            let Some((i, j)) = enter else {
                return Ok(());
            };
            let path = self.path(&adj, i, j);
            // edges alternate -, +, -, ... starting next to the column end
            let mut leave = path[0];
            for &k in path.iter().step_by(2) {
                if self.basis[k].flow < self.basis[leave].flow {
                    leave = k;
                }
            }
            let theta = self.basis[leave].flow;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.basis[k].flow = (self.basis[k].flow - theta).max(0.0);
                } else {
                    self.basis[k].flow += theta;
                }
            }
            self.basis[leave] = Basic { i, j, flow: theta };
        }
        Err(Error::Numeric(format!("transportation simplex did not converge in {limit} pivots")))
    }

    fn objective(&self) -> f64 {
        self.basis.iter().map(|e| e.flow * self.c(e.i, e.j)).sum()
    }
}

/// Exact EMD between two maps with Euclidean ground distance between pixel
/// centers, in pixels. Both maps are normalized first.
pub fn emd(p: &DensityMap, g: &DensityMap, max_cells: usize) -> Result<f64> {
    p.same_size(g, "emd")?;
    let (h, w) = p.size();
    if h * w > max_cells {
        return Err(Error::Unavailable(format!(
            "emd on {h}x{w} = {} cells exceeds the exact-solver budget of {max_cells}",
            h * w
        )));
    }
    grid_emd(p, g, 1.0, 1.0)
}

fn grid_emd(p: &DensityMap, g: &DensityMap, dy: f64, dx: f64) -> Result<f64> {
    let w = p.width();
    let (sp, sg) = (p.sum(), g.sum());
    let a: Vec<f64> = p.values().iter().map(|v| v / sp).collect();
    let b: Vec<f64> = g.values().iter().map(|v| v / sg).collect();
    transport(&a, &b, |s, t| {
        let (r, c) = ((s / w) as f64 - (t / w) as f64, (s % w) as f64 - (t % w) as f64);
        libm::sqrt(r * r * dy * dy + c * c * dx * dx)
    })
}

/// EMD value and how it was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmdResult {
    pub value: f64,
    /// True when both maps were area-averaged to a coarser grid first.
    pub downsampled: bool,
    pub grid: (usize, usize),
}

/// Like [`emd`], but maps larger than `max_cells` are area-averaged to
/// 32x32 first; distances stay in original pixel units.
pub fn emd_auto(p: &DensityMap, g: &DensityMap, max_cells: usize) -> Result<EmdResult> {
    p.same_size(g, "emd")?;
    let (h, w) = p.size();
    if h * w <= max_cells {
        return Ok(EmdResult {
            value: emd(p, g, max_cells)?,
            downsampled: false,
            grid: (h, w),
        });
    }
    let (dh, dw) = (DOWNSAMPLE_SIDE.min(h), DOWNSAMPLE_SIDE.min(w));
    let (pd, gd) = (p.downsample(dh, dw)?, g.downsample(dh, dw)?);
    Ok(EmdResult {
        value: grid_emd(&pd, &gd, h as f64 / dh as f64, w as f64 / dw as f64)?,
        downsampled: true,
        grid: (dh, dw),
    })
}
