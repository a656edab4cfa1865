//! Shared oracle builders for the integration tests: dense matrices of
//! the transport/divergence operators assembled entry-by-entry from the
//! block formulas, independent of the library's stencil code paths.
//!
//! Each test binary includes this module and uses its own subset.
#![allow(dead_code)]

use mfg_core::grid::GridSpec;
use nalgebra::{DMatrix, DVector};

pub fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Dense matrix of the negated 5-point Laplacian on the periodic grid.
pub fn dense_neg_laplacian(grid: &GridSpec) -> DMatrix<f64> {
    let n = grid.n_h;
    let p = n * n;
    let inv_h2 = (grid.n_h * grid.n_h) as f64;
    let mut l = DMatrix::zeros(p, p);
    for i in 0..n as isize {
        for j in 0..n as isize {
            let row = wrap(i, n) * n + wrap(j, n);
            l[(row, row)] += 4.0 * inv_h2;
            for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let col = wrap(i + di, n) * n + wrap(j + dj, n);
                l[(row, col)] -= inv_h2;
            }
        }
    }
    l
}

/// Dense matrix of the time-transport operator: block row k maps density
/// slices k and k+1 through -Id/dt and Id/dt + nu L.
pub fn dense_transport(grid: &GridSpec) -> DMatrix<f64> {
    let p = grid.points();
    let nt = grid.n_t;
    let inv_dt = 1.0 / grid.dt();
    let l = dense_neg_laplacian(grid);
    let mut a = DMatrix::zeros(nt * p, (nt + 1) * p);
    for k in 0..nt {
        for r in 0..p {
            a[(k * p + r, k * p + r)] = -inv_dt;
            a[(k * p + r, (k + 1) * p + r)] += inv_dt;
            for c in 0..p {
                a[(k * p + r, (k + 1) * p + c)] += grid.nu * l[(r, c)];
            }
        }
    }
    a
}

/// Dense matrix of the per-slice discrete divergence, flux component
/// order matching the 4-vector layout (i-forward, i-backward carrier,
/// j-forward, j-backward carrier).
pub fn dense_divergence_slice(grid: &GridSpec) -> DMatrix<f64> {
    let n = grid.n_h;
    let p = n * n;
    let inv_h = grid.n_h as f64;
    let mut m = DMatrix::zeros(p, 4 * p);
    let col = |i: isize, j: isize, c: usize| (wrap(i, n) * n + wrap(j, n)) * 4 + c;
    for i in 0..n as isize {
        for j in 0..n as isize {
            let row = wrap(i, n) * n + wrap(j, n);
            // (D1 w1)_{i-1,j} = (w1_{i,j} - w1_{i-1,j}) / h
            m[(row, col(i, j, 0))] += inv_h;
            m[(row, col(i - 1, j, 0))] -= inv_h;
            // (D1 w2)_{i,j} = (w2_{i+1,j} - w2_{i,j}) / h
            m[(row, col(i + 1, j, 1))] += inv_h;
            m[(row, col(i, j, 1))] -= inv_h;
            // (D2 w3)_{i,j-1} = (w3_{i,j} - w3_{i,j-1}) / h
            m[(row, col(i, j, 2))] += inv_h;
            m[(row, col(i, j - 1, 2))] -= inv_h;
            // (D2 w4)_{i,j} = (w4_{i,j+1} - w4_{i,j}) / h
            m[(row, col(i, j + 1, 3))] += inv_h;
            m[(row, col(i, j, 3))] -= inv_h;
        }
    }
    m
}

/// Block-diagonal divergence over all time steps.
pub fn dense_divergence(grid: &GridSpec) -> DMatrix<f64> {
    let p = grid.points();
    let nt = grid.n_t;
    let m = dense_divergence_slice(grid);
    let mut b = DMatrix::zeros(nt * p, nt * 4 * p);
    for k in 0..nt {
        for r in 0..p {
            for c in 0..4 * p {
                b[(k * p + r, k * 4 * p + c)] = m[(r, c)];
            }
        }
    }
    b
}

/// Augmented transport: identity row block pinning the initial slice,
/// then the transport rows.
pub fn dense_transport_aug(grid: &GridSpec) -> DMatrix<f64> {
    let p = grid.points();
    let nt = grid.n_t;
    let a = dense_transport(grid);
    let mut t = DMatrix::zeros((nt + 1) * p, (nt + 1) * p);
    for r in 0..p {
        t[(r, r)] = 1.0;
    }
    for r in 0..nt * p {
        for c in 0..(nt + 1) * p {
            t[(p + r, c)] = a[(r, c)];
        }
    }
    t
}

/// Augmented divergence: zero rows for the initial slice, then the
/// block-diagonal divergence.
pub fn dense_divergence_aug(grid: &GridSpec) -> DMatrix<f64> {
    let p = grid.points();
    let nt = grid.n_t;
    let b = dense_divergence(grid);
    let mut t = DMatrix::zeros((nt + 1) * p, nt * 4 * p);
    for r in 0..nt * p {
        for c in 0..nt * 4 * p {
            t[(p + r, c)] = b[(r, c)];
        }
    }
    t
}

/// Apply the dense normal operator without forming it: A~ A~* z + B~ B~* z.
pub fn dense_normal_apply(
    a_aug: &DMatrix<f64>,
    b_aug: &DMatrix<f64>,
    z: &[f64],
) -> Vec<f64> {
    let zv = DVector::from_column_slice(z);
    let out = a_aug * (a_aug.transpose() * &zv) + b_aug * (b_aug.transpose() * &zv);
    out.as_slice().to_vec()
}

pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let diff: f64 = got
        .iter()
        .zip(want.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = want.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

/// Brute-force objective of the pointwise prox problem along the ray
/// w = rho * pk/|pk| (the minimizer keeps the direction of the cone
/// projection of wbar and satisfies |w| <= |pk|, so the ray search is
/// exhaustive). Quadratic congestion cost with a constant potential.
pub struct ProxBruteForce {
    pub pk_norm: f64,
    pub wbar_norm_sq: f64,
    pub mbar: f64,
    pub tau: f64,
    pub hbar: f64,
    pub q: f64,
}

impl ProxBruteForce {
    pub fn eval(&self, m: f64, rho: f64) -> f64 {
        let kinetic = if m > 0.0 {
            rho.powf(self.q) / (self.q * m.powf(self.q - 1.0))
        } else if rho == 0.0 {
            0.0
        } else {
            return f64::INFINITY;
        };
        let running = m * m * m / 3.0 - self.hbar * m;
        let quad = (m - self.mbar).powi(2)
            + rho * rho - 2.0 * rho * self.pk_norm + self.wbar_norm_sq;
        kinetic + running + quad / (2.0 * self.tau)
    }

    /// Best flux magnitude for a fixed density, by golden-section over
    /// [0, rho_hi] (the objective is convex in rho for fixed m).
    pub fn best_rho(&self, m: f64, rho_hi: f64) -> (f64, f64) {
        if m == 0.0 {
            return (0.0, self.eval(0.0, 0.0));
        }
        let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (0.0f64, rho_hi.max(1e-12));
        for _ in 0..90 {
            let c = b - inv_phi * (b - a);
            let d = a + inv_phi * (b - a);
            if self.eval(m, c) < self.eval(m, d) {
                b = d;
            } else {
                a = c;
            }
        }
        let rho = 0.5 * (a + b);
        (rho, self.eval(m, rho))
    }

    /// Grid-and-zoom over the density, with the flux magnitude minimized
    /// out exhaustively at every density sample. Zooming only in the
    /// slow variable keeps the search robust on the curved valley the
    /// two variables form together.
    pub fn minimize(&self, m_hi: f64, rho_hi: f64) -> (f64, f64) {
        let cells = 120usize;
        let (mut m_lo, mut m_hi) = (0.0f64, m_hi.max(1e-6));
        let mut best = (0.0, 0.0);
        for _round in 0..8 {
            let mut best_val = f64::INFINITY;
            for a in 0..=cells {
                let m = m_lo + (m_hi - m_lo) * a as f64 / cells as f64;
                let (rho, v) = self.best_rho(m, rho_hi);
                if v < best_val {
                    best_val = v;
                    best = (m, rho);
                }
            }
            let m_span = (m_hi - m_lo) * 2.0 / cells as f64;
            m_lo = (best.0 - m_span).max(0.0);
            m_hi = best.0 + m_span;
        }
        best
    }
}
