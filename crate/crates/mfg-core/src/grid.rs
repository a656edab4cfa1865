//! Space-time grid bookkeeping, field containers and the pointwise
//! finite-difference operators on the periodic unit square.
//!
//! All spatial indexing is periodic: an index `i` is read modulo `N_h`.
//! Scalar fields are stored slice-major (time outer), then row-major in
//! space (`i` outer, `j` inner); this fixes the lexicographic unknown
//! order used by the Gauss-Seidel smoother.

use crate::error::MfgError;

/// Discretization and model parameters for one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Points per spatial axis.
    pub n_h: usize,
    /// Number of time steps.
    pub n_t: usize,
    /// Time horizon T.
    pub horizon: f64,
    /// Viscosity.
    pub nu: f64,
    /// Cost exponent q > 1.
    pub q: f64,
}

impl GridSpec {
    pub fn new(n_h: usize, n_t: usize, horizon: f64, nu: f64, q: f64) -> Result<Self, MfgError> {
        if n_h == 0 {
            return Err(MfgError::InvalidParameter("n_h must be positive".into()));
        }
        if n_t == 0 {
            return Err(MfgError::InvalidParameter("n_t must be positive".into()));
        }
        if !(horizon > 0.0) {
            return Err(MfgError::InvalidParameter("horizon must be positive".into()));
        }
        if !(nu >= 0.0) {
            return Err(MfgError::InvalidParameter("nu must be non-negative".into()));
        }
        if !(q > 1.0) {
            return Err(MfgError::InvalidParameter("q must be > 1".into()));
        }
        Ok(Self { n_h, n_t, horizon, nu, q })
    }

    /// Spatial step h = 1/N_h.
    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n_h as f64
    }

    /// Time step.
    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_t as f64
    }

    /// Conjugate exponent q' = q/(q-1).
    #[inline]
    pub fn q_conj(&self) -> f64 {
        self.q / (self.q - 1.0)
    }

    /// Number of points in one spatial slice.
    #[inline]
    pub fn points(&self) -> usize {
        self.n_h * self.n_h
    }

    /// Coordinates of the grid node x_{i,j} = (ih, jh).
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.h(), j as f64 * self.h())
    }

    /// Density iterate container: N_T + 1 time slices.
    pub fn density_field(&self) -> ScalarField {
        ScalarField::zeros(self.n_t + 1, self.n_h)
    }

    /// Container shaped like the range of the transport operators: N_T slices.
    pub fn dual_field(&self) -> ScalarField {
        ScalarField::zeros(self.n_t, self.n_h)
    }

    /// Container for the constraint multiplier: a leading slice for the
    /// initial-condition multiplier followed by N_T dual slices.
    pub fn multiplier_field(&self) -> ScalarField {
        ScalarField::zeros(self.n_t + 1, self.n_h)
    }

    /// Flux iterate container: N_T slices of 4-vectors.
    pub fn flux_field(&self) -> FluxField {
        FluxField::zeros(self.n_t, self.n_h)
    }
}

/// Periodic wrap of a possibly out-of-range index.
#[inline]
pub fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// A stack of square spatial slices with periodic indexing.
///
/// Used for the density (N_T+1 slices), the dual variables (N_T slices)
/// and the constraint multiplier (1 + N_T slices, leading slice first).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    slices: usize,
    n: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(slices: usize, n: usize) -> Self {
        Self { slices, n, data: vec![0.0; slices * n * n] }
    }

    pub fn from_vec(slices: usize, n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), slices * n * n, "field data length mismatch");
        Self { slices, n, data }
    }

    pub fn constant(slices: usize, n: usize, value: f64) -> Self {
        Self { slices, n, data: vec![value; slices * n * n] }
    }

    #[inline]
    pub fn slices(&self) -> usize {
        self.slices
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        debug_assert!(k < self.slices && i < self.n && j < self.n);
        (k * self.n + i) * self.n + j
    }

    #[inline]
    pub fn at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx(k, i, j)]
    }

    /// Read with periodic wrap in both spatial indices.
    #[inline]
    pub fn at_periodic(&self, k: usize, i: isize, j: isize) -> f64 {
        self.data[(k * self.n + wrap(i, self.n)) * self.n + wrap(j, self.n)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, value: f64) {
        let idx = self.idx(k, i, j);
        self.data[idx] = value;
    }

    #[inline]
    pub fn slice(&self, k: usize) -> &[f64] {
        let p = self.n * self.n;
        &self.data[k * p..(k + 1) * p]
    }

    #[inline]
    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let p = self.n * self.n;
        &mut self.data[k * p..(k + 1) * p]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// self += a * other, shapes must match.
    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        assert_eq!(self.data.len(), other.data.len(), "field shape mismatch");
        for (x, y) in self.data.iter_mut().zip(other.data.iter()) {
            *x += a * y;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of one slice, used for mass accounting.
    pub fn slice_sum(&self, k: usize) -> f64 {
        self.slice(k).iter().sum()
    }
}

/// A stack of square slices holding one 4-vector per point.
///
/// Component order follows the discrete gradient: forward/backward
/// differences in the first axis, then in the second axis. At a solution
/// each 4-vector lies in the cone K = R+ x R- x R+ x R-.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    steps: usize,
    n: usize,
    data: Vec<f64>,
}

impl FluxField {
    pub fn zeros(steps: usize, n: usize) -> Self {
        Self { steps, n, data: vec![0.0; steps * n * n * 4] }
    }

    pub fn from_vec(steps: usize, n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), steps * n * n * 4, "flux data length mismatch");
        Self { steps, n, data }
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        debug_assert!(k < self.steps && i < self.n && j < self.n);
        ((k * self.n + i) * self.n + j) * 4
    }

    #[inline]
    pub fn at(&self, k: usize, i: usize, j: usize) -> [f64; 4] {
        let s = self.idx(k, i, j);
        [self.data[s], self.data[s + 1], self.data[s + 2], self.data[s + 3]]
    }

    #[inline]
    pub fn at_periodic(&self, k: usize, i: isize, j: isize) -> [f64; 4] {
        let s = ((k * self.n + wrap(i, self.n)) * self.n + wrap(j, self.n)) * 4;
        [self.data[s], self.data[s + 1], self.data[s + 2], self.data[s + 3]]
    }

    #[inline]
    pub fn component(&self, k: usize, i: isize, j: isize, c: usize) -> f64 {
        debug_assert!(c < 4);
        self.data[((k * self.n + wrap(i, self.n)) * self.n + wrap(j, self.n)) * 4 + c]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: [f64; 4]) {
        let s = self.idx(k, i, j);
        self.data[s..s + 4].copy_from_slice(&v);
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn axpy(&mut self, a: f64, other: &FluxField) {
        assert_eq!(self.data.len(), other.data.len(), "flux shape mismatch");
        for (x, y) in self.data.iter_mut().zip(other.data.iter()) {
            *x += a * y;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Forward difference in the first axis: out[i][j] = (y[i+1][j] - y[i][j]) / h.
pub fn apply_d1(slice: &[f64], grid: &GridSpec) -> Vec<f64> {
    let n = grid.n_h;
    assert_eq!(slice.len(), n * n, "slice must be N_h x N_h");
    let inv_h = 1.0 / grid.h();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let ip = if i + 1 == n { 0 } else { i + 1 };
        for j in 0..n {
            out[i * n + j] = (slice[ip * n + j] - slice[i * n + j]) * inv_h;
        }
    }
    out
}

/// Forward difference in the second axis.
pub fn apply_d2(slice: &[f64], grid: &GridSpec) -> Vec<f64> {
    let n = grid.n_h;
    assert_eq!(slice.len(), n * n, "slice must be N_h x N_h");
    let inv_h = 1.0 / grid.h();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let jp = if j + 1 == n { 0 } else { j + 1 };
            out[i * n + j] = (slice[i * n + jp] - slice[i * n + j]) * inv_h;
        }
    }
    out
}

/// The 4-component discrete gradient:
/// ((D1 y)_{i,j}, (D1 y)_{i-1,j}, (D2 y)_{i,j}, (D2 y)_{i,j-1}).
pub fn apply_grad4(slice: &[f64], grid: &GridSpec) -> Vec<[f64; 4]> {
    let n = grid.n_h;
    assert_eq!(slice.len(), n * n, "slice must be N_h x N_h");
    let d1 = apply_d1(slice, grid);
    let d2 = apply_d2(slice, grid);
    let mut out = vec![[0.0; 4]; n * n];
    for i in 0..n {
        let im = if i == 0 { n - 1 } else { i - 1 };
        for j in 0..n {
            let jm = if j == 0 { n - 1 } else { j - 1 };
            out[i * n + j] = [d1[i * n + j], d1[im * n + j], d2[i * n + j], d2[i * n + jm]];
        }
    }
    out
}

/// Upwind (Godunov) gradient with the sign pattern (>=0, <=0, >=0, <=0):
/// ((D1 y)^-_{i,j}, -(D1 y)^+_{i-1,j}, (D2 y)^-_{i,j}, -(D2 y)^+_{i,j-1}).
///
/// Coincides with the projection onto K of the negated 4-component gradient.
pub fn apply_upwind_grad4(slice: &[f64], grid: &GridSpec) -> Vec<[f64; 4]> {
    let neg_part = |a: f64| (-a).max(0.0); // a^- = max(a,0) - a
    let pos_part = |a: f64| a.max(0.0);
    let n = grid.n_h;
    let d1 = apply_d1(slice, grid);
    let d2 = apply_d2(slice, grid);
    let mut out = vec![[0.0; 4]; n * n];
    for i in 0..n {
        let im = if i == 0 { n - 1 } else { i - 1 };
        for j in 0..n {
            let jm = if j == 0 { n - 1 } else { j - 1 };
            out[i * n + j] = [
                neg_part(d1[i * n + j]),
                -pos_part(d1[im * n + j]),
                neg_part(d2[i * n + j]),
                -pos_part(d2[i * n + jm]),
            ];
        }
    }
    out
}

/// Periodic 5-point Laplacian, approximating the continuous Laplacian:
/// out[i][j] = -(4 y_{i,j} - y_{i+1,j} - y_{i-1,j} - y_{i,j+1} - y_{i,j-1}) / h^2.
pub fn apply_laplacian(slice: &[f64], grid: &GridSpec) -> Vec<f64> {
    let n = grid.n_h;
    assert_eq!(slice.len(), n * n, "slice must be N_h x N_h");
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let ip = if i + 1 == n { 0 } else { i + 1 };
        let im = if i == 0 { n - 1 } else { i - 1 };
        for j in 0..n {
            let jp = if j + 1 == n { 0 } else { j + 1 };
            let jm = if j == 0 { n - 1 } else { j - 1 };
            out[i * n + j] = -(4.0 * slice[i * n + j]
                - slice[ip * n + j]
                - slice[im * n + j]
                - slice[i * n + jp]
                - slice[i * n + jm])
                * inv_h2;
        }
    }
    out
}

/// Discrete forward time derivative (field^{k+1} - field^k) / dt.
pub fn time_derivative(field: &ScalarField, k: usize, grid: &GridSpec) -> Vec<f64> {
    assert!(k < grid.n_t, "time index k = {} out of range (< N_T = {})", k, grid.n_t);
    assert_eq!(field.slices(), grid.n_t + 1, "field must have N_T + 1 slices");
    let inv_dt = 1.0 / grid.dt();
    field
        .slice(k + 1)
        .iter()
        .zip(field.slice(k).iter())
        .map(|(next, cur)| (next - cur) * inv_dt)
        .collect()
}

/// Cell averages of an initial density, by s x s midpoint sub-sampling of
/// each cell centered at a grid node. For a density of unit total mass,
/// h^2 * sum of the output is 1 up to quadrature error.
pub fn discretize_initial_density<F>(
    m0: F,
    grid: &GridSpec,
    subsamples: usize,
) -> Result<Vec<f64>, MfgError>
where
    F: Fn(f64, f64) -> f64,
{
    assert!(subsamples > 0, "subsamples must be positive");
    let n = grid.n_h;
    let h = grid.h();
    let mut out = vec![0.0; n * n];
    let weight = 1.0 / (subsamples * subsamples) as f64;
    for i in 0..n {
        for j in 0..n {
            let (x0, y0) = (i as f64 * h - 0.5 * h, j as f64 * h - 0.5 * h);
            let mut acc = 0.0;
            for a in 0..subsamples {
                for b in 0..subsamples {
                    let x = x0 + (a as f64 + 0.5) / subsamples as f64 * h;
                    let y = y0 + (b as f64 + 0.5) / subsamples as f64 * h;
                    let v = m0(x, y);
                    if v < 0.0 {
                        return Err(MfgError::InvalidParameter(format!(
                            "initial density is negative at ({x:.6}, {y:.6}): {v:.3e}"
                        )));
                    }
                    acc += v;
                }
            }
            out[i * n + j] = acc * weight;
        }
    }
    Ok(out)
}
