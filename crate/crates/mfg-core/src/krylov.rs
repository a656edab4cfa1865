//! Iterative linear solvers and spectral estimation: preconditioned
//! conjugate gradient, left/right-preconditioned BiCGStab, a dense
//! Cholesky direct solve and a Lanczos condition-number estimator.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::MfgError;

/// Abstract square linear map on flat vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply(x, &mut out);
        out
    }
}

/// Identity map, the trivial preconditioner.
#[derive(Debug, Clone, Copy)]
pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
}

/// Diagonal (Jacobi) preconditioner: multiplies by the inverse diagonal.
#[derive(Debug, Clone)]
pub struct JacobiPreconditioner {
    inv_diag: Vec<f64>,
}

impl JacobiPreconditioner {
    pub fn from_diagonal(diag: &[f64]) -> Result<Self, MfgError> {
        if diag.iter().any(|d| *d <= 0.0) {
            return Err(MfgError::NotPositiveDefinite("non-positive diagonal entry".into()));
        }
        Ok(Self { inv_diag: diag.iter().map(|d| 1.0 / d).collect() })
    }
}

impl LinearOperator for JacobiPreconditioner {
    fn dim(&self) -> usize {
        self.inv_diag.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), d) in out.iter_mut().zip(x.iter()).zip(self.inv_diag.iter()) {
            *o = xi * d;
        }
    }
}

/// Outcome of an iterative solve. `residual_history` records the true
/// residual norm at each step of size `history_step` iterations (entry 0
/// is the starting residual); BiCGStab records both stabilizer stages,
/// so its history advances in half iterations.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub breakdown: Option<String>,
    pub residual_history: Vec<f64>,
    pub history_step: f64,
}

impl SolveReport {
    /// Iteration count needed to shrink the starting residual by
    /// `factor`; `None` if the run never got there. Fractional for
    /// methods that can stop mid-iteration.
    pub fn iterations_to_reduce(&self, factor: f64) -> Option<f64> {
        let target = factor * self.residual_history.first().copied().unwrap_or(0.0);
        self.iterations_to_absolute(target)
    }

    /// Iteration count needed to bring the residual norm below an
    /// absolute threshold.
    pub fn iterations_to_absolute(&self, target: f64) -> Option<f64> {
        self.residual_history
            .iter()
            .position(|r| *r <= target)
            .map(|idx| idx as f64 * self.history_step)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, xi) in out.iter_mut().zip(x.iter()) {
        *o += a * xi;
    }
}

/// Preconditioned conjugate gradient for SPD operators and SPD
/// preconditioners. Stops on the absolute Euclidean norm of the true
/// residual.
pub fn conjugate_gradient<O, P>(
    op: &O,
    b: &[f64],
    precond: &P,
    tol: f64,
    max_iters: usize,
    x0: Option<&[f64]>,
) -> SolveReport
where
    O: LinearOperator + ?Sized,
    P: LinearOperator + ?Sized,
{
    let n = op.dim();
    assert_eq!(b.len(), n);
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    let mut r = b.to_vec();
    if x0.is_some() {
        let ax = op.apply_vec(&x);
        for (ri, a) in r.iter_mut().zip(ax.iter()) {
            *ri -= a;
        }
    }
    let mut history = vec![norm(&r)];
    if history[0] <= tol {
        return SolveReport {
            solution: x,
            iterations: 0,
            final_residual: history[0],
            converged: true,
            breakdown: None,
            residual_history: history,
            history_step: 1.0,
        };
    }

    let mut z = precond.apply_vec(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut scratch = vec![0.0; n];
    for k in 1..=max_iters {
        op.apply(&p, &mut scratch);
        let p_ap = dot(&p, &scratch);
        if !p_ap.is_finite() || p_ap <= 0.0 {
            let res = norm(&r);
            return SolveReport {
                solution: x,
                iterations: k - 1,
                final_residual: res,
                converged: false,
                breakdown: Some(format!("non-positive curvature <p, Ap> = {p_ap:.3e}")),
                residual_history: history,
                history_step: 1.0,
            };
        }
        let alpha = rz / p_ap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &scratch);
        let res = norm(&r);
        history.push(res);
        if !res.is_finite() {
            return SolveReport {
                solution: x,
                iterations: k,
                final_residual: res,
                converged: false,
                breakdown: Some("non-finite residual".into()),
                residual_history: history,
                history_step: 1.0,
            };
        }
        if res <= tol {
            return SolveReport {
                solution: x,
                iterations: k,
                final_residual: res,
                converged: true,
                breakdown: None,
                residual_history: history,
                history_step: 1.0,
            };
        }
        precond.apply(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for (pi, zi) in p.iter_mut().zip(z.iter()) {
            *pi = zi + beta * *pi;
        }
    }
    let res = norm(&r);
    SolveReport {
        solution: x,
        iterations: max_iters,
        final_residual: res,
        converged: res <= tol,
        breakdown: None,
        residual_history: history,
        history_step: 1.0,
    }
}

/// Left/right-preconditioned BiCGStab.
///
/// The update recurrences run on the left-preconditioned quantities while
/// the unpreconditioned residual is tracked alongside, so the while
/// condition tests the true residual norm against `tol`. The correction
/// accumulates in the right-preconditioned space and is mapped back
/// through `p_r` on exit. On a near-zero denominator the method restarts
/// once from the current iterate before reporting a breakdown.
pub fn bicgstab<O, L, R>(
    op: &O,
    b: &[f64],
    p_l: &L,
    p_r: &R,
    x0: Option<&[f64]>,
    tol: f64,
    max_iters: usize,
) -> SolveReport
where
    O: LinearOperator + ?Sized,
    L: LinearOperator + ?Sized,
    R: LinearOperator + ?Sized,
{
    let n = op.dim();
    assert_eq!(b.len(), n);
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);

    let residual_of = |x: &[f64]| {
        let ax = op.apply_vec(x);
        b.iter().zip(ax.iter()).map(|(bi, ai)| bi - ai).collect::<Vec<f64>>()
    };

    let mut r = residual_of(&x);
    // history advances in half iterations: both stabilizer stages produce
    // a residual of a constructible iterate
    let mut history = vec![norm(&r)];
    let tiny = 1e-300;

    let mut r_hat0 = p_l.apply_vec(&r);
    let mut p_hat = r_hat0.clone();
    let mut r_hat = r_hat0.clone();
    let mut rho = dot(&r_hat, &r_hat0);
    // Correction in the hat space; x = x_in + P_R * correction.
    let mut delta = vec![0.0; n];
    let mut restarted = false;
    let mut k = 0usize;

    let finish = |x: Vec<f64>,
                  iterations: usize,
                  history: Vec<f64>,
                  breakdown: Option<String>,
                  tol: f64| {
        let final_residual = *history.last().unwrap();
        SolveReport {
            solution: x,
            iterations,
            final_residual,
            converged: breakdown.is_none() && final_residual <= tol,
            breakdown,
            residual_history: history,
            history_step: 0.5,
        }
    };

    while *history.last().unwrap() >= tol && k < max_iters {
        let v = op.apply_vec(&p_r.apply_vec(&p_hat));
        let v_hat = p_l.apply_vec(&v);
        let denom = dot(&v_hat, &r_hat0);
        if denom.abs() < tiny * rho.abs().max(1.0) || !denom.is_finite() {
            if restarted {
                return finish(x, k, history, Some("stalled <v, r0>".into()), tol);
            }
            // rebase on the current iterate and rebuild the Krylov space
            restarted = true;
            let corr = p_r.apply_vec(&delta);
            axpy(&mut x, 1.0, &corr);
            delta.fill(0.0);
            r = residual_of(&x);
            r_hat0 = p_l.apply_vec(&r);
            p_hat = r_hat0.clone();
            r_hat = r_hat0.clone();
            rho = dot(&r_hat, &r_hat0);
            continue;
        }
        let alpha = rho / denom;

        // s = r - alpha v; early exit on a lucky half step
        let mut s = r.clone();
        axpy(&mut s, -alpha, &v);
        let s_norm = norm(&s);
        if s_norm <= tol {
            axpy(&mut delta, alpha, &p_hat);
            let corr = p_r.apply_vec(&delta);
            axpy(&mut x, 1.0, &corr);
            k += 1;
            history.push(norm(&residual_of(&x)));
            return finish(x, k, history, None, tol);
        }
        history.push(s_norm);
        let s_hat = {
            let mut sh = r_hat.clone();
            axpy(&mut sh, -alpha, &v_hat);
            sh
        };
        let t = op.apply_vec(&p_r.apply_vec(&s_hat));
        let t_hat = p_l.apply_vec(&t);
        let tt = dot(&t_hat, &t_hat);
        if tt < tiny || !tt.is_finite() {
            if restarted {
                return finish(x, k, history, Some("stalled <t, t>".into()), tol);
            }
            restarted = true;
            history.pop(); // the half step is rolled back by the rebase
            let corr = p_r.apply_vec(&delta);
            axpy(&mut x, 1.0, &corr);
            delta.fill(0.0);
            r = residual_of(&x);
            r_hat0 = p_l.apply_vec(&r);
            p_hat = r_hat0.clone();
            r_hat = r_hat0.clone();
            rho = dot(&r_hat, &r_hat0);
            continue;
        }
        let omega = dot(&s_hat, &t_hat) / tt;

        axpy(&mut delta, alpha, &p_hat);
        axpy(&mut delta, omega, &s_hat);

        r = s;
        axpy(&mut r, -omega, &t);
        let mut r_hat_next = s_hat;
        axpy(&mut r_hat_next, -omega, &t_hat);
        r_hat = r_hat_next;

        let rho_next = dot(&r_hat, &r_hat0);
        let beta = (alpha / omega) * (rho_next / rho);
        rho = rho_next;
        for c in 0..n {
            p_hat[c] = r_hat[c] + beta * (p_hat[c] - omega * v_hat[c]);
        }

        k += 1;
        let r_norm = norm(&r);
        history.push(r_norm);
        if !r_norm.is_finite() {
            let corr = p_r.apply_vec(&delta);
            axpy(&mut x, 1.0, &corr);
            return finish(x, k, history, Some("non-finite residual".into()), tol);
        }
    }

    let corr = p_r.apply_vec(&delta);
    axpy(&mut x, 1.0, &corr);
    // report the residual of the returned iterate
    let final_res = norm(&residual_of(&x));
    *history.last_mut().unwrap() = final_res;
    finish(x, k, history, None, tol)
}

/// Dense Cholesky factorization, used for the coarsest multigrid level
/// and as a direct backend on tiny grids.
pub struct DenseCholesky {
    chol: Cholesky<f64, Dyn>,
    dim: usize,
}

impl std::fmt::Debug for DenseCholesky {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DenseCholesky").field("dim", &self.dim).finish()
    }
}

impl DenseCholesky {
    pub fn factor(matrix: DMatrix<f64>) -> Result<Self, MfgError> {
        let dim = matrix.nrows();
        let chol = Cholesky::new(matrix).ok_or_else(|| {
            MfgError::NotPositiveDefinite("Cholesky pivot failed".into())
        })?;
        Ok(Self { chol, dim })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim);
        let rhs = DVector::from_column_slice(b);
        self.chol.solve(&rhs).as_slice().to_vec()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl LinearOperator for DenseCholesky {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.solve(x));
    }
}

/// Convenience direct solve through a dense factorization.
pub fn dense_cholesky_solve(matrix: DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>, MfgError> {
    Ok(DenseCholesky::factor(matrix)?.solve(b))
}

/// Extreme Ritz values from a symmetric Lanczos run with full
/// reorthogonalization.
#[derive(Debug, Clone, Copy)]
pub struct ConditionEstimate {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
}

/// Estimate the spectral condition number of an SPD operator.
///
/// Errors if the smallest Ritz value comes out non-positive, meaning the
/// operator is not numerically SPD at this accuracy.
pub fn lanczos_condition_estimate<O>(
    op: &O,
    iters: usize,
    seed: u64,
) -> Result<ConditionEstimate, MfgError>
where
    O: LinearOperator + ?Sized,
{
    let (lambda_min, lambda_max) = lanczos_extremes(op, iters, seed)?;
    if lambda_min <= 0.0 {
        return Err(MfgError::NotPositiveDefinite(format!(
            "smallest Ritz value {lambda_min:.3e} is not positive"
        )));
    }
    Ok(ConditionEstimate { lambda_min, lambda_max, kappa: lambda_max / lambda_min })
}

/// Two-sided condition estimate for badly spread spectra: the largest
/// eigenvalue from a Lanczos run on the operator, the smallest from a
/// Lanczos run on a supplied (approximate) inverse. A clustered bottom
/// of the spectrum is out of reach of plain Lanczos once the spread is
/// large, while the inverse exposes it as an isolated extreme.
pub fn condition_estimate_with_inverse<O, I>(
    op: &O,
    inverse: &I,
    iters: usize,
    iters_inverse: usize,
    seed: u64,
) -> Result<ConditionEstimate, MfgError>
where
    O: LinearOperator + ?Sized,
    I: LinearOperator + ?Sized,
{
    let (_, lambda_max) = lanczos_extremes(op, iters, seed)?;
    let (_, inv_lambda_max) = lanczos_extremes(inverse, iters_inverse, seed ^ 0x5bd1e995)?;
    if inv_lambda_max <= 0.0 {
        return Err(MfgError::NotPositiveDefinite(
            "inverse operator has a non-positive extreme Ritz value".into(),
        ));
    }
    let lambda_min = 1.0 / inv_lambda_max;
    Ok(ConditionEstimate { lambda_min, lambda_max, kappa: lambda_max / lambda_min })
}

/// Extreme Ritz values of a symmetric operator, full reorthogonalization.
fn lanczos_extremes<O>(op: &O, iters: usize, seed: u64) -> Result<(f64, f64), MfgError>
where
    O: LinearOperator + ?Sized,
{
    let n = op.dim();
    let m = iters.min(n);
    assert!(m > 0);

    // deterministic start vector from a small xorshift stream
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) - 0.5
        })
        .collect();
    let nv = norm(&v);
    for x in v.iter_mut() {
        *x /= nv;
    }

    let mut basis: Vec<Vec<f64>> = vec![v.clone()];
    let mut alphas: Vec<f64> = Vec::with_capacity(m);
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    for j in 0..m {
        op.apply(&basis[j], &mut w);
        let alpha = dot(&w, &basis[j]);
        alphas.push(alpha);
        if j + 1 == m {
            break;
        }
        axpy(&mut w, -alpha, &basis[j]);
        if j > 0 {
            let beta_prev = betas[j - 1];
            axpy(&mut w, -beta_prev, &basis[j - 1]);
        }
        // full reorthogonalization, twice for stability
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                axpy(&mut w, -c, q);
            }
        }
        let beta = norm(&w);
        if beta < 1e-14 {
            break;
        }
        betas.push(beta);
        basis.push(w.iter().map(|x| x / beta).collect());
    }

    let k = alphas.len();
    let mut tri = DMatrix::zeros(k, k);
    for i in 0..k {
        tri[(i, i)] = alphas[i];
        if i + 1 < k {
            tri[(i, i + 1)] = betas[i];
            tri[(i + 1, i)] = betas[i];
        }
    }
    let eigen = SymmetricEigen::new(tri);
    let mut lambda_min = f64::INFINITY;
    let mut lambda_max = f64::NEG_INFINITY;
    for e in eigen.eigenvalues.iter() {
        lambda_min = lambda_min.min(*e);
        lambda_max = lambda_max.max(*e);
    }
    Ok((lambda_min, lambda_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    struct DenseOp(DMatrix<f64>);

    impl LinearOperator for DenseOp {
        fn dim(&self) -> usize {
            self.0.nrows()
        }

        fn apply(&self, x: &[f64], out: &mut [f64]) {
            let y = &self.0 * DVector::from_column_slice(x);
            out.copy_from_slice(y.as_slice());
        }
    }

    fn random_spd(n: usize, rng: &mut StdRng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut m = &a * a.transpose();
        for i in 0..n {
            m[(i, i)] += n as f64 * 0.5;
        }
        m
    }

    #[test]
    fn cg_identity_converges_immediately() {
        let op = IdentityOperator(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 0.0];
        let report = conjugate_gradient(&op, &b, &IdentityOperator(5), 1e-12, 10, None);
        assert!(report.converged);
        assert!(report.iterations <= 1);
        for (x, bi) in report.solution.iter().zip(b.iter()) {
            assert!((x - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_matches_dense_solve() {
        let mut rng = StdRng::seed_from_u64(4);
        let m = random_spd(60, &mut rng);
        let b: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expected = dense_cholesky_solve(m.clone(), &b).unwrap();
        let op = DenseOp(m);
        let report = conjugate_gradient(&op, &b, &IdentityOperator(60), 1e-12, 500, None);
        assert!(report.converged);
        let scale = norm(&expected);
        for (x, e) in report.solution.iter().zip(expected.iter()) {
            assert!((x - e).abs() <= 1e-8 * scale.max(1.0));
        }
    }

    #[test]
    fn cg_reports_breakdown_on_indefinite_operator() {
        let mut m = DMatrix::zeros(4, 4);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = -2.0;
        m[(2, 2)] = 3.0;
        m[(3, 3)] = 1.0;
        let op = DenseOp(m);
        let b = vec![1.0; 4];
        let report = conjugate_gradient(&op, &b, &IdentityOperator(4), 1e-12, 50, None);
        assert!(!report.converged);
    }

    #[test]
    fn bicgstab_identity_converges_in_one_iteration() {
        let op = IdentityOperator(6);
        let b = vec![2.0, -1.0, 0.0, 4.0, 0.5, -0.25];
        let report =
            bicgstab(&op, &b, &IdentityOperator(6), &IdentityOperator(6), None, 1e-12, 10);
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        for (x, bi) in report.solution.iter().zip(b.iter()) {
            assert!((x - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn bicgstab_with_jacobi_matches_dense_solve() {
        let mut rng = StdRng::seed_from_u64(10);
        let m = random_spd(80, &mut rng);
        let diag: Vec<f64> = (0..80).map(|i| m[(i, i)]).collect();
        let b: Vec<f64> = (0..80).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expected = dense_cholesky_solve(m.clone(), &b).unwrap();
        let op = DenseOp(m);
        let pl = JacobiPreconditioner::from_diagonal(&diag).unwrap();
        let report = bicgstab(&op, &b, &pl, &IdentityOperator(80), None, 1e-12, 500);
        assert!(report.converged, "residual {}", report.final_residual);
        let scale = norm(&expected);
        for (x, e) in report.solution.iter().zip(expected.iter()) {
            assert!((x - e).abs() <= 1e-8 * scale.max(1.0));
        }
    }

    #[test]
    fn solvers_agree_with_dense_oracle_on_random_spd_systems() {
        let mut rng = StdRng::seed_from_u64(31);
        for trial in 0..20 {
            let n = rng.gen_range(10..=200);
            let m = random_spd(n, &mut rng);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let expected = dense_cholesky_solve(m.clone(), &b).unwrap();
            let op = DenseOp(m);
            let id = IdentityOperator(n);
            let cg = conjugate_gradient(&op, &b, &id, 1e-13, 10 * n, None);
            let bi = bicgstab(&op, &b, &id, &id, None, 1e-13, 10 * n);
            assert!(cg.converged && bi.converged, "trial {trial} n {n}");
            let scale = norm(&expected).max(1.0);
            for i in 0..n {
                assert!((cg.solution[i] - expected[i]).abs() <= 1e-8 * scale);
                assert!((bi.solution[i] - expected[i]).abs() <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn reported_residual_is_honest() {
        let mut rng = StdRng::seed_from_u64(77);
        let m = random_spd(40, &mut rng);
        let b: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let op = DenseOp(m);
        for report in [
            conjugate_gradient(&op, &b, &IdentityOperator(40), 1e-10, 400, None),
            bicgstab(&op, &b, &IdentityOperator(40), &IdentityOperator(40), None, 1e-10, 400),
        ] {
            assert!(report.converged);
            let ax = op.apply_vec(&report.solution);
            let res: f64 =
                norm(&b.iter().zip(ax.iter()).map(|(x, y)| x - y).collect::<Vec<_>>());
            assert!(res <= 1.01 * report.final_residual.max(1e-300));
        }
    }

    #[test]
    fn preconditioning_does_not_change_the_solution() {
        let mut rng = StdRng::seed_from_u64(15);
        let m = random_spd(50, &mut rng);
        let diag: Vec<f64> = (0..50).map(|i| m[(i, i)]).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let op = DenseOp(m);
        let id = IdentityOperator(50);
        let jac = JacobiPreconditioner::from_diagonal(&diag).unwrap();
        let tol = 1e-11;
        let plain = bicgstab(&op, &b, &id, &id, None, tol, 500);
        let left = bicgstab(&op, &b, &jac, &id, None, tol, 500);
        assert!(plain.converged && left.converged);
        for (a, c) in plain.solution.iter().zip(left.solution.iter()) {
            assert!((a - c).abs() <= 10.0 * tol);
        }
    }

    #[test]
    fn dense_cholesky_diagonal_and_identity() {
        let id = DMatrix::identity(4, 4);
        let x = dense_cholesky_solve(id, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        for (got, want) in x.iter().zip([1.0, 2.0, 3.0, 4.0]) {
            assert!((got - want).abs() < 1e-14);
        }

        let mut d = DMatrix::zeros(3, 3);
        d[(0, 0)] = 2.0;
        d[(1, 1)] = 4.0;
        d[(2, 2)] = 8.0;
        let x = dense_cholesky_solve(d, &[2.0, 4.0, 16.0]).unwrap();
        for (got, want) in x.iter().zip([1.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_cholesky_residual_on_random_spd() {
        let mut rng = StdRng::seed_from_u64(12);
        let m = random_spd(50, &mut rng);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = dense_cholesky_solve(m.clone(), &b).unwrap();
        let ax = &m * DVector::from_column_slice(&x);
        let res = (DVector::from_column_slice(&b) - ax).norm();
        assert!(res <= 1e-10 * norm(&b).max(1.0));
    }

    #[test]
    fn dense_cholesky_rejects_indefinite() {
        let mut m = DMatrix::identity(3, 3);
        m[(2, 2)] = -1.0;
        assert!(DenseCholesky::factor(m).is_err());
    }

    #[test]
    fn lanczos_recovers_known_spectrum() {
        let mut d = DMatrix::zeros(10, 10);
        for i in 0..10 {
            d[(i, i)] = (i + 1) as f64;
        }
        let est = lanczos_condition_estimate(&DenseOp(d), 10, 3).unwrap();
        assert!((est.kappa - 10.0).abs() < 1e-6, "kappa {}", est.kappa);
        assert!((est.lambda_min - 1.0).abs() < 1e-8);
        assert!((est.lambda_max - 10.0).abs() < 1e-8);
    }

    #[test]
    fn lanczos_rejects_indefinite_operator() {
        let mut d = DMatrix::zeros(6, 6);
        for i in 0..6 {
            d[(i, i)] = i as f64 - 2.0;
        }
        assert!(lanczos_condition_estimate(&DenseOp(d), 6, 5).is_err());
    }

    #[test]
    fn linear_operator_spot_check() {
        // apply(ax + by) = a apply(x) + b apply(y) for the operators used here
        let mut rng = StdRng::seed_from_u64(91);
        let m = random_spd(20, &mut rng);
        let op = DenseOp(m);
        let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (1.7, -0.3);
        let combo: Vec<f64> = x.iter().zip(y.iter()).map(|(xi, yi)| a * xi + b * yi).collect();
        let lhs = op.apply_vec(&combo);
        let rx = op.apply_vec(&x);
        let ry = op.apply_vec(&y);
        for i in 0..20 {
            let rhs = a * rx[i] + b * ry[i];
            assert!((lhs[i] - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
        }
    }
}
