//! Semi-coarsened geometric multigrid for the normal operator: the grid
//! is coarsened in space only (the time direction stays fixed), each
//! level rediscretizes the operator at its own mesh width, smoothing is
//! lexicographic Gauss-Seidel and the coarsest system is factorized
//! densely. One cycle from a zero initial guess is a fixed linear
//! operator and is what the Krylov solvers use as a left preconditioner.

use crate::error::MfgError;
use crate::grid::GridSpec;
use crate::krylov::{DenseCholesky, LinearOperator};
use crate::ops::{assemble_normal, SparseSpdMatrix};

/// Multigrid schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleKind {
    V,
    W,
    F,
}

impl std::str::FromStr for CycleKind {
    type Err = MfgError;

    fn from_str(s: &str) -> Result<Self, MfgError> {
        match s.trim().to_ascii_uppercase().as_str() {
            "V" => Ok(Self::V),
            "W" => Ok(Self::W),
            "F" => Ok(Self::F),
            other => Err(MfgError::InvalidParameter(format!("unknown cycle kind `{other}`"))),
        }
    }
}

/// One level of the hierarchy: its grid and the assembled operator.
#[derive(Debug)]
pub struct MgLevel {
    pub grid: GridSpec,
    pub matrix: SparseSpdMatrix,
}

/// Recorded recursion event, used to verify the cycle shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleCall {
    pub level: usize,
    pub kind: CycleKind,
}

/// The full grid hierarchy. Level 0 is the coarsest (`base` points per
/// axis), level `levels` the finest. Immutable after construction; each
/// cycle invocation allocates its own scratch, so a shared hierarchy can
/// serve concurrent solves.
pub struct MgHierarchy {
    levels: Vec<MgLevel>,
    coarse: DenseCholesky,
    pub eta1: usize,
    pub eta2: usize,
    pub cycle: CycleKind,
}

impl std::fmt::Debug for MgHierarchy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MgHierarchy")
            .field("levels", &self.levels.len())
            .field("eta1", &self.eta1)
            .field("eta2", &self.eta2)
            .field("cycle", &self.cycle)
            .finish()
    }
}

impl MgHierarchy {
    /// Build the hierarchy for `grid`, requiring N_h = base * 2^levels.
    /// Every level keeps the same time grid and viscosity and assembles
    /// the operator at its own spatial width; the coarsest operator is
    /// factorized densely.
    pub fn build(
        grid: &GridSpec,
        base: usize,
        levels: usize,
        eta1: usize,
        eta2: usize,
        cycle: CycleKind,
    ) -> Result<Self, MfgError> {
        if base < 2 {
            return Err(MfgError::InvalidParameter("multigrid base must be >= 2".into()));
        }
        if levels == 0 {
            return Err(MfgError::InvalidParameter("multigrid needs at least one level".into()));
        }
        let expected = base << levels;
        if grid.n_h != expected {
            return Err(MfgError::InvalidParameter(format!(
                "N_h = {} is not base * 2^levels = {} * 2^{} = {}",
                grid.n_h, base, levels, expected
            )));
        }
        let mut lvls = Vec::with_capacity(levels + 1);
        for k in 0..=levels {
            let n_k = base << k;
            let g_k = GridSpec::new(n_k, grid.n_t, grid.horizon, grid.nu, grid.q)?;
            let matrix = assemble_normal(&g_k);
            lvls.push(MgLevel { grid: g_k, matrix });
        }
        let coarse = DenseCholesky::factor(lvls[0].matrix.to_dense())?;

        // SPD spot check on the small levels
        for lvl in lvls.iter().take_while(|l| l.matrix.dim() <= 2048) {
            let est = crate::krylov::lanczos_condition_estimate(
                &lvl.matrix,
                30.min(lvl.matrix.dim()),
                42,
            )?;
            if est.lambda_min <= 0.0 {
                return Err(MfgError::NotPositiveDefinite(format!(
                    "level operator on {} points has non-positive Ritz value",
                    lvl.grid.n_h
                )));
            }
        }

        Ok(Self { levels: lvls, coarse, eta1, eta2, cycle })
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &MgLevel {
        self.levels.last().unwrap()
    }

    pub fn level(&self, k: usize) -> &MgLevel {
        &self.levels[k]
    }

    /// One multigrid cycle on level `k`, updating `x` in place.
    pub fn cycle(&self, k: usize, x: &mut [f64], b: &[f64], kind: CycleKind) {
        self.cycle_traced(k, x, b, kind, &mut |_| {});
    }

    /// Same as `cycle` but reports every recursive invocation, so tests
    /// can assert the V/W/F recursion shapes.
    pub fn cycle_traced(
        &self,
        k: usize,
        x: &mut [f64],
        b: &[f64],
        kind: CycleKind,
        on_call: &mut dyn FnMut(CycleCall),
    ) {
        let level = &self.levels[k];
        let n_unknowns = level.matrix.dim();
        assert_eq!(x.len(), n_unknowns);
        assert_eq!(b.len(), n_unknowns);
        if k == 0 {
            x.copy_from_slice(&self.coarse.solve(b));
            return;
        }
        let q = &level.matrix;
        q.gauss_seidel(x, b, self.eta1);

        let slices = level.grid.n_t + 1;
        let n_fine = level.grid.n_h;
        let mut residual = vec![0.0; n_unknowns];
        q.matvec(x, &mut residual);
        for (r, bi) in residual.iter_mut().zip(b.iter()) {
            *r = bi - *r;
        }
        let rc = restrict(&residual, slices, n_fine);
        let mut xc = vec![0.0; rc.len()];
        on_call(CycleCall { level: k - 1, kind });
        self.cycle_traced(k - 1, &mut xc, &rc, kind, on_call);
        // The extra corrections reuse the same restricted residual: the
        // fine iterate has not changed since it was formed.
        if kind == CycleKind::W {
            on_call(CycleCall { level: k - 1, kind });
            self.cycle_traced(k - 1, &mut xc, &rc, kind, on_call);
        }
        if kind == CycleKind::F {
            on_call(CycleCall { level: k - 1, kind: CycleKind::V });
            self.cycle_traced(k - 1, &mut xc, &rc, CycleKind::V, on_call);
        }
        let correction = interpolate(&xc, slices, n_fine / 2);
        for (xi, c) in x.iter_mut().zip(correction.iter()) {
            *xi += c;
        }
        q.gauss_seidel(x, b, self.eta2);
    }

    /// One configured cycle from a zero initial guess, as an operator.
    pub fn preconditioner(&self) -> MgPreconditioner<'_> {
        MgPreconditioner { hierarchy: self }
    }
}

/// Full-weighting spatial restriction (identity in time): each coarse
/// node collects 4/16 of its fine image, 2/16 of the edge neighbours and
/// 1/16 of the corners, with periodic wrap.
pub fn restrict(fine: &[f64], slices: usize, n_fine: usize) -> Vec<f64> {
    assert_eq!(fine.len(), slices * n_fine * n_fine);
    assert!(n_fine % 2 == 0, "restriction needs an even fine grid");
    let n_coarse = n_fine / 2;
    let mut out = vec![0.0; slices * n_coarse * n_coarse];
    for s in 0..slices {
        let src = &fine[s * n_fine * n_fine..(s + 1) * n_fine * n_fine];
        let dst = &mut out[s * n_coarse * n_coarse..(s + 1) * n_coarse * n_coarse];
        for i in 0..n_coarse {
            let fi = 2 * i;
            let fip = (fi + 1) % n_fine;
            let fim = (fi + n_fine - 1) % n_fine;
            for j in 0..n_coarse {
                let fj = 2 * j;
                let fjp = (fj + 1) % n_fine;
                let fjm = (fj + n_fine - 1) % n_fine;
                dst[i * n_coarse + j] = (4.0 * src[fi * n_fine + fj]
                    + 2.0
                        * (src[fip * n_fine + fj]
                            + src[fim * n_fine + fj]
                            + src[fi * n_fine + fjp]
                            + src[fi * n_fine + fjm])
                    + src[fim * n_fine + fjm]
                    + src[fim * n_fine + fjp]
                    + src[fip * n_fine + fjm]
                    + src[fip * n_fine + fjp])
                    / 16.0;
            }
        }
    }
    out
}

/// Bilinear spatial interpolation (identity in time), the transpose of
/// `restrict` scaled by 4.
pub fn interpolate(coarse: &[f64], slices: usize, n_coarse: usize) -> Vec<f64> {
    assert_eq!(coarse.len(), slices * n_coarse * n_coarse);
    let n_fine = 2 * n_coarse;
    let mut out = vec![0.0; slices * n_fine * n_fine];
    for s in 0..slices {
        let src = &coarse[s * n_coarse * n_coarse..(s + 1) * n_coarse * n_coarse];
        let dst = &mut out[s * n_fine * n_fine..(s + 1) * n_fine * n_fine];
        for i in 0..n_coarse {
            let ip = (i + 1) % n_coarse;
            for j in 0..n_coarse {
                let jp = (j + 1) % n_coarse;
                let c00 = src[i * n_coarse + j];
                let c10 = src[ip * n_coarse + j];
                let c01 = src[i * n_coarse + jp];
                let c11 = src[ip * n_coarse + jp];
                dst[(2 * i) * n_fine + 2 * j] = c00;
                dst[(2 * i + 1) * n_fine + 2 * j] = 0.5 * (c00 + c10);
                dst[(2 * i) * n_fine + 2 * j + 1] = 0.5 * (c00 + c01);
                dst[(2 * i + 1) * n_fine + 2 * j + 1] = 0.25 * (c00 + c10 + c01 + c11);
            }
        }
    }
    out
}

/// The inverse of the finest-level operator, applied by running the
/// multigrid-preconditioned BiCGStab solver to a tight tolerance. Used
/// for spectral estimation of the bottom of the spectrum.
pub struct MgSolveOperator<'a> {
    hierarchy: &'a MgHierarchy,
    op: crate::ops::NormalOperator,
    rel_tol: f64,
    max_iters: usize,
}

impl<'a> MgSolveOperator<'a> {
    pub fn new(hierarchy: &'a MgHierarchy, rel_tol: f64, max_iters: usize) -> Self {
        let op = crate::ops::NormalOperator::new(&hierarchy.finest().grid);
        Self { hierarchy, op, rel_tol, max_iters }
    }
}

impl LinearOperator for MgSolveOperator<'_> {
    fn dim(&self) -> usize {
        self.hierarchy.finest().matrix.dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let norm_x = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let precond = self.hierarchy.preconditioner();
        let report = crate::krylov::bicgstab(
            &self.op,
            x,
            &precond,
            &crate::krylov::IdentityOperator(self.dim()),
            None,
            self.rel_tol * norm_x,
            self.max_iters,
        );
        out.copy_from_slice(&report.solution);
    }
}

/// One multigrid cycle from zero, wrapped as a linear operator for use as
/// a left preconditioner.
pub struct MgPreconditioner<'a> {
    hierarchy: &'a MgHierarchy,
}

impl LinearOperator for MgPreconditioner<'_> {
    fn dim(&self) -> usize {
        self.hierarchy.finest().matrix.dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let top = self.hierarchy.level_count() - 1;
        self.hierarchy.cycle(top, out, x, self.hierarchy.cycle);
    }
}
