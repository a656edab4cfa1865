//! The primal-dual iteration for the discrete variational problem, plus
//! solution extraction and the residuals of the discrete optimality
//! system.
//!
//! Each pass performs four steps: solve the SPD normal system for the
//! constraint multiplier (warm-started from the previous pass), pull the
//! multiplier back through the adjoint constraint, apply the pointwise
//! proximal map to the shifted primal pair, and extrapolate.

use std::time::Instant;

use crate::coupling::{eval_objective, project_onto_cone, prox_phi, CouplingSpec};
use crate::error::MfgError;
use crate::grid::{apply_grad4, FluxField, GridSpec, ScalarField};
use crate::krylov::{
    bicgstab, conjugate_gradient, DenseCholesky, IdentityOperator, JacobiPreconditioner,
    LinearOperator,
};
use crate::multigrid::{CycleKind, MgHierarchy};
use crate::ops::{
    apply_constraint, apply_constraint_adjoint, apply_divergence, apply_transport,
    apply_transport_adjoint, assemble_normal, dual_part, ConstraintRhs, NormalOperator,
};

/// Which linear solver handles the normal system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolverKind {
    /// Dense factorization, tiny grids only.
    DirectDense,
    ConjugateGradient,
    BiCgStab,
}

impl std::str::FromStr for LinearSolverKind {
    type Err = MfgError;

    fn from_str(s: &str) -> Result<Self, MfgError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct-dense" | "direct" => Ok(Self::DirectDense),
            "cg" => Ok(Self::ConjugateGradient),
            "bicgstab" => Ok(Self::BiCgStab),
            other => Err(MfgError::InvalidParameter(format!("unknown linear solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondKind {
    Identity,
    Jacobi,
    Multigrid,
}

impl std::str::FromStr for PrecondKind {
    type Err = MfgError;

    fn from_str(s: &str) -> Result<Self, MfgError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "none" => Ok(Self::Identity),
            "jacobi" => Ok(Self::Jacobi),
            "multigrid" | "mg" => Ok(Self::Multigrid),
            other => Err(MfgError::InvalidParameter(format!("unknown preconditioner `{other}`"))),
        }
    }
}

/// Multigrid hierarchy parameters.
#[derive(Debug, Clone, Copy)]
pub struct MgParams {
    /// Points per axis on the coarsest grid.
    pub base: usize,
    /// Level count; `None` derives the deepest hierarchy compatible with
    /// the grid.
    pub levels: Option<usize>,
    pub eta1: usize,
    pub eta2: usize,
    pub cycle: CycleKind,
}

impl Default for MgParams {
    fn default() -> Self {
        Self { base: 2, levels: None, eta1: 2, eta2: 2, cycle: CycleKind::F }
    }
}

impl MgParams {
    /// Levels such that base * 2^levels = n_h, if any.
    pub fn levels_for(&self, n_h: usize) -> Option<usize> {
        if let Some(l) = self.levels {
            return (self.base << l == n_h).then_some(l);
        }
        let mut l = 0usize;
        let mut n = self.base;
        while n < n_h {
            n <<= 1;
            l += 1;
        }
        (n == n_h && l >= 1).then_some(l)
    }
}

/// Primal-dual iteration parameters.
#[derive(Debug, Clone, Copy)]
pub struct CpConfig {
    pub gamma: f64,
    pub tau: f64,
    pub theta: f64,
    /// Stop when the RMS change of the primal pair drops below this.
    pub tol_cp: f64,
    pub max_iters: usize,
    pub linear_solver: LinearSolverKind,
    pub preconditioner: PrecondKind,
    /// Relative residual-reduction target per inner solve.
    pub lin_tol: f64,
    /// Absolute accuracy floor per inner solve, relative to the
    /// right-hand-side norm; warm-started residuals are not chased below
    /// it.
    pub lin_floor: f64,
    pub lin_maxit: usize,
    pub mg: MgParams,
}

impl Default for CpConfig {
    fn default() -> Self {
        Self {
            gamma: 2.4,
            tau: 0.4,
            theta: 1.0,
            tol_cp: 1e-6,
            max_iters: 500,
            linear_solver: LinearSolverKind::BiCgStab,
            preconditioner: PrecondKind::Multigrid,
            lin_tol: 1e-8,
            lin_floor: 1e-12,
            lin_maxit: 200,
            mg: MgParams::default(),
        }
    }
}

const DIRECT_DENSE_LIMIT: usize = 6000;

impl CpConfig {
    pub fn validate(&self, grid: &GridSpec) -> Result<(), MfgError> {
        if !(self.gamma > 0.0) || !(self.tau > 0.0) {
            return Err(MfgError::InvalidParameter("gamma and tau must be positive".into()));
        }
        if self.gamma * self.tau >= 1.0 {
            return Err(MfgError::InvalidParameter(format!(
                "gamma * tau = {:.6} must be < 1 (gamma = {}, tau = {})",
                self.gamma * self.tau,
                self.gamma,
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(MfgError::InvalidParameter("theta must lie in [0, 1]".into()));
        }
        if !(self.tol_cp > 0.0) || !(self.lin_tol > 0.0) {
            return Err(MfgError::InvalidParameter("tolerances must be positive".into()));
        }
        let dim = (grid.n_t + 1) * grid.points();
        if self.linear_solver == LinearSolverKind::DirectDense && dim > DIRECT_DENSE_LIMIT {
            return Err(MfgError::InvalidParameter(format!(
                "direct-dense backend limited to {DIRECT_DENSE_LIMIT} unknowns, grid has {dim}"
            )));
        }
        if self.preconditioner == PrecondKind::Multigrid
            && self.linear_solver != LinearSolverKind::DirectDense
            && self.mg.levels_for(grid.n_h).is_none()
        {
            return Err(MfgError::InvalidParameter(format!(
                "multigrid.base = {} does not reach N_h = {} by doubling (need N_h = base * 2^levels)",
                self.mg.base, grid.n_h
            )));
        }
        Ok(())
    }
}

enum Precond {
    Identity(usize),
    Jacobi(JacobiPreconditioner),
    Multigrid(Box<MgHierarchy>),
}

impl LinearOperator for Precond {
    fn dim(&self) -> usize {
        match self {
            Precond::Identity(n) => *n,
            Precond::Jacobi(j) => j.dim(),
            Precond::Multigrid(h) => h.finest().matrix.dim(),
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Precond::Identity(_) => out.copy_from_slice(x),
            Precond::Jacobi(j) => j.apply(x, out),
            Precond::Multigrid(h) => {
                out.fill(0.0);
                h.cycle(h.level_count() - 1, out, x, h.cycle);
            }
        }
    }
}

enum Backend {
    Direct(DenseCholesky),
    Krylov { kind: LinearSolverKind, op: NormalOperator, precond: Precond },
}

/// Inner linear-solve diagnostics for one primal-dual pass, at the
/// resolution the solver records (BiCGStab: half steps).
#[derive(Debug, Clone, Copy)]
pub struct InnerSolveInfo {
    pub iterations: usize,
    /// Iterations to shrink the starting residual by a factor 1e-3.
    pub to_reduce_mild: Option<f64>,
    /// Iterations to an absolute accuracy of 1e-8 in the normalized
    /// (root-mean-square) norm.
    pub to_reduce_strict: Option<f64>,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub converged: bool,
}

/// The full iterate of the primal-dual loop.
#[derive(Debug, Clone)]
pub struct CpState {
    pub density: ScalarField,
    pub flux: FluxField,
    pub density_extrap: ScalarField,
    pub flux_extrap: FluxField,
    pub dual_density: ScalarField,
    pub dual_flux: FluxField,
    pub multiplier: ScalarField,
    pub iteration: usize,
}

impl CpState {
    pub fn is_finite(&self) -> bool {
        self.density.is_finite()
            && self.flux.is_finite()
            && self.density_extrap.is_finite()
            && self.flux_extrap.is_finite()
            && self.dual_density.is_finite()
            && self.dual_flux.is_finite()
            && self.multiplier.is_finite()
    }
}

/// One pass worth of measurements.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub change: f64,
    pub objective: f64,
    pub inner: InnerSolveInfo,
    pub linear_seconds: f64,
    pub prox_seconds: f64,
}

/// Per-iteration diagnostic record of a full solve.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub iteration: usize,
    pub change: f64,
    pub objective: f64,
    pub inner_iterations: usize,
    pub inner_to_mild: Option<f64>,
    pub inner_to_strict: Option<f64>,
    pub wall_seconds: f64,
}

/// Average inner iterations to reach a residual-reduction target over a
/// run. Solves that stopped at their tolerance without registering the
/// target contribute their whole iteration count.
pub fn average_inner_iterations(records: &[IterationRecord], strict: bool) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let total: f64 = records
        .iter()
        .map(|r| {
            let target = if strict { r.inner_to_strict } else { r.inner_to_mild };
            target.unwrap_or(r.inner_iterations as f64)
        })
        .sum();
    total / records.len() as f64
}

/// Wall-clock totals split by phase.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTimings {
    pub linear_seconds: f64,
    pub prox_seconds: f64,
    pub other_seconds: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.linear_seconds + self.prox_seconds + self.other_seconds
    }
}

/// Converged (or best-effort) solution of the discrete game.
#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub density: ScalarField,
    pub flux: FluxField,
    /// Value function with the terminal slice appended.
    pub value: ScalarField,
    /// Multiplier of the initial-density rows.
    pub initial_multiplier: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_change: f64,
    pub diagnostics: Vec<IterationRecord>,
    pub timings: PhaseTimings,
}

/// Prepared operators and configuration for a sequence of passes.
pub struct CpWorkspace {
    grid: GridSpec,
    coupling: CouplingSpec,
    config: CpConfig,
    rhs: ConstraintRhs,
    rhs_field: ScalarField,
    backend: Backend,
}

impl CpWorkspace {
    pub fn new(
        grid: &GridSpec,
        coupling: CouplingSpec,
        m0: Vec<f64>,
        config: CpConfig,
    ) -> Result<Self, MfgError> {
        config.validate(grid)?;
        coupling.check_monotone(5.0, 64)?;
        assert_eq!(m0.len(), grid.points(), "initial density must be N_h x N_h");
        let rhs = ConstraintRhs::new(m0, grid);
        let rhs_field = rhs.scaled_field(1.0);

        let backend = match config.linear_solver {
            LinearSolverKind::DirectDense => {
                let q = assemble_normal(grid);
                Backend::Direct(DenseCholesky::factor(q.to_dense())?)
            }
            kind => {
                let op = NormalOperator::new(grid);
                let precond = match config.preconditioner {
                    PrecondKind::Identity => Precond::Identity(op.dim()),
                    PrecondKind::Jacobi => {
                        let q = assemble_normal(grid);
                        Precond::Jacobi(JacobiPreconditioner::from_diagonal(&q.diagonal())?)
                    }
                    PrecondKind::Multigrid => {
                        let levels = config.mg.levels_for(grid.n_h).ok_or_else(|| {
                            MfgError::InvalidParameter(format!(
                                "multigrid.base = {} incompatible with N_h = {}",
                                config.mg.base, grid.n_h
                            ))
                        })?;
                        Precond::Multigrid(Box::new(MgHierarchy::build(
                            grid,
                            config.mg.base,
                            levels,
                            config.mg.eta1,
                            config.mg.eta2,
                            config.mg.cycle,
                        )?))
                    }
                };
                Backend::Krylov { kind, op, precond }
            }
        };
        Ok(Self { grid: *grid, coupling, config, rhs, rhs_field, backend })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coupling(&self) -> &CouplingSpec {
        &self.coupling
    }

    pub fn config(&self) -> &CpConfig {
        &self.config
    }

    pub fn initial_density(&self) -> &[f64] {
        self.rhs.m0()
    }

    /// Default start: the initial density replicated across time, zero
    /// flux and zero duals.
    pub fn initial_state(&self) -> CpState {
        let mut density = self.grid.density_field();
        for k in 0..=self.grid.n_t {
            density.slice_mut(k).copy_from_slice(self.rhs.m0());
        }
        CpState {
            density_extrap: density.clone(),
            density,
            flux: self.grid.flux_field(),
            flux_extrap: self.grid.flux_field(),
            dual_density: self.grid.density_field(),
            dual_flux: self.grid.flux_field(),
            multiplier: self.grid.multiplier_field(),
            iteration: 0,
        }
    }

    /// All-zero start, for probing the very first multiplier solve.
    pub fn zero_state(&self) -> CpState {
        CpState {
            density: self.grid.density_field(),
            flux: self.grid.flux_field(),
            density_extrap: self.grid.density_field(),
            flux_extrap: self.grid.flux_field(),
            dual_density: self.grid.density_field(),
            dual_flux: self.grid.flux_field(),
            multiplier: self.grid.multiplier_field(),
            iteration: 0,
        }
    }

    fn solve_normal(&self, b: &[f64], z: &mut ScalarField) -> Result<InnerSolveInfo, MfgError> {
        match &self.backend {
            Backend::Direct(chol) => {
                let solution = chol.solve(b);
                z.as_mut_slice().copy_from_slice(&solution);
                Ok(InnerSolveInfo {
                    iterations: 0,
                    to_reduce_mild: None,
                    to_reduce_strict: None,
                    initial_residual: 0.0,
                    final_residual: 0.0,
                    converged: true,
                })
            }
            Backend::Krylov { kind, op, precond } => {
                let mut r0 = vec![0.0; b.len()];
                op.apply(z.as_slice(), &mut r0);
                for (r, bi) in r0.iter_mut().zip(b.iter()) {
                    *r = bi - *r;
                }
                let r0_norm = r0.iter().map(|v| v * v).sum::<f64>().sqrt();
                let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                let tol = (self.config.lin_tol * r0_norm).max(self.config.lin_floor * b_norm);
                if r0_norm <= tol {
                    let rms_target = 1e-8 * (b.len() as f64).sqrt();
                    return Ok(InnerSolveInfo {
                        iterations: 0,
                        to_reduce_mild: Some(0.0),
                        to_reduce_strict: (r0_norm <= rms_target).then_some(0.0),
                        initial_residual: r0_norm,
                        final_residual: r0_norm,
                        converged: true,
                    });
                }
                let report = match kind {
                    LinearSolverKind::ConjugateGradient => conjugate_gradient(
                        op,
                        b,
                        precond,
                        tol,
                        self.config.lin_maxit,
                        Some(z.as_slice()),
                    ),
                    LinearSolverKind::BiCgStab => bicgstab(
                        op,
                        b,
                        precond,
                        &IdentityOperator(op.dim()),
                        Some(z.as_slice()),
                        tol,
                        self.config.lin_maxit,
                    ),
                    LinearSolverKind::DirectDense => unreachable!(),
                };
                if let Some(stage) = &report.breakdown {
                    return Err(MfgError::SolverBreakdown {
                        stage: stage.clone(),
                        residual: report.final_residual,
                    });
                }
                z.as_mut_slice().copy_from_slice(&report.solution);
                let rms_target = 1e-8 * (b.len() as f64).sqrt();
                Ok(InnerSolveInfo {
                    iterations: report.iterations,
                    to_reduce_mild: report.iterations_to_reduce(1e-3),
                    to_reduce_strict: report.iterations_to_absolute(rms_target),
                    initial_residual: r0_norm,
                    final_residual: report.final_residual,
                    converged: report.converged,
                })
            }
        }
    }

    /// One full primal-dual pass, updating `state` in place.
    pub fn iterate(&self, state: &mut CpState) -> Result<StepInfo, MfgError> {
        let grid = &self.grid;
        let cfg = &self.config;

        // Multiplier solve on the extrapolated iterate. The dual pair
        // enters with a minus sign: the stored duals are the negated
        // splitting dual, which is what makes (n, v) = C* z and the
        // shifted prox argument (m + tau n, w + tau v) consistent.
        let t0 = Instant::now();
        let mut arg_m = state.density_extrap.clone();
        for v in arg_m.as_mut_slice() {
            *v *= cfg.gamma;
        }
        arg_m.axpy(-1.0, &state.dual_density);
        let mut arg_w = state.flux_extrap.clone();
        for v in arg_w.as_mut_slice() {
            *v *= cfg.gamma;
        }
        arg_w.axpy(-1.0, &state.dual_flux);
        let mut y = apply_constraint(&arg_m, &arg_w, grid);
        y.axpy(-cfg.gamma, &self.rhs_field);
        let b: Vec<f64> = y.as_slice().iter().map(|v| -v).collect();
        let inner = self.solve_normal(&b, &mut state.multiplier)?;
        let linear_seconds = t0.elapsed().as_secs_f64();

        // duals through the adjoint constraint
        let (nd, nv) = apply_constraint_adjoint(&state.multiplier, grid);
        state.dual_density = nd;
        state.dual_flux = nv;

        // proximal step on the shifted primal pair
        let t1 = Instant::now();
        let mut prox_m = state.density.clone();
        prox_m.axpy(cfg.tau, &state.dual_density);
        let mut prox_w = state.flux.clone();
        prox_w.axpy(cfg.tau, &state.dual_flux);
        let (m_new, w_new) = prox_phi(&prox_m, &prox_w, cfg.tau, &self.coupling, grid)?;
        let prox_seconds = t1.elapsed().as_secs_f64();

        // normalized RMS change of the primal pair
        let mut change_sq = 0.0;
        for (a, c) in m_new.as_slice().iter().zip(state.density.as_slice()) {
            change_sq += (a - c) * (a - c);
        }
        for (a, c) in w_new.as_slice().iter().zip(state.flux.as_slice()) {
            change_sq += (a - c) * (a - c);
        }
        let entries = (m_new.len() + w_new.len()) as f64;
        let change = (change_sq / entries).sqrt();

        // extrapolation
        for ((e, new), old) in state
            .density_extrap
            .as_mut_slice()
            .iter_mut()
            .zip(m_new.as_slice())
            .zip(state.density.as_slice())
        {
            *e = new + cfg.theta * (new - old);
        }
        for ((e, new), old) in state
            .flux_extrap
            .as_mut_slice()
            .iter_mut()
            .zip(w_new.as_slice())
            .zip(state.flux.as_slice())
        {
            *e = new + cfg.theta * (new - old);
        }
        state.density = m_new;
        state.flux = w_new;
        state.iteration += 1;

        if !state.is_finite() {
            return Err(MfgError::Diverged(format!(
                "non-finite iterate at pass {}",
                state.iteration
            )));
        }
        let objective = eval_objective(&state.density, &state.flux, &self.coupling, grid);
        Ok(StepInfo { change, objective, inner, linear_seconds, prox_seconds })
    }
}

/// Run the primal-dual loop to the configured tolerance.
///
/// `m0` is the discretized initial density. An exhausted iteration budget
/// yields an unconverged solution, not an error.
pub fn solve_mfg(
    grid: &GridSpec,
    coupling: CouplingSpec,
    m0: Vec<f64>,
    config: CpConfig,
) -> Result<MfgSolution, MfgError> {
    let workspace = CpWorkspace::new(grid, coupling, m0, config)?;
    let mut state = workspace.initial_state();
    let mut diagnostics = Vec::new();
    let mut timings = PhaseTimings::default();
    let mut converged = false;
    let mut final_change = f64::INFINITY;

    while state.iteration < config.max_iters {
        let t_iter = Instant::now();
        let info = workspace.iterate(&mut state)?;
        let wall = t_iter.elapsed().as_secs_f64();
        timings.linear_seconds += info.linear_seconds;
        timings.prox_seconds += info.prox_seconds;
        timings.other_seconds += (wall - info.linear_seconds - info.prox_seconds).max(0.0);
        diagnostics.push(IterationRecord {
            iteration: state.iteration,
            change: info.change,
            objective: info.objective,
            inner_iterations: info.inner.iterations,
            inner_to_mild: info.inner.to_reduce_mild,
            inner_to_strict: info.inner.to_reduce_strict,
            wall_seconds: wall,
        });
        final_change = info.change;
        if info.change <= config.tol_cp {
            converged = true;
            break;
        }
    }

    let (initial_multiplier, value) =
        extract_multiplier(&state.multiplier, &state.density, workspace.coupling(), grid);
    Ok(MfgSolution {
        density: state.density,
        flux: state.flux,
        value,
        initial_multiplier,
        converged,
        iterations: state.iteration,
        final_change,
        diagnostics,
        timings,
    })
}

/// Split the multiplier into the initial-condition block and the value
/// function, appending the terminal slice from the terminal cost.
pub fn extract_multiplier(
    z: &ScalarField,
    m: &ScalarField,
    coupling: &CouplingSpec,
    grid: &GridSpec,
) -> (Vec<f64>, ScalarField) {
    assert_eq!(z.slices(), grid.n_t + 1);
    let lambda = z.slice(0).to_vec();
    let mut value = grid.density_field();
    for k in 0..grid.n_t {
        value.slice_mut(k).copy_from_slice(z.slice(1 + k));
    }
    let terminal = m.slice(grid.n_t);
    let dst = value.slice_mut(grid.n_t);
    for (x, d) in dst.iter_mut().enumerate() {
        *d = coupling.g(x, terminal[x]);
    }
    (lambda, value)
}

fn sup_and_rms(field: &ScalarField) -> (f64, f64) {
    let mut sup = 0.0f64;
    let mut sum_sq = 0.0;
    for v in field.as_slice() {
        sup = sup.max(v.abs());
        sum_sq += v * v;
    }
    (sup, (sum_sq / field.len() as f64).sqrt())
}

/// Pointwise residual of the discrete backward value equation,
/// k = 0..N_T-1. The upwind-gradient term vanishes where the upwind
/// gradient does.
pub fn hjb_residual(
    u: &ScalarField,
    m: &ScalarField,
    coupling: &CouplingSpec,
    grid: &GridSpec,
) -> (ScalarField, f64, f64) {
    assert_eq!(u.slices(), grid.n_t + 1, "value field must include the terminal slice");
    assert_eq!(m.slices(), grid.n_t + 1);
    let n = grid.n_h;
    let inv_dt = 1.0 / grid.dt();
    let q_conj = grid.q_conj();
    let mut out = grid.dual_field();
    for k in 0..grid.n_t {
        let lap = crate::grid::apply_laplacian(u.slice(k), grid);
        let hat = crate::grid::apply_upwind_grad4(u.slice(k), grid);
        let cur = u.slice(k);
        let next = u.slice(k + 1);
        let m_next = m.slice(k + 1);
        let dst = out.slice_mut(k);
        for p in 0..n * n {
            let hat_norm_sq: f64 = hat[p].iter().map(|c| c * c).sum();
            let hamiltonian = if hat_norm_sq > 0.0 {
                hat_norm_sq.sqrt().powf(q_conj) / q_conj
            } else {
                0.0
            };
            dst[p] = -(next[p] - cur[p]) * inv_dt - grid.nu * lap[p] + hamiltonian
                - coupling.f(p, m_next[p]);
        }
    }
    let (sup, rms) = sup_and_rms(&out);
    (out, sup, rms)
}

/// Optimal flux reconstructed from the value function:
/// w^{k-1} = m^k |P_K(-grad4 u^{k-1})|^{(2-q)/(q-1)} P_K(-grad4 u^{k-1}),
/// zero where the projected gradient vanishes.
pub fn flux_from_value(u: &ScalarField, m: &ScalarField, grid: &GridSpec) -> FluxField {
    assert_eq!(u.slices(), grid.n_t + 1);
    assert_eq!(m.slices(), grid.n_t + 1);
    let n = grid.n_h;
    let exponent = (2.0 - grid.q) / (grid.q - 1.0);
    let mut w = grid.flux_field();
    for k in 1..=grid.n_t {
        let grad = apply_grad4(u.slice(k - 1), grid);
        let m_slice = m.slice(k);
        for i in 0..n {
            for j in 0..n {
                let p = i * n + j;
                let g = grad[p];
                let proj = project_onto_cone([-g[0], -g[1], -g[2], -g[3]]);
                let norm_sq: f64 = proj.iter().map(|c| c * c).sum();
                if norm_sq == 0.0 {
                    continue;
                }
                let scale = m_slice[p] * norm_sq.sqrt().powf(exponent);
                w.set(k - 1, i, j, [
                    scale * proj[0],
                    scale * proj[1],
                    scale * proj[2],
                    scale * proj[3],
                ]);
            }
        }
    }
    w
}

/// Residual of the discrete forward transport equation, formed as the
/// constraint applied to (m, flux reconstructed from u).
pub fn fp_residual(
    m: &ScalarField,
    u: &ScalarField,
    grid: &GridSpec,
) -> (ScalarField, f64, f64) {
    let w = flux_from_value(u, m, grid);
    let transport = apply_transport(m, grid);
    let div = apply_divergence(&w, grid);
    let mut out = grid.dual_field();
    for k in 0..grid.n_t {
        let dst = out.slice_mut(k);
        for ((d, a), b) in dst.iter_mut().zip(transport.slice(k)).zip(div.slice(k)) {
            *d = a + b;
        }
    }
    let (sup, rms) = sup_and_rms(&out);
    (out, sup, rms)
}

/// Distance of each density slice to a reference slice, in the
/// mass-weighted l2 norm (h^2 sum of squares, square-rooted).
pub fn turnpike_distance(m: &ScalarField, reference: &[f64], grid: &GridSpec) -> Vec<f64> {
    assert_eq!(m.slices(), grid.n_t + 1);
    assert_eq!(reference.len(), grid.points());
    let h2 = grid.h() * grid.h();
    (0..=grid.n_t)
        .map(|k| {
            let sum_sq: f64 = m
                .slice(k)
                .iter()
                .zip(reference.iter())
                .map(|(a, r)| (r - a) * (r - a))
                .sum();
            (h2 * sum_sq).sqrt()
        })
        .collect()
}

/// Largest deviation of any slice mass from the initial mass.
pub fn mass_deviation(m: &ScalarField, grid: &GridSpec) -> f64 {
    let h2 = grid.h() * grid.h();
    let target = h2 * m.slice_sum(0);
    (0..=grid.n_t)
        .map(|k| (h2 * m.slice_sum(k) - target).abs())
        .fold(0.0, f64::max)
}

/// RMS norm of C(m, w) - (m0, 0).
pub fn constraint_residual_rms(
    m: &ScalarField,
    w: &FluxField,
    m0: &[f64],
    grid: &GridSpec,
) -> f64 {
    let mut c = apply_constraint(m, w, grid);
    for (v, t) in c.slice_mut(0).iter_mut().zip(m0.iter()) {
        *v -= t;
    }
    let sum_sq: f64 = c.as_slice().iter().map(|v| v * v).sum();
    (sum_sq / c.len() as f64).sqrt()
}

/// Residual norms of a computed solution, as reported in run manifests.
#[derive(Debug, Clone, Copy)]
pub struct ResidualSummary {
    pub hjb_sup: f64,
    pub hjb_rms: f64,
    pub fp_sup: f64,
    pub fp_rms: f64,
    pub constraint_rms: f64,
    pub mass_deviation: f64,
}

pub fn residual_summary(
    solution: &MfgSolution,
    coupling: &CouplingSpec,
    m0: &[f64],
    grid: &GridSpec,
) -> ResidualSummary {
    let (_, hjb_sup, hjb_rms) = hjb_residual(&solution.value, &solution.density, coupling, grid);
    let (_, fp_sup, fp_rms) = fp_residual(&solution.density, &solution.value, grid);
    ResidualSummary {
        hjb_sup,
        hjb_rms,
        fp_sup,
        fp_rms,
        constraint_rms: constraint_residual_rms(&solution.density, &solution.flux, m0, grid),
        mass_deviation: mass_deviation(&solution.density, grid),
    }
}

/// The dual slices of the multiplier, re-exported for residual checks on
/// raw states.
pub fn multiplier_dual_part(z: &ScalarField, grid: &GridSpec) -> ScalarField {
    dual_part(z, grid)
}

/// Initial-condition multiplier consistency: at a converged solution the
/// leading multiplier block equals minus the k = 0 slice of the adjoint
/// transport of the value duals.
pub fn multiplier_identity_residual(z: &ScalarField, grid: &GridSpec) -> f64 {
    let u = dual_part(z, grid);
    let at_u = apply_transport_adjoint(&u, grid);
    let mut sup = 0.0f64;
    for (lambda, a) in z.slice(0).iter().zip(at_u.slice(0)) {
        sup = sup.max((lambda + a).abs());
    }
    sup
}
