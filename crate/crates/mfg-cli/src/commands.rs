//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mfg_core::coupling::CouplingSpec;
use mfg_core::cp::{
    average_inner_iterations, residual_summary, solve_mfg, turnpike_distance,
    LinearSolverKind, PrecondKind,
};
use mfg_core::grid::{discretize_initial_density, GridSpec, ScalarField};
use mfg_core::krylov::{
    condition_estimate_with_inverse, lanczos_condition_estimate, ConditionEstimate,
};
use mfg_core::multigrid::{MgHierarchy, MgSolveOperator};
use mfg_core::ops::NormalOperator;

use crate::config::{CouplingKind, RunConfig};
use crate::manifest::{render_manifest, ManifestData};
use crate::snapshot::{read_field_snapshot, write_field_snapshot, SnapshotFormat, SnapshotMeta};
use crate::CliError;

fn build_coupling(config: &RunConfig) -> Result<CouplingSpec, CliError> {
    let grid = &config.grid;
    match &config.coupling {
        CouplingKind::SinCos => Ok(CouplingSpec::sincos(grid)),
        CouplingKind::Free => Ok(CouplingSpec::free(grid.q, grid.n_h)),
        CouplingKind::Tabulated(path) => {
            let (field, _) = read_field_snapshot(path)?;
            if field.slices() != 1 || field.n() != grid.n_h {
                return Err(CliError::Validation(format!(
                    "coupling.hbar_file: expected a 1x{}x{} field, got {}x{}x{}",
                    grid.n_h,
                    grid.n_h,
                    field.slices(),
                    field.n(),
                    field.n()
                )));
            }
            Ok(CouplingSpec::quadratic_congestion(grid.q, field.into_vec()))
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Time indices receiving snapshots: every stride-th slice plus the
/// first and last.
fn snapshot_indices(n_t: usize, stride: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (0..=n_t).step_by(stride.max(1)).collect();
    if *ks.last().unwrap() != n_t {
        ks.push(n_t);
    }
    ks
}

fn single_slice(field: &ScalarField, k: usize) -> ScalarField {
    ScalarField::from_vec(1, field.n(), field.slice(k).to_vec())
}

pub fn cmd_solve(config_path: &Path) -> Result<bool, CliError> {
    let config = RunConfig::load(config_path)?;
    let grid = config.grid;
    let coupling = build_coupling(&config)?;
    let m0 = discretize_initial_density(|_, _| 1.0, &grid, 4)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let solution = solve_mfg(&grid, coupling.clone(), m0.clone(), config.solver)
        .map_err(|e| CliError::Validation(format!("solver failed: {e}")))?;

    let dir = &config.output.directory;
    ensure_dir(dir)?;

    // per-iteration diagnostics
    let mut diag = String::from(
        "# iteration, change, objective, inner_iterations, inner_to_1e-3, inner_to_rms_1e-8, wall_s\n",
    );
    for d in &solution.diagnostics {
        let fmt_opt =
            |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_else(|| "nan".into());
        writeln!(
            diag,
            "{},{:.17e},{:.17e},{},{},{},{:.6}",
            d.iteration,
            d.change,
            d.objective,
            d.inner_iterations,
            fmt_opt(d.inner_to_mild),
            fmt_opt(d.inner_to_strict),
            d.wall_seconds
        )
        .unwrap();
    }
    write_text(&dir.join("diagnostics.csv"), &diag)?;

    // field snapshots
    let mut formats = Vec::new();
    if config.output.csv {
        formats.push(SnapshotFormat::Csv);
    }
    if config.output.raw {
        formats.push(SnapshotFormat::Raw);
    }
    let mut snapshots: Vec<(String, SnapshotMeta)> = Vec::new();
    for k in snapshot_indices(grid.n_t, config.output.snapshot_stride) {
        for format in &formats {
            for (prefix, field) in [("m", &solution.density), ("u", &solution.value)] {
                let name = format!("{prefix}_k{k:04}.{}", format.extension());
                let meta =
                    write_field_snapshot(&single_slice(field, k), &dir.join(&name), *format, Some(k))?;
                snapshots.push((name, meta));
            }
        }
    }

    // turnpike series against the mid-horizon slice
    let reference = solution.density.slice(grid.n_t / 2).to_vec();
    let series = turnpike_distance(&solution.density, &reference, &grid);
    let mut turnpike = String::from("# distance of each slice to the mid-horizon slice\nk,t,distance\n");
    for (k, d) in series.iter().enumerate() {
        writeln!(turnpike, "{k},{},{d:.17e}", k as f64 * grid.dt()).unwrap();
    }
    write_text(&dir.join("turnpike.csv"), &turnpike)?;

    let residuals = residual_summary(&solution, &coupling, &m0, &grid);
    let manifest = render_manifest(&ManifestData {
        config: &config,
        solution: &solution,
        residuals: &residuals,
        snapshots: &snapshots,
    });
    write_text(&dir.join("manifest.txt"), &manifest)?;

    println!(
        "{} in {} iterations (change {:.3e}); outputs in {}",
        if solution.converged { "converged" } else { "NOT converged" },
        solution.iterations,
        solution.final_change,
        dir.display()
    );
    Ok(solution.converged)
}

pub fn cmd_bench_linsolve(config_path: &Path) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let bench = config
        .bench
        .clone()
        .ok_or_else(|| CliError::Validation("missing [bench] section".into()))?;
    if bench.nu_list.is_empty() {
        return Err(CliError::Validation("bench.nu_list is empty".into()));
    }
    if bench.sizes.is_empty() {
        return Err(CliError::Validation("bench.sizes is empty".into()));
    }
    if bench.methods.is_empty() {
        return Err(CliError::Validation("bench.methods is empty".into()));
    }

    let method_name = |s: LinearSolverKind, p: PrecondKind| -> String {
        let s = match s {
            LinearSolverKind::DirectDense => "direct",
            LinearSolverKind::ConjugateGradient => "cg",
            LinearSolverKind::BiCgStab => "bicgstab",
        };
        let p = match p {
            PrecondKind::Identity => "identity",
            PrecondKind::Jacobi => "jacobi",
            PrecondKind::Multigrid => "multigrid",
        };
        format!("{s}_{p}")
    };

    let mut header = String::from("nu");
    for &size in &bench.sizes {
        for &(s, p) in &bench.methods {
            let m = method_name(s, p);
            write!(header, ",it3_{size}_{m},it8_{size}_{m},ms_{size}_{m},cp_iters_{size}_{m}")
                .unwrap();
        }
    }

    let mut out = String::new();
    writeln!(out, "# average inner iterations of one full primal-dual run per cell").unwrap();
    writeln!(out, "# it3: half-iterations to reduce the starting residual by 1e-3").unwrap();
    writeln!(out, "# it8: half-iterations to an absolute RMS residual of 1e-8").unwrap();
    writeln!(out, "# ms: mean wall time per linear solve in milliseconds").unwrap();
    writeln!(
        out,
        "# horizon = {}, q = {}, tol_cp = {:e}, lin_tol = {:e}, eta = {}/{}, cycle = F",
        config.grid.horizon,
        config.grid.q,
        config.solver.tol_cp,
        config.solver.lin_tol,
        config.solver.mg.eta1,
        config.solver.mg.eta2
    )
    .unwrap();
    writeln!(out, "{header}").unwrap();

    for &nu in &bench.nu_list {
        let mut row = format!("{nu}");
        for &size in &bench.sizes {
            let grid = GridSpec::new(size, size, config.grid.horizon, nu, config.grid.q)
                .map_err(|e| CliError::Validation(format!("bench grid: {e}")))?;
            for &(solver, precond) in &bench.methods {
                let mut cfg = config.solver;
                cfg.linear_solver = solver;
                cfg.preconditioner = precond;
                cfg.mg.levels = None; // re-derive per size
                cfg.validate(&grid)
                    .map_err(|e| CliError::Validation(format!("bench: {e}")))?;
                let coupling = CouplingSpec::sincos(&grid);
                let m0 = vec![1.0; grid.points()];
                let t0 = Instant::now();
                let sol = solve_mfg(&grid, coupling, m0, cfg)
                    .map_err(|e| CliError::Validation(format!("bench solve failed: {e}")))?;
                let elapsed = t0.elapsed().as_secs_f64();
                let mild = average_inner_iterations(&sol.diagnostics, false);
                let strict = average_inner_iterations(&sol.diagnostics, true);
                let solves = sol.diagnostics.len().max(1) as f64;
                let ms = sol.timings.linear_seconds / solves * 1e3;
                write!(row, ",{mild:.2},{strict:.2},{ms:.3},{}", sol.iterations).unwrap();
                eprintln!(
                    "  bench nu={nu} size={size} {}: cp_iters={} it3={mild:.2} it8={strict:.2} ({elapsed:.1}s)",
                    method_name(solver, precond),
                    sol.iterations
                );
            }
        }
        writeln!(out, "{row}").unwrap();
    }

    ensure_dir(&config.output.directory)?;
    let path = config.output.directory.join("bench_linsolve.csv");
    write_text(&path, &out)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_cond_estimate(config_path: &Path) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let cond = config
        .cond
        .clone()
        .ok_or_else(|| CliError::Validation("missing [cond] section".into()))?;
    if cond.nu_list.is_empty() {
        return Err(CliError::Validation("cond.nu_list is empty".into()));
    }

    let mut out = String::new();
    writeln!(out, "# spectral condition estimates of the normal operator").unwrap();
    writeln!(
        out,
        "# grid: {}^2 x {}, horizon = {}, q = {}",
        config.grid.n_h, config.grid.n_t, config.grid.horizon, config.grid.q
    )
    .unwrap();
    writeln!(
        out,
        "# lambda_max from a {}-step Lanczos run; lambda_min from Lanczos on the multigrid-solved inverse when the grid admits a hierarchy, otherwise from the same run",
        cond.lanczos_iters
    )
    .unwrap();
    let mut header = String::from("nu,lambda_min,lambda_max,kappa");
    if cond.include_preconditioned {
        header.push_str(",kappa_preconditioned");
    }
    writeln!(out, "{header}").unwrap();

    for &nu in &cond.nu_list {
        let grid = GridSpec::new(config.grid.n_h, config.grid.n_t, config.grid.horizon, nu, config.grid.q)
            .map_err(|e| CliError::Validation(format!("cond grid: {e}")))?;
        let op = NormalOperator::new(&grid);
        let mg = config.solver.mg;
        let hierarchy = mg
            .levels_for(grid.n_h)
            .and_then(|levels| MgHierarchy::build(&grid, mg.base, levels, mg.eta1, mg.eta2, mg.cycle).ok());
        let est: ConditionEstimate = match &hierarchy {
            Some(h) => {
                let inverse = MgSolveOperator::new(h, 1e-10, 200);
                condition_estimate_with_inverse(&op, &inverse, cond.lanczos_iters, 40, 7)
            }
            None => lanczos_condition_estimate(&op, cond.lanczos_iters, 7),
        }
        .map_err(|e| CliError::Validation(format!("estimation failed at nu = {nu}: {e}")))?;
        let mut row = format!("{nu},{:.9e},{:.9e},{:.9e}", est.lambda_min, est.lambda_max, est.kappa);
        if cond.include_preconditioned {
            let h = hierarchy.as_ref().ok_or_else(|| {
                CliError::Validation(
                    "kappa_preconditioned needs a multigrid-compatible grid".into(),
                )
            })?;
            let composed = PreconditionedNormal { hierarchy: h, op: &op };
            let pre_est = lanczos_condition_estimate(&composed, cond.lanczos_iters.min(120), 7)
                .map_err(|e| {
                    CliError::Validation(format!("preconditioned estimate failed: {e}"))
                })?;
            write!(row, ",{:.9e}", pre_est.kappa).unwrap();
        }
        writeln!(out, "{row}").unwrap();
        eprintln!("  cond nu={nu}: kappa = {:.4e}", est.kappa);
    }

    ensure_dir(&config.output.directory)?;
    let path = config.output.directory.join("cond_estimate.csv");
    write_text(&path, &out)?;
    println!("wrote {}", path.display());
    Ok(())
}

struct PreconditionedNormal<'a> {
    hierarchy: &'a MgHierarchy,
    op: &'a NormalOperator,
}

impl mfg_core::krylov::LinearOperator for PreconditionedNormal<'_> {
    fn dim(&self) -> usize {
        mfg_core::krylov::LinearOperator::dim(self.op)
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let qx = mfg_core::krylov::LinearOperator::apply_vec(self.op, x);
        out.fill(0.0);
        self.hierarchy
            .cycle(self.hierarchy.level_count() - 1, out, &qx, self.hierarchy.cycle);
    }
}

pub fn cmd_info(snapshot: &Path) -> Result<(), CliError> {
    let (field, format) = read_field_snapshot(snapshot)?;
    let min = field.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = field.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("file:    {}", snapshot.display());
    println!("format:  {}", format.name());
    println!("shape:   {} x {} x {}", field.slices(), field.n(), field.n());
    println!("range:   [{min:.6e}, {max:.6e}]");
    let sidecar = crate::snapshot::sidecar_path(snapshot);
    if sidecar.exists() {
        println!("checksum: verified against {}", sidecar.display());
    } else {
        println!("checksum: no sidecar found");
    }
    Ok(())
}
