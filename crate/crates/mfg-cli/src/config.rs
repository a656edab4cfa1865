//! Run configuration: a line-oriented text format with `[section]`
//! headers and `key = value` pairs. Unknown keys are rejected with the
//! offending `section.key` spelled out; the sections a run manifest
//! appends ([run], [residuals], [timing], [snapshots], [iterations]) are
//! skipped on input so a manifest can be replayed as a config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mfg_core::cp::{CpConfig, LinearSolverKind, MgParams, PrecondKind};
use mfg_core::grid::GridSpec;
use mfg_core::multigrid::CycleKind;

use crate::CliError;

/// Sections written by the manifest writer; ignored when parsing.
const MANIFEST_SECTIONS: [&str; 5] = ["run", "residuals", "timing", "snapshots", "iterations"];

#[derive(Debug, Clone, PartialEq)]
pub enum CouplingKind {
    SinCos,
    Tabulated(PathBuf),
    Free,
}

#[derive(Debug, Clone)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub csv: bool,
    pub raw: bool,
    pub snapshot_stride: usize,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub nu_list: Vec<f64>,
    /// (solver, preconditioner) pairs, parsed from `solver:precond`.
    pub methods: Vec<(LinearSolverKind, PrecondKind)>,
}

#[derive(Debug, Clone)]
pub struct CondConfig {
    pub nu_list: Vec<f64>,
    pub lanczos_iters: usize,
    pub include_preconditioned: bool,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub coupling: CouplingKind,
    pub solver: CpConfig,
    pub output: OutputConfig,
    pub bench: Option<BenchConfig>,
    pub cond: Option<CondConfig>,
}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

fn parse_sections(text: &str, path: &Path) -> Result<Sections, CliError> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(CliError::Validation(format!(
                    "{}:{}: malformed section header `{raw_line}`",
                    path.display(),
                    lineno + 1
                )));
            }
            let name = line[1..line.len() - 1].trim().to_ascii_lowercase();
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Validation(format!(
                "{}:{}: expected `key = value`, got `{raw_line}`",
                path.display(),
                lineno + 1
            )));
        };
        let Some(section) = &current else {
            return Err(CliError::Validation(format!(
                "{}:{}: `{key}` appears before any [section]",
                path.display(),
                lineno + 1
            )));
        };
        sections
            .get_mut(section)
            .unwrap()
            .insert(key.trim().to_ascii_lowercase(), value.trim().to_string());
    }
    Ok(sections)
}

struct SectionReader<'a> {
    name: &'a str,
    entries: BTreeMap<String, String>,
    seen: Vec<String>,
}

impl<'a> SectionReader<'a> {
    fn new(sections: &Sections, name: &'a str) -> Self {
        Self {
            name,
            entries: sections.get(name).cloned().unwrap_or_default(),
            seen: Vec::new(),
        }
    }

    fn get<T: FromStr>(&mut self, key: &str, default: Option<T>) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.seen.push(key.to_string());
        match self.entries.get(key) {
            Some(raw) => raw.parse::<T>().map_err(|e| {
                CliError::Validation(format!("{}.{key}: cannot parse `{raw}`: {e}", self.name))
            }),
            None => default.ok_or_else(|| {
                CliError::Validation(format!("{}.{key} is required", self.name))
            }),
        }
    }

    fn get_string(&mut self, key: &str) -> Option<String> {
        self.seen.push(key.to_string());
        self.entries.get(key).cloned()
    }

    fn finish(self) -> Result<(), CliError> {
        for key in self.entries.keys() {
            if !self.seen.contains(key) {
                return Err(CliError::Validation(format!(
                    "{}.{key}: unknown key",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

fn parse_list<T: FromStr>(raw: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| CliError::Validation(format!("{what}: cannot parse `{s}`: {e}")))
        })
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let sections = parse_sections(text, path)?;
        for name in sections.keys() {
            let known = ["grid", "coupling", "solver", "multigrid", "output", "bench", "cond"];
            if !known.contains(&name.as_str()) && !MANIFEST_SECTIONS.contains(&name.as_str()) {
                return Err(CliError::Validation(format!("unknown section [{name}]")));
            }
        }

        let mut grid = SectionReader::new(&sections, "grid");
        let n_h: usize = grid.get("n_h", None)?;
        let n_t: usize = grid.get("n_t", None)?;
        let horizon: f64 = grid.get("horizon", Some(1.0))?;
        let nu: f64 = grid.get("nu", None)?;
        let q: f64 = grid.get("q", Some(2.0))?;
        grid.finish()?;
        let grid = GridSpec::new(n_h, n_t, horizon, nu, q)
            .map_err(|e| CliError::Validation(format!("grid: {e}")))?;

        let mut coupling = SectionReader::new(&sections, "coupling");
        let kind_raw = coupling.get_string("kind").unwrap_or_else(|| "sincos".into());
        let hbar_file = coupling.get_string("hbar_file");
        coupling.finish()?;
        let coupling = match kind_raw.to_ascii_lowercase().as_str() {
            "sincos" => CouplingKind::SinCos,
            "free" => CouplingKind::Free,
            "tabulated" => {
                let file = hbar_file.ok_or_else(|| {
                    CliError::Validation(
                        "coupling.hbar_file is required for kind = tabulated".into(),
                    )
                })?;
                CouplingKind::Tabulated(PathBuf::from(file))
            }
            other => {
                return Err(CliError::Validation(format!(
                    "coupling.kind: unknown value `{other}` (sincos | tabulated | free)"
                )))
            }
        };

        let defaults = CpConfig::default();
        let mut solver = SectionReader::new(&sections, "solver");
        let gamma: f64 = solver.get("gamma", Some(defaults.gamma))?;
        let tau: f64 = solver.get("tau", Some(defaults.tau))?;
        let theta: f64 = solver.get("theta", Some(defaults.theta))?;
        let tol_cp: f64 = solver.get("tol_cp", Some(defaults.tol_cp))?;
        let max_iters: usize = solver.get("max_iters", Some(defaults.max_iters))?;
        let linear_solver: LinearSolverKind =
            solver.get("linear_solver", Some(defaults.linear_solver))?;
        let preconditioner: PrecondKind =
            solver.get("preconditioner", Some(defaults.preconditioner))?;
        let lin_tol: f64 = solver.get("lin_tol", Some(defaults.lin_tol))?;
        let lin_floor: f64 = solver.get("lin_floor", Some(defaults.lin_floor))?;
        let lin_maxit: usize = solver.get("lin_maxit", Some(defaults.lin_maxit))?;
        solver.finish()?;

        let mut mg = SectionReader::new(&sections, "multigrid");
        let base: usize = mg.get("base", Some(2))?;
        let levels_raw = mg.get_string("levels");
        let eta1: usize = mg.get("eta1", Some(2))?;
        let eta2: usize = mg.get("eta2", Some(2))?;
        let cycle: CycleKind = mg.get("cycle", Some(CycleKind::F))?;
        mg.finish()?;
        let levels = match levels_raw.as_deref() {
            None | Some("auto") => None,
            Some(raw) => Some(raw.parse::<usize>().map_err(|e| {
                CliError::Validation(format!("multigrid.levels: cannot parse `{raw}`: {e}"))
            })?),
        };

        let solver_cfg = CpConfig {
            gamma,
            tau,
            theta,
            tol_cp,
            max_iters,
            linear_solver,
            preconditioner,
            lin_tol,
            lin_floor,
            lin_maxit,
            mg: MgParams { base, levels, eta1, eta2, cycle },
        };
        if gamma * tau >= 1.0 {
            return Err(CliError::Validation(format!(
                "solver.gamma * solver.tau = {:.6} must be < 1 (solver.gamma = {gamma}, solver.tau = {tau})",
                gamma * tau
            )));
        }
        solver_cfg
            .validate(&grid)
            .map_err(|e| CliError::Validation(format!("solver: {e}")))?;

        let mut output = SectionReader::new(&sections, "output");
        let directory = output.get_string("directory").unwrap_or_else(|| "out".into());
        let formats = output.get_string("formats").unwrap_or_else(|| "csv,raw".into());
        let snapshot_stride: usize =
            output.get("snapshot_stride", Some((n_t / 4).max(1)))?;
        output.finish()?;
        let mut csv = false;
        let mut raw = false;
        for fmt in formats.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match fmt.to_ascii_lowercase().as_str() {
                "csv" => csv = true,
                "raw" => raw = true,
                other => {
                    return Err(CliError::Validation(format!(
                        "output.formats: unknown format `{other}` (csv | raw)"
                    )))
                }
            }
        }
        if snapshot_stride == 0 {
            return Err(CliError::Validation("output.snapshot_stride must be positive".into()));
        }
        let directory = match std::env::var("MFG_OUTPUT_DIR") {
            Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => PathBuf::from(directory),
        };
        let output = OutputConfig { directory, csv, raw, snapshot_stride };

        let bench = if sections.contains_key("bench") {
            let mut bench = SectionReader::new(&sections, "bench");
            let sizes = parse_list::<usize>(
                &bench.get_string("sizes").unwrap_or_else(|| n_h.to_string()),
                "bench.sizes",
            )?;
            let nu_list = parse_list::<f64>(
                &bench.get_string("nu_list").unwrap_or_default(),
                "bench.nu_list",
            )?;
            let methods_raw = bench
                .get_string("methods")
                .unwrap_or_else(|| "bicgstab:multigrid".into());
            bench.finish()?;
            let mut methods = Vec::new();
            for entry in methods_raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (s, p) = entry.split_once(':').ok_or_else(|| {
                    CliError::Validation(format!(
                        "bench.methods: `{entry}` must be `solver:preconditioner`"
                    ))
                })?;
                let solver = s.parse::<LinearSolverKind>().map_err(|e| {
                    CliError::Validation(format!("bench.methods: {e}"))
                })?;
                let precond = p.parse::<PrecondKind>().map_err(|e| {
                    CliError::Validation(format!("bench.methods: {e}"))
                })?;
                methods.push((solver, precond));
            }
            Some(BenchConfig { sizes, nu_list, methods })
        } else {
            None
        };

        let cond = if sections.contains_key("cond") {
            let mut cond = SectionReader::new(&sections, "cond");
            let nu_list = parse_list::<f64>(
                &cond.get_string("nu_list").unwrap_or_default(),
                "cond.nu_list",
            )?;
            let lanczos_iters: usize = cond.get("lanczos_iters", Some(300))?;
            let include_preconditioned: bool =
                cond.get("include_preconditioned", Some(false))?;
            cond.finish()?;
            Some(CondConfig { nu_list, lanczos_iters, include_preconditioned })
        } else {
            None
        };

        Ok(Self { grid, coupling, solver: solver_cfg, output, bench, cond })
    }

    /// Echo the resolved configuration in the input grammar (the head of
    /// every run manifest).
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        writeln!(s, "[grid]").unwrap();
        writeln!(s, "n_h = {}", g.n_h).unwrap();
        writeln!(s, "n_t = {}", g.n_t).unwrap();
        writeln!(s, "horizon = {}", g.horizon).unwrap();
        writeln!(s, "nu = {}", g.nu).unwrap();
        writeln!(s, "q = {}", g.q).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[coupling]").unwrap();
        match &self.coupling {
            CouplingKind::SinCos => writeln!(s, "kind = sincos").unwrap(),
            CouplingKind::Free => writeln!(s, "kind = free").unwrap(),
            CouplingKind::Tabulated(path) => {
                writeln!(s, "kind = tabulated").unwrap();
                writeln!(s, "hbar_file = {}", path.display()).unwrap();
            }
        }
        writeln!(s).unwrap();
        let c = &self.solver;
        writeln!(s, "[solver]").unwrap();
        writeln!(s, "gamma = {}", c.gamma).unwrap();
        writeln!(s, "tau = {}", c.tau).unwrap();
        writeln!(s, "theta = {}", c.theta).unwrap();
        writeln!(s, "tol_cp = {:e}", c.tol_cp).unwrap();
        writeln!(s, "max_iters = {}", c.max_iters).unwrap();
        let solver_name = match c.linear_solver {
            LinearSolverKind::DirectDense => "direct-dense",
            LinearSolverKind::ConjugateGradient => "cg",
            LinearSolverKind::BiCgStab => "bicgstab",
        };
        writeln!(s, "linear_solver = {solver_name}").unwrap();
        let precond_name = match c.preconditioner {
            PrecondKind::Identity => "identity",
            PrecondKind::Jacobi => "jacobi",
            PrecondKind::Multigrid => "multigrid",
        };
        writeln!(s, "preconditioner = {precond_name}").unwrap();
        writeln!(s, "lin_tol = {:e}", c.lin_tol).unwrap();
        writeln!(s, "lin_floor = {:e}", c.lin_floor).unwrap();
        writeln!(s, "lin_maxit = {}", c.lin_maxit).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[multigrid]").unwrap();
        writeln!(s, "base = {}", c.mg.base).unwrap();
        match c.mg.levels {
            Some(l) => writeln!(s, "levels = {l}").unwrap(),
            None => writeln!(s, "levels = auto").unwrap(),
        }
        writeln!(s, "eta1 = {}", c.mg.eta1).unwrap();
        writeln!(s, "eta2 = {}", c.mg.eta2).unwrap();
        let cycle_name = match c.mg.cycle {
            CycleKind::V => "V",
            CycleKind::W => "W",
            CycleKind::F => "F",
        };
        writeln!(s, "cycle = {cycle_name}").unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[output]").unwrap();
        writeln!(s, "directory = {}", self.output.directory.display()).unwrap();
        let formats = match (self.output.csv, self.output.raw) {
            (true, true) => "csv,raw",
            (true, false) => "csv",
            (false, true) => "raw",
            (false, false) => "",
        };
        writeln!(s, "formats = {formats}").unwrap();
        writeln!(s, "snapshot_stride = {}", self.output.snapshot_stride).unwrap();
        s
    }
}
