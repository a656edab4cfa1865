//! Run manifest: the resolved configuration echoed in the config
//! grammar, followed by run outcome, residual norms, phase timings and
//! the list of written snapshots. A manifest file parses as a config, so
//! a run can be replayed from it directly.

use std::fmt::Write as _;

use mfg_core::cp::{MfgSolution, ResidualSummary};

use crate::config::RunConfig;
use crate::snapshot::SnapshotMeta;

pub struct ManifestData<'a> {
    pub config: &'a RunConfig,
    pub solution: &'a MfgSolution,
    pub residuals: &'a ResidualSummary,
    pub snapshots: &'a [(String, SnapshotMeta)],
}

pub fn render_manifest(data: &ManifestData) -> String {
    let mut s = data.config.echo();
    let sol = data.solution;
    writeln!(s).unwrap();
    writeln!(s, "[run]").unwrap();
    writeln!(s, "version = {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(s, "converged = {}", sol.converged).unwrap();
    writeln!(s, "iterations = {}", sol.iterations).unwrap();
    writeln!(s, "final_change = {:.17e}", sol.final_change).unwrap();
    writeln!(s).unwrap();
    let r = data.residuals;
    writeln!(s, "[residuals]").unwrap();
    writeln!(s, "hjb_sup = {:.17e}", r.hjb_sup).unwrap();
    writeln!(s, "hjb_rms = {:.17e}", r.hjb_rms).unwrap();
    writeln!(s, "fp_sup = {:.17e}", r.fp_sup).unwrap();
    writeln!(s, "fp_rms = {:.17e}", r.fp_rms).unwrap();
    writeln!(s, "constraint_rms = {:.17e}", r.constraint_rms).unwrap();
    writeln!(s, "mass_deviation = {:.17e}", r.mass_deviation).unwrap();
    writeln!(s).unwrap();
    let t = &sol.timings;
    writeln!(s, "[timing]").unwrap();
    writeln!(s, "total_s = {:.3}", t.total()).unwrap();
    writeln!(s, "linear_s = {:.3}", t.linear_seconds).unwrap();
    writeln!(s, "prox_s = {:.3}", t.prox_seconds).unwrap();
    writeln!(s, "other_s = {:.3}", t.other_seconds).unwrap();
    writeln!(s).unwrap();
    writeln!(s, "[snapshots]").unwrap();
    for (name, meta) in data.snapshots {
        writeln!(
            s,
            "{} = {}:{}x{}x{}:{}",
            name,
            meta.format.name(),
            meta.slices,
            meta.n,
            meta.n,
            meta.sha256
        )
        .unwrap();
    }
    s
}
