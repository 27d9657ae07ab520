//! The `run` and `dump-matrix` commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::{RunConfig, Scenario};
use super::scenarios::{build_model, initial_state};
use crate::assembly::{assemble, DiscreteHamiltonian};
use crate::coeff::{check_conditions, creation_coefficients, CMatrix, CoefficientSet};
use crate::diagnostics::{balance_residual, boundary_flux, sector_probabilities};
use crate::error::{IbcError, Result};
use crate::evolve::{CrankNicolson, MultiSectorState};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output.dir`.
    pub out_dir: Option<PathBuf>,
    pub check_only: bool,
    /// Overrides `evolution.force_nonhermitian` when set.
    pub force_nonhermitian: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub conditions_pass: bool,
    pub hermiticity_defect: f64,
    pub steps: usize,
    pub final_time: f64,
    pub initial_norm: f64,
    pub final_norm: f64,
    /// Largest `|norm(t) - norm(0)|`.
    pub max_norm_drift: f64,
    pub max_residual: f64,
    pub final_probs: Vec<f64>,
    pub csv_path: Option<PathBuf>,
}

fn fmt_matrix(m: &CMatrix) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let cells: Vec<String> = (0..m.ncols())
                .map(|j| {
                    let z = m[(i, j)];
                    format!("{:+.6e}{:+.6e}i", z.re, z.im)
                })
                .collect();
            cells.join(" ")
        })
        .collect();
    format!("[{}]", rows.join("; "))
}

fn write_set(out: &mut dyn Write, cs: &CoefficientSet) -> Result<bool> {
    let report = check_conditions(cs, cs.default_tolerance())?;
    writeln!(out, "  alpha = {}", fmt_matrix(&cs.alpha))?;
    writeln!(out, "  beta  = {}", fmt_matrix(&cs.beta))?;
    writeln!(out, "  gamma = {}", fmt_matrix(&cs.gamma))?;
    writeln!(out, "  delta = {}", fmt_matrix(&cs.delta))?;
    writeln!(out, "  K     = {:.6e}", cs.coupling)?;
    writeln!(
        out,
        "  defects: hermitian(alpha^† iota gamma) {:.3e}, hermitian(beta^† iota delta) {:.3e}, \
         normalization {:.3e}, full rank {}",
        report.defect_a, report.defect_b, report.defect_c, report.rank_full
    )?;
    Ok(report.passes)
}

/// Print the coefficient table of every link and return the first failing
/// link with its defect, if any.
pub fn report_conditions(
    cfg: &RunConfig,
    dh_model: &crate::assembly::ModelSpec,
    out: &mut dyn Write,
) -> Result<Option<(usize, f64)>> {
    let mut failed = None;
    if cfg.scenario == Scenario::RadialCreation {
        let p = &cfg.physics;
        if p.g != 0.0 {
            let cs = creation_coefficients(0, p.g, p.mass, p.rho, p.hbar)?;
            writeln!(out, "creation coefficients, n = 0 (physical amplitude):")?;
            write_set(out, &cs)?;
            let prefactor = cs.coupling / cs.alpha[(0, 0)].re;
            writeln!(
                out,
                "  K/alpha = {prefactor:.6e} (expected {:.6e})",
                -p.g * p.mass / (2.0 * std::f64::consts::PI * p.hbar * p.hbar * p.rho)
            )?;
            writeln!(out, "discretized in the reduced amplitude u = r psi:")?;
        } else {
            writeln!(out, "g = 0: sectors are decoupled")?;
        }
    }
    for (k, link) in dh_model.links.iter().enumerate() {
        let src = &dh_model.grids[link.source].sector;
        let tgt = &dh_model.grids[link.target].sector;
        writeln!(
            out,
            "link {k}: sector {} face (axis {}, side {}) -> sector {}",
            src.id, link.face.axis, link.face.side, tgt.id
        )?;
        let mut worst = 0.0f64;
        let mut pass = true;
        let n = link.nodes.len();
        for i in 0..n {
            let cs = link.coefficients.at(i);
            if i == 0 {
                pass &= write_set(out, cs)?;
            }
            let r = check_conditions(cs, cs.default_tolerance())?;
            pass &= r.passes;
            worst = worst.max(r.max_defect());
        }
        if !pass && failed.is_none() {
            failed = Some((k, worst));
        }
    }
    writeln!(
        out,
        "conditions: {}",
        if failed.is_none() { "PASS" } else { "FAIL" }
    )?;
    Ok(failed)
}

pub fn output_dir(cfg: &RunConfig, opts: &RunOptions) -> PathBuf {
    opts.out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
}

fn csv_header(dh: &DiscreteHamiltonian) -> String {
    let mut cols = vec!["t".to_string(), "total_norm".to_string()];
    for g in &dh.model.grids {
        cols.push(format!("P_sector_{}", g.sector.id));
    }
    for k in 0..dh.model.links.len() {
        cols.push(format!("flux_link_{k}"));
    }
    for g in &dh.model.grids {
        cols.push(format!("residual_sector_{}", g.sector.id));
    }
    cols.push("hermiticity_defect".into());
    cols.join(",")
}

fn csv_row(t: f64, norm: f64, probs: &[f64], fluxes: &[f64], residuals: &[f64], defect: f64) -> String {
    let mut cells = vec![format!("{t:.16e}"), format!("{norm:.16e}")];
    cells.extend(probs.iter().map(|v| format!("{v:.16e}")));
    cells.extend(fluxes.iter().map(|v| format!("{v:.16e}")));
    cells.extend(residuals.iter().map(|v| format!("{v:.16e}")));
    cells.push(format!("{defect:.16e}"));
    cells.join(",")
}

fn snapshot(dh: &DiscreteHamiltonian, state: &MultiSectorState) -> serde_json::Value {
    let sectors: Vec<_> = dh
        .model
        .grids
        .iter()
        .enumerate()
        .map(|(s, g)| {
            let mut coords = Vec::new();
            let mut component = Vec::new();
            let mut re = Vec::new();
            let mut im = Vec::new();
            for d in dh.sector_ranges[s].clone() {
                let (_, node, c) = dh.dof_owner[d];
                coords.push(g.nodes[node].coords.clone());
                component.push(c);
                re.push(state.amplitudes[d].re);
                im.push(state.amplitudes[d].im);
            }
            json!({ "id": g.sector.id, "coords": coords, "component": component, "re": re, "im": im })
        })
        .collect();
    json!({ "t": state.time, "sectors": sectors })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Check conditions, assemble, evolve and write the time series.
pub fn run(cfg: &RunConfig, opts: &RunOptions, out: &mut dyn Write) -> Result<RunSummary> {
    let model = build_model(cfg)?;
    let failed = report_conditions(cfg, &model, out)?;
    let force = opts.force_nonhermitian || cfg.evolution.force_nonhermitian;
    let dh = assemble(model)?;
    writeln!(out, "hermiticity defect: {:.3e}", dh.hermiticity_defect)?;
    let mut summary = RunSummary {
        conditions_pass: failed.is_none(),
        hermiticity_defect: dh.hermiticity_defect,
        steps: 0,
        final_time: 0.0,
        initial_norm: 0.0,
        final_norm: 0.0,
        max_norm_drift: 0.0,
        max_residual: 0.0,
        final_probs: Vec::new(),
        csv_path: None,
    };
    if let Some((link, defect)) = failed {
        if opts.check_only || !force {
            return Err(IbcError::Conditions { link, defect });
        }
        writeln!(out, "warning: evolving with violated conditions")?;
    }
    if opts.check_only {
        return Ok(summary);
    }
    if !dh.hermitian && !force {
        return Err(IbcError::NonHermitian { defect: dh.hermiticity_defect });
    }

    let mut state = initial_state(&dh, &cfg.initial)?;
    let ev = &cfg.evolution;
    let cn = CrankNicolson::new(&dh, ev.dt, ev.solver_tol, force)?;

    let dir = output_dir(cfg, opts);
    let csv_path = dir.join(&cfg.output.csv);
    let mut csv = create(&csv_path)?;
    writeln!(csv, "{}", csv_header(&dh))?;
    let mut snaps = match (&cfg.output.snapshots, cfg.output.snapshot_stride) {
        (Some(name), stride) if stride > 0 => Some(create(&dir.join(name))?),
        _ => None,
    };

    let probs = sector_probabilities(&dh, &state)?;
    let norm0: f64 = probs.iter().sum();
    let fluxes = (0..dh.model.links.len())
        .map(|k| boundary_flux(&dh, &state, k))
        .collect::<Result<Vec<_>>>()?;
    let nan = vec![f64::NAN; probs.len()];
    writeln!(csv, "{}", csv_row(0.0, norm0, &probs, &fluxes, &nan, dh.hermiticity_defect))?;
    if let Some(f) = snaps.as_mut() {
        writeln!(f, "{}", snapshot(&dh, &state))?;
    }

    summary.initial_norm = norm0;
    summary.final_norm = norm0;
    summary.final_probs = probs;
    for step in 1..=ev.steps {
        let next = cn.step(&state)?;
        if next.amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(IbcError::Solver { residual: f64::INFINITY });
        }
        let rep = balance_residual(&dh, &state, &next, ev.dt)?;
        writeln!(
            csv,
            "{}",
            csv_row(rep.time, rep.total_norm, &rep.sector_probs, &rep.fluxes, &rep.balance_residuals, rep.hermiticity_defect)
        )?;
        summary.max_norm_drift = summary.max_norm_drift.max((rep.total_norm - norm0).abs());
        summary.max_residual = summary.max_residual.max(rep.max_residual());
        summary.final_norm = rep.total_norm;
        summary.final_probs = rep.sector_probs;
        state = next;
        if let Some(f) = snaps.as_mut() {
            if step % cfg.output.snapshot_stride == 0 {
                writeln!(f, "{}", snapshot(&dh, &state))?;
            }
        }
    }
    csv.flush()?;
    if let Some(mut f) = snaps {
        f.flush()?;
    }
    summary.steps = ev.steps;
    summary.final_time = state.time;
    summary.csv_path = Some(csv_path);
    writeln!(
        out,
        "steps: {}  t = {:.6}  norm drift {:.3e}  max balance residual {:.3e}",
        summary.steps, summary.final_time, summary.max_norm_drift, summary.max_residual
    )?;
    writeln!(out, "final sector probabilities: {:?}", summary.final_probs)?;
    Ok(summary)
}

/// Assemble and return the coordinate-format dump of `H` (or `W H`).
pub fn dump_matrix(cfg: &RunConfig, weighted: bool) -> Result<String> {
    let dh = assemble(build_model(cfg)?)?;
    Ok(dh.dump_coordinates(weighted))
}
