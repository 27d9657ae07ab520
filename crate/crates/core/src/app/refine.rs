//! Grid/time-step refinement study.

use std::fmt;

use super::config::{RunConfig, Scenario};
use super::scenarios::{build_model, initial_state};
use crate::assembly::assemble;
use crate::diagnostics::balance_residual;
use crate::error::{IbcError, Result};
use crate::evolve::CrankNicolson;
use crate::geometry::Domain;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineLevel {
    pub h: f64,
    pub dt: f64,
    pub steps: usize,
    /// Largest per-sector balance residual over the run.
    pub max_residual: f64,
    /// Probability-weighted first coordinate over all non-point sectors at
    /// the final time.
    pub probe: f64,
    pub final_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub levels: Vec<RefineLevel>,
    /// `log2(R_l / R_{l+1})` between consecutive levels.
    pub residual_orders: Vec<Option<f64>>,
    /// `log2(|Q_l - Q_{l+1}| / |Q_{l+1} - Q_{l+2}|)` over consecutive triples.
    pub probe_orders: Vec<Option<f64>>,
}

impl fmt::Display for ConvergenceTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "level  h            dt           max_residual  order   probe                  order")?;
        for (l, lv) in self.levels.iter().enumerate() {
            let ro = l
                .checked_sub(1)
                .and_then(|i| self.residual_orders[i])
                .map_or("-".to_string(), |p| format!("{p:.3}"));
            let po = l
                .checked_sub(2)
                .and_then(|i| self.probe_orders[i])
                .map_or("-".to_string(), |p| format!("{p:.3}"));
            writeln!(
                f,
                "{l:<6} {:<12.5e} {:<12.5e} {:<13.5e} {ro:<7} {:<22.15e} {po}",
                lv.h, lv.dt, lv.max_residual, lv.probe
            )?;
        }
        Ok(())
    }
}

/// `cfg` with grid spacing and time step divided by `2^level` and the step
/// count multiplied by it.
pub fn refined_config(cfg: &RunConfig, level: u32) -> RunConfig {
    let f = 1usize << level;
    let mut c = cfg.clone();
    c.grid.h /= f as f64;
    c.evolution.dt /= f as f64;
    c.evolution.steps *= f;
    if c.scenario == Scenario::Custom {
        for s in &mut c.sectors {
            match &mut s.sector.domain {
                Domain::Point => {}
                Domain::Interval { cells, .. } | Domain::Annulus { cells, .. } => *cells *= f,
                Domain::Box { axes } => axes.iter_mut().for_each(|a| a.cells *= f),
            }
        }
    }
    c
}

fn run_level(cfg: &RunConfig) -> Result<RefineLevel> {
    let dh = assemble(build_model(cfg)?)?;
    let ev = &cfg.evolution;
    if !dh.hermitian && !ev.force_nonhermitian {
        return Err(IbcError::NonHermitian { defect: dh.hermiticity_defect });
    }
    let cn = CrankNicolson::new(&dh, ev.dt, ev.solver_tol, ev.force_nonhermitian)?;
    let mut state = initial_state(&dh, &cfg.initial)?;
    let mut max_residual = 0.0f64;
    let mut final_probs = crate::diagnostics::sector_probabilities(&dh, &state)?;
    for _ in 0..ev.steps {
        let next = cn.step(&state)?;
        let rep = balance_residual(&dh, &state, &next, ev.dt)?;
        max_residual = max_residual.max(rep.max_residual());
        final_probs = rep.sector_probs;
        state = next;
    }
    let mut probe = 0.0;
    for (d, a) in state.amplitudes.iter().enumerate() {
        let (s, node, _) = dh.dof_owner[d];
        if let Some(x) = dh.model.grids[s].nodes[node].coords.first() {
            probe += a.norm_sqr() * dh.weights[d] * x;
        }
    }
    Ok(RefineLevel {
        h: cfg.grid.h,
        dt: ev.dt,
        steps: ev.steps,
        max_residual,
        probe,
        final_probs,
    })
}

/// Run `levels` successively halved copies of `cfg` (in parallel) and
/// estimate observed orders.
pub fn refine_study(cfg: &RunConfig, levels: u32) -> Result<ConvergenceTable> {
    if levels < 3 {
        return Err(IbcError::Config("a refinement study needs at least 3 levels".into()));
    }
    let configs: Vec<RunConfig> = (0..levels).map(|l| refined_config(cfg, l)).collect();
    let results: Vec<Result<RefineLevel>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| scope.spawn(move || run_level(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("refinement worker panicked"))
            .collect()
    });
    let levels = results.into_iter().collect::<Result<Vec<_>>>()?;
    let ratio_order = |a: f64, b: f64| {
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            Some((a / b).log2())
        } else {
            None
        }
    };
    let residual_orders = levels
        .windows(2)
        .map(|w| ratio_order(w[0].max_residual, w[1].max_residual))
        .collect();
    let probe_orders = levels
        .windows(3)
        .map(|w| ratio_order((w[0].probe - w[1].probe).abs(), (w[1].probe - w[2].probe).abs()))
        .collect();
    Ok(ConvergenceTable {
        levels,
        residual_orders,
        probe_orders,
    })
}
