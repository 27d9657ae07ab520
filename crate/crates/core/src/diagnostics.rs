//! Sector probabilities, boundary fluxes and the discrete probability
//! balance.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::assembly::{reconstruct_boundary, DiscreteHamiltonian};
use crate::error::{IbcError, Result};
use crate::evolve::MultiSectorState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub time: f64,
    pub sector_probs: Vec<f64>,
    pub total_norm: f64,
    /// Per link, averaged over the step: `sum lambda j_n` along the inward
    /// normal of the source face (negative when the source sector loses).
    pub fluxes: Vec<f64>,
    /// Per link, averaged over the step: inflow into the target sector.
    pub gains: Vec<f64>,
    pub balance_residuals: Vec<f64>,
    pub hermiticity_defect: f64,
}

impl BalanceReport {
    pub fn max_residual(&self) -> f64 {
        self.balance_residuals
            .iter()
            .fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Largest mismatch between what a link removes and what it delivers.
    pub fn max_link_mismatch(&self) -> f64 {
        self.fluxes
            .iter()
            .zip(&self.gains)
            .fold(0.0, |m, (f, g)| m.max((f + g).abs()))
    }
}

fn check_state(dh: &DiscreteHamiltonian, state: &MultiSectorState) -> Result<()> {
    if state.amplitudes.len() != dh.dim() {
        return Err(IbcError::Shape(format!(
            "state has {} amplitudes, operator has {} dofs",
            state.amplitudes.len(),
            dh.dim()
        )));
    }
    Ok(())
}

pub fn sector_probabilities(dh: &DiscreteHamiltonian, state: &MultiSectorState) -> Result<Vec<f64>> {
    check_state(dh, state)?;
    Ok(dh
        .sector_ranges
        .iter()
        .map(|r| {
            state.amplitudes[r.clone()]
                .iter()
                .zip(&dh.weights[r.clone()])
                .map(|(a, w)| a.norm_sqr() * w)
                .sum()
        })
        .collect())
}

/// `sum lambda j_n` over the face of `link`, with `j_n` along the inward
/// normal: the rate at which the source sector gains through that face.
pub fn boundary_flux(dh: &DiscreteHamiltonian, state: &MultiSectorState, link: usize) -> Result<f64> {
    let values = reconstruct_boundary(dh, state, link)?;
    let l = &dh.model.links[link];
    let sector = &dh.model.grids[l.source].sector;
    let c = dh.hbar() * sector.current_factor(l.face.axis);
    Ok(values
        .iter()
        .zip(&dh.recon[link].nodes)
        .map(|((psi, dpsi), n)| {
            let im: f64 = psi.iter().zip(dpsi).map(|(a, b)| (a.conj() * b).im).sum();
            n.lambda * c * im
        })
        .sum())
}

/// Rate at which the source term of `link` feeds the target sector,
/// `(2/hbar) Im <psi_t, nu (gamma psi_b + delta d_n psi_b)>_W`.
pub fn link_gain(dh: &DiscreteHamiltonian, state: &MultiSectorState, link: usize) -> Result<f64> {
    let values = reconstruct_boundary(dh, state, link)?;
    let l = &dh.model.links[link];
    let mut total = 0.0;
    for (k, ((psi, dpsi), n)) in values.iter().zip(&dh.recon[link].nodes).enumerate() {
        let cs = l.coefficients.at(k);
        let b = crate::coeff::CMatrix::from_column_slice(psi.len(), 1, psi);
        let db = crate::coeff::CMatrix::from_column_slice(dpsi.len(), 1, dpsi);
        let source = &cs.gamma * b + &cs.delta * db;
        let w = dh.weights[n.target_base];
        let im: f64 = source
            .iter()
            .enumerate()
            .map(|(i, s)| (state.amplitudes[n.target_base + i].conj() * s).im)
            .sum();
        total += w * n.nu * im;
    }
    Ok(2.0 / dh.hbar() * total)
}

/// Per-sector balance over one step `prev -> next`: the finite-difference
/// probability change minus the step-averaged boundary and source rates.
pub fn balance_residual(
    dh: &DiscreteHamiltonian,
    prev: &MultiSectorState,
    next: &MultiSectorState,
    dt: f64,
) -> Result<BalanceReport> {
    check_state(dh, prev)?;
    check_state(dh, next)?;
    if !(dt > 0.0) {
        return Err(IbcError::Shape(format!("dt must be positive, got {dt}")));
    }
    let elapsed = next.time - prev.time;
    if (elapsed - dt).abs() > 1e-9 * dt.max(next.time.abs()) {
        return Err(IbcError::Shape(format!(
            "states are {elapsed} apart, expected dt = {dt}"
        )));
    }
    let p0 = sector_probabilities(dh, prev)?;
    let p1 = sector_probabilities(dh, next)?;
    let nl = dh.model.links.len();
    let mut fluxes = Vec::with_capacity(nl);
    let mut gains = Vec::with_capacity(nl);
    for k in 0..nl {
        fluxes.push(0.5 * (boundary_flux(dh, prev, k)? + boundary_flux(dh, next, k)?));
        gains.push(0.5 * (link_gain(dh, prev, k)? + link_gain(dh, next, k)?));
    }
    let mut residuals: Vec<f64> = p0.iter().zip(&p1).map(|(a, b)| (b - a) / dt).collect();
    for (k, l) in dh.model.links.iter().enumerate() {
        residuals[l.source] -= fluxes[k];
        residuals[l.target] -= gains[k];
    }
    Ok(BalanceReport {
        time: next.time,
        total_norm: p1.iter().sum(),
        sector_probs: p1,
        fluxes,
        gains,
        balance_residuals: residuals,
        hermiticity_defect: dh.hermiticity_defect,
    })
}

/// `Re <psi, H psi>_W`.
pub fn energy(dh: &DiscreteHamiltonian, state: &MultiSectorState) -> Result<f64> {
    check_state(dh, state)?;
    let hpsi = dh.apply(&state.amplitudes);
    Ok(dh.inner(&state.amplitudes, &hpsi).re)
}

/// `<a, b>_W`.
pub fn overlap(dh: &DiscreteHamiltonian, a: &MultiSectorState, b: &MultiSectorState) -> Result<Complex64> {
    check_state(dh, a)?;
    check_state(dh, b)?;
    Ok(dh.inner(&a.amplitudes, &b.amplitudes))
}
