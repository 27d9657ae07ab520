//! Crank–Nicolson time stepping and shift-invert ground states.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::assembly::DiscreteHamiltonian;
use crate::error::{IbcError, Result};
use crate::sparse::{norm2, solve_refined, BandedLu, CsrMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSectorState {
    /// Dof-ordered amplitudes of the assembled operator.
    pub amplitudes: Vec<Complex64>,
    pub time: f64,
}

impl MultiSectorState {
    pub fn zeros(dim: usize) -> Self {
        Self {
            amplitudes: vec![Complex64::new(0.0, 0.0); dim],
            time: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default)]
    pub force_nonhermitian: bool,
}

fn default_solver_tol() -> f64 {
    1e-12
}

/// Factored propagator `(I + i dt H / 2 hbar)^{-1} (I - i dt H / 2 hbar)`.
#[derive(Debug, Clone)]
pub struct CrankNicolson {
    implicit: CsrMatrix,
    explicit: CsrMatrix,
    lu: BandedLu,
    dt: f64,
    solver_tol: f64,
}

impl CrankNicolson {
    pub fn new(
        dh: &DiscreteHamiltonian,
        dt: f64,
        solver_tol: f64,
        force_nonhermitian: bool,
    ) -> Result<Self> {
        if !dt.is_finite() || dt < 0.0 {
            return Err(IbcError::Shape(format!("time step must be >= 0, got {dt}")));
        }
        if !dh.hermitian && !force_nonhermitian {
            return Err(IbcError::NonHermitian {
                defect: dh.hermiticity_defect,
            });
        }
        let tau = Complex64::new(0.0, dt / (2.0 * dh.hbar()));
        let one = Complex64::new(1.0, 0.0);
        let implicit = dh.h.shifted(one, tau);
        let explicit = dh.h.shifted(one, -tau);
        let lu = BandedLu::factor(&implicit)?;
        Ok(Self {
            implicit,
            explicit,
            lu,
            dt,
            solver_tol,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, state: &MultiSectorState) -> Result<MultiSectorState> {
        if state.amplitudes.len() != self.implicit.dim() {
            return Err(IbcError::Shape(format!(
                "state has {} amplitudes, operator has {} dofs",
                state.amplitudes.len(),
                self.implicit.dim()
            )));
        }
        let rhs = self.explicit.mul_vec(&state.amplitudes);
        let amplitudes = solve_refined(&self.implicit, &self.lu, &rhs, self.solver_tol)?;
        Ok(MultiSectorState {
            amplitudes,
            time: state.time + self.dt,
        })
    }
}

/// One step; refuses a flagged operator.
pub fn step_crank_nicolson(
    dh: &DiscreteHamiltonian,
    state: &MultiSectorState,
    dt: f64,
    solver_tol: f64,
) -> Result<MultiSectorState> {
    CrankNicolson::new(dh, dt, solver_tol, false)?.step(state)
}

/// Run `config.steps` steps, calling `observe` on the initial state and
/// after every step.
pub fn evolve<F>(
    dh: &DiscreteHamiltonian,
    initial: MultiSectorState,
    config: &EvolutionConfig,
    mut observe: F,
) -> Result<MultiSectorState>
where
    F: FnMut(&MultiSectorState) -> Result<()>,
{
    let cn = CrankNicolson::new(dh, config.dt, config.solver_tol, config.force_nonhermitian)?;
    let mut state = initial;
    observe(&state)?;
    for _ in 0..config.steps {
        state = cn.step(&state)?;
        observe(&state)?;
    }
    Ok(state)
}

/// Eigenpair of `H` nearest `shift`, by inverse iteration on the symmetrized
/// operator `W^{1/2} H W^{-1/2}`. Converged when `|H psi - E psi|_W <= tol`
/// for `|psi|_W = 1`.
pub fn ground_state(
    dh: &DiscreteHamiltonian,
    shift: f64,
    tol: f64,
) -> Result<(f64, MultiSectorState)> {
    const MAX_ITER: usize = 5000;
    if !dh.hermitian {
        return Err(IbcError::NonHermitian {
            defect: dh.hermiticity_defect,
        });
    }
    let n = dh.dim();
    let sqrt_w: Vec<f64> = dh.weights.iter().map(|w| w.sqrt()).collect();
    let inv_sqrt_w: Vec<f64> = sqrt_w.iter().map(|w| 1.0 / w).collect();
    let sym = dh.h.scale(&sqrt_w, &inv_sqrt_w);
    let shifted = sym.shifted(Complex64::new(-shift, 0.0), Complex64::new(1.0, 0.0));
    let lu = BandedLu::factor(&shifted)?;

    let mut x: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + 0.25 * ((i as f64) * 0.7).sin(), 0.0))
        .collect();
    normalize(&mut x);
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_ITER {
        // Near-singular by design; the direction is what matters.
        x = lu.solve(&x);
        normalize(&mut x);
        let sx = sym.mul_vec(&x);
        let e: f64 = x.iter().zip(&sx).map(|(a, b)| (a.conj() * b).re).sum();
        let r: Vec<Complex64> = sx.iter().zip(&x).map(|(s, v)| s - v * e).collect();
        residual = norm2(&r);
        if residual <= tol {
            let amplitudes = x.iter().zip(&inv_sqrt_w).map(|(v, s)| v * *s).collect();
            return Ok((e, MultiSectorState { amplitudes, time: 0.0 }));
        }
    }
    Err(IbcError::Stagnation {
        iterations: MAX_ITER,
        residual,
    })
}

fn normalize(x: &mut [Complex64]) {
    let n = norm2(x);
    for v in x.iter_mut() {
        *v /= n;
    }
}
