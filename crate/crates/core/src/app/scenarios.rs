//! Model construction for the built-in scenarios and custom configs.

use num_complex::Complex64;

use super::config::{
    CoefficientConfig, CoefficientKind, InitialState, PotentialConfig, RunConfig, Scenario,
};
use crate::assembly::{
    radial_creation_model, DiscreteHamiltonian, ModelSpec, RadialCreationParams, SectorPotential,
};
use crate::coeff::{
    complete_coefficients, make_dirichlet, perturb_condition, CMatrix, CoefficientSet, FiberDims,
    MatrixSpec,
};
use crate::error::{IbcError, Result};
use crate::evolve::{ground_state, MultiSectorState};
use crate::geometry::{
    Axis, Domain, Face, LinkCoefficients, MapSpec, MassConvention, Sector, SectorGrid,
};

fn config_err(e: IbcError) -> IbcError {
    match e {
        IbcError::Config(_) => e,
        other => IbcError::Config(other.to_string()),
    }
}

fn cells(length: f64, h: f64, what: &str) -> Result<usize> {
    let n = (length / h).round();
    if n < 2.0 || (n * h - length).abs() > 1e-9 * length {
        return Err(IbcError::Config(format!(
            "grid.h = {h} does not divide {what} = {length} into at least 2 cells"
        )));
    }
    Ok(n as usize)
}

fn matrix(spec: &Option<MatrixSpec>, name: &str) -> Result<CMatrix> {
    spec.as_ref()
        .ok_or_else(|| IbcError::Config(format!("coefficients.{name} is required")))?
        .to_matrix()
        .map_err(config_err)
}

/// Coefficient set for a scenario link whose source sector has natural
/// coupling `natural`. Without a table: `alpha = 1`, `gamma = 0`.
pub fn resolve_coefficients(
    cc: Option<&CoefficientConfig>,
    natural: f64,
) -> Result<CoefficientSet> {
    let Some(cc) = cc else {
        let one = CMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        return make_dirichlet(one, CMatrix::zeros(1, 1), natural).map_err(config_err);
    };
    let k = cc.coupling.unwrap_or(natural);
    let cs = match cc.kind {
        CoefficientKind::Dirichlet => {
            let alpha = matrix(&cc.alpha, "alpha")?;
            let gamma = match &cc.gamma {
                Some(g) => g.to_matrix().map_err(config_err)?,
                None => CMatrix::zeros(alpha.nrows(), alpha.nrows()),
            };
            make_dirichlet(alpha, gamma, k)
        }
        CoefficientKind::Robin => complete_coefficients(
            matrix(&cc.alpha, "alpha")?,
            matrix(&cc.beta, "beta")?,
            matrix(&cc.delta, "delta")?,
            k,
        ),
        CoefficientKind::Explicit => {
            let alpha = matrix(&cc.alpha, "alpha")?;
            let delta = matrix(&cc.delta, "delta")?;
            let dims = FiberDims::new(alpha.nrows(), delta.nrows()).map_err(config_err)?;
            CoefficientSet::new(
                dims,
                alpha,
                matrix(&cc.beta, "beta")?,
                matrix(&cc.gamma, "gamma")?,
                delta,
                k,
            )
        }
    }
    .map_err(config_err)?;
    Ok(if cc.perturb != 0.0 {
        perturb_condition(&cs, cc.perturb)
    } else {
        cs
    })
}

fn grid(sector: Sector) -> Result<SectorGrid> {
    SectorGrid::new(sector).map_err(config_err)
}

fn potential_values(grid: &SectorGrid, p: &PotentialConfig) -> Result<SectorPotential> {
    Ok(match p {
        PotentialConfig::Constant { value } => SectorPotential::constant(*value),
        PotentialConfig::Harmonic { omega, center } => {
            if center.len() != grid.dim() {
                return Err(IbcError::Config(format!(
                    "harmonic center of sector {} needs {} coordinates",
                    grid.sector.id,
                    grid.dim()
                )));
            }
            let values = grid
                .nodes
                .iter()
                .map(|n| {
                    n.coords
                        .iter()
                        .zip(center)
                        .zip(&grid.sector.mass_factors)
                        .map(|((x, c), m)| 0.5 * m * omega * omega * (x - c).powi(2))
                        .sum()
                })
                .collect();
            SectorPotential { values, offset: 0.0 }
        }
    })
}

/// Build the model described by `cfg`.
pub fn build_model(cfg: &RunConfig) -> Result<ModelSpec> {
    let p = &cfg.physics;
    let h = cfg.grid.h;
    match cfg.scenario {
        Scenario::PointHalfline => {
            let natural = 2.0 * p.mass / (p.hbar * p.hbar);
            let cs = resolve_coefficients(cfg.coefficients.as_ref(), natural)?;
            let point = grid(Sector {
                id: 0,
                domain: Domain::Point,
                mass_factors: vec![],
                fiber_dim: cs.dims.r_target,
                convention: MassConvention::Explicit,
            })?;
            let half = grid(Sector {
                id: 1,
                domain: Domain::Interval {
                    a: 0.0,
                    b: cfg.grid.length,
                    cells: cells(cfg.grid.length, h, "grid.length")?,
                    physical: [true, false],
                },
                mass_factors: vec![p.mass],
                fiber_dim: cs.dims.r_boundary,
                convention: MassConvention::Explicit,
            })?;
            let mut m = ModelSpec::new(vec![point, half], p.hbar);
            m.link(
                1,
                Face { axis: 0, side: 0 },
                0,
                MapSpec::Collapse,
                LinkCoefficients::Uniform(cs),
            )
            .map_err(config_err)?;
            Ok(m)
        }
        Scenario::LineHalfplane => {
            let natural = 2.0 * p.mass / (p.hbar * p.hbar);
            let cs = resolve_coefficients(cfg.coefficients.as_ref(), natural)?;
            let w = cfg.grid.width;
            let nx = cells(2.0 * w, h, "2 * grid.width")?;
            let x_axis = Axis { lo: -w, hi: w, cells: nx, physical: [false, false] };
            let line = grid(Sector {
                id: 0,
                domain: Domain::Interval { a: -w, b: w, cells: nx, physical: [false, false] },
                mass_factors: vec![p.mass],
                fiber_dim: cs.dims.r_target,
                convention: MassConvention::Explicit,
            })?;
            let plane = grid(Sector {
                id: 1,
                domain: Domain::Box {
                    axes: vec![
                        x_axis,
                        Axis {
                            lo: 0.0,
                            hi: cfg.grid.length,
                            cells: cells(cfg.grid.length, h, "grid.length")?,
                            physical: [true, false],
                        },
                    ],
                },
                mass_factors: vec![p.mass, p.mass],
                fiber_dim: cs.dims.r_boundary,
                convention: MassConvention::Explicit,
            })?;
            let mut m = ModelSpec::new(vec![line, plane], p.hbar);
            m.link(
                1,
                Face { axis: 1, side: 0 },
                0,
                MapSpec::IdentityProjection,
                LinkCoefficients::Uniform(cs),
            )
            .map_err(config_err)?;
            Ok(m)
        }
        Scenario::RadialCreation => radial_creation_model(radial_params(cfg)).map_err(config_err),
        Scenario::Custom => {
            let mut grids = Vec::with_capacity(cfg.sectors.len());
            let mut potentials = Vec::with_capacity(cfg.sectors.len());
            for sc in &cfg.sectors {
                if grids.iter().any(|g: &SectorGrid| g.sector.id == sc.sector.id) {
                    return Err(IbcError::Config(format!("duplicate sector id {}", sc.sector.id)));
                }
                let g = grid(sc.sector.clone())?;
                potentials.push(match &sc.potential {
                    Some(pc) => potential_values(&g, pc)?,
                    None => SectorPotential::default(),
                });
                grids.push(g);
            }
            let index = |id: usize| {
                grids
                    .iter()
                    .position(|g| g.sector.id == id)
                    .ok_or_else(|| IbcError::Config(format!("no sector with id {id}")))
            };
            let links: Vec<_> = cfg
                .links
                .iter()
                .map(|l| {
                    let cs = CoefficientSet::try_from(&l.coefficients).map_err(config_err)?;
                    Ok((index(l.source)?, l.face, index(l.target)?, l.map.clone(), cs))
                })
                .collect::<Result<_>>()?;
            let mut m = ModelSpec::new(grids, p.hbar);
            m.potentials = potentials;
            for (s, face, t, map, cs) in links {
                m.link(s, face, t, map, LinkCoefficients::Uniform(cs))
                    .map_err(config_err)?;
            }
            Ok(m)
        }
    }
}

pub fn radial_params(cfg: &RunConfig) -> RadialCreationParams {
    RadialCreationParams {
        g: cfg.physics.g,
        m_y: cfg.physics.mass,
        rho: cfg.physics.rho,
        e0: cfg.physics.e0,
        outer: cfg.physics.rho + cfg.grid.length,
        h: cfg.grid.h,
        hbar: cfg.physics.hbar,
    }
}

/// Initial state on the dofs of `dh`.
pub fn initial_state(dh: &DiscreteHamiltonian, init: &InitialState) -> Result<MultiSectorState> {
    let sector_index = |id: usize| {
        dh.model
            .grids
            .iter()
            .position(|g| g.sector.id == id)
            .ok_or_else(|| IbcError::Config(format!("initial state: no sector with id {id}")))
    };
    let mut state = MultiSectorState::zeros(dh.dim());
    match init {
        InitialState::Zero => return Ok(state),
        InitialState::GroundState { shift, tol } => {
            return ground_state(dh, *shift, *tol).map(|(_, s)| s);
        }
        InitialState::Uniform { sector } => {
            let s = sector_index(*sector)?;
            for d in dh.sector_ranges[s].clone() {
                state.amplitudes[d] = Complex64::new(1.0, 0.0);
            }
        }
        InitialState::Gaussian { sector, center, width, momentum } => {
            let s = sector_index(*sector)?;
            let g = &dh.model.grids[s];
            if center.len() != g.dim() || !(momentum.is_empty() || momentum.len() == g.dim()) {
                return Err(IbcError::Config(format!(
                    "initial packet in sector {sector} needs {} coordinates",
                    g.dim()
                )));
            }
            if !(*width > 0.0) {
                return Err(IbcError::Config("initial packet width must be positive".into()));
            }
            for (node, d) in dh.dof_of[s].iter().enumerate() {
                let Some(d) = d else { continue };
                let x = &g.nodes[node].coords;
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum();
                let phase: f64 = x.iter().zip(momentum).map(|(a, k)| a * k).sum();
                state.amplitudes[*d] =
                    Complex64::from_polar((-r2 / (4.0 * width * width)).exp(), phase);
            }
        }
    }
    let norm = dh.norm_sqr(&state.amplitudes).sqrt();
    if !(norm > 0.0) {
        return Err(IbcError::Config("initial state vanishes on the grid".into()));
    }
    state.amplitudes.iter_mut().for_each(|a| *a /= norm);
    Ok(state)
}
