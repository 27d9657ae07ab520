//! Discrete IBC Hamiltonian.
//!
//! Each sector contributes the central second-difference kinetic operator
//! `-(hbar^2 / 2 m_i) d_i^2` plus its potential. Links fold the boundary
//! condition into the operator with one of two schemes:
//!
//! * `beta = 0`: boundary values are eliminated, `psi_b = K alpha^{-1} iota
//!   psi_t`, and the normal derivative is the one-sided difference to the
//!   first inner node.
//! * `beta` invertible: boundary nodes are unknowns with half-cell weight; a
//!   ghost node outside the face is fixed by the centered normal derivative
//!   that the boundary condition prescribes.
//!
//! In both cases the source term `nu (gamma psi_b + delta d_n psi_b)` on the
//! target row uses the same `psi_b` and `d_n psi_b`, and `W H` is Hermitian
//! exactly when the coefficient conditions hold and `K` is the sector's
//! natural coupling.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::coeff::{BoundaryScheme, CMatrix, CoefficientSet};
use crate::error::{IbcError, Result};
use crate::evolve::MultiSectorState;
use crate::geometry::{
    build_link, BoundaryLink, Domain, Face, LinkCoefficients, MapSpec, MassConvention, Sector,
    SectorGrid,
};
use crate::sparse::CsrMatrix;

/// Relative Hermiticity defect above which a model is flagged.
pub const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SectorPotential {
    /// Node-sampled values (empty means zero).
    pub values: Vec<f64>,
    pub offset: f64,
}

impl SectorPotential {
    pub fn constant(offset: f64) -> Self {
        Self {
            values: Vec::new(),
            offset,
        }
    }

    fn at(&self, node: usize) -> f64 {
        self.values.get(node).copied().unwrap_or(0.0) + self.offset
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub grids: Vec<SectorGrid>,
    pub links: Vec<BoundaryLink>,
    pub potentials: Vec<SectorPotential>,
    pub hbar: f64,
}

impl ModelSpec {
    pub fn new(grids: Vec<SectorGrid>, hbar: f64) -> Self {
        let potentials = vec![SectorPotential::default(); grids.len()];
        Self {
            grids,
            links: Vec::new(),
            potentials,
            hbar,
        }
    }

    /// Discretize and attach a link from `face` of sector `source` to sector
    /// `target` (indices into `grids`).
    pub fn link(
        &mut self,
        source: usize,
        face: Face,
        target: usize,
        map: MapSpec,
        coefficients: LinkCoefficients,
    ) -> Result<&mut Self> {
        let link = build_link(
            source,
            &self.grids[source],
            face,
            target,
            &self.grids[target],
            map,
            coefficients,
        )?;
        self.links.push(link);
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.hbar.is_finite() && self.hbar > 0.0) {
            return Err(IbcError::Geometry("hbar must be positive".into()));
        }
        if self.potentials.len() != self.grids.len() {
            return Err(IbcError::Shape("one potential per sector required".into()));
        }
        for (s, (p, g)) in self.potentials.iter().zip(&self.grids).enumerate() {
            if !p.values.is_empty() && p.values.len() != g.nodes.len() {
                return Err(IbcError::Shape(format!(
                    "potential of sector {s} has {} values for {} nodes",
                    p.values.len(),
                    g.nodes.len()
                )));
            }
            if p.values.iter().any(|v| !v.is_finite()) || !p.offset.is_finite() {
                return Err(IbcError::Shape(format!("potential of sector {s} is not finite")));
            }
        }
        for (k, l) in self.links.iter().enumerate() {
            if l.source >= self.grids.len() || l.target >= self.grids.len() {
                return Err(IbcError::Geometry(format!("link {k} references a missing sector")));
            }
            if l.source == l.target {
                return Err(IbcError::Geometry(format!("link {k} maps a sector into itself")));
            }
            if self.links[..k]
                .iter()
                .any(|o| o.source == l.source && o.face == l.face)
            {
                return Err(IbcError::Geometry(format!(
                    "face {:?} of sector {} carries two links",
                    l.face, l.source
                )));
            }
        }
        Ok(())
    }
}

/// `sum_k matrix_k * psi[base_k .. base_k + ncols_k]`.
pub type AffineTerms = Vec<(usize, CMatrix)>;

/// Reconstruction data for one boundary node of a link.
#[derive(Debug, Clone)]
pub struct NodeRecon {
    pub scheme: BoundaryScheme,
    pub boundary_node: usize,
    pub target_base: usize,
    pub value: AffineTerms,
    pub normal_derivative: AffineTerms,
    pub lambda: f64,
    pub nu: f64,
}

#[derive(Debug, Clone)]
pub struct LinkRecon {
    pub nodes: Vec<NodeRecon>,
}

#[derive(Debug, Clone)]
pub struct DiscreteHamiltonian {
    pub model: ModelSpec,
    /// `dof_of[sector][node]`: first dof of the node, `None` if eliminated
    /// or absent.
    pub dof_of: Vec<Vec<Option<usize>>>,
    /// Dof range of each sector.
    pub sector_ranges: Vec<std::ops::Range<usize>>,
    /// `(sector, node, component)` of every dof.
    pub dof_owner: Vec<(usize, usize, usize)>,
    pub h: CsrMatrix,
    pub weights: Vec<f64>,
    pub recon: Vec<LinkRecon>,
    /// `max|WH - (WH)^†| / max|WH|`.
    pub hermiticity_defect: f64,
    pub hermitian: bool,
}

impl DiscreteHamiltonian {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn hbar(&self) -> f64 {
        self.model.hbar
    }

    pub fn weighted(&self) -> CsrMatrix {
        let ones = vec![1.0; self.dim()];
        self.h.scale(&self.weights, &ones)
    }

    pub fn apply(&self, psi: &[Complex64]) -> Vec<Complex64> {
        self.h.mul_vec(psi)
    }

    /// `<a, b>_W`.
    pub fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter()
            .zip(b)
            .zip(&self.weights)
            .map(|((x, y), w)| x.conj() * y * *w)
            .sum()
    }

    pub fn norm_sqr(&self, psi: &[Complex64]) -> f64 {
        psi.iter().zip(&self.weights).map(|(x, w)| x.norm_sqr() * w).sum()
    }

    /// Coordinate-format text dump, one `row col re im` line per entry.
    pub fn dump_coordinates(&self, weighted: bool) -> String {
        let m = if weighted { self.weighted() } else { self.h.clone() };
        let mut out = format!("# {} {} {}\n", m.dim(), m.dim(), m.nnz());
        for (i, j, v) in m.triplets() {
            out.push_str(&format!("{i} {j} {:.16e} {:.16e}\n", v.re, v.im));
        }
        out
    }
}

fn eval_terms(terms: &AffineTerms, psi: &[Complex64], rows: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); rows];
    for (base, m) in terms {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[i] += m[(i, j)] * psi[base + j];
            }
        }
    }
    out
}

/// Boundary value and normal derivative at every node of `link`.
pub fn reconstruct_boundary(
    dh: &DiscreteHamiltonian,
    state: &MultiSectorState,
    link: usize,
) -> Result<Vec<(Vec<Complex64>, Vec<Complex64>)>> {
    if state.amplitudes.len() != dh.dim() {
        return Err(IbcError::Shape(format!(
            "state has {} amplitudes, operator has {} dofs",
            state.amplitudes.len(),
            dh.dim()
        )));
    }
    let recon = dh
        .recon
        .get(link)
        .ok_or_else(|| IbcError::Shape(format!("no link {link}")))?;
    let r = dh.model.grids[dh.model.links[link].source].sector.fiber_dim;
    Ok(recon
        .nodes
        .iter()
        .map(|n| {
            (
                eval_terms(&n.value, &state.amplitudes, r),
                eval_terms(&n.normal_derivative, &state.amplitudes, r),
            )
        })
        .collect())
}

struct Triplets {
    t: Vec<(usize, usize, Complex64)>,
}

impl Triplets {
    fn block(&mut self, row: usize, col: usize, m: &CMatrix, factor: Complex64) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)] * factor;
                if v != Complex64::new(0.0, 0.0) {
                    self.t.push((row + i, col + j, v));
                }
            }
        }
    }

    fn diag(&mut self, row: usize, r: usize, v: Complex64) {
        for i in 0..r {
            self.t.push((row + i, row + i, v));
        }
    }

    fn terms(&mut self, row: usize, terms: &AffineTerms, left: &CMatrix, factor: Complex64) {
        for (base, m) in terms {
            self.block(row, *base, &(left * m), factor);
        }
    }
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn assemble(model: ModelSpec) -> Result<DiscreteHamiltonian> {
    model.validate()?;
    let hbar = model.hbar;

    // Which boundary nodes are eliminated, and with which link node.
    let mut eliminated: Vec<Vec<Option<(usize, usize)>>> =
        model.grids.iter().map(|g| vec![None; g.nodes.len()]).collect();
    let mut schemes: Vec<Vec<BoundaryScheme>> = Vec::with_capacity(model.links.len());
    for (li, link) in model.links.iter().enumerate() {
        let mut s = Vec::with_capacity(link.nodes.len());
        for (k, n) in link.nodes.iter().enumerate() {
            let cs = link.coefficients.at(k);
            let scheme = cs.scheme().map_err(|e| IbcError::Elimination {
                link: li,
                node: n.boundary,
                reason: e.to_string(),
            })?;
            if scheme == BoundaryScheme::Dirichlet {
                eliminated[link.source][n.boundary] = Some((li, k));
            }
            s.push(scheme);
        }
        schemes.push(s);
    }

    // Physical faces without a link are homogeneous Dirichlet walls.
    let mut linked: Vec<Vec<bool>> = model.grids.iter().map(|g| vec![false; g.nodes.len()]).collect();
    for link in &model.links {
        for n in &link.nodes {
            linked[link.source][n.boundary] = true;
        }
    }

    // Dof numbering, sector by sector.
    let mut dof_of = Vec::with_capacity(model.grids.len());
    let mut sector_ranges = Vec::with_capacity(model.grids.len());
    let mut dof_owner = Vec::new();
    let mut weights = Vec::new();
    for (s, g) in model.grids.iter().enumerate() {
        let start = weights.len();
        let r = g.sector.fiber_dim;
        let mut map = vec![None; g.nodes.len()];
        for (node, slot) in map.iter_mut().enumerate() {
            if eliminated[s][node].is_some() || (g.nodes[node].face.is_some() && !linked[s][node]) {
                continue;
            }
            *slot = Some(weights.len());
            for c in 0..r {
                dof_owner.push((s, node, c));
                weights.push(g.mu_weights[node]);
            }
        }
        sector_ranges.push(start..weights.len());
        dof_of.push(map);
    }
    let n = weights.len();

    // Boundary reconstruction for every link node.
    let mut recon = Vec::with_capacity(model.links.len());
    for (li, link) in model.links.iter().enumerate() {
        let src = &model.grids[link.source];
        let r_b = src.sector.fiber_dim;
        let s = src.sector.normal_scale(link.face.axis);
        let h = link.normal_spacing;
        let mut nodes = Vec::with_capacity(link.nodes.len());
        for (k, ln) in link.nodes.iter().enumerate() {
            let cs = link.coefficients.at(k);
            let iota = cs.dims.inclusion();
            let target_base = dof_of[link.target][ln.target].ok_or_else(|| {
                IbcError::Geometry(format!("link {li} maps onto an eliminated node"))
            })?;
            let coupling = real(cs.coupling);
            let (value, normal_derivative) = match schemes[li][k] {
                BoundaryScheme::Dirichlet => {
                    let alpha_inv = cs.alpha.clone().try_inverse().ok_or_else(|| {
                        IbcError::Elimination {
                            link: li,
                            node: ln.boundary,
                            reason: "alpha is singular".into(),
                        }
                    })?;
                    let transfer = alpha_inv * &iota * coupling;
                    let value: AffineTerms = vec![(target_base, transfer.clone())];
                    let mut deriv: AffineTerms = vec![(target_base, transfer * real(-s / h))];
                    if let Some(inner) = ln.inner.and_then(|i| dof_of[link.source][i]) {
                        deriv.push((inner, CMatrix::identity(r_b, r_b) * real(s / h)));
                    }
                    (value, deriv)
                }
                BoundaryScheme::Robin => {
                    let beta_inv = cs.beta.clone().try_inverse().ok_or_else(|| {
                        IbcError::Elimination {
                            link: li,
                            node: ln.boundary,
                            reason: "beta is singular".into(),
                        }
                    })?;
                    let own = dof_of[link.source][ln.boundary].expect("Robin node is a dof");
                    let value: AffineTerms = vec![(own, CMatrix::identity(r_b, r_b))];
                    let deriv: AffineTerms = vec![
                        (target_base, &beta_inv * &iota * coupling),
                        (own, -(&beta_inv * &cs.alpha)),
                    ];
                    (value, deriv)
                }
            };
            nodes.push(NodeRecon {
                scheme: schemes[li][k],
                boundary_node: ln.boundary,
                target_base,
                value,
                normal_derivative,
                lambda: ln.lambda,
                nu: ln.nu,
            });
        }
        recon.push(LinkRecon { nodes });
    }

    // Which link node sits on a given (sector, node), for Robin ghost rows.
    let mut robin_at: Vec<Vec<Option<(usize, usize)>>> =
        model.grids.iter().map(|g| vec![None; g.nodes.len()]).collect();
    for (li, link) in model.links.iter().enumerate() {
        for (k, ln) in link.nodes.iter().enumerate() {
            if schemes[li][k] == BoundaryScheme::Robin {
                robin_at[link.source][ln.boundary] = Some((li, k));
            }
        }
    }

    let mut trip = Triplets { t: Vec::new() };

    // Kinetic and potential terms.
    for (s, g) in model.grids.iter().enumerate() {
        let r = g.sector.fiber_dim;
        let id = CMatrix::identity(r, r);
        for node in 0..g.nodes.len() {
            let Some(row) = dof_of[s][node] else { continue };
            let mut diag = model.potentials[s].at(node);
            let ghost = robin_at[s][node];
            for axis in 0..g.dim() {
                let t = hbar * hbar / (2.0 * g.sector.mass_factors[axis] * g.spacing[axis].powi(2));
                diag += 2.0 * t;
                let normal_here = ghost.filter(|&(li, _)| model.links[li].face.axis == axis);
                if let Some((li, k)) = normal_here {
                    // Ghost node: psi_g = psi_1 - (2h/s) d_n psi.
                    let link = &model.links[li];
                    let sc = g.sector.normal_scale(axis);
                    let h = g.spacing[axis];
                    if let Some(inner) = link.nodes[k].inner.and_then(|i| dof_of[s][i]) {
                        trip.block(row, inner, &id, real(-2.0 * t));
                    }
                    trip.terms(row, &recon[li].nodes[k].normal_derivative, &id, real(t * 2.0 * h / sc));
                    continue;
                }
                for step in [-1isize, 1] {
                    let Some(nb) = g.neighbor(node, axis, step) else { continue };
                    if let Some(col) = dof_of[s][nb] {
                        trip.block(row, col, &id, real(-t));
                    } else if let Some((li, k)) = eliminated[s][nb] {
                        trip.terms(row, &recon[li].nodes[k].value, &id, real(-t));
                    }
                }
            }
            trip.diag(row, r, real(diag));
        }
    }

    // Source terms on target rows.
    for (li, link) in model.links.iter().enumerate() {
        for (k, nr) in recon[li].nodes.iter().enumerate() {
            let cs = link.coefficients.at(k);
            trip.terms(nr.target_base, &nr.value, &cs.gamma, real(nr.nu));
            trip.terms(nr.target_base, &nr.normal_derivative, &cs.delta, real(nr.nu));
        }
    }

    let h = CsrMatrix::from_triplets(n, trip.t);
    let ones = vec![1.0; n];
    let wh = h.scale(&weights, &ones);
    let max = wh.max_abs();
    let hermiticity_defect = if max > 0.0 {
        wh.hermitian_defect() / max
    } else {
        0.0
    };
    Ok(DiscreteHamiltonian {
        model,
        dof_of,
        sector_ranges,
        dof_owner,
        h,
        weights,
        recon,
        hermiticity_defect,
        hermitian: hermiticity_defect <= HERMITICITY_TOL,
    })
}

/// Coefficients of the sphere cut-off model in the reduced amplitude
/// `u = r psi` (explicit masses, `K = 2 m_y / hbar^2`). They give
/// `u(rho) = -(g m_y / 2 pi hbar^2) psi0` and the source term `g u'(rho)`.
pub fn reduced_radial_coefficients(g: f64, m_y: f64, hbar: f64) -> Result<CoefficientSet> {
    let four_pi = 4.0 * std::f64::consts::PI;
    let zero = Complex64::new(0.0, 0.0);
    CoefficientSet::scalar(
        real(-four_pi / g),
        zero,
        zero,
        real(g / four_pi),
        2.0 * m_y / (hbar * hbar),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialCreationParams {
    pub g: f64,
    pub m_y: f64,
    pub rho: f64,
    pub e0: f64,
    pub outer: f64,
    pub h: f64,
    pub hbar: f64,
}

/// Vacuum plus one-boson sector of the sphere cut-off creation model,
/// restricted to spherically symmetric states.
pub fn radial_creation_model(p: RadialCreationParams) -> Result<ModelSpec> {
    if !(p.rho > 0.0 && p.rho < p.outer) {
        return Err(IbcError::Geometry(format!(
            "need 0 < rho < R, got rho = {}, R = {}",
            p.rho, p.outer
        )));
    }
    if !(p.h > 0.0 && p.m_y > 0.0 && p.hbar > 0.0) {
        return Err(IbcError::Geometry("h, m_y and hbar must be positive".into()));
    }
    let span = p.outer - p.rho;
    let cells = (span / p.h).round();
    if cells < 2.0 || (cells * p.h - span).abs() > 1e-9 * span {
        return Err(IbcError::Geometry(format!(
            "h = {} does not divide R - rho = {span}",
            p.h
        )));
    }
    let vacuum = SectorGrid::new(Sector {
        id: 0,
        domain: Domain::Point,
        mass_factors: vec![],
        fiber_dim: 1,
        convention: MassConvention::Explicit,
    })?;
    let shell = SectorGrid::new(Sector {
        id: 1,
        domain: Domain::Annulus {
            inner: p.rho,
            outer: p.outer,
            cells: cells as usize,
        },
        mass_factors: vec![p.m_y],
        fiber_dim: 1,
        convention: MassConvention::Explicit,
    })?;
    let mut model = ModelSpec::new(vec![vacuum, shell], p.hbar);
    model.potentials[1] = SectorPotential::constant(p.e0);
    if p.g != 0.0 {
        let cs = reduced_radial_coefficients(p.g, p.m_y, p.hbar)?;
        model.link(
            1,
            Face { axis: 0, side: 0 },
            0,
            MapSpec::Collapse,
            LinkCoefficients::Uniform(cs),
        )?;
    }
    Ok(model)
}

pub fn assemble_radial_creation(p: RadialCreationParams) -> Result<DiscreteHamiltonian> {
    assemble(radial_creation_model(p)?)
}

/// Dense copy, for small models in tests and diagnostics.
pub fn to_dense(m: &CsrMatrix) -> DMatrix<Complex64> {
    let mut d = DMatrix::zeros(m.dim(), m.dim());
    for (i, j, v) in m.triplets() {
        d[(i, j)] = v;
    }
    d
}
