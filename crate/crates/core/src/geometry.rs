//! Sectors, their grids, boundary links and the measure `nu_q`.
//!
//! Every sector is a rectangular piece of a flat space with a diagonal
//! metric `g_ij = m_i delta_ij`. Far walls truncate unbounded directions and
//! carry a homogeneous Dirichlet condition; only faces flagged as physical
//! take part in interior-boundary couplings.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coeff::CoefficientSet;
use crate::error::{IbcError, Result};

/// How per-axis masses enter the geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassConvention {
    /// Masses live in the metric: volumes and areas carry `sqrt(m_i)` per
    /// axis, `d_n` is the unit-normal derivative and the natural coupling is
    /// `2/hbar^2`.
    #[default]
    Metric,
    /// Euclidean volumes, `d_n` is the coordinate derivative and the natural
    /// coupling is `2 m_n / hbar^2`.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
    /// `[lower, upper]`: whether the end is a physical boundary (otherwise a
    /// Dirichlet far wall).
    pub physical: [bool; 2],
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Point,
    Interval {
        a: f64,
        b: f64,
        cells: usize,
        #[serde(default)]
        physical: [bool; 2],
    },
    Box {
        axes: Vec<Axis>,
    },
    /// Spherically symmetric shell `rho <= r <= outer` in the reduced
    /// amplitude `u = r psi`. The inner sphere is always physical.
    Annulus { inner: f64, outer: f64, cells: usize },
}

impl Domain {
    fn axes(&self) -> Vec<Axis> {
        match self {
            Domain::Point => Vec::new(),
            Domain::Interval {
                a,
                b,
                cells,
                physical,
            } => vec![Axis {
                lo: *a,
                hi: *b,
                cells: *cells,
                physical: *physical,
            }],
            Domain::Box { axes } => axes.clone(),
            Domain::Annulus {
                inner,
                outer,
                cells,
            } => vec![Axis {
                lo: *inner,
                hi: *outer,
                cells: *cells,
                physical: [true, false],
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub id: usize,
    pub domain: Domain,
    #[serde(default)]
    pub mass_factors: Vec<f64>,
    #[serde(default = "one")]
    pub fiber_dim: usize,
    #[serde(default)]
    pub convention: MassConvention,
}

fn one() -> usize {
    1
}

impl Sector {
    pub fn dim(&self) -> usize {
        self.domain.axes().len()
    }

    pub fn validate(&self) -> Result<()> {
        let axes = self.domain.axes();
        if self.mass_factors.len() != axes.len() {
            return Err(IbcError::Geometry(format!(
                "sector {}: {} mass factors for dimension {}",
                self.id,
                self.mass_factors.len(),
                axes.len()
            )));
        }
        if self.mass_factors.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(IbcError::Geometry(format!(
                "sector {}: mass factors must be positive",
                self.id
            )));
        }
        if self.fiber_dim == 0 {
            return Err(IbcError::Geometry(format!(
                "sector {}: fiber dimension must be positive",
                self.id
            )));
        }
        for ax in &axes {
            if !(ax.lo.is_finite() && ax.hi.is_finite() && ax.lo < ax.hi) {
                return Err(IbcError::Geometry(format!(
                    "sector {}: empty or invalid extent [{}, {}]",
                    self.id, ax.lo, ax.hi
                )));
            }
            if ax.cells < 2 {
                return Err(IbcError::Geometry(format!(
                    "sector {}: need at least 2 cells per axis",
                    self.id
                )));
            }
        }
        if let Domain::Annulus { inner, .. } = self.domain {
            if inner <= 0.0 {
                return Err(IbcError::Geometry(format!(
                    "sector {}: annulus inner radius must be positive",
                    self.id
                )));
            }
            if self.convention != MassConvention::Explicit {
                return Err(IbcError::Geometry(format!(
                    "sector {}: the reduced radial sector uses the explicit mass convention",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Constant factor of the volume density in grid coordinates.
    fn density(&self) -> f64 {
        let base = match self.domain {
            Domain::Annulus { .. } => 4.0 * PI,
            _ => 1.0,
        };
        match self.convention {
            MassConvention::Metric => {
                base * self.mass_factors.iter().map(|m| m.sqrt()).product::<f64>()
            }
            MassConvention::Explicit => base,
        }
    }

    /// Factor `s` with `d_n = s d_x` along `axis`.
    pub fn normal_scale(&self, axis: usize) -> f64 {
        match self.convention {
            MassConvention::Metric => 1.0 / self.mass_factors[axis].sqrt(),
            MassConvention::Explicit => 1.0,
        }
    }

    /// Factor `c` with `j_n = hbar c Im(psi^† d_n psi)`.
    pub fn current_factor(&self, axis: usize) -> f64 {
        match self.convention {
            MassConvention::Metric => 1.0,
            MassConvention::Explicit => 1.0 / self.mass_factors[axis],
        }
    }

    /// Coupling constant `K` for which a boundary on `axis` conserves
    /// probability.
    pub fn natural_coupling(&self, axis: usize, hbar: f64) -> f64 {
        match self.convention {
            MassConvention::Metric => 2.0 / (hbar * hbar),
            MassConvention::Explicit => 2.0 * self.mass_factors[axis] / (hbar * hbar),
        }
    }
}

/// A physical boundary face: `side` 0 is the lower end of `axis`, 1 the upper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub side: usize,
}

impl Face {
    /// Sign of the inward normal along `axis`.
    pub fn inward_sign(&self) -> f64 {
        if self.side == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub lattice: Vec<usize>,
    pub coords: Vec<f64>,
    pub face: Option<Face>,
}

#[derive(Debug, Clone)]
pub struct SectorGrid {
    pub sector: Sector,
    pub axes: Vec<Axis>,
    pub spacing: Vec<f64>,
    pub nodes: Vec<Node>,
    /// Trapezoidal volume weights: interior nodes carry a full cell, nodes on
    /// a physical face half a cell along the normal.
    pub mu_weights: Vec<f64>,
    pub boundary_nodes: Vec<(Face, Vec<usize>)>,
    strides: Vec<usize>,
    lookup: Vec<Option<usize>>,
}

impl SectorGrid {
    pub fn new(sector: Sector) -> Result<Self> {
        sector.validate()?;
        let axes = sector.domain.axes();
        let spacing: Vec<f64> = axes.iter().map(Axis::spacing).collect();
        let dim = axes.len();
        let density = sector.density();
        let full_cell = density * spacing.iter().product::<f64>();

        let mut strides = vec![1usize; dim];
        for i in (0..dim.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (axes[i + 1].cells + 1);
        }
        let total: usize = axes.iter().map(|a| a.cells + 1).product();
        let mut lookup = vec![None; total];
        let mut nodes = Vec::new();
        let mut mu_weights = Vec::new();
        let mut faces: Vec<(Face, Vec<usize>)> = Vec::new();

        let mut lattice = vec![0usize; dim];
        for flat in 0..total {
            let mut rem = flat;
            for i in 0..dim {
                lattice[i] = rem / strides[i];
                rem %= strides[i];
            }
            let mut on_face = None;
            let mut ends = 0;
            for (i, ax) in axes.iter().enumerate() {
                let side = if lattice[i] == 0 {
                    Some(0)
                } else if lattice[i] == ax.cells {
                    Some(1)
                } else {
                    None
                };
                if let Some(side) = side {
                    ends += 1;
                    if ax.physical[side] {
                        on_face = Some(Face { axis: i, side });
                    }
                }
            }
            let keep = ends == 0 || (ends == 1 && on_face.is_some());
            if !keep {
                continue;
            }
            let id = nodes.len();
            lookup[flat] = Some(id);
            let coords = lattice
                .iter()
                .zip(&axes)
                .map(|(&j, ax)| ax.lo + j as f64 * ax.spacing())
                .collect();
            let face = if ends == 1 { on_face } else { None };
            let weight = if face.is_some() { 0.5 * full_cell } else { full_cell };
            if let Some(f) = face {
                match faces.iter_mut().find(|(g, _)| *g == f) {
                    Some((_, list)) => list.push(id),
                    None => faces.push((f, vec![id])),
                }
            }
            nodes.push(Node {
                lattice: lattice.clone(),
                coords,
                face,
            });
            mu_weights.push(weight);
        }
        faces.sort_by_key(|(f, _)| (f.axis, f.side));

        Ok(Self {
            sector,
            axes,
            spacing,
            nodes,
            mu_weights,
            boundary_nodes: faces,
            strides,
            lookup,
        })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn node_at(&self, lattice: &[usize]) -> Option<usize> {
        if lattice.len() != self.dim() {
            return None;
        }
        let mut flat = 0;
        for (i, (&j, ax)) in lattice.iter().zip(&self.axes).enumerate() {
            if j > ax.cells {
                return None;
            }
            flat += j * self.strides[i];
        }
        self.lookup[flat]
    }

    /// Neighbor of `node` one step along `axis` in direction `step` (+1/-1),
    /// or `None` if that lattice point is a far wall or outside the grid.
    pub fn neighbor(&self, node: usize, axis: usize, step: isize) -> Option<usize> {
        let mut lat = self.nodes[node].lattice.clone();
        let j = lat[axis] as isize + step;
        if j < 0 {
            return None;
        }
        lat[axis] = j as usize;
        self.node_at(&lat)
    }

    pub fn face_nodes(&self, face: Face) -> Option<&[usize]> {
        self.boundary_nodes
            .iter()
            .find(|(f, _)| *f == face)
            .map(|(_, v)| v.as_slice())
    }

    /// Surface-area weight of a boundary node on `face`.
    pub fn lambda_weight(&self, face: Face) -> f64 {
        let mut w = match self.sector.domain {
            Domain::Annulus { .. } => 4.0 * PI,
            _ => 1.0,
        };
        for (i, h) in self.spacing.iter().enumerate() {
            if i == face.axis {
                continue;
            }
            w *= h;
            if self.sector.convention == MassConvention::Metric {
                w *= self.sector.mass_factors[i].sqrt();
            }
        }
        w
    }

    /// Nearest node to `coords` within a small fraction of the spacing.
    fn find_node(&self, coords: &[f64]) -> Option<usize> {
        if self.dim() == 0 {
            return if coords.is_empty() { Some(0) } else { None };
        }
        let mut lat = Vec::with_capacity(self.dim());
        for (x, ax) in coords.iter().zip(&self.axes) {
            let h = ax.spacing();
            let t = (x - ax.lo) / h;
            let j = t.round();
            if (t - j).abs() > 1e-9 || j < 0.0 || j > ax.cells as f64 {
                return None;
            }
            lat.push(j as usize);
        }
        self.node_at(&lat)
    }
}

/// How boundary points are sent into the interior of the target sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapSpec {
    /// Drop the normal coordinate.
    IdentityProjection,
    /// `f(q') = matrix * tangential(q') + offset`, `matrix` given row-wise.
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
    /// Every boundary point goes to the single node of a point sector (for an
    /// annulus this is the sphere collapse `|y| = rho -> vacuum`).
    Collapse,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinkCoefficients {
    Uniform(CoefficientSet),
    PerNode(Vec<CoefficientSet>),
}

impl LinkCoefficients {
    pub fn at(&self, k: usize) -> &CoefficientSet {
        match self {
            LinkCoefficients::Uniform(cs) => cs,
            LinkCoefficients::PerNode(v) => &v[k],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkNode {
    /// Node on the physical face (source grid).
    pub boundary: usize,
    /// First node inward along the normal, `None` if it is a far wall.
    pub inner: Option<usize>,
    /// Image node in the target grid.
    pub target: usize,
    pub lambda: f64,
    pub nu: f64,
}

#[derive(Debug, Clone)]
pub struct BoundaryLink {
    pub source: usize,
    pub face: Face,
    pub target: usize,
    pub map: MapSpec,
    pub nodes: Vec<LinkNode>,
    pub coefficients: LinkCoefficients,
    /// Normal spacing at the face.
    pub normal_spacing: f64,
}

impl BoundaryLink {
    /// Total `nu` weight in the physical amplitude `psi`. For the reduced
    /// radial sector `u = r psi`, so each weight gains a factor `r^2`.
    pub fn physical_nu_total(&self, source: &SectorGrid) -> f64 {
        self.nodes
            .iter()
            .map(|n| match source.sector.domain {
                Domain::Annulus { .. } => {
                    let r = source.nodes[n.boundary].coords[0];
                    n.nu * r * r
                }
                _ => n.nu,
            })
            .sum()
    }
}

/// Discretize `f`, `lambda` and `nu` on a physical face.
///
/// `source_index`/`target_index` are the positions of the two grids in the
/// enclosing model.
pub fn build_link(
    source_index: usize,
    source: &SectorGrid,
    face: Face,
    target_index: usize,
    target: &SectorGrid,
    map: MapSpec,
    coefficients: LinkCoefficients,
) -> Result<BoundaryLink> {
    let face_nodes = source.face_nodes(face).ok_or_else(|| {
        IbcError::Geometry(format!(
            "sector {} has no physical face {face:?}",
            source.sector.id
        ))
    })?;
    if target.dim() + 1 > source.dim() {
        return Err(IbcError::Geometry(format!(
            "target sector {} (dim {}) is larger than the boundary of sector {} (dim {})",
            target.sector.id,
            target.dim(),
            source.sector.id,
            source.dim() - 1
        )));
    }
    if let LinkCoefficients::PerNode(v) = &coefficients {
        if v.len() != face_nodes.len() {
            return Err(IbcError::Shape(format!(
                "{} coefficient sets for {} boundary nodes",
                v.len(),
                face_nodes.len()
            )));
        }
    }
    for k in 0..face_nodes.len() {
        let cs = coefficients.at(k);
        if cs.dims.r_boundary != source.sector.fiber_dim || cs.dims.r_target != target.sector.fiber_dim
        {
            return Err(IbcError::Shape(format!(
                "coefficient fiber dims {:?} do not match sectors ({}, {})",
                cs.dims, source.sector.fiber_dim, target.sector.fiber_dim
            )));
        }
        if matches!(coefficients, LinkCoefficients::Uniform(_)) {
            break;
        }
    }

    let lambda = source.lambda_weight(face);
    let step = if face.side == 0 { 1 } else { -1 };
    let mut nodes = Vec::with_capacity(face_nodes.len());
    for &b in face_nodes {
        let tangential: Vec<f64> = source.nodes[b]
            .coords
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != face.axis)
            .map(|(_, x)| *x)
            .collect();
        let image: Vec<f64> = match &map {
            MapSpec::Collapse => {
                if target.dim() != 0 {
                    return Err(IbcError::Geometry(
                        "collapse map needs a point target sector".into(),
                    ));
                }
                Vec::new()
            }
            MapSpec::IdentityProjection => {
                if target.dim() != tangential.len() {
                    return Err(IbcError::Geometry(
                        "identity projection needs target dim = face dim".into(),
                    ));
                }
                tangential
            }
            MapSpec::Affine { matrix, offset } => {
                if matrix.len() != target.dim()
                    || offset.len() != target.dim()
                    || matrix.iter().any(|r| r.len() != tangential.len())
                {
                    return Err(IbcError::Shape("affine map shape mismatch".into()));
                }
                matrix
                    .iter()
                    .zip(offset)
                    .map(|(row, o)| o + row.iter().zip(&tangential).map(|(a, x)| a * x).sum::<f64>())
                    .collect()
            }
        };
        let t = target.find_node(&image).ok_or_else(|| {
            IbcError::Geometry(format!(
                "boundary node at {:?} maps to {image:?}, which is not a node of sector {}",
                source.nodes[b].coords, target.sector.id
            ))
        })?;
        if target.nodes[t].face.is_some() {
            return Err(IbcError::Geometry(format!(
                "boundary node at {:?} maps onto the boundary of sector {}",
                source.nodes[b].coords, target.sector.id
            )));
        }
        nodes.push(LinkNode {
            boundary: b,
            inner: source.neighbor(b, face.axis, step),
            target: t,
            lambda,
            nu: lambda / target.mu_weights[t],
        });
    }
    Ok(BoundaryLink {
        source: source_index,
        face,
        target: target_index,
        map,
        nodes,
        coefficients,
        normal_spacing: source.spacing[face.axis],
    })
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(IbcError::Shape(format!(
            "{what} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Density of `nu_q` at an isolated preimage point when `f` is a local
/// diffeomorphism: `|det(df^T G df)|^{-1/2}`, with `df` expressed in an
/// orthonormal frame of the boundary tangent space.
pub fn nu_density_diffeo(df: &DMatrix<f64>, target_metric: &DMatrix<f64>) -> Result<f64> {
    let l = df.ncols();
    check_square(df, l, "df")?;
    check_square(target_metric, l, "target metric")?;
    let pulled = df.transpose() * target_metric * df;
    let det = pulled.determinant().abs();
    let scale = df.norm().powi(2 * l as i32).max(f64::MIN_POSITIVE) * target_metric.norm().powi(l as i32);
    if !(det > 1e-14 * scale) {
        return Err(IbcError::Geometry("df is singular (full-rank assumption violated)".into()));
    }
    Ok(det.powf(-0.5))
}

/// General density of `nu_q` relative to the Riemannian volume of the level
/// set `S = f^{-1}(q)`.
///
/// `frame` holds `l` independent tangent vectors of the boundary, the first
/// `level_dim` of which span `T S`; the metric on `S` is the one induced by
/// `boundary_metric`. `df` maps boundary tangent vectors into the target
/// tangent space. The result does not depend on the choice of frame.
pub fn nu_density_general(
    frame: &[DVector<f64>],
    level_dim: usize,
    boundary_metric: &DMatrix<f64>,
    target_metric: &DMatrix<f64>,
    df: &DMatrix<f64>,
) -> Result<f64> {
    let l = frame.len();
    if level_dim > l {
        return Err(IbcError::Shape("level-set dimension exceeds frame size".into()));
    }
    check_square(boundary_metric, l, "boundary metric")?;
    if frame.iter().any(|v| v.len() != l) {
        return Err(IbcError::Shape("frame vectors must have the boundary dimension".into()));
    }
    let target_dim = l - level_dim;
    check_square(target_metric, target_dim, "target metric")?;
    if df.nrows() != target_dim || df.ncols() != l {
        return Err(IbcError::Shape(format!(
            "df is {}x{}, expected {target_dim}x{l}",
            df.nrows(),
            df.ncols()
        )));
    }

    // With B = L L^T, the columns of L^T F are the frame in an orthonormal
    // basis; QR splits off the part of each transverse vector orthogonal to
    // the level set, whose volume is the product of the trailing diagonal.
    let chol = nalgebra::Cholesky::new(boundary_metric.clone())
        .ok_or_else(|| IbcError::Geometry("boundary metric is not positive definite".into()))?;
    let f = DMatrix::from_columns(frame);
    let whitened = chol.l().transpose() * &f;
    let r = whitened.clone().qr().r();
    let col_scale: Vec<f64> = (0..l).map(|j| whitened.column(j).norm().max(f64::MIN_POSITIVE)).collect();
    if (0..l).any(|i| r[(i, i)].abs() <= 1e-12 * col_scale[i]) {
        return Err(IbcError::Geometry("degenerate frame".into()));
    }
    let transverse_volume: f64 = (level_dim..l).map(|i| r[(i, i)].abs()).product();

    let images = df * f.columns(level_dim, target_dim);
    let det_images = images.determinant().abs();
    let image_scale: f64 = (0..target_dim).map(|j| images.column(j).norm()).product();
    if det_images <= 1e-12 * image_scale.max(f64::MIN_POSITIVE) {
        return Err(IbcError::Geometry(
            "df maps the transverse frame vectors to dependent vectors".into(),
        ));
    }
    let det_target = target_metric.determinant();
    if !(det_target > 0.0) {
        return Err(IbcError::Geometry("target metric is not positive definite".into()));
    }
    Ok(transverse_volume / (det_images * det_target.sqrt()))
}
