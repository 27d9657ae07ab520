//! Boundary-coupling coefficient quadruples `(alpha, beta, gamma, delta)`.
//!
//! At a boundary point `q` with fiber `E_q` of dimension `r_boundary`, the
//! interior-boundary condition reads
//!
//! ```text
//! (alpha + beta d_n) psi(q) = K iota psi(f(q))
//! ```
//!
//! with `alpha, beta : E_q -> E_f(q) (+) F_q`, and the Hamiltonian of the
//! target sector picks up `(gamma + delta d_n) psi(q)` with
//! `gamma, delta : E_q -> E_f(q)`. Probability is conserved exactly when
//!
//! * `alpha^† iota gamma` is self-adjoint,
//! * `beta^† iota delta` is self-adjoint,
//! * `alpha^† iota delta - gamma^† P beta = -I`,
//!
//! and `[alpha | beta]` has full rank `r_boundary`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{IbcError, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Relative tolerance used for Hermiticity and rank checks when the caller
/// does not supply one.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiberDims {
    pub r_boundary: usize,
    pub r_target: usize,
    pub r_aux: usize,
}

impl FiberDims {
    pub fn new(r_boundary: usize, r_target: usize) -> Result<Self> {
        if r_boundary == 0 || r_target == 0 {
            return Err(IbcError::Shape("fiber dimensions must be positive".into()));
        }
        if r_target > r_boundary {
            return Err(IbcError::Shape(format!(
                "target fiber dimension {r_target} exceeds boundary fiber dimension {r_boundary}"
            )));
        }
        Ok(Self {
            r_boundary,
            r_target,
            r_aux: r_boundary - r_target,
        })
    }

    pub fn scalar() -> Self {
        Self {
            r_boundary: 1,
            r_target: 1,
            r_aux: 0,
        }
    }

    /// Inclusion `E_f(q) -> E_f(q) (+) F_q`.
    pub fn inclusion(&self) -> CMatrix {
        let mut iota = CMatrix::zeros(self.r_target + self.r_aux, self.r_target);
        for i in 0..self.r_target {
            iota[(i, i)] = Complex64::new(1.0, 0.0);
        }
        iota
    }

    /// Orthogonal projection `E_f(q) (+) F_q -> E_f(q)`.
    pub fn projection(&self) -> CMatrix {
        self.inclusion().adjoint()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub dims: FiberDims,
    pub alpha: CMatrix,
    pub beta: CMatrix,
    pub gamma: CMatrix,
    pub delta: CMatrix,
    /// Prefactor on the right-hand side of the boundary condition.
    pub coupling: f64,
}

impl CoefficientSet {
    pub fn new(
        dims: FiberDims,
        alpha: CMatrix,
        beta: CMatrix,
        gamma: CMatrix,
        delta: CMatrix,
        coupling: f64,
    ) -> Result<Self> {
        let cs = Self {
            dims,
            alpha,
            beta,
            gamma,
            delta,
            coupling,
        };
        cs.validate()?;
        Ok(cs)
    }

    /// Scalar (rank-1 fiber) coefficient set.
    pub fn scalar(
        alpha: Complex64,
        beta: Complex64,
        gamma: Complex64,
        delta: Complex64,
        coupling: f64,
    ) -> Result<Self> {
        let m = |z| CMatrix::from_element(1, 1, z);
        Self::new(FiberDims::scalar(), m(alpha), m(beta), m(gamma), m(delta), coupling)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.r_boundary == 0 || d.r_target == 0 || d.r_aux + d.r_target != d.r_boundary {
            return Err(IbcError::Shape(format!("inconsistent fiber dims {d:?}")));
        }
        let rows_ab = d.r_target + d.r_aux;
        let check = |name: &str, m: &CMatrix, rows: usize| -> Result<()> {
            if m.nrows() != rows || m.ncols() != d.r_boundary {
                return Err(IbcError::Shape(format!(
                    "{name} is {}x{}, expected {rows}x{}",
                    m.nrows(),
                    m.ncols(),
                    d.r_boundary
                )));
            }
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(IbcError::Shape(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        check("alpha", &self.alpha, rows_ab)?;
        check("beta", &self.beta, rows_ab)?;
        check("gamma", &self.gamma, d.r_target)?;
        check("delta", &self.delta, d.r_target)?;
        if !(self.coupling.is_finite() && self.coupling > 0.0) {
            return Err(IbcError::Shape(format!(
                "coupling constant must be positive, got {}",
                self.coupling
            )));
        }
        Ok(())
    }

    /// Largest Frobenius norm among the four matrices.
    pub fn scale(&self) -> f64 {
        [&self.alpha, &self.beta, &self.gamma, &self.delta]
            .iter()
            .map(|m| m.norm())
            .fold(0.0, f64::max)
    }

    /// Absolute tolerance for [`check_conditions`] derived from
    /// [`DEFAULT_REL_TOL`] and the size of the coefficients.
    pub fn default_tolerance(&self) -> f64 {
        DEFAULT_REL_TOL * self.scale().max(1.0)
    }

    pub fn is_dirichlet_type(&self) -> bool {
        self.beta.iter().all(|z| *z == Complex64::new(0.0, 0.0))
    }

    pub fn scheme(&self) -> Result<BoundaryScheme> {
        if self.is_dirichlet_type() {
            if !is_invertible(&self.alpha) {
                return Err(IbcError::Singular {
                    what: "alpha of a Dirichlet-type set".into(),
                    ratio: singular_ratio(&self.alpha),
                });
            }
            Ok(BoundaryScheme::Dirichlet)
        } else if is_invertible(&self.beta) {
            Ok(BoundaryScheme::Robin)
        } else {
            Err(IbcError::Unsupported(
                "beta is nonzero but singular; only beta = 0 or invertible beta is supported"
                    .into(),
            ))
        }
    }
}

/// Discretization scheme selected by the rank of `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryScheme {
    /// `beta = 0`: boundary values are eliminated through the condition.
    Dirichlet,
    /// `beta` invertible: boundary nodes stay as degrees of freedom and a
    /// ghost node absorbs the centered normal derivative.
    Robin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    pub defect_a: f64,
    pub defect_b: f64,
    pub defect_c: f64,
    pub rank_full: bool,
    pub passes: bool,
}

impl ConditionReport {
    pub fn max_defect(&self) -> f64 {
        self.defect_a.max(self.defect_b).max(self.defect_c)
    }
}

fn anti_hermitian_norm(m: &CMatrix) -> f64 {
    ((m - m.adjoint()) * Complex64::new(0.5, 0.0)).norm()
}

fn singular_ratio(m: &CMatrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

fn is_invertible(m: &CMatrix) -> bool {
    m.is_square() && singular_ratio(m) > DEFAULT_REL_TOL
}

pub fn check_conditions(cs: &CoefficientSet, tol: f64) -> Result<ConditionReport> {
    cs.validate()?;
    let iota = cs.dims.inclusion();
    let proj = cs.dims.projection();
    let r = cs.dims.r_boundary;

    let a = cs.alpha.adjoint() * &iota * &cs.gamma;
    let b = cs.beta.adjoint() * &iota * &cs.delta;
    let c = cs.alpha.adjoint() * &iota * &cs.delta - cs.gamma.adjoint() * &proj * &cs.beta
        + CMatrix::identity(r, r);

    let defect_a = anti_hermitian_norm(&a);
    let defect_b = anti_hermitian_norm(&b);
    let defect_c = c.norm();

    let mut joined = CMatrix::zeros(cs.alpha.nrows(), 2 * r);
    joined.view_mut((0, 0), (cs.alpha.nrows(), r)).copy_from(&cs.alpha);
    joined.view_mut((0, r), (cs.beta.nrows(), r)).copy_from(&cs.beta);
    let sv = joined.singular_values();
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    // `joined` has r rows, so there are exactly r singular values.
    let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let rank_full = largest > 0.0 && smallest > tol * largest;

    let passes = defect_a.max(defect_b).max(defect_c) <= tol && rank_full;
    Ok(ConditionReport {
        defect_a,
        defect_b,
        defect_c,
        rank_full,
        passes,
    })
}

fn require_hermitian(m: &CMatrix, what: &str) -> Result<()> {
    let defect = anti_hermitian_norm(m);
    if defect > DEFAULT_REL_TOL * m.norm().max(1.0) {
        return Err(IbcError::Unsatisfiable(format!(
            "{what} is not self-adjoint (anti-Hermitian part {defect:.3e})"
        )));
    }
    Ok(())
}

fn require_square_invertible(m: &CMatrix, what: &str) -> Result<CMatrix> {
    if !m.is_square() {
        return Err(IbcError::Shape(format!("{what} must be square")));
    }
    if !is_invertible(m) {
        return Err(IbcError::Singular {
            what: what.into(),
            ratio: singular_ratio(m),
        });
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| IbcError::Singular {
            what: what.into(),
            ratio: 0.0,
        })
}

/// Dirichlet-type set (`beta = 0`). The third condition forces
/// `delta = -(alpha^†)^{-1}`.
pub fn make_dirichlet(alpha: CMatrix, gamma: CMatrix, coupling: f64) -> Result<CoefficientSet> {
    let r = alpha.nrows();
    let alpha_inv = require_square_invertible(&alpha, "alpha")?;
    if gamma.shape() != (r, r) {
        return Err(IbcError::Shape(format!(
            "gamma is {}x{}, expected {r}x{r}",
            gamma.nrows(),
            gamma.ncols()
        )));
    }
    require_hermitian(&(alpha.adjoint() * &gamma), "alpha^† gamma")?;
    let delta = -alpha_inv.adjoint();
    CoefficientSet::new(
        FiberDims::new(r, r)?,
        alpha,
        CMatrix::zeros(r, r),
        gamma,
        delta,
        coupling,
    )
}

/// Robin-type set with invertible `beta`: solves the third condition for
/// `gamma = (beta^†)^{-1} (I + delta^† alpha)`.
pub fn complete_coefficients(
    alpha: CMatrix,
    beta: CMatrix,
    delta: CMatrix,
    coupling: f64,
) -> Result<CoefficientSet> {
    let r = beta.nrows();
    let beta_inv = require_square_invertible(&beta, "beta")?;
    if alpha.shape() != (r, r) || delta.shape() != (r, r) {
        return Err(IbcError::Shape(format!(
            "alpha and delta must be {r}x{r} to match beta"
        )));
    }
    require_hermitian(&(beta.adjoint() * &delta), "beta^† delta")?;
    let gamma = beta_inv.adjoint() * (CMatrix::identity(r, r) + delta.adjoint() * &alpha);
    require_hermitian(&(alpha.adjoint() * &gamma), "alpha^† gamma")?;
    CoefficientSet::new(FiberDims::new(r, r)?, alpha, beta, gamma, delta, coupling)
}

/// Negative-control generator: scales `delta` by `1 + epsilon`.
pub fn perturb_condition(cs: &CoefficientSet, epsilon: f64) -> CoefficientSet {
    let mut out = cs.clone();
    out.delta *= Complex64::new(1.0 + epsilon, 0.0);
    out
}

/// The sphere cut-off creation model's quadruple for the `n -> n+1`
/// boundary, with coupling constant `2/hbar^2`.
pub fn creation_coefficients(
    n: usize,
    g: f64,
    m_y: f64,
    rho: f64,
    hbar: f64,
) -> Result<CoefficientSet> {
    if g == 0.0 {
        return Err(IbcError::Unsupported(
            "g = 0 decouples the sectors; the creation quadruple is undefined".into(),
        ));
    }
    let root = ((n + 1) as f64).sqrt();
    let four_pi = 4.0 * std::f64::consts::PI;
    let alpha = -four_pi * rho * root / (g * m_y);
    let delta = g * m_y / (four_pi * rho * root);
    let zero = Complex64::new(0.0, 0.0);
    CoefficientSet::scalar(
        Complex64::new(alpha, 0.0),
        zero,
        zero,
        Complex64::new(delta, 0.0),
        2.0 / (hbar * hbar),
    )
}

/// Serializable form of a coefficient set. Complex entries are written as
/// `[re, im]`; a 1x1 matrix may be written as a bare `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub alpha: MatrixSpec,
    pub beta: MatrixSpec,
    pub gamma: MatrixSpec,
    pub delta: MatrixSpec,
    pub coupling: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(Complex64),
    Rows(Vec<Vec<Complex64>>),
}

impl MatrixSpec {
    pub fn from_matrix(m: &CMatrix) -> Self {
        if m.shape() == (1, 1) {
            MatrixSpec::Scalar(m[(0, 0)])
        } else {
            MatrixSpec::Rows(
                (0..m.nrows())
                    .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                    .collect(),
            )
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        match self {
            MatrixSpec::Scalar(z) => Ok(CMatrix::from_element(1, 1, *z)),
            MatrixSpec::Rows(rows) => {
                let nrows = rows.len();
                let ncols = rows.first().map_or(0, Vec::len);
                if nrows == 0 || rows.iter().any(|r| r.len() != ncols) {
                    return Err(IbcError::Shape("ragged or empty matrix".into()));
                }
                Ok(CMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
            }
        }
    }
}

impl From<&CoefficientSet> for CoefficientTable {
    fn from(cs: &CoefficientSet) -> Self {
        Self {
            alpha: MatrixSpec::from_matrix(&cs.alpha),
            beta: MatrixSpec::from_matrix(&cs.beta),
            gamma: MatrixSpec::from_matrix(&cs.gamma),
            delta: MatrixSpec::from_matrix(&cs.delta),
            coupling: cs.coupling,
            r_target: (cs.dims.r_aux > 0).then_some(cs.dims.r_target),
        }
    }
}

impl TryFrom<&CoefficientTable> for CoefficientSet {
    type Error = IbcError;

    fn try_from(t: &CoefficientTable) -> Result<Self> {
        let alpha = t.alpha.to_matrix()?;
        let r_boundary = alpha.ncols();
        let r_target = t.r_target.unwrap_or(r_boundary);
        CoefficientSet::new(
            FiberDims::new(r_boundary, r_target)?,
            alpha,
            t.beta.to_matrix()?,
            t.gamma.to_matrix()?,
            t.delta.to_matrix()?,
            t.coupling,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar(a: Complex64, b: Complex64, g: Complex64, d: Complex64) -> CoefficientSet {
        CoefficientSet::scalar(a, b, g, d, 2.0).unwrap()
    }

    #[test]
    fn creation_quadruple_passes_with_zero_defects() {
        for n in 0..6 {
            for &(rho, g, m) in &[(1.0, 1.0, 1.0), (0.1, 2.5, 0.7), (3.0, 0.01, 40.0)] {
                let cs = creation_coefficients(n, g, m, rho, 1.0).unwrap();
                let rep = check_conditions(&cs, cs.default_tolerance()).unwrap();
                assert!(rep.passes, "{rep:?}");
                assert_eq!(rep.defect_a, 0.0);
                assert_eq!(rep.defect_b, 0.0);
                assert!(rep.defect_c < 1e-15);
                let prod = cs.alpha[(0, 0)] * cs.delta[(0, 0)];
                assert!((prod + 1.0).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn scalar_examples() {
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        let ok = check_conditions(&scalar(one, zero, zero, -one), 1e-12).unwrap();
        assert!(ok.passes);
        let bad = check_conditions(&scalar(one, zero, zero, one), 1e-12).unwrap();
        assert!(!bad.passes);
        assert_eq!(bad.defect_c, 2.0);
    }

    #[test]
    fn rank_deficiency_fails() {
        let zero = c(0.0, 0.0);
        let rep = check_conditions(&scalar(zero, zero, zero, zero), 1e-12).unwrap();
        assert!(!rep.rank_full);
        assert!(!rep.passes);
    }

    #[test]
    fn shape_mismatch_is_structural_error() {
        let cs = CoefficientSet {
            dims: FiberDims::scalar(),
            alpha: CMatrix::zeros(2, 1),
            beta: CMatrix::zeros(1, 1),
            gamma: CMatrix::zeros(1, 1),
            delta: CMatrix::zeros(1, 1),
            coupling: 1.0,
        };
        assert!(matches!(check_conditions(&cs, 1e-12), Err(IbcError::Shape(_))));
    }

    #[test]
    fn make_dirichlet_scalar() {
        let alpha = CMatrix::from_element(1, 1, c(-4.0 * PI, 0.0));
        let cs = make_dirichlet(alpha, CMatrix::zeros(1, 1), 2.0).unwrap();
        assert!((cs.delta[(0, 0)] - c(1.0 / (4.0 * PI), 0.0)).norm() < 1e-16);

        let cs = make_dirichlet(CMatrix::from_element(1, 1, c(1.0, 0.0)), CMatrix::zeros(1, 1), 2.0)
            .unwrap();
        assert_eq!(cs.delta[(0, 0)], c(-1.0, 0.0));
        assert!(check_conditions(&cs, 1e-14).unwrap().passes);
    }

    #[test]
    fn make_dirichlet_rejects_bad_input() {
        let singular = CMatrix::zeros(2, 2);
        assert!(matches!(
            make_dirichlet(singular, CMatrix::zeros(2, 2), 1.0),
            Err(IbcError::Singular { .. })
        ));
        let alpha = CMatrix::from_element(1, 1, c(1.0, 0.0));
        let gamma = CMatrix::from_element(1, 1, c(0.0, 1.0));
        assert!(matches!(
            make_dirichlet(alpha, gamma, 1.0),
            Err(IbcError::Unsatisfiable(_))
        ));
    }

    #[test]
    fn complete_coefficients_scalar_examples() {
        let m = |z| CMatrix::from_element(1, 1, z);
        for s in [-2.0, 0.0, 3.5] {
            let cs = complete_coefficients(m(c(0.0, 0.0)), m(c(1.0, 0.0)), m(c(s, 0.0)), 1.0)
                .unwrap();
            assert!((cs.gamma[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        }
        let cs =
            complete_coefficients(m(c(1.0, 0.0)), m(c(1.0, 0.0)), m(c(-1.0, 0.0)), 1.0).unwrap();
        assert!(cs.gamma[(0, 0)].norm() < 1e-15);

        for t in [-1.5, 0.0, 0.25, 4.0] {
            let cs = complete_coefficients(m(c(0.0, 1.0)), m(c(0.0, 1.0)), m(c(0.0, t)), 1.0)
                .unwrap();
            // gamma = (beta^†)^{-1}(1 + delta^* alpha) = i (1 + t)
            assert!((cs.gamma[(0, 0)] - c(0.0, 1.0 + t)).norm() < 1e-14);
            let rep = check_conditions(&cs, 1e-13).unwrap();
            assert!(rep.passes, "{rep:?}");
        }
    }

    #[test]
    fn complete_coefficients_rejects_incompatible_alpha() {
        let m = |z| CMatrix::from_element(1, 1, z);
        // alpha = 1, beta = i forces delta = i t and gamma = t + i, so alpha^* gamma is complex.
        let err = complete_coefficients(m(c(1.0, 0.0)), m(c(0.0, 1.0)), m(c(0.0, 2.0)), 1.0);
        assert!(matches!(err, Err(IbcError::Unsatisfiable(_))));
        let err = complete_coefficients(m(c(1.0, 0.0)), m(c(0.0, 0.0)), m(c(1.0, 0.0)), 1.0);
        assert!(matches!(err, Err(IbcError::Singular { .. })));
    }

    #[test]
    fn perturbation_scales_defect_c() {
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        let base = scalar(one, zero, zero, -one);
        assert_eq!(perturb_condition(&base, 0.0), base);
        let rep = check_conditions(&perturb_condition(&base, 0.1), 1e-12).unwrap();
        assert!((rep.defect_c - 0.1).abs() < 1e-15);

        let creation = creation_coefficients(0, 1.3, 0.8, 0.5, 1.0).unwrap();
        let rep = check_conditions(&perturb_condition(&creation, 1e-3), 1e-12).unwrap();
        assert!((rep.defect_c - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn scheme_selection() {
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        assert_eq!(scalar(one, zero, zero, -one).scheme().unwrap(), BoundaryScheme::Dirichlet);
        assert_eq!(scalar(one, one, zero, -one).scheme().unwrap(), BoundaryScheme::Robin);
        let mut cs = make_dirichlet(CMatrix::identity(2, 2), CMatrix::zeros(2, 2), 1.0).unwrap();
        cs.beta[(0, 0)] = one;
        assert!(matches!(cs.scheme(), Err(IbcError::Unsupported(_))));
    }

    #[test]
    fn table_round_trip() {
        let cs = creation_coefficients(2, 0.5, 1.5, 0.2, 1.0).unwrap();
        let table = CoefficientTable::from(&cs);
        let text = toml::to_string(&table).unwrap();
        let back: CoefficientTable = toml::from_str(&text).unwrap();
        assert_eq!(CoefficientSet::try_from(&back).unwrap(), cs);
    }
}
