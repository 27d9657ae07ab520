//! Run configuration (TOML).

use serde::{Deserialize, Serialize};

use crate::coeff::{CoefficientTable, MatrixSpec};
use crate::error::{IbcError, Result};
use crate::geometry::{Face, MapSpec, Sector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    PointHalfline,
    LineHalfplane,
    RadialCreation,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub physics: Physics,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sectors: Vec<SectorConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkConfig>,
    pub initial: InitialState,
    pub evolution: EvolutionSettings,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass: f64,
    /// Creation coupling (radial scenario).
    #[serde(default = "one")]
    pub g: f64,
    /// Cut-off radius (radial scenario).
    #[serde(default = "one")]
    pub rho: f64,
    /// Rest energy of the created particle (radial scenario).
    #[serde(default)]
    pub e0: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            hbar: 1.0,
            mass: 1.0,
            g: 1.0,
            rho: 1.0,
            e0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub h: f64,
    /// Extent along the normal of the linked face (outer radius minus rho
    /// for the radial scenario).
    pub length: f64,
    /// Tangential extent `[-width, width]` of the line/half-plane scenario.
    #[serde(default = "default_width")]
    pub width: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            h: 0.05,
            length: 20.0,
            width: default_width(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    /// `beta = 0`; `delta` follows from `alpha`, `gamma` defaults to 0.
    Dirichlet,
    /// Invertible `beta`; `gamma` follows from the other three.
    Robin,
    /// All four given.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub kind: CoefficientKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<MatrixSpec>,
    /// Defaults to the natural coupling of the source sector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<f64>,
    /// Scale `delta` by `1 + perturb` after construction.
    #[serde(default)]
    pub perturb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorConfig {
    #[serde(flatten)]
    pub sector: Sector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    Constant { value: f64 },
    /// `sum_i (m_i omega^2 / 2) (x_i - center_i)^2`.
    Harmonic { omega: f64, center: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    /// Sector ids.
    pub source: usize,
    pub face: Face,
    pub target: usize,
    pub map: MapSpec,
    pub coefficients: CoefficientTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// Normalized Gaussian packet in one sector (by id).
    Gaussian {
        sector: usize,
        center: Vec<f64>,
        width: f64,
        #[serde(default)]
        momentum: Vec<f64>,
    },
    /// Normalized uniform amplitude in one sector.
    Uniform { sector: usize },
    /// Eigenvector nearest `shift`.
    GroundState {
        #[serde(default)]
        shift: f64,
        #[serde(default = "default_eigen_tol")]
        tol: f64,
    },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSettings {
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default)]
    pub force_nonhermitian: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_csv")]
    pub csv: String,
    /// NDJSON snapshot file, written every `snapshot_stride` steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<String>,
    #[serde(default)]
    pub snapshot_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            csv: default_csv(),
            snapshots: None,
            snapshot_stride: 0,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_width() -> f64 {
    10.0
}
fn default_solver_tol() -> f64 {
    1e-12
}
fn default_eigen_tol() -> f64 {
    1e-10
}
fn default_dir() -> String {
    "out".into()
}
fn default_csv() -> String {
    "timeseries.csv".into()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| IbcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IbcError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| IbcError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(IbcError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("physics.hbar", self.physics.hbar)?;
        positive("physics.mass", self.physics.mass)?;
        positive("grid.h", self.grid.h)?;
        positive("grid.length", self.grid.length)?;
        positive("grid.width", self.grid.width)?;
        if !(self.evolution.dt.is_finite() && self.evolution.dt >= 0.0) {
            return Err(IbcError::Config(format!(
                "evolution.dt must be >= 0, got {}",
                self.evolution.dt
            )));
        }
        positive("evolution.solver_tol", self.evolution.solver_tol)?;
        match self.scenario {
            Scenario::Custom => {
                if self.sectors.is_empty() {
                    return Err(IbcError::Config("custom scenario needs [[sectors]]".into()));
                }
            }
            _ => {
                if !self.sectors.is_empty() || !self.links.is_empty() {
                    return Err(IbcError::Config(
                        "[[sectors]] and [[links]] are only used by the custom scenario".into(),
                    ));
                }
            }
        }
        if self.scenario == Scenario::RadialCreation {
            positive("physics.rho", self.physics.rho)?;
            if self.coefficients.is_some() {
                return Err(IbcError::Config(
                    "radial_creation derives its coefficients from g, mass and rho".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
scenario = "point_halfline"

[physics]
hbar = 1.0
mass = 1.0

[grid]
h = 0.05
length = 20.0

[coefficients]
kind = "dirichlet"
alpha = [1.0, 0.0]
gamma = [0.5, 0.0]

[initial]
kind = "gaussian"
sector = 1
center = [5.0]
width = 1.0
momentum = [-2.0]

[evolution]
dt = 0.01
steps = 100

[output]
dir = "results"
snapshots = "snap.ndjson"
snapshot_stride = 10
"#;

    #[test]
    fn parse_and_round_trip() {
        let cfg = RunConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(cfg.scenario, Scenario::PointHalfline);
        assert_eq!(cfg.evolution.solver_tol, 1e-12);
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn custom_round_trip() {
        let text = r#"
scenario = "custom"

[grid]
h = 0.1
length = 1.0

[[sectors]]
id = 0
mass_factors = []
domain = { kind = "point" }

[[sectors]]
id = 1
mass_factors = [1.0]
convention = "explicit"
domain = { kind = "interval", a = 0.0, b = 4.0, cells = 40, physical = [true, false] }
potential = { kind = "harmonic", omega = 1.0, center = [2.0] }

[[links]]
source = 1
target = 0
face = { axis = 0, side = 0 }
map = { kind = "collapse" }
coefficients = { alpha = [1.0, 0.0], beta = [0.0, 0.0], gamma = [0.0, 0.0], delta = [-1.0, 0.0], coupling = 2.0 }

[initial]
kind = "zero"

[evolution]
dt = 0.01
steps = 3
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.sectors.len(), 2);
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let bad = EXAMPLE.replace("h = 0.05", "h = -0.05");
        assert!(matches!(RunConfig::from_toml(&bad), Err(IbcError::Config(_))));
        let unknown = EXAMPLE.replace("[grid]", "[grid]\nfoo = 1");
        assert!(matches!(RunConfig::from_toml(&unknown), Err(IbcError::Config(_))));
        let custom = EXAMPLE.replace("point_halfline", "custom");
        assert!(matches!(RunConfig::from_toml(&custom), Err(IbcError::Config(_))));
    }
}
