//! Run configuration: a `[manifold]` table plus optional per-command tables.

use cosymplectic::{ManifoldConfig, ManifoldKind};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_manifold")]
    pub manifold: ManifoldConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub reeb_check: ReebCheckConfig,
    #[serde(default)]
    pub flux: FluxConfig,
    #[serde(default)]
    pub fragment: FragmentConfig,
    #[serde(default)]
    pub lift: LiftConfig,
    #[serde(default)]
    pub integrals: IntegralsConfig,
    #[serde(default)]
    pub commutator: CommutatorConfig,
    #[serde(default)]
    pub volume: VolumeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

fn default_manifold() -> ManifoldConfig {
    ManifoldConfig {
        kind: ManifoldKind::ProductTorus,
        n: Some(1),
        weights: Some(vec![1.0]),
        reeb_period: Some(1.0),
        monodromy: None,
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReebCheckConfig {
    pub samples: usize,
    pub tolerance: f64,
}

impl Default for ReebCheckConfig {
    fn default() -> Self {
        Self { samples: 1000, tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluxConfig {
    /// Coordinate labels (`theta`, `x1`, `y1`, ...) of translation loops;
    /// empty means every coordinate the model allows.
    pub loops: Vec<String>,
    pub steps: usize,
    pub panels: usize,
    pub tolerance: f64,
}

impl Default for FluxConfig {
    fn default() -> Self {
        Self {
            loops: Vec::new(),
            steps: 8,
            panels: 128,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    LieTrotter,
    Strang,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FragmentConfig {
    pub center: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
    pub amplitude: f64,
    pub divisions: usize,
    pub overlap: f64,
    pub scheme: SchemeName,
    pub steps: usize,
    pub substeps: usize,
    pub samples_per_axis: usize,
    pub min_order: Option<f64>,
    pub tolerance: f64,
}

impl Default for FragmentConfig {
    fn default() -> Self {
        Self {
            center: Vec::new(),
            inner: 0.05,
            outer: 0.3,
            amplitude: 0.2,
            divisions: 2,
            overlap: 0.25,
            scheme: SchemeName::Strang,
            steps: 16,
            substeps: 8,
            samples_per_axis: 4,
            min_order: None,
            tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftConfig {
    pub reeb_speed: f64,
    pub amplitude: f64,
    pub steps: usize,
    pub samples: usize,
    pub tolerance: f64,
    pub mixed_tolerance: f64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            reeb_speed: 0.7,
            amplitude: 0.5,
            steps: 1000,
            samples: 16,
            tolerance: 1e-5,
            mixed_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegralSetName {
    Pendulum,
    Sines,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegralsConfig {
    pub set: IntegralSetName,
    pub duration: f64,
    pub steps: usize,
    pub samples: usize,
    pub start: Option<Vec<f64>>,
    pub bracket_tolerance: f64,
    pub tolerance: f64,
    /// Optional CSV path for the trajectory (a sample of the invariant torus).
    pub trajectory_csv: Option<String>,
}

impl Default for IntegralsConfig {
    fn default() -> Self {
        Self {
            set: IntegralSetName::Sines,
            duration: 10.0,
            steps: 10_000,
            samples: 200,
            start: None,
            bracket_tolerance: 1e-10,
            tolerance: 1e-8,
            trajectory_csv: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommutatorConfig {
    pub eps: Vec<f64>,
    pub step_fraction: f64,
    pub samples_per_axis: usize,
    pub min_slope: f64,
    pub commuting_eps: f64,
    pub tolerance: f64,
}

impl Default for CommutatorConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.1, 0.05, 0.025],
            step_fraction: 0.05,
            samples_per_axis: 4,
            min_slope: 2.7,
            commuting_eps: 0.01,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeConfig {
    pub samples: usize,
    pub tolerance: f64,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        Self { samples: 1000, tolerance: 1e-12 }
    }
}
