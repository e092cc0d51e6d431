//! Analysis configuration: a strict, versioned JSON schema.
//!
//! Unknown keys are rejected so typos in tolerance names fail loudly
//! instead of silently running with defaults.

use std::path::Path;

use serde::Deserialize;

use diffpos_core::cones::Cone;
use diffpos_core::dynsys::{builtins, parse_field, SystemDef};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub system: SystemConfig,
    #[serde(default)]
    pub region: Option<RegionConfig>,
    #[serde(default)]
    pub cone: Option<ConeConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<f64>,
    #[serde(default)]
    pub samples: Samples,
    #[serde(default)]
    pub construct: ConstructConfig,
    #[serde(default)]
    pub pf: PfConfig,
    /// Initial state for trajectory-based commands.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Trajectory horizon for simulate/classify.
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Rows written to trajectories.csv.
    #[serde(default = "default_output_points")]
    pub output_points: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_schema() -> u32 {
    1
}

fn default_horizons() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}

fn default_horizon() -> f64 {
    20.0
}

fn default_output_points() -> usize {
    501
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, untagged)]
pub enum SystemConfig {
    Builtin { builtin: String },
    Expressions { expressions: Vec<String>, dim: usize },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "variant", rename_all = "lowercase")]
pub enum ConeConfig {
    Orthant {
        signs: Vec<f64>,
    },
    Polyhedral {
        normals: Vec<Vec<f64>>,
    },
    Elliptical {
        axis: Vec<f64>,
        weight: Vec<Vec<f64>>,
        #[serde(default = "default_shrink")]
        shrink: f64,
    },
    /// Build the certifying field around the detected attractor.
    Construct {},
}

fn default_shrink() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_abs")]
    pub abs: f64,
    #[serde(default = "default_rel")]
    pub rel: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_abs() -> f64 {
    1e-9
}
fn default_rel() -> f64 {
    1e-9
}
fn default_margin() -> f64 {
    -1e-8
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            abs: default_abs(),
            rel: default_rel(),
            margin: default_margin(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Samples {
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_rays")]
    pub rays: usize,
}

fn default_points() -> usize {
    100
}
fn default_rays() -> usize {
    4
}

impl Default for Samples {
    fn default() -> Self {
        Self {
            points: default_points(),
            rays: default_rays(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructConfig {
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_tube_radius")]
    pub tube_radius: f64,
    #[serde(default = "default_t_int")]
    pub t_int: f64,
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    #[serde(default = "default_nh_horizon")]
    pub nh_horizon: f64,
    #[serde(default = "default_nh_points")]
    pub nh_points: usize,
    #[serde(default = "default_nh_threshold")]
    pub nh_threshold: f64,
    #[serde(default = "default_invariance_horizon")]
    pub invariance_horizon: f64,
    /// Burn-in before the cycle search places its section.
    #[serde(default = "default_t_burn")]
    pub t_burn: f64,
}

fn default_eps() -> f64 {
    0.1
}
fn default_tube_radius() -> f64 {
    0.3
}
fn default_t_int() -> f64 {
    5.0
}
fn default_tau_max() -> f64 {
    30.0
}
fn default_nh_horizon() -> f64 {
    5.0
}
fn default_nh_points() -> usize {
    12
}
fn default_nh_threshold() -> f64 {
    0.1
}
fn default_invariance_horizon() -> f64 {
    6.0
}
fn default_t_burn() -> f64 {
    30.0
}

impl Default for ConstructConfig {
    fn default() -> Self {
        Self {
            epsilon: default_eps(),
            tube_radius: default_tube_radius(),
            t_int: default_t_int(),
            tau_max: default_tau_max(),
            nh_horizon: default_nh_horizon(),
            nh_points: default_nh_points(),
            nh_threshold: default_nh_threshold(),
            invariance_horizon: default_invariance_horizon(),
            t_burn: default_t_burn(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfConfig {
    #[serde(default = "default_s_backward")]
    pub s_backward: f64,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
}

fn default_s_backward() -> f64 {
    10.0
}
fn default_s_max() -> f64 {
    30.0
}

impl Default for PfConfig {
    fn default() -> Self {
        Self {
            s_backward: default_s_backward(),
            s_max: default_s_max(),
        }
    }
}

/// A loaded, validated configuration with its concrete system.
pub struct LoadedConfig {
    pub config: AnalysisConfig,
    pub system: SystemDef,
    pub system_label: String,
}

/// Parse and validate a configuration file,
/// building the system definition.
pub fn load_config(path: &Path) -> Result<LoadedConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let config: AnalysisConfig =
        serde_json::from_str(&text).map_err(|e| format!("config parse error: {e}"))?;
    if config.schema != 1 {
        return Err(format!("schema: unsupported version {}", config.schema));
    }
    let (system, label) = match &config.system {
        SystemConfig::Builtin { builtin } => {
            let sys = builtins::by_name(builtin).ok_or_else(|| {
                format!(
                    "system.builtin: unknown builtin `{builtin}`; expected one of {}",
                    builtins::NAMES.join(", ")
                )
            })?;
            (sys, builtin.clone())
        }
        SystemConfig::Expressions { expressions, dim } => {
            let refs: Vec<&str> = expressions.iter().map(|s| s.as_str()).collect();
            let sys = parse_field(&refs, *dim)
                .map_err(|e| format!("system.expressions: {e}"))?;
            (sys, format!("expr{dim}"))
        }
    };
    let dim = system.dim();
    if let Some(region) = &config.region {
        if region.min.len() != dim || region.max.len() != dim {
            return Err(format!(
                "region: bounds have length {}/{} but the system dimension is {dim}",
                region.min.len(),
                region.max.len()
            ));
        }
        if region.min.iter().zip(&region.max).any(|(a, b)| a > b) {
            return Err("region: empty box (min > max)".into());
        }
    }
    if let Some(cone) = &config.cone {
        validate_cone(cone, dim)?;
    }
    if let Some(x0) = &config.x0 {
        if x0.len() != dim {
            return Err(format!(
                "x0: length {} does not match system dimension {dim}",
                x0.len()
            ));
        }
    }
    if config.horizons.is_empty()
        || config.horizons.windows(2).any(|w| w[0] >= w[1])
        || config.horizons[0] <= 0.0
    {
        return Err("horizons: must be positive and strictly ascending".into());
    }
    Ok(LoadedConfig {
        config,
        system,
        system_label: label,
    })
}

fn validate_cone(cone: &ConeConfig, dim: usize) -> Result<(), String> {
    match cone {
        ConeConfig::Orthant { signs } => {
            if signs.len() != dim {
                return Err(format!("cone.signs: length {} != dim {dim}", signs.len()));
            }
            if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
                return Err("cone.signs: entries must be +1 or -1".into());
            }
        }
        ConeConfig::Polyhedral { normals } => {
            if normals.is_empty() || normals.iter().any(|r| r.len() != dim) {
                return Err(format!("cone.normals: rows must have length {dim}"));
            }
        }
        ConeConfig::Elliptical { axis, weight, shrink } => {
            if axis.len() != dim {
                return Err(format!("cone.axis: length {} != dim {dim}", axis.len()));
            }
            if weight.len() != dim - 1 || weight.iter().any(|r| r.len() != dim - 1) {
                return Err(format!(
                    "cone.weight: must be {} x {}",
                    dim - 1,
                    dim - 1
                ));
            }
            if !(*shrink > 0.0 && *shrink <= 1.0) {
                return Err("cone.shrink: must lie in (0, 1]".into());
            }
        }
        ConeConfig::Construct {} => {}
    }
    Ok(())
}

/// Materialize a constant cone from the config (construct is handled by
/// the pipeline commands).
pub fn build_cone(cone: &ConeConfig) -> Result<Cone, String> {
    match cone {
        ConeConfig::Orthant { signs } => Ok(Cone::orthant(signs)),
        ConeConfig::Polyhedral { normals } => {
            let rows = normals.len();
            let cols = normals[0].len();
            let flat: Vec<f64> = normals.iter().flatten().copied().collect();
            Cone::polyhedral(DMatrix::from_row_slice(rows, cols, &flat))
                .map_err(|e| format!("cone.normals: {e}"))
        }
        ConeConfig::Elliptical { axis, weight, shrink } => {
            let m = weight.len();
            let flat: Vec<f64> = weight.iter().flatten().copied().collect();
            Cone::elliptical(
                &DVector::from_column_slice(axis),
                &DMatrix::from_row_slice(m, m, &flat),
                *shrink,
            )
            .map_err(|e| format!("cone: {e}"))
        }
        ConeConfig::Construct {} => Err(
            "cone.variant = construct requires a pipeline command (certify)".into(),
        ),
    }
}
