//! Experiment configuration. One JSON file describes one experiment; unknown
//! keys are rejected and every field is validated at load.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atlas::{build_circle_atlas, CircleAtlas};
use crate::floquet::FloquetSystem;
use crate::linalg::{CMatrix, ComplexValue};
use crate::numerics::is_power_of_two;
use crate::propagator::{KickedTwoLevelModel, PeriodicHamiltonianModel};

/// Validation failure with the path of the offending field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub atlas: AtlasConfig,
    #[serde(default)]
    pub grids: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// `kicked-two-level`: `H = (ω₁/2)|↓⟩⟨↓| + ω₀λsW Σδ(θ − 2πn)`.
/// `generic-periodic`: `H = h0 + λ·drive·cos θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    KickedTwoLevel {
        omega0: f64,
        omega1: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kick_vector: Option<[ComplexValue; 2]>,
        #[serde(default = "one")]
        kick_scale: f64,
    },
    GenericPeriodic {
        omega0: f64,
        h0: Vec<Vec<ComplexValue>>,
        drive: Vec<Vec<ComplexValue>>,
        #[serde(default = "default_substeps")]
        substeps: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn default_substeps() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasConfig {
    pub period: f64,
    pub charts: Vec<[f64; 2]>,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        Self {
            period: 2.0 * TAU,
            charts: vec![[-PI, PI], [0.0, 3.0 * PI], [2.0 * PI, 4.0 * PI]],
        }
    }
}

/// `n_lambda` counts samples per `2π` of parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_theta: usize,
    pub n_lambda: usize,
    pub n_t: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_theta: 256,
            n_lambda: 256,
            n_t: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Linear,
    Constant,
}

/// Loop `λ(t)`; transitions are the λ values at which the chart changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kicks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(default)]
    pub lambda_start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_end: Option<f64>,
    pub charts: Vec<usize>,
    #[serde(default)]
    pub transitions: Vec<f64>,
    #[serde(default)]
    pub branch: usize,
    #[serde(default)]
    pub anchor: f64,
    /// Kick counts for the convergence table against exact propagation.
    #[serde(default)]
    pub kick_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Ratios `ω₀/ω₁`; `ω₁` comes from the model block.
    pub frequency_ratios: Vec<f64>,
    pub lambda_samples: usize,
    pub lambda_max: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            frequency_ratios: vec![1.0],
            lambda_samples: 512,
            lambda_max: 2.0 * TAU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Constant added to the first transition phase before the cocycle suite (0 = off).
    #[serde(default)]
    pub corrupt_phi: f64,
    /// Emit residual-vs-grid-spacing tables.
    #[serde(default)]
    pub refinement: bool,
    #[serde(default = "default_gauge_samples")]
    pub gauge_samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_gluing_tol")]
    pub gluing_tol: f64,
    #[serde(default = "default_holonomy_tol")]
    pub holonomy_tol: f64,
    #[serde(default = "default_phase_tol")]
    pub oracle_phase_tol: f64,
}

fn default_gauge_samples() -> usize {
    10
}
fn default_seed() -> u64 {
    7
}
fn default_gluing_tol() -> f64 {
    1e-5
}
fn default_holonomy_tol() -> f64 {
    1e-6
}
fn default_phase_tol() -> f64 {
    0.05
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            corrupt_phi: 0.0,
            refinement: false,
            gauge_samples: default_gauge_samples(),
            seed: default_seed(),
            gluing_tol: default_gluing_tol(),
            holonomy_tol: default_holonomy_tol(),
            oracle_phase_tol: default_phase_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            formats: vec![Format::Json, Format::Csv],
        }
    }
}

/// Concrete model built from the config.
pub enum Model {
    Kicked(KickedTwoLevelModel),
    Generic(PeriodicHamiltonianModel),
}

impl Model {
    pub fn system(&self) -> &dyn FloquetSystem {
        match self {
            Model::Kicked(m) => m,
            Model::Generic(m) => m,
        }
    }

    pub fn kicked(&self) -> Option<&KickedTwoLevelModel> {
        match self {
            Model::Kicked(m) => Some(m),
            Model::Generic(_) => None,
        }
    }
}

fn matrix(rows: &[Vec<ComplexValue>], path: &str) -> Result<CMatrix, ConfigError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(invalid(path, "must be a non-empty square matrix"));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| rows[i][j].into()))
}

fn positive(x: f64, path: &str) -> Result<(), ConfigError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(path, format!("must be positive and finite, got {x}")))
    }
}

impl ModelConfig {
    pub fn omega0(&self) -> f64 {
        match self {
            ModelConfig::KickedTwoLevel { omega0, .. } | ModelConfig::GenericPeriodic { omega0, .. } => *omega0,
        }
    }

    /// Same model with `ω₀` replaced (frequency-ratio sweeps).
    pub fn with_omega0(&self, value: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            ModelConfig::KickedTwoLevel { omega0, .. } | ModelConfig::GenericPeriodic { omega0, .. } => *omega0 = value,
        }
        out
    }

    pub fn build(&self) -> Result<Model, ConfigError> {
        match self {
            ModelConfig::KickedTwoLevel {
                omega0,
                omega1,
                kick_vector,
                kick_scale,
            } => {
                positive(*omega0, "model.omega0")?;
                positive(*omega1, "model.omega1")?;
                if !kick_scale.is_finite() {
                    return Err(invalid("model.kick_scale", "must be finite"));
                }
                let m = match kick_vector {
                    Some([a, b]) => KickedTwoLevelModel::with_kick_vector(*omega0, *omega1, [(*a).into(), (*b).into()]),
                    None => KickedTwoLevelModel::new(*omega0, *omega1),
                }
                .map_err(|e| invalid("model.kick_vector", e.to_string()))?;
                Ok(Model::Kicked(m.with_kick_scale(*kick_scale)))
            }
            ModelConfig::GenericPeriodic {
                omega0,
                h0,
                drive,
                substeps,
            } => {
                positive(*omega0, "model.omega0")?;
                let h0 = matrix(h0, "model.h0")?;
                let drive = matrix(drive, "model.drive")?;
                if h0.nrows() != drive.nrows() {
                    return Err(invalid("model.drive", "dimension differs from model.h0"));
                }
                for (m, path) in [(&h0, "model.h0"), (&drive, "model.drive")] {
                    if crate::linalg::hermitian_deviation(m) > 1e-12 {
                        return Err(invalid(path, "must be Hermitian"));
                    }
                }
                if *substeps == 0 {
                    return Err(invalid("model.substeps", "must be at least 1"));
                }
                Ok(Model::Generic(
                    PeriodicHamiltonianModel::cw_laser(h0, drive, *omega0).with_substeps(*substeps),
                ))
            }
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn atlas(&self) -> Result<CircleAtlas, ConfigError> {
        let specs: Vec<(f64, f64)> = self.atlas.charts.iter().map(|c| (c[0], c[1])).collect();
        build_circle_atlas(self.atlas.period, &specs).map_err(|e| invalid("atlas.charts", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.build()?;
        positive(self.atlas.period, "atlas.period")?;
        let atlas = self.atlas()?;
        for (name, n) in [
            ("grids.n_theta", self.grids.n_theta),
            ("grids.n_lambda", self.grids.n_lambda),
            ("grids.n_t", self.grids.n_t),
        ] {
            if n < 64 || !is_power_of_two(n) {
                return Err(invalid(name, format!("must be a power of two ≥ 64, got {n}")));
            }
        }
        for (i, r) in self.sweep.frequency_ratios.iter().enumerate() {
            positive(*r, &format!("sweep.frequency_ratios[{i}]"))?;
        }
        if self.sweep.lambda_samples < 2 {
            return Err(invalid("sweep.lambda_samples", "must be at least 2"));
        }
        positive(self.sweep.lambda_max, "sweep.lambda_max")?;
        positive(self.verify.gluing_tol, "verify.gluing_tol")?;
        positive(self.verify.holonomy_tol, "verify.holonomy_tol")?;
        positive(self.verify.oracle_phase_tol, "verify.oracle_phase_tol")?;
        if !self.verify.corrupt_phi.is_finite() {
            return Err(invalid("verify.corrupt_phi", "must be finite"));
        }
        if self.output.formats.is_empty() {
            return Err(invalid("output.formats", "must list at least one format"));
        }
        if let Some(s) = &self.schedule {
            s.validate(&atlas)?;
        }
        Ok(())
    }
}

impl ScheduleConfig {
    pub fn duration(&self, omega0: f64) -> f64 {
        match (self.kicks, self.duration) {
            (Some(k), _) => TAU * k as f64 / omega0,
            (None, Some(t)) => t,
            (None, None) => 0.0,
        }
    }

    pub fn lambda_end(&self, period: f64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.lambda_start,
            ScheduleKind::Linear => self.lambda_end.unwrap_or(self.lambda_start + period),
        }
    }

    fn validate(&self, atlas: &CircleAtlas) -> Result<(), ConfigError> {
        match (self.kicks, self.duration) {
            (Some(_), Some(_)) => return Err(invalid("schedule", "give either kicks or duration, not both")),
            (None, None) => return Err(invalid("schedule", "missing kicks or duration")),
            (None, Some(t)) if !(t.is_finite() && t >= 0.0) => {
                return Err(invalid("schedule.duration", "must be non-negative"))
            }
            _ => {}
        }
        if self.charts.is_empty() {
            return Err(invalid("schedule.charts", "must list at least one chart"));
        }
        for (i, &c) in self.charts.iter().enumerate() {
            if c >= atlas.charts.len() {
                return Err(invalid(format!("schedule.charts[{i}]"), format!("no chart {c}")));
            }
        }
        if self.transitions.len() + 1 < self.charts.len() {
            let k = self.transitions.len();
            return Err(invalid(
                format!("schedule.transitions[{k}]"),
                format!(
                    "missing transition point for chart pair ({}, {})",
                    self.charts[k], self.charts[k + 1]
                ),
            ));
        }
        if self.transitions.len() + 1 > self.charts.len() {
            return Err(invalid("schedule.transitions", "more transition points than chart changes"));
        }
        if self.kind == ScheduleKind::Constant && self.charts.len() != 1 {
            return Err(invalid("schedule.charts", "a constant schedule uses exactly one chart"));
        }
        if self.branch >= 64 {
            return Err(invalid("schedule.branch", "out of range"));
        }
        for (i, &k) in self.kick_counts.iter().enumerate() {
            if k == 0 || (i > 0 && k <= self.kick_counts[i - 1]) {
                return Err(invalid("schedule.kick_counts", "must be positive and increasing"));
            }
        }
        Ok(())
    }
}
