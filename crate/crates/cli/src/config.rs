//! Experiment configuration files.
//!
//! TOML with a `schema_version` key. Unknown keys are rejected, and every
//! validation failure is reported at once.

use std::path::PathBuf;

use darcy_ms::assembly::SourceSpec;
use darcy_ms::grid::{BoundarySpec, Circle, GridParams, PerforationSpec, PermeabilitySpec};
use darcy_ms::online::OnlineConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fine,
    Offline,
    Online,
    Sweep,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Fine => "fine",
            Mode::Offline => "offline",
            Mode::Online => "online",
            Mode::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PerforationSection {
    None,
    Circles { circles: Vec<[f64; 3]> },
    Random { seed: Option<u64>, count: usize, r_min: f64, r_max: f64 },
}

impl Default for PerforationSection {
    fn default() -> Self {
        PerforationSection::None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PermeabilitySection {
    Constant { value: f64 },
    LogUniform { min: f64, max: f64, seed: u64 },
    LogNormal { mean_log: f64, std_log: f64, seed: u64 },
}

impl Default for PermeabilitySection {
    fn default() -> Self {
        PermeabilitySection::Constant { value: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceSection {
    Constant { value: f64 },
    Sine { amplitude: f64 },
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection::Constant { value: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoarseSection {
    pub cx: usize,
    pub cy: usize,
}

impl Default for CoarseSection {
    fn default() -> Self {
        CoarseSection { cx: 20, cy: 20 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcSection {
    pub g_left: f64,
    pub g_right: f64,
}

impl Default for BcSection {
    fn default() -> Self {
        BcSection { g_left: 1.0, g_right: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineSection {
    /// Offline basis functions per block.
    pub modes: usize,
    pub eig_cutoff: f64,
}

impl Default for OfflineSection {
    fn default() -> Self {
        OfflineSection { modes: 1, eig_cutoff: 1e5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineSection {
    pub theta: f64,
    pub iterations: usize,
    pub skip_tol: f64,
}

impl Default for OnlineSection {
    fn default() -> Self {
        OnlineSection { theta: 1.0, iterations: 5, skip_tol: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Offline mode counts; the first also seeds the online run.
    pub modes: Vec<usize>,
    /// Whether to add the online curve.
    pub online: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { modes: vec![1, 2, 4, 8], online: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub mode: Mode,
    pub output: PathBuf,
    pub grid: GridSection,
    #[serde(default)]
    pub perforations: PerforationSection,
    #[serde(default)]
    pub permeability: PermeabilitySection,
    #[serde(default)]
    pub source: SourceSection,
    #[serde(default)]
    pub coarse: CoarseSection,
    #[serde(default)]
    pub bc: BcSection,
    #[serde(default)]
    pub offline: OfflineSection,
    #[serde(default)]
    pub online: OnlineSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| CliError::Config(vec![format!("{}: {e}", path.as_ref().display())]))?;
        Self::from_toml(&text)
    }

    /// Resolved configuration as TOML, stable for equal configs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every problem with the configuration, in a fixed order.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            p.push(format!("schema_version must be {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        let g = &self.grid;
        if g.nx == 0 || g.ny == 0 {
            p.push(format!("grid.nx and grid.ny must be >= 1, got ({}, {})", g.nx, g.ny));
        }
        if !(g.lx > 0.0 && g.lx.is_finite()) || !(g.ly > 0.0 && g.ly.is_finite()) {
            p.push(format!("grid.lx and grid.ly must be positive, got ({}, {})", g.lx, g.ly));
        }
        match &self.perforations {
            PerforationSection::None => {}
            PerforationSection::Circles { circles } => {
                for (k, c) in circles.iter().enumerate() {
                    if !(c[2] > 0.0) || c.iter().any(|x| !x.is_finite()) {
                        p.push(format!("perforations.circles[{k}] needs finite values and r > 0"));
                    }
                }
            }
            PerforationSection::Random { seed, r_min, r_max, .. } => {
                if seed.is_none() {
                    p.push("random perforations need a seed (perforations.seed or --seed)".into());
                }
                if !(*r_min > 0.0 && r_min <= r_max && r_max.is_finite()) {
                    p.push(format!("perforations need 0 < r_min <= r_max, got ({r_min}, {r_max})"));
                }
            }
        }
        match self.permeability {
            PermeabilitySection::Constant { value } => {
                if !(value > 0.0 && value.is_finite()) {
                    p.push(format!("permeability.value must be positive, got {value}"));
                }
            }
            PermeabilitySection::LogUniform { min, max, .. } => {
                if !(min > 0.0 && min <= max && max.is_finite()) {
                    p.push(format!("permeability needs 0 < min <= max, got ({min}, {max})"));
                }
            }
            PermeabilitySection::LogNormal { mean_log, std_log, .. } => {
                if !mean_log.is_finite() || !(std_log >= 0.0 && std_log.is_finite()) {
                    p.push(format!("permeability needs finite mean_log and std_log >= 0, got ({mean_log}, {std_log})"));
                }
            }
        }
        match self.source {
            SourceSection::Constant { value: v } | SourceSection::Sine { amplitude: v } => {
                if !v.is_finite() {
                    p.push("source value must be finite".into());
                }
            }
        }
        let c = &self.coarse;
        if c.cx == 0 || c.cy == 0 || c.cx > g.nx || c.cy > g.ny {
            p.push(format!(
                "coarse factors must satisfy 1 <= cx <= nx and 1 <= cy <= ny, got ({}, {}) for a {}x{} grid",
                c.cx, c.cy, g.nx, g.ny
            ));
        }
        if !self.bc.g_left.is_finite() || !self.bc.g_right.is_finite() {
            p.push("bc values must be finite".into());
        }
        if self.offline.modes == 0 {
            p.push("offline.modes must be >= 1".into());
        }
        if !(self.offline.eig_cutoff > 0.0) {
            p.push(format!("offline.eig_cutoff must be positive, got {}", self.offline.eig_cutoff));
        }
        if !(0.0..=1.0).contains(&self.online.theta) {
            p.push(format!("online.theta must lie in [0, 1], got {}", self.online.theta));
        }
        if !(self.online.skip_tol >= 0.0 && self.online.skip_tol.is_finite()) {
            p.push(format!("online.skip_tol must be >= 0, got {}", self.online.skip_tol));
        }
        if self.mode == Mode::Sweep {
            if self.sweep.modes.is_empty() {
                p.push("sweep.modes must not be empty".into());
            }
            if self.sweep.modes.contains(&0) {
                p.push("sweep.modes entries must be >= 1".into());
            }
        }
        p
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(p))
        }
    }

    pub fn grid_params(&self) -> GridParams {
        GridParams::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly)
    }

    pub fn perforation_spec(&self) -> PerforationSpec {
        match &self.perforations {
            PerforationSection::None => PerforationSpec::none(),
            PerforationSection::Circles { circles } => {
                PerforationSpec::from_circles(circles.iter().map(|c| Circle::new(c[0], c[1], c[2])).collect())
            }
            PerforationSection::Random { seed, count, r_min, r_max } => darcy_ms::grid::random_perforations(
                seed.expect("validated"),
                *count,
                *r_min,
                *r_max,
                self.grid.lx,
                self.grid.ly,
            ),
        }
    }

    pub fn permeability_spec(&self) -> PermeabilitySpec {
        match self.permeability {
            PermeabilitySection::Constant { value } => PermeabilitySpec::Constant(value),
            PermeabilitySection::LogUniform { min, max, seed } => PermeabilitySpec::LogUniform { min, max, seed },
            PermeabilitySection::LogNormal { mean_log, std_log, seed } => {
                PermeabilitySpec::LogNormal { mean_log, std_log, seed }
            }
        }
    }

    pub fn source_spec(&self) -> SourceSpec {
        match self.source {
            SourceSection::Constant { value } => SourceSpec::Constant(value),
            SourceSection::Sine { amplitude } => SourceSpec::Sine { amplitude },
        }
    }

    pub fn boundary_spec(&self) -> BoundarySpec {
        BoundarySpec::pressure_drop(self.bc.g_left, self.bc.g_right)
    }

    pub fn online_config(&self) -> OnlineConfig {
        OnlineConfig { theta: self.online.theta, max_iter: self.online.iterations, skip_tol: self.online.skip_tol }
    }

    /// The desk-scale benchmark: 100x100 unit cells, 5x5 blocks, 20 random
    /// circles, lognormal permeability.
    pub fn desk(output: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            mode: Mode::Sweep,
            output: output.into(),
            grid: GridSection { nx: 100, ny: 100, lx: 100.0, ly: 100.0 },
            perforations: PerforationSection::Random { seed: Some(6), count: 20, r_min: 3.0, r_max: 7.0 },
            permeability: PermeabilitySection::LogNormal { mean_log: 0.0, std_log: 2.0, seed: 6 },
            source: SourceSection::default(),
            coarse: CoarseSection::default(),
            bc: BcSection::default(),
            offline: OfflineSection::default(),
            online: OnlineSection { iterations: 9, ..OnlineSection::default() },
            sweep: SweepSection::default(),
        }
    }
}
