//! Run configuration, read from a sectioned TOML file.
//!
//! ```toml
//! seed = 7
//! workers = 1
//! out = "out"
//!
//! [grid]
//! rd_extent = [20.0, 20.0, 20.0]
//! element_size = 2.5
//! pml_thickness = 5.0
//!
//! [model]
//! name = "smooth"
//!
//! [time]
//! dt = 2e-3
//! duration = 0.5
//! pulse = "p20"
//!
//! [[inversion.stages]]
//! pulse = "p20"
//! duration = 0.5
//! wp = 0.5
//! max_iterations = 50
//! ```
//!
//! Missing sections take their defaults. Parse errors carry the line and
//! column reported by the TOML reader; validation errors name the offending
//! key and, when it appears in the file, its line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};
use crate::forward::TimeRule;
use crate::inversion::InversionConfig;
use crate::medium::StretchProfile;
use crate::operators::{LoadCase, Pulse, DEFAULT_CFL};
use crate::specgrid::{GridSpec, SpectralMesh};

use super::data::NoiseNorm;
use super::models::TargetModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub grid: GridSpec,
    pub pml: StretchProfile,
    pub model: ModelConfig,
    pub initial: InitialGuess,
    pub time: TimeConfig,
    /// Pulses beyond the tabulated p20, p30 and p40.
    pub pulses: Vec<Pulse>,
    pub loads: LoadConfig,
    pub receivers: ReceiverConfig,
    pub data: DataConfig,
    pub inversion: Option<InversionConfig>,
    pub gradcheck: GradCheckConfig,
    pub storage: StorageConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub target: TargetModel,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_rho() -> f64 {
    2000.0
}

/// Initial λ and μ (Pa); a missing value is taken from the target model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialGuess {
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    /// Step size; derived from `cfl` when absent.
    pub dt: Option<f64>,
    pub cfl: f64,
    /// Duration of `forward` runs (inversion stages carry their own).
    pub duration: f64,
    /// Pulse of `forward` runs.
    pub pulse: String,
    pub rule: TimeRule,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            dt: None,
            cfl: DEFAULT_CFL,
            duration: 0.5,
            pulse: "p20".into(),
            rule: TimeRule::default(),
        }
    }
}

/// Vertical surface tractions; one load case per patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadConfig {
    pub patches: Vec<[f64; 4]>,
    pub amplitude: f64,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            patches: vec![[-7.5, 7.5, -7.5, 7.5]],
            amplitude: 1e3,
        }
    }
}

/// Surface receivers at the grid nodes of a patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverConfig {
    pub patch: [f64; 4],
    pub corners_only: bool,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            patch: [-7.5, 7.5, -7.5, 7.5],
            corners_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Element-size and step divisor of the generating mesh (1 or 2).
    pub refine: usize,
    pub noise_percent: f64,
    pub noise_norm: NoiseNorm,
    /// Directory of a saved data set; synthesized in memory when absent.
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            refine: 2,
            noise_percent: 0.0,
            noise_norm: NoiseNorm::Peak,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub field: crate::gradient::Parameter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub pulses: Vec<String>,
    pub duration: f64,
    pub points: Vec<GradCheckPoint>,
    /// Finite-difference steps relative to `scale`.
    pub steps: Vec<f64>,
    /// Field scale (Pa) multiplying `steps`.
    pub scale: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            pulses: vec!["p20".into(), "p40".into()],
            duration: 0.5,
            points: Vec::new(),
            steps: vec![1e-3, 1e-4, 1e-5],
            scale: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageConfig {
    /// In-memory snapshot budget (bytes) before spilling to `out`.
    pub snapshot_budget: u64,
    pub stride: usize,
}

impl Default for StorageConfig {
    fn default() -> Self {
        Self {
            snapshot_budget: 2 << 30,
            stride: 1,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            target: TargetModel::Smooth,
            rho: default_rho(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            out: PathBuf::from("out"),
            grid: GridSpec::new([20.0, 20.0, 20.0], 2.5, 5.0),
            pml: StretchProfile::default(),
            model: ModelConfig::default(),
            initial: InitialGuess::default(),
            time: TimeConfig::default(),
            pulses: Vec::new(),
            loads: LoadConfig::default(),
            receivers: ReceiverConfig::default(),
            data: DataConfig::default(),
            inversion: None,
            gradcheck: GradCheckConfig::default(),
            storage: StorageConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FwiError::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            FwiError::Parse { message, .. } => FwiError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Parses and validates; errors use an empty path.
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| FwiError::Parse {
            path: PathBuf::new(),
            message: e.to_string().trim_end().to_string(),
        })?;
        config.validate().map_err(|(key, msg)| FwiError::Parse {
            path: PathBuf::new(),
            message: match line_of(text, &key) {
                Some(line) => format!("line {line}: `{key}`: {msg}"),
                None => format!("`{key}`: {msg}"),
            },
        })?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// Checks every field; the error names the key at fault.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let err = |key: &str, msg: String| Err((key.to_string(), msg));
        if let Err(e) = self.grid.validate(false) {
            return err("grid", e.to_string());
        }
        if let Err(e) = self.pml.validate() {
            return err("pml", e.to_string());
        }
        if !(self.model.rho > 0.0) {
            return err("rho", format!("density must be positive, got {}", self.model.rho));
        }
        if self.workers == 0 {
            return err("workers", "need at least one worker".into());
        }
        for (key, v) in [("lambda", self.initial.lambda), ("mu", self.initial.mu)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return err(key, format!("initial value must be positive, got {v}"));
                }
            }
        }
        if let Some(dt) = self.time.dt {
            if !(dt > 0.0) {
                return err("dt", format!("step must be positive, got {dt}"));
            }
        }
        if !(self.time.cfl > 0.0) {
            return err("cfl", format!("must be positive, got {}", self.time.cfl));
        }
        if !(self.time.duration > 0.0) {
            return err("duration", format!("must be positive, got {}", self.time.duration));
        }
        if let Err(e) = self.pulse(&self.time.pulse) {
            return err("pulse", e.to_string());
        }
        for p in &self.pulses {
            if let Err(e) = p.validate() {
                return err("pulses", e.to_string());
            }
        }
        if self.loads.patches.is_empty() {
            return err("patches", "at least one load patch is required".into());
        }
        for p in self.loads.patches.iter().chain([&self.receivers.patch]) {
            if !(p[0] < p[1] && p[2] < p[3]) {
                return err("patch", format!("patch {p:?} is empty"));
            }
        }
        if !(self.data.refine == 1 || self.data.refine == 2) {
            return err("refine", format!("must be 1 or 2, got {}", self.data.refine));
        }
        if !(self.data.noise_percent >= 0.0) {
            return err("noise_percent", format!("must be non-negative, got {}", self.data.noise_percent));
        }
        if let Some(inv) = &self.inversion {
            if let Err(e) = inv.validate() {
                return err("inversion", e.to_string());
            }
            for s in &inv.stages {
                if let Err(e) = self.pulse(&s.pulse) {
                    return err("stages", e.to_string());
                }
            }
        }
        for name in &self.gradcheck.pulses {
            if let Err(e) = self.pulse(name) {
                return err("gradcheck", e.to_string());
            }
        }
        if self.gradcheck.steps.iter().any(|&h| !(h > 0.0)) || !(self.gradcheck.scale > 0.0) {
            return err("steps", "finite-difference steps and scale must be positive".into());
        }
        if self.storage.stride == 0 {
            return err("stride", "must be at least 1".into());
        }
        Ok(())
    }

    /// Tabulated or configured pulse by name.
    pub fn pulse(&self, name: &str) -> Result<Pulse> {
        self.pulses
            .iter()
            .find(|p| p.name == name)
            .cloned()
            .or_else(|| Pulse::named(name))
            .ok_or_else(|| FwiError::Config(format!("pulse `{name}` is not defined")))
    }

    /// One load case per patch, all driven by `pulse`.
    pub fn load_cases(&self, pulse: &Pulse) -> Vec<LoadCase> {
        self.loads
            .patches
            .iter()
            .map(|&patch| LoadCase {
                patch,
                amplitude: self.loads.amplitude,
                pulse: pulse.clone(),
            })
            .collect()
    }

    pub fn receiver_nodes(&self, mesh: &SpectralMesh) -> Result<Vec<u32>> {
        let r = mesh.surface_nodes_in_patch(self.receivers.patch, self.receivers.corners_only);
        if r.is_empty() {
            return Err(FwiError::Config(format!("no surface nodes in receiver patch {:?}", self.receivers.patch)));
        }
        Ok(r)
    }

    /// `(pulse, duration)` of every data set entry: the inversion stages, or the forward pulse.
    pub fn data_stages(&self) -> Result<Vec<(Pulse, f64)>> {
        let mut out: Vec<(Pulse, f64)> = Vec::new();
        match &self.inversion {
            Some(inv) => {
                for s in &inv.stages {
                    let p = self.pulse(&s.pulse)?;
                    if !out.iter().any(|(q, d)| q.name == p.name && *d == s.duration) {
                        out.push((p, s.duration));
                    }
                }
            }
            None => out.push((self.pulse(&self.time.pulse)?, self.time.duration)),
        }
        Ok(out)
    }
}

/// 1-based line of the first `key = ...` assignment or `[key]` header.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        let assign = l
            .strip_prefix(key)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false);
        let header = l.trim_start_matches('[').trim_end_matches(']').split('.').next_back() == Some(key) && l.starts_with('[');
        assign || header
    })
    .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = c.to_toml();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn full_file_round_trip() {
        let text = r#"
seed = 3
workers = 2

[grid]
rd_extent = [10.0, 10.0, 5.0]
element_size = 2.5
pml_thickness = 2.5

[model]
name = "homogeneous"
lambda = 1e8
mu = 1e8

[initial]
mu = 8e7

[time]
dt = 1e-3
pulse = "p30"

[[pulses]]
name = "slow"
mean = 0.2
spread = 0.003
t_end = 0.4
f_max = 12.0

[inversion]
regularization = "tv"

[[inversion.stages]]
pulse = "slow"
duration = 0.5
wp = 0.5
max_iterations = 5

[[gradcheck.points]]
x = 0.0
y = 0.0
z = -2.5
field = "mu"
"#;
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.workers, 2);
        assert_eq!(c.model.target, TargetModel::Homogeneous { lambda: 1e8, mu: 1e8 });
        assert_eq!(c.initial.lambda, None);
        assert_eq!(c.pulse("slow").unwrap().f_max, 12.0);
        assert_eq!(c.data_stages().unwrap()[0].0.name, "slow");
        let again = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn errors_name_the_line() {
        let e = RunConfig::parse("seed = 1\n[data]\nrefine = 3\n").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("refine"), "{e}");
        let e = RunConfig::parse("seed = 1\n\n[time]\npulse = \"p99\"\n").unwrap_err().to_string();
        assert!(e.contains("line 4") && e.contains("p99"), "{e}");
        let e = RunConfig::parse("seed = 1\nbogus = 2\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        let e = RunConfig::parse("[grid]\nrd_extent = [10.0, 10.0, 5.0]\nelement_size = 3.0\npml_thickness = 2.5\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 1") && e.contains("multiple"), "{e}");
    }

    #[test]
    fn missing_file_names_it() {
        let e = RunConfig::load(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/run.toml"));
        assert_eq!(e.exit_code(), 1);
    }
}
