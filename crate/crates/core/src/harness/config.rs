use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trajectory::{SeedConfig, TrajectorySpec};
use crate::cgpr::{CgprSettings, FitOptions, HyperBounds, KernelParams};
use crate::error::{Error, Result};
use crate::ilc::LearningConfig;
use crate::plant::SeaArmConfig;

/// Which plant a run drives. Written as `sea-arm` or `lti:<path>` in
/// configuration files and on the command line.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PlantSelection {
    #[default]
    SeaArm,
    /// Transfer-matrix description in a TOML file.
    Lti(String),
}

impl PlantSelection {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sea-arm" => Ok(Self::SeaArm),
            _ => match s.strip_prefix("lti:") {
                Some(p) if !p.is_empty() => Ok(Self::Lti(p.to_string())),
                _ => Err(Error::Config(format!("unknown plant `{s}`; expected sea-arm or lti:<path>"))),
            },
        }
    }
}

impl fmt::Display for PlantSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SeaArm => f.write_str("sea-arm"),
            Self::Lti(p) => write!(f, "lti:{p}"),
        }
    }
}

impl TryFrom<String> for PlantSelection {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<PlantSelection> for String {
    fn from(p: PlantSelection) -> String {
        p.to_string()
    }
}

/// Initial hyperparameters and search box for the transfer model. The
/// kernel input is `(ω, p₁..p_m)` with one scheduling parameter per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// rad/s
    pub frequency_length_scale: f64,
    /// rad
    pub parameter_length_scale: f64,
    pub signal_variance_bounds: (f64, f64),
    pub noise_variance_bounds: (f64, f64),
    pub frequency_length_scale_bounds: (f64, f64),
    pub parameter_length_scale_bounds: (f64, f64),
    pub fit: FitOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = CgprSettings::for_plant(2, 2, 2);
        Self {
            signal_variance: s.init.signal_variance,
            noise_variance: s.init.noise_variance,
            frequency_length_scale: s.init.length_scales[0],
            parameter_length_scale: s.init.length_scales[1],
            signal_variance_bounds: s.bounds.signal_variance,
            noise_variance_bounds: s.bounds.noise_variance,
            frequency_length_scale_bounds: s.bounds.length_scales[0],
            parameter_length_scale_bounds: s.bounds.length_scales[1],
            fit: s.fit,
        }
    }
}

impl ModelConfig {
    /// Settings for a square plant with `n` channels, each scheduled on
    /// its own reference angle.
    pub fn settings(&self, n: usize, seed: u64) -> Result<CgprSettings> {
        let mut length_scales = vec![self.frequency_length_scale];
        length_scales.extend(std::iter::repeat_n(self.parameter_length_scale, n));
        let mut ls_bounds = vec![self.frequency_length_scale_bounds];
        ls_bounds.extend(std::iter::repeat_n(self.parameter_length_scale_bounds, n));
        let init = KernelParams::new(self.signal_variance, length_scales, self.noise_variance)
            .map_err(|e| Error::Config(format!("model: {e}")))?;
        Ok(CgprSettings {
            n_inputs: n,
            n_outputs: n,
            init,
            bounds: HyperBounds {
                signal_variance: self.signal_variance_bounds,
                length_scales: ls_bounds,
                noise_variance: self.noise_variance_bounds,
            },
            fit: FitOptions { seed, ..self.fit.clone() },
        })
    }
}

/// Everything a run needs. Missing keys take their defaults, so an empty
/// file is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for measurement noise and hyperparameter restarts;
    /// replaces `arm.seed` and `model.fit.seed`.
    pub seed: u64,
    /// Hz
    pub sample_rate: f64,
    pub out_dir: String,
    pub plant: PlantSelection,
    pub trajectory: TrajectorySpec,
    pub seeding: SeedConfig,
    pub learning: LearningConfig,
    pub arm: SeaArmConfig,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate: 100.0,
            out_dir: "run".into(),
            plant: PlantSelection::SeaArm,
            trajectory: TrajectorySpec::slow(),
            seeding: SeedConfig::default(),
            // every iteration is executed so runs have a fixed length
            learning: LearningConfig { stall_iterations: 0, ..LearningConfig::default() },
            arm: SeaArmConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        self.learning.validate()?;
        self.model.settings(2, self.seed)?;
        Ok(())
    }

    /// Arm settings with the master seed applied.
    pub fn arm_config(&self) -> SeaArmConfig {
        SeaArmConfig { seed: self.seed, ..self.arm.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn partial_sections_and_selections() {
        let c = RunConfig::from_toml(
            "seed = 7\nplant = \"lti:g.toml\"\n[learning]\nmax_iterations = 3\n[trajectory]\nkind = { custom = \"r.csv\" }\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.plant, PlantSelection::Lti("g.toml".into()));
        assert_eq!(c.learning.max_iterations, 3);
        assert_eq!(c.learning.window_seconds, LearningConfig::default().window_seconds);
        assert_eq!(c.trajectory.kind, super::super::TrajectoryKind::Custom("r.csv".into()));
        assert_eq!(c.arm_config().seed, 7);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in ["plant = \"robot\"", "sample_rate = -1.0", "colour = 1", "[learning]\ngain_fraction = 2.0"] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }
}
