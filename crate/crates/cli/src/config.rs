//! Experiment configuration file.

use std::path::PathBuf;

use cdma_pme::mc_sim::{ChipLaw, McConfig};
use cdma_pme::replica_solver::SweepAxis;
use cdma_pme::{Constellation, DetectorPreset, DetectorSpec, PostulatedNoise, SnrProfile, SystemSpec};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Efficiency,
    Spectral,
    Sweep,
    Simulate,
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub preset: DetectorPreset,
    /// Required for `custom`; ignored by the presets.
    #[serde(default)]
    pub postulated_prior: Option<Constellation>,
    /// Required for `custom`: `{"finite": sigma}`, `"zero-limit"`.
    #[serde(default)]
    pub noise: Option<PostulatedNoise>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    /// Users per chip; optional for `simulate`, where `users / spreading`
    /// defines it.
    #[serde(default)]
    pub beta: Option<f64>,
    pub prior: Constellation,
    /// Equal power for all users, in dB.
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// General profile `{"atoms": [{"snr_db": .., "weight": ..}]}`.
    #[serde(default)]
    pub snr_profile: Option<SnrProfile>,
    pub detector: DetectorConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl SweepConfig {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.from];
        }
        let step = (self.to - self.from) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.from + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub users: usize,
    pub spreading: usize,
    #[serde(default)]
    pub chip_law: ChipLaw,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub enumeration_cap: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub spec: Option<SpecConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub mc: Option<McSection>,
    /// Criteria to run for `validate` (default: all).
    #[serde(default)]
    pub criteria: Option<Vec<u8>>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<Format>,
}

/// Configuration problems; reported with exit status 2.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemaError {
    #[error("cannot read config: {0}")]
    Read(String),
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SchemaError> {
    Err(SchemaError::Invalid(msg.into()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), SchemaError> {
        let needs_spec = self.command != Command::Validate;
        match (needs_spec, &self.spec) {
            (true, None) => return invalid("`spec` is required for this command"),
            (false, Some(_)) => return invalid("`validate` takes no `spec`"),
            _ => {}
        }
        if self.sweep.is_some() != (self.command == Command::Sweep) {
            return invalid("`sweep` must be present exactly when command is `sweep`");
        }
        if self.mc.is_some() != (self.command == Command::Simulate) {
            return invalid("`mc` must be present exactly when command is `simulate`");
        }
        if self.criteria.is_some() && self.command != Command::Validate {
            return invalid("`criteria` only applies to `validate`");
        }
        if let Some(ids) = &self.criteria {
            if let Some(bad) = ids.iter().find(|&&i| !(1..=12).contains(&i)) {
                return invalid(format!("criterion {bad} does not exist (1 to 12)"));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.points == 0 || !sw.from.is_finite() || !sw.to.is_finite() {
                return invalid("sweep needs finite bounds and at least one point");
            }
        }
        if let Some(spec) = &self.spec {
            if spec.snr_db.is_some() == spec.snr_profile.is_some() {
                return invalid("give exactly one of `snr_db` and `snr_profile`");
            }
            if spec.beta.is_none() && self.command != Command::Simulate {
                return invalid("`beta` is required for this command");
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &SpecConfig {
        self.spec.as_ref().expect("checked at load")
    }
}

impl SpecConfig {
    pub fn profile(&self) -> Result<SnrProfile, cdma_pme::Error> {
        match (&self.snr_profile, self.snr_db) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(db)) => SnrProfile::equal_db(db),
            (None, None) => unreachable!("checked at load"),
        }
    }

    pub fn detector(&self) -> Result<DetectorSpec, cdma_pme::Error> {
        let ch = self.prior.channel();
        let d = &self.detector;
        Ok(match d.preset {
            DetectorPreset::MatchedFilter => DetectorSpec::matched_filter(ch),
            DetectorPreset::Decorrelator => DetectorSpec::decorrelator(ch),
            DetectorPreset::Lmmse => DetectorSpec::lmmse(ch),
            DetectorPreset::IndividuallyOptimal => DetectorSpec::individually_optimal(&self.prior),
            DetectorPreset::JointlyOptimal => DetectorSpec::jointly_optimal(&self.prior),
            DetectorPreset::Custom => {
                let (Some(q), Some(noise)) = (&d.postulated_prior, d.noise) else {
                    return Err(cdma_pme::Error::InconsistentDetector(
                        "custom detectors need `postulated_prior` and `noise`".into(),
                    ));
                };
                DetectorSpec::custom(q.clone(), noise)?
            }
        })
    }

    pub fn system(&self, beta: f64) -> Result<SystemSpec, cdma_pme::Error> {
        SystemSpec::for_prior(beta, self.profile()?, self.prior.clone(), self.detector()?)
    }
}

impl McSection {
    pub fn build(&self, spec: &SpecConfig) -> Result<McConfig, cdma_pme::Error> {
        let mut c = McConfig::new(self.users, self.spreading, spec.profile()?, spec.prior.clone(), spec.detector()?);
        c.chip_law = self.chip_law;
        c.trials = self.trials;
        c.seed = self.seed;
        c.enumeration_cap = self.enumeration_cap;
        if let Some(beta) = spec.beta {
            if (beta - c.beta()).abs() > 1e-12 {
                return Err(cdma_pme::Error::InvalidSpec(format!(
                    "beta {beta} disagrees with users / spreading = {}",
                    c.beta()
                )));
            }
        }
        c.validate()?;
        Ok(c)
    }
}
