//! On-disk model configuration (TOML).

use conboost::boost::{BoostConfig, Loss, Resampling};
use conboost::learner::LearnerSpec;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;
const DEFAULT_M_STOP: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvMethod {
    KFold,
    Bootstrap,
}

/// Cross-validated choice of the stopping iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSettings {
    #[serde(default = "CvSettings::default_method")]
    pub method: CvMethod,
    /// Folds for k-fold, resamples for bootstrap.
    #[serde(default = "CvSettings::default_count")]
    pub count: usize,
    #[serde(default = "CvSettings::default_m_max")]
    pub m_max: usize,
}

impl CvSettings {
    fn default_method() -> CvMethod {
        CvMethod::KFold
    }
    fn default_count() -> usize {
        10
    }
    fn default_m_max() -> usize {
        1000
    }

    pub fn resampling(&self) -> Resampling {
        match self.method {
            CvMethod::KFold => Resampling::KFold(self.count),
            CvMethod::Bootstrap => Resampling::Bootstrap(self.count),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub version: u32,
    pub response: String,
    #[serde(default = "ModelConfig::default_loss")]
    pub loss: Loss,
    #[serde(default = "ModelConfig::default_step")]
    pub step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_stop: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvSettings>,
    #[serde(rename = "learner")]
    pub learners: Vec<LearnerSpec>,
}

impl ModelConfig {
    fn default_loss() -> Loss {
        Loss::Gaussian
    }
    fn default_step() -> f64 {
        0.1
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| e.message().to_string())?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), String> {
        if self.version != CONFIG_VERSION {
            return Err(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            ));
        }
        if self.m_stop.is_some() && self.cv.is_some() {
            return Err("set either `m_stop` or a `[cv]` table, not both".into());
        }
        if self.learners.is_empty() {
            return Err("no `[[learner]]` entries".into());
        }
        for (i, l) in self.learners.iter().enumerate() {
            l.validate().map_err(|e| format!("learner {i}: {e}"))?;
        }
        Ok(())
    }

    /// Boosting settings with the given stopping iteration, or the configured one.
    pub fn boost_config(&self, m_stop: Option<usize>) -> BoostConfig {
        BoostConfig::new(
            self.step,
            m_stop.or(self.m_stop).unwrap_or(DEFAULT_M_STOP),
            self.seed,
        )
    }
}
