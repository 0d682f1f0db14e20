//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::TransformConfig;
use crate::error::Result;
use crate::losses::LossConfig;
use crate::render::PoseSamplerConfig;
use crate::sparse::SamplerConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunPaths {
    pub mesh: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// All tunables of a run. Unknown keys are rejected; missing sections take
/// their defaults.
///
/// `seed` is the single master seed. [`RunConfig::resolved`] copies it into
/// every component, which then derives its own streams (see [`crate::seed`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub transform: TransformConfig,
    pub sampler: SamplerConfig,
    pub pose_sampler: PoseSamplerConfig,
    pub loss: LossConfig,
    pub paths: RunPaths,
}


impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = crate::io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.transform.validate()?;
        self.sampler.validate()?;
        self.pose_sampler.validate()?;
        self.loss.validate()
    }

    /// Copy with the master seed propagated to every component.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.sampler.seed = self.seed;
        c.pose_sampler.seed = self.seed;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.transform.f_c, c.transform.d_min, c.transform.d_max), (900.0, 0.5, 80.0));
        assert_eq!((c.sampler.n_min, c.sampler.n_max), (1, 10));
        assert_eq!((c.loss.lambda_si, c.loss.lambda_grad), (0.5, 0.5));
        assert_eq!((c.pose_sampler.z_min, c.pose_sampler.z_max, c.pose_sampler.theta_xy), (1.0, 51.0, 22.5));
        assert_eq!(c.pose_sampler.n_frames, 10_000);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 1, "bogus": 2}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"sampler": {"n_mn": 2}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 9, "sampler": {"n_max": 4}}"#).unwrap();
        assert_eq!(c.sampler.n_max, 4);
        assert_eq!(c.resolved().pose_sampler.seed, 9);
    }

    #[test]
    fn invariants_enforced_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"transform": {"f_c": 900, "d_min": 5, "d_max": 1}}"#).unwrap();
        assert!(RunConfig::load(&path).is_err());
        std::fs::write(&path, r#"{"loss": {"lambda_si": 1.5}}"#).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
