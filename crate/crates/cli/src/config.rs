//! Run configuration, read from TOML.
//!
//! Every section is optional. Relative paths resolve against the directory
//! of the config file. Component seeds are all derived from the top-level
//! `seed`, so one value reproduces a whole run.

use std::path::{Path, PathBuf};

use gmcd::diffusion::linear_schedule;
use gmcd::rng::derive_seed;
use gmcd::training::TrainConfig;
use gmcd::{GmcdError, NoiseSchedule, PackingConfig, PredictorConfig, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            beta_start: 1e-4,
            beta_end: 0.3,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        linear_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub num_samples: usize,
    pub map_intermediate: bool,
    pub checkpoint: Option<PathBuf>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            num_samples: 10_000,
            map_intermediate: false,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub trials: usize,
    /// Poissonization budget; defaults to `M - 5 sqrt(M)` for M samples.
    pub budget: Option<f64>,
    pub pattern_lengths: Vec<usize>,
    pub n_positions: usize,
    pub top_k: usize,
    /// Ground-truth K for synthetic evaluation.
    pub truth_k: Option<usize>,
    /// Reference corpus for pattern correlations.
    pub reference: Option<PathBuf>,
    pub samples: Option<PathBuf>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            trials: 1,
            budget: None,
            pattern_lengths: vec![2, 3, 4],
            n_positions: 100,
            top_k: 10,
            truth_k: None,
            reference: None,
            samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// K for generated data when no alphabet file is given.
    pub num_categories: Option<usize>,
    pub num_sequences: usize,
    pub split_ratios: Vec<f64>,
    pub alphabet: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Precomputed packing JSON; otherwise packing runs before training.
    pub packing: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            num_categories: None,
            num_sequences: 30_000,
            split_ratios: vec![1.0 / 3.0; 3],
            alphabet: None,
            train: None,
            valid: None,
            test: None,
            packing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub packing: PackingConfig,
    pub schedule: ScheduleConfig,
    pub predictor: PredictorConfig,
    pub training: TrainConfig,
    pub sampling: SamplingConfig,
    pub evaluation: EvaluationConfig,
    pub data: DataConfig,
}

pub mod seed_tag {
    pub const PACKING: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAINING: u64 = 3;
    pub const SAMPLING: u64 = 4;
    pub const DATA: u64 = 5;
    pub const EVALUATION: u64 = 6;
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GmcdError::Parse(format!("config: {}", e.message())))
    }

    /// Reads `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GmcdError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.alphabet);
        fix(&mut self.data.train);
        fix(&mut self.data.valid);
        fix(&mut self.data.test);
        fix(&mut self.data.packing);
        fix(&mut self.sampling.checkpoint);
        fix(&mut self.evaluation.reference);
        fix(&mut self.evaluation.samples);
    }

    /// Pushes the global seed into every component.
    pub fn apply_seed(&mut self) {
        self.packing.rng_seed = derive_seed(self.seed, seed_tag::PACKING);
        self.predictor.init_seed = derive_seed(self.seed, seed_tag::INIT);
        self.training.seed = derive_seed(self.seed, seed_tag::TRAINING);
    }

    pub fn component_seed(&self, tag: u64) -> u64 {
        derive_seed(self.seed, tag)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.schedule, ScheduleConfig::default());
        assert_eq!(c.training.batch_size, 1024);
        assert_eq!(c.data.split_ratios.len(), 3);
    }

    #[test]
    fn sections_and_unknown_keys() {
        let c = RunConfig::parse(
            "seed = 4\n[packing]\nnum_categories = 6\nlatent_dim = 6\n[training]\nomega = \"inf\"\nbatch_size = 8\n[predictor]\narch = \"transformer\"\n",
        )
        .unwrap();
        assert_eq!(c.packing.num_categories, 6);
        assert_eq!(c.training.batch_size, 8);
        assert_eq!(c.predictor.arch, gmcd::Arch::Transformer);
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(GmcdError::Parse(_))));
        assert!(matches!(RunConfig::parse("[schedule]\nstep = 3"), Err(GmcdError::Parse(_))));
    }

    #[test]
    fn hash_tracks_content_and_seed_propagates() {
        let mut a = RunConfig::parse("seed = 1").unwrap();
        let b = RunConfig::parse("seed = 2").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::parse("seed = 1").unwrap().hash());
        a.apply_seed();
        assert_eq!(a.training.seed, derive_seed(1, seed_tag::TRAINING));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut c = RunConfig::parse("[data]\ntrain = \"d/train.txt\"\nvalid = \"/abs/v.txt\"").unwrap();
        c.resolve_paths(Path::new("/base"));
        assert_eq!(c.data.train.unwrap(), PathBuf::from("/base/d/train.txt"));
        assert_eq!(c.data.valid.unwrap(), PathBuf::from("/abs/v.txt"));
    }
}
