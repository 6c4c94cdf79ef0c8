//! Run configuration read from TOML, with a stable hash of the settings that
//! affect results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::Provenance;
use crate::model::{Cutoffs, Stage1Prior};
use crate::stage1::ChainConfig;
use crate::stage2::Stage2Config;

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl ChainSettings {
    pub fn with_seed(&self, seed: u64) -> ChainConfig {
        ChainConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed,
        }
    }
}

fn chain(iterations: usize, burn_in: usize, thin: usize) -> ChainSettings {
    ChainSettings { iterations, burn_in, thin }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSettings {
    /// Prior sd of every stage-one regression coefficient.
    pub xi: f64,
    pub ig_shape: f64,
    pub ig_scale: f64,
    /// Prior sd of every stage-one VAR coefficient.
    pub delta_sd: f64,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings { xi: 3.0, ig_shape: 0.5, ig_scale: 0.5, delta_sd: 3.0 }
    }
}

/// Everything a pipeline run needs. Paths and the worker count are excluded
/// from the hash because they do not change any output value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub sites: PathBuf,
    pub output: PathBuf,
    /// Highest ordinal level `J`.
    pub levels: usize,
    pub workers: usize,
    pub seed: u64,
    /// Weeks used for fitting; the rest are the holdout.
    pub train_weeks: Option<usize>,
    pub horizon: usize,
    pub prior: PriorSettings,
    pub stage1: ChainSettings,
    pub stage2: ChainSettings,
    pub randomized_scan: bool,
    pub single_stage: ChainSettings,
    pub covariate_stage1: ChainSettings,
    pub covariate_stage2: ChainSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: "data.csv".into(),
            sites: "sites.csv".into(),
            output: "out".into(),
            levels: 5,
            workers: 1,
            seed: 1,
            train_weeks: None,
            horizon: 0,
            prior: PriorSettings::default(),
            stage1: chain(50_000, 10_000, 10),
            stage2: chain(50_000, 10_000, 10),
            randomized_scan: false,
            single_stage: chain(50_000, 10_000, 10),
            covariate_stage1: chain(20_000, 5_000, 5),
            covariate_stage2: chain(20_000, 5_000, 5),
        }
    }
}

#[derive(Serialize)]
struct Hashed<'a> {
    levels: usize,
    seed: u64,
    train_weeks: Option<usize>,
    horizon: usize,
    prior: &'a PriorSettings,
    stage1: &'a ChainSettings,
    stage2: &'a ChainSettings,
    randomized_scan: bool,
    single_stage: &'a ChainSettings,
    covariate_stage1: &'a ChainSettings,
    covariate_stage2: &'a ChainSettings,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.cutoffs()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.stage1_prior(1).validate()?;
        if !(self.prior.delta_sd > 0.0) {
            return Err(Error::Config("prior.delta_sd must be positive".into()));
        }
        for (name, c) in [
            ("stage1", &self.stage1),
            ("stage2", &self.stage2),
            ("single_stage", &self.single_stage),
            ("covariate_stage1", &self.covariate_stage1),
            ("covariate_stage2", &self.covariate_stage2),
        ] {
            c.with_seed(0).validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the result-affecting settings.
    pub fn hash(&self) -> String {
        let hashed = Hashed {
            levels: self.levels,
            seed: self.seed,
            train_weeks: self.train_weeks,
            horizon: self.horizon,
            prior: &self.prior,
            stage1: &self.stage1,
            stage2: &self.stage2,
            randomized_scan: self.randomized_scan,
            single_stage: &self.single_stage,
            covariate_stage1: &self.covariate_stage1,
            covariate_stage2: &self.covariate_stage2,
        };
        hash_json(&hashed).expect("config serializes")
    }

    pub fn provenance(&self) -> Provenance {
        Provenance { config_hash: self.hash(), seed: self.seed }
    }

    pub fn cutoffs(&self) -> Result<Cutoffs> {
        Cutoffs::new(self.levels)
    }

    pub fn stage1_prior(&self, n_coef: usize) -> Stage1Prior {
        Stage1Prior {
            xi: vec![self.prior.xi; n_coef],
            ig_shape: self.prior.ig_shape,
            ig_scale: self.prior.ig_scale,
        }
    }

    fn derived_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    pub fn stage1_chain(&self) -> ChainConfig {
        self.stage1.with_seed(self.derived_seed(0))
    }

    pub fn stage2_config(&self) -> Stage2Config {
        Stage2Config {
            chain: self.stage2.with_seed(self.derived_seed(1)),
            randomized_scan: self.randomized_scan,
        }
    }

    pub fn single_stage_chain(&self) -> ChainConfig {
        self.single_stage.with_seed(self.derived_seed(2))
    }

    pub fn covariate_stage1_chain(&self) -> ChainConfig {
        self.covariate_stage1.with_seed(self.derived_seed(3))
    }

    pub fn covariate_stage2_config(&self) -> Stage2Config {
        Stage2Config {
            chain: self.covariate_stage2.with_seed(self.derived_seed(4)),
            randomized_scan: self.randomized_scan,
        }
    }

    pub fn forecast_seed(&self) -> u64 {
        self.derived_seed(5)
    }
}
