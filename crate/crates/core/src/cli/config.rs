use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bkt::EmConfig;
use crate::dataio::fingerprint;
use crate::dfes::DfesConfig;
use crate::error::{Error, Result};
use crate::kdes::KdesConfig;
use crate::syngen::GenConfig;
use crate::tracer::{TracerConfig, Variant};

/// Existing data to use instead of generating it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub exercises: PathBuf,
    pub embeddings: PathBuf,
    pub responses: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_ratio: 0.8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SfesConfig {
    /// Number of clusters at the dendrogram cut.
    pub lambda: usize,
}

/// The whole run in one JSON document. Only `sfes.lambda` is mandatory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Repeat the whole pipeline once per seed; defaults to `[seed]`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: Option<DataPaths>,
    #[serde(default)]
    pub gen: GenConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub kdes: KdesConfig,
    #[serde(default)]
    pub dfes: DfesConfig,
    pub sfes: SfesConfig,
    #[serde(default)]
    pub tracer: TracerConfig,
    #[serde(default = "all_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "yes")]
    pub bkt: bool,
    #[serde(default)]
    pub em: EmConfig,
}

fn all_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn yes() -> bool {
    true
}

impl RunConfig {
    /// Defaults everywhere, with `lambda` clusters.
    pub fn with_lambda(lambda: usize) -> Self {
        RunConfig {
            seed: 0,
            seeds: None,
            out: None,
            data: None,
            gen: GenConfig::default(),
            split: SplitConfig::default(),
            kdes: KdesConfig::default(),
            dfes: DfesConfig::default(),
            sfes: SfesConfig { lambda },
            tracer: TracerConfig::default(),
            variants: all_variants(),
            bkt: true,
            em: EmConfig::default(),
        }
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let hint = if msg.contains("missing field `sfes`") || msg.contains("missing field `lambda`") {
                " (sfes.lambda, the number of semantic clusters, is required)"
            } else {
                ""
            };
            Error::Config(format!("{source}: {msg}{hint}"))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sfes.lambda == 0 {
            return Err(Error::Config("sfes.lambda must be >= 1".into()));
        }
        if !(self.split.train_ratio > 0.0 && self.split.train_ratio < 1.0) {
            return Err(Error::Config("split.train_ratio must lie in (0, 1)".into()));
        }
        if self.variants.is_empty() && !self.bkt {
            return Err(Error::Config("nothing to train: variants is empty and bkt is false".into()));
        }
        if matches!(&self.seeds, Some(s) if s.is_empty()) {
            return Err(Error::Config("seeds, when given, must not be empty".into()));
        }
        if self.data.is_none() {
            self.gen.validate()?;
        }
        self.kdes.validate()?;
        self.dfes.validate()?;
        self.tracer.validate()?;
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    /// Content hash of the config, ignoring where output goes.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        fingerprint(&c)
    }

    /// The config one seed of the pipeline runs under.
    pub fn for_seed(&self, seed: u64) -> RunConfig {
        let mut c = self.clone();
        c.seed = seed;
        c.seeds = None;
        c.gen.seed = seed;
        c.tracer.seed = seed;
        c
    }
}
