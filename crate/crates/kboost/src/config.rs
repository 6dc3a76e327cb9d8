//! Experiment configuration files.
//!
//! One TOML file describes one experiment: task, STFT framing, the three
//! model sizes, the link delays, compression, corpus sizes and the training
//! settings. Every artifact written from a config carries [`SessionConfig::model_hash`]
//! for the model it belongs to, so checkpoints cannot silently be used with
//! a different architecture or delay.

use std::fmt;
use std::path::{Path, PathBuf};

use kboost_core::boost::{KbConfig, DEFAULT_CONTEXT};
use kboost_core::dsp::StftConfig;
use kboost_core::gridnet::GridConfig;
use kboost_core::runtime::{DelayConfig, TickDelays, CHUNK_SECONDS};
use kboost_core::synth::{CorpusSpec, PoolSizes, SplitSizes, Task};
use kboost_core::train::{AdamConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub name: String,
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stft")]
    pub stft: StftConfig,
    pub delay: DelaySection,
    #[serde(default)]
    pub boost: BoostSection,
    pub models: Models,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub pretrain: TrainSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_stft() -> StftConfig {
    StftConfig::DEFAULT
}

/// One-way link delays in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySection {
    pub c_out_ms: f64,
    pub c_in_ms: f64,
}

impl DelaySection {
    pub fn to_delay(self) -> DelayConfig {
        DelayConfig::from_ms(self.c_out_ms, self.c_in_ms)
    }

    /// Delays of a point with `c` chunks in total, split evenly between the
    /// two directions (the odd chunk goes to the downlink).
    pub fn for_chunks(c: usize) -> Self {
        let ms = CHUNK_SECONDS * 1e3;
        Self {
            c_out_ms: (c / 2) as f64 * ms,
            c_in_ms: (c - c / 2) as f64 * ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostSection {
    #[serde(default = "one")]
    pub p: usize,
    #[serde(default = "default_v")]
    pub v: usize,
    #[serde(default)]
    pub merge_heads: Option<usize>,
}

fn one() -> usize {
    1
}

fn default_v() -> usize {
    DEFAULT_CONTEXT
}

impl Default for BoostSection {
    fn default() -> Self {
        Self {
            p: 1,
            v: DEFAULT_CONTEXT,
            merge_heads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Models {
    pub small: GridConfig,
    pub medium: GridConfig,
    pub large: GridConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    #[serde(default = "default_corpus_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub sizes: SplitSizes,
    #[serde(default)]
    pub pools: PoolSizes,
    #[serde(default = "default_seconds")]
    pub seconds: f64,
}

fn default_corpus_dir() -> PathBuf {
    PathBuf::from("corpus")
}

fn default_seconds() -> f64 {
    kboost_core::synth::MIXTURE_SECONDS
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            dir: default_corpus_dir(),
            sizes: SplitSizes::default(),
            pools: PoolSizes::default(),
            seconds: default_seconds(),
        }
    }
}

/// Training settings; anything left out falls back to the defaults of the
/// stage (pretraining or joint training).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub clip_norm: Option<f64>,
    pub patience: Option<usize>,
    pub factor: Option<f64>,
    pub freeze_large: Option<bool>,
    /// Use only the first `limit` training examples.
    pub limit: Option<usize>,
    pub adam: Option<AdamConfig>,
}

impl TrainSection {
    pub fn resolve(&self, base: TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            task: base.task,
            lr: self.lr.unwrap_or(base.lr),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            clip_norm: self.clip_norm.unwrap_or(base.clip_norm),
            patience: self.patience.unwrap_or(base.patience),
            factor: self.factor.unwrap_or(base.factor),
            epochs: self.epochs.unwrap_or(base.epochs),
            freeze_large: self.freeze_large.unwrap_or(base.freeze_large),
            seed,
            adam: self.adam.unwrap_or(base.adam),
        }
    }
}

/// Axes swept by the `sweep` command; the grid is their cartesian product.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub c: Option<Vec<usize>>,
    pub p: Option<Vec<usize>>,
    pub freeze: Option<Vec<bool>>,
}

/// Which model a checkpoint or report belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Small,
    Medium,
    Large,
    Boosted,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Small => "small",
            Role::Medium => "medium",
            Role::Large => "large",
            Role::Boosted => "boosted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "small" => Some(Role::Small),
            "medium" => Some(Role::Medium),
            "large" => Some(Role::Large),
            "boosted" => Some(Role::Boosted),
            _ => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One point of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub c: usize,
    pub p: usize,
    pub freeze: bool,
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigFile {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::ConfigFile { detail, .. } => Error::ConfigFile {
                path: path.to_path_buf(),
                detail,
            },
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigFile {
            path: PathBuf::from("<config>"),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn validate(&self) -> Result<()> {
        use kboost_core::Error::Config;
        self.stft.validate()?;
        self.delay.to_delay().validate()?;
        let k = self.task.output_channels();
        let tse = self.task == Task::Tse;
        for (role, m) in [("small", &self.models.small), ("medium", &self.models.medium), ("large", &self.models.large)] {
            m.validate()?;
            if m.k != k {
                return Err(Config(format!("{role} model has K = {}, task {} needs {k}", m.k, self.task.name())).into());
            }
            if m.speaker_dim.is_some() != tse {
                return Err(Config(format!("{role} model: speaker conditioning is required for tse and only for tse")).into());
            }
        }
        self.kb_config()?.validate()?;
        if !(self.corpus.seconds > 0.0) {
            return Err(Config(format!("corpus seconds must be positive, got {}", self.corpus.seconds)).into());
        }
        self.pretrain_config().validate()?;
        self.train_config().validate()?;
        for &p in self.sweep.p.iter().flatten() {
            if p == 0 || (2 * k) % p != 0 {
                return Err(Config(format!("sweep compression {p} does not divide 2K = {}", 2 * k)).into());
            }
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.stft.num_bins()
    }

    pub fn delay(&self) -> DelayConfig {
        self.delay.to_delay()
    }

    pub fn chunks(&self) -> Result<usize> {
        Ok(self.delay().chunks()?)
    }

    pub fn tick_delays(&self) -> Result<TickDelays> {
        Ok(self.delay().ticks()?)
    }

    pub fn grid(&self, role: Role) -> GridConfig {
        match role {
            Role::Small | Role::Boosted => self.models.small,
            Role::Medium => self.models.medium,
            Role::Large => self.models.large,
        }
    }

    pub fn kb_config(&self) -> Result<KbConfig> {
        Ok(KbConfig {
            small: self.models.small,
            large: self.models.large,
            c: self.chunks()?,
            p: self.boost.p,
            v: self.boost.v,
            merge_heads: self.boost.merge_heads,
        })
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        self.pretrain.resolve(TrainConfig::baseline(self.task), self.seed)
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.resolve(TrainConfig::joint(self.task), self.seed)
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            sizes: self.corpus.sizes,
            pools: self.corpus.pools,
            seconds: self.corpus.seconds,
            ..CorpusSpec::new(self.task, self.seed)
        }
    }

    /// Same experiment at another sweep point.
    pub fn at(&self, point: SweepPoint) -> Self {
        let mut cfg = self.clone();
        cfg.delay = DelaySection::for_chunks(point.c);
        cfg.boost.p = point.p;
        cfg.train.freeze_large = Some(point.freeze);
        cfg
    }

    pub fn point(&self) -> Result<SweepPoint> {
        Ok(SweepPoint {
            c: self.chunks()?,
            p: self.boost.p,
            freeze: self.train_config().freeze_large,
        })
    }

    /// Grid of the `[sweep]` section; axes left out stay at this config's value.
    pub fn sweep_points(&self) -> Result<Vec<SweepPoint>> {
        let here = self.point()?;
        let cs = self.sweep.c.clone().unwrap_or_else(|| vec![here.c]);
        let ps = self.sweep.p.clone().unwrap_or_else(|| vec![here.p]);
        let fs = self.sweep.freeze.clone().unwrap_or_else(|| vec![here.freeze]);
        let mut out = Vec::new();
        for &c in &cs {
            for &p in &ps {
                for &freeze in &fs {
                    out.push(SweepPoint { c, p, freeze });
                }
            }
        }
        Ok(out)
    }

    /// SHA-256 over everything that fixes the layout and meaning of the
    /// parameters of `role`: task, framing, architecture, and for boosted
    /// pairs the delay, compression and context length.
    pub fn model_hash(&self, role: Role) -> Result<String> {
        #[derive(Serialize)]
        struct Identity<'a> {
            role: Role,
            task: Task,
            stft: StftConfig,
            model: Option<&'a GridConfig>,
            kb: Option<KbConfig>,
        }
        let id = Identity {
            role,
            task: self.task,
            stft: self.stft,
            model: (role != Role::Boosted).then(|| match role {
                Role::Small => &self.models.small,
                Role::Medium => &self.models.medium,
                _ => &self.models.large,
            }),
            kb: if role == Role::Boosted { Some(self.kb_config()?) } else { None },
        };
        Ok(hex(&Sha256::digest(serde_json::to_vec(&id).expect("identity serializes"))))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
