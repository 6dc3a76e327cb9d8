use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mixture::{EnrollmentRecipe, Identity, MixtureRecipe, Split, Task, MIXTURE_SECONDS, SNR_RANGE};
use crate::dsp::SAMPLE_RATE;
use crate::error::{config_err, Result};
use crate::rng::{self, uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 2000,
            val: 200,
            test: 200,
        }
    }
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Number of distinct identities available to each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSizes {
    pub speakers: SplitSizes,
    pub brirs: SplitSizes,
    pub noises: SplitSizes,
}

impl Default for PoolSizes {
    fn default() -> Self {
        Self {
            speakers: SplitSizes { train: 200, val: 40, test: 40 },
            brirs: SplitSizes { train: 100, val: 20, test: 20 },
            noises: SplitSizes { train: 50, val: 10, test: 10 },
        }
    }
}

impl PoolSizes {
    /// Identity range of one kind for one split; splits are laid out back to back.
    fn range(sizes: &SplitSizes, split: Split) -> core::ops::Range<u32> {
        let start = match split {
            Split::Train => 0,
            Split::Val => sizes.train,
            Split::Test => sizes.train + sizes.val,
        } as u32;
        start..start + sizes.get(split) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub task: Task,
    #[serde(default)]
    pub sizes: SplitSizes,
    #[serde(default)]
    pub pools: PoolSizes,
    pub seed: u64,
    #[serde(default = "default_seconds")]
    pub seconds: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
}

fn default_seconds() -> f64 {
    MIXTURE_SECONDS
}

fn default_rate() -> u32 {
    SAMPLE_RATE
}

impl CorpusSpec {
    pub fn new(task: Task, seed: u64) -> Self {
        Self {
            task,
            sizes: SplitSizes::default(),
            pools: PoolSizes::default(),
            seed,
            seconds: MIXTURE_SECONDS,
            sample_rate: SAMPLE_RATE,
        }
    }

    fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            if self.sizes.get(split) == 0 {
                continue;
            }
            if self.pools.speakers.get(split) < self.task.num_sources() {
                return Err(config_err!("{} split needs {} speakers", split.name(), self.task.num_sources()));
            }
            if self.pools.brirs.get(split) == 0 || (self.task.has_noise() && self.pools.noises.get(split) == 0) {
                return Err(config_err!("{} split has an empty identity pool", split.name()));
            }
        }
        Ok(())
    }
}

fn split_label(split: Split) -> u64 {
    match split {
        Split::Train => 1,
        Split::Val => 2,
        Split::Test => 3,
    }
}

/// Deterministic recipe list for all three splits.
pub fn build_corpus(spec: &CorpusSpec) -> Result<Vec<MixtureRecipe>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.sizes.train + spec.sizes.val + spec.sizes.test);
    for split in Split::ALL {
        let speakers = PoolSizes::range(&spec.pools.speakers, split);
        let brirs = PoolSizes::range(&spec.pools.brirs, split);
        let noises = PoolSizes::range(&spec.pools.noises, split);
        for n in 0..spec.sizes.get(split) {
            let mut r = rng::derive(spec.seed, (split_label(split) << 32) | n as u64);
            let picks = index::sample(&mut r, speakers.len(), spec.task.num_sources());
            let sources: Vec<u32> = picks.iter().map(|i| speakers.start + i as u32).collect();
            let brir_list: Vec<u32> = sources.iter().map(|_| r.gen_range(brirs.clone())).collect();
            let (noise, snr_db) = if spec.task.has_noise() {
                (Some(r.gen_range(noises.clone())), Some(uniform(&mut r, SNR_RANGE.0, SNR_RANGE.1)))
            } else {
                (None, None)
            };
            let seed = r.gen::<u64>();
            let enrollment = (spec.task == Task::Tse).then(|| EnrollmentRecipe {
                source: sources[0],
                brir: r.gen_range(brirs.clone()),
                seed: r.gen(),
            });
            out.push(MixtureRecipe {
                id: format!("{}-{}-{:06}", spec.task.name(), split.name(), n),
                task: spec.task,
                split,
                sources,
                brirs: brir_list,
                noise,
                snr_db,
                seed,
                enrollment,
                seconds: spec.seconds,
                sample_rate: spec.sample_rate,
            });
        }
    }
    check_disjoint(&out)?;
    Ok(out)
}

/// Fails if any speaker, BRIR or noise identity appears in more than one split.
pub fn check_disjoint(recipes: &[MixtureRecipe]) -> Result<()> {
    let mut seen: BTreeMap<Identity, Split> = BTreeMap::new();
    for r in recipes {
        r.validate()?;
        for id in r.identities() {
            match seen.get(&id) {
                Some(&s) if s != r.split => {
                    return Err(config_err!("{:?} appears in both {} and {} (recipe {})", id, s.name(), r.split.name(), r.id));
                }
                _ => {
                    seen.insert(id, r.split);
                }
            }
        }
    }
    Ok(())
}
