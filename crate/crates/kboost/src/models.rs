//! Building models from a configuration and moving them in and out of checkpoints.

use kboost_core::train::{Baseline, Boosted};
use kboost_core::Real;

use crate::checkpoint::Checkpoint;
use crate::config::{Role, SessionConfig};
use crate::error::{Error, Result};

pub fn baseline<T: Real>(cfg: &SessionConfig, role: Role) -> Result<Baseline<T>> {
    if role == Role::Boosted {
        return Err(kboost_core::Error::Config("a baseline model must be small, medium or large".into()).into());
    }
    Ok(Baseline::new(cfg.grid(role), cfg.bins(), cfg.seed)?)
}

pub fn boosted<T: Real>(cfg: &SessionConfig) -> Result<Boosted<T>> {
    Ok(Boosted::new(cfg.kb_config()?, cfg.bins(), cfg.seed)?)
}

pub fn baseline_checkpoint<T: Real>(cfg: &SessionConfig, role: Role, model: &Baseline<T>) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(role, cfg.model_hash(role)?, cfg.seed);
    ck.add_store("model", &model.params);
    Ok(ck)
}

pub fn boosted_checkpoint<T: Real>(cfg: &SessionConfig, model: &Boosted<T>) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(Role::Boosted, cfg.model_hash(Role::Boosted)?, cfg.seed);
    ck.add_store("large", &model.params.large);
    ck.add_store("small", &model.params.small);
    ck.add_store("boost", &model.params.boost);
    Ok(ck)
}

fn expect_role(ck: &Checkpoint, role: Role) -> Result<()> {
    if ck.role != role {
        return Err(kboost_core::Error::Config(format!("checkpoint holds a {} model, expected {}", ck.role, role)).into());
    }
    Ok(())
}

/// Restores a baseline; returns the model and whether its hash differed.
pub fn load_baseline<T: Real>(cfg: &SessionConfig, ck: &Checkpoint, allow_mismatch: bool) -> Result<(Baseline<T>, bool)> {
    let mismatch = ck.verify(&cfg.model_hash(ck.role)?, allow_mismatch)?;
    let mut m = baseline(cfg, ck.role)?;
    ck.restore("model", &mut m.params).map_err(|e| restore_err(e, mismatch))?;
    Ok((m, mismatch))
}

pub fn load_boosted<T: Real>(cfg: &SessionConfig, ck: &Checkpoint, allow_mismatch: bool) -> Result<(Boosted<T>, bool)> {
    expect_role(ck, Role::Boosted)?;
    let mismatch = ck.verify(&cfg.model_hash(Role::Boosted)?, allow_mismatch)?;
    let mut m = boosted(cfg)?;
    for (group, store) in [("large", &mut m.params.large), ("small", &mut m.params.small), ("boost", &mut m.params.boost)] {
        ck.restore(group, store).map_err(|e| restore_err(e, mismatch))?;
    }
    Ok((m, mismatch))
}

/// Initializes the large half of a boosted pair from a pretrained large baseline.
pub fn init_large<T: Real>(cfg: &SessionConfig, model: &mut Boosted<T>, ck: &Checkpoint, allow_mismatch: bool) -> Result<()> {
    expect_role(ck, Role::Large)?;
    ck.verify(&cfg.model_hash(Role::Large)?, allow_mismatch)?;
    let (large, _) = load_baseline::<T>(cfg, ck, true)?;
    Ok(model.load_large(&large.params)?)
}

// with an overridden hash the layout may differ too; say so instead of a bare shape error
fn restore_err(e: Error, mismatch: bool) -> Error {
    match e {
        Error::Core(kboost_core::Error::Shape(s)) if mismatch => {
            kboost_core::Error::Config(format!("checkpoint does not fit this configuration: {s}")).into()
        }
        other => other,
    }
}
