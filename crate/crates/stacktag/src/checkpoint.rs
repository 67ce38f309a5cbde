//! JSON checkpoints: model family tag, config, tag inventory, parameters in
//! registry order, and optional optimizer state. Values round-trip bitwise
//! through the shortest-representation float formatting.

use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::corpus::TagSet;
use crate::error::{Error, Result};
use crate::layers::ParamRegistry;
use crate::models::{BaseConfig, BaseTagger, CondConfig, CondRefiner, CondVariant, DaeConfig, DaeRefiner, Refiner};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// "base", "dae", "cond-bilstm", or "cond-dense".
    pub family: String,
    pub config: serde_json::Value,
    pub tagset: Vec<String>,
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub adam: Option<Vec<AdamState>>,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} (this build reads version {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

fn capture(registry: &ParamRegistry) -> Vec<ParamEntry> {
    registry
        .iter()
        .map(|(name, p)| {
            let t = p.borrow();
            ParamEntry { name: name.to_string(), shape: t.shape.clone(), values: t.data.clone() }
        })
        .collect()
}

/// Copy checkpoint values into a freshly built registry, verifying name and
/// shape agreement entry by entry.
fn restore_into(registry: &ParamRegistry, entries: &[ParamEntry]) -> Result<()> {
    if registry.len() != entries.len() {
        return Err(Error::Checkpoint(format!(
            "{} parameters in file, model has {}",
            entries.len(),
            registry.len()
        )));
    }
    for ((name, p), e) in registry.iter().zip(entries) {
        if name != e.name {
            return Err(Error::Checkpoint(format!(
                "parameter order mismatch: expected {name}, found {}",
                e.name
            )));
        }
        let mut t = p.borrow_mut();
        if t.shape != e.shape {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?} in file, model has {:?}",
                e.shape, t.shape
            )));
        }
        if e.values.len() != t.data.len() {
            return Err(Error::Checkpoint(format!(
                "{name}: {} values for shape {:?}",
                e.values.len(),
                e.shape
            )));
        }
        t.data.copy_from_slice(&e.values);
    }
    Ok(())
}

fn check_tagset(ckpt: &Checkpoint, tagset: &TagSet) -> Result<()> {
    if ckpt.tagset != tagset.labels() {
        return Err(Error::Checkpoint(format!(
            "tag inventory mismatch: file has {:?}",
            ckpt.tagset
        )));
    }
    Ok(())
}

pub fn base_to_checkpoint(
    base: &BaseTagger,
    tagset: &TagSet,
    adam: Option<Vec<AdamState>>,
) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        family: "base".into(),
        config: serde_json::to_value(base.config).expect("config serializes"),
        tagset: tagset.labels().to_vec(),
        params: capture(&base.registry()),
        adam,
    }
}

pub fn base_from_checkpoint(
    ckpt: &Checkpoint,
    tagset: &TagSet,
) -> Result<(BaseTagger, Option<Vec<AdamState>>)> {
    if ckpt.family != "base" {
        return Err(Error::Checkpoint(format!("family {:?}, expected \"base\"", ckpt.family)));
    }
    check_tagset(ckpt, tagset)?;
    let config: BaseConfig = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let base = BaseTagger::new(config, &mut rng)?;
    restore_into(&base.registry(), &ckpt.params)?;
    Ok((base, ckpt.adam.clone()))
}

pub fn refiner_family(refiner: &Refiner) -> &'static str {
    match refiner {
        Refiner::Dae(_) => "dae",
        Refiner::Cond(r) => match r.config.variant {
            CondVariant::Bilstm => "cond-bilstm",
            CondVariant::Dense => "cond-dense",
        },
    }
}

pub fn refiner_to_checkpoint(
    refiner: &Refiner,
    tagset: &TagSet,
    adam: Option<Vec<AdamState>>,
) -> Checkpoint {
    let config = match refiner {
        Refiner::Dae(r) => serde_json::to_value(r.config).expect("config serializes"),
        Refiner::Cond(r) => serde_json::to_value(r.config.clone()).expect("config serializes"),
    };
    Checkpoint {
        version: CHECKPOINT_VERSION,
        family: refiner_family(refiner).into(),
        config,
        tagset: tagset.labels().to_vec(),
        params: capture(&refiner.registry()),
        adam,
    }
}

pub fn refiner_from_checkpoint(
    ckpt: &Checkpoint,
    tagset: &TagSet,
) -> Result<(Refiner, Option<Vec<AdamState>>)> {
    check_tagset(ckpt, tagset)?;
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let refiner = match ckpt.family.as_str() {
        "dae" => {
            let config: DaeConfig = serde_json::from_value(ckpt.config.clone())
                .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
            Refiner::Dae(DaeRefiner::new(config, &mut rng)?)
        }
        "cond-bilstm" | "cond-dense" => {
            let config: CondConfig = serde_json::from_value(ckpt.config.clone())
                .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
            let declared = match config.variant {
                CondVariant::Bilstm => "cond-bilstm",
                CondVariant::Dense => "cond-dense",
            };
            if declared != ckpt.family {
                return Err(Error::Checkpoint(format!(
                    "family {:?} does not match config variant {declared:?}",
                    ckpt.family
                )));
            }
            Refiner::Cond(CondRefiner::new(config, &mut rng)?)
        }
        other => {
            return Err(Error::Checkpoint(format!("unknown refiner family {other:?}")));
        }
    };
    restore_into(&refiner.registry(), &ckpt.params)?;
    Ok((refiner, ckpt.adam.clone()))
}
