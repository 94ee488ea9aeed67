//! Checkpoint serialization, cross-lingual weight transfer, and module
//! splitting of a jointly trained model.
//!
//! Checkpoint file layout (all integers little-endian):
//!   bytes 0..8   magic "SLUCKPT1"
//!   bytes 8..12  u32 manifest length N
//!   bytes 12..12+N  UTF-8 JSON manifest: metadata + tensor table
//!                   (name, dtype, shape [rows, cols], byte offset)
//!   remainder    tensor payload, f64 little-endian, row-major, at the
//!                offsets given in the manifest
//!
//! Tensors are stored as f64 so that load(save(m)) is bit-exact.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::Vocabs;
use crate::model::Model;
use crate::numerics::{Mat, ParamStore};
use crate::{Result, SluError};

const MAGIC: &[u8; 8] = b"SLUCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub config_hash: u64,
    pub word_fingerprint: u64,
    pub char_fingerprint: u64,
    pub tag_fingerprint: u64,
    pub intent_fingerprint: u64,
    pub seed: u64,
    pub dataset_id: String,
    pub num_gaz_types: usize,
}

impl CheckpointMeta {
    pub fn for_model(model: &Model, dataset_id: &str) -> Self {
        CheckpointMeta {
            config: model.cfg.clone(),
            config_hash: model.cfg.hash(),
            word_fingerprint: model.vocabs.word.fingerprint(),
            char_fingerprint: model.vocabs.char.fingerprint(),
            tag_fingerprint: model.vocabs.tag.fingerprint(),
            intent_fingerprint: model.vocabs.intent.fingerprint(),
            seed: model.store.seed(),
            dataset_id: dataset_id.to_string(),
            num_gaz_types: model.num_gaz_types,
        }
    }

    /// All differences from `other`, one human-readable line each.
    pub fn diff(&self, other: &CheckpointMeta) -> Vec<String> {
        let mut out = Vec::new();
        let mut field = |name: &str, a: u64, b: u64| {
            if a != b {
                out.push(format!("{name}: checkpoint {a:#018x} vs target {b:#018x}"));
            }
        };
        field("config_hash", self.config_hash, other.config_hash);
        field("word_fingerprint", self.word_fingerprint, other.word_fingerprint);
        field("char_fingerprint", self.char_fingerprint, other.char_fingerprint);
        field("tag_fingerprint", self.tag_fingerprint, other.tag_fingerprint);
        field("intent_fingerprint", self.intent_fingerprint, other.intent_fingerprint);
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: IndexMap<String, Mat>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, dataset_id: &str) -> Self {
        Checkpoint {
            meta: CheckpointMeta::for_model(model, dataset_id),
            tensors: model.store.iter().map(|(n, m)| (n.to_string(), m.clone())).collect(),
        }
    }

    /// Rebuild a model, verifying the vocabularies it will run against.
    pub fn into_model(self, vocabs: Vocabs) -> Result<Model> {
        let fresh = Model::new(
            self.meta.config.clone(),
            vocabs.clone(),
            self.meta.num_gaz_types,
            None,
            self.meta.seed,
        )?;
        let target_meta = CheckpointMeta::for_model(&fresh, &self.meta.dataset_id);
        let diffs = self.meta.diff(&target_meta);
        if !diffs.is_empty() {
            return Err(SluError::Checkpoint(format!(
                "checkpoint/model mismatch:\n  {}",
                diffs.join("\n  ")
            )));
        }
        let mut store = fresh.store;
        apply_all(&mut store, &self.tensors)?;
        Model::from_store(self.meta.config, vocabs, self.meta.num_gaz_types, store)
    }
}

fn apply_all(store: &mut ParamStore, tensors: &IndexMap<String, Mat>) -> Result<()> {
    let missing: Vec<&str> = store
        .names()
        .filter(|n| !tensors.contains_key(*n))
        .collect();
    if !missing.is_empty() {
        return Err(SluError::Checkpoint(format!(
            "checkpoint lacks tensors the model needs: {}",
            missing.join(", ")
        )));
    }
    for (name, value) in tensors {
        store.set(name, value.clone()).map_err(|_| {
            SluError::Checkpoint(format!("model has no parameter named {name}"))
        })?;
    }
    Ok(())
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut offset = 0usize;
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    for (name, m) in &ckpt.tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            dtype: "f64".into(),
            shape: [m.nrows(), m.ncols()],
            offset,
        });
        offset += m.len() * 8;
    }
    let manifest = Manifest { meta: ckpt.meta.clone(), tensors: entries };
    let manifest_json =
        serde_json::to_vec(&manifest).map_err(|e| SluError::Checkpoint(e.to_string()))?;
    let mut bytes = Vec::with_capacity(12 + manifest_json.len() + offset);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&manifest_json);
    for (_, m) in &ckpt.tensors {
        for v in m.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| SluError::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint file (bad magic)"));
    }
    let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + mlen {
        return Err(fail("truncated manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[12..12 + mlen])
        .map_err(|e| fail(&format!("bad manifest: {e}")))?;
    let payload = &bytes[12 + mlen..];
    let mut tensors = IndexMap::new();
    for entry in &manifest.tensors {
        if entry.dtype != "f64" {
            return Err(fail(&format!("tensor {}: unknown dtype {}", entry.name, entry.dtype)));
        }
        let n = entry.shape[0] * entry.shape[1];
        let end = entry.offset + n * 8;
        if end > payload.len() {
            return Err(fail(&format!("tensor {}: payload truncated", entry.name)));
        }
        let values: Vec<f64> = payload[entry.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let m = Mat::from_shape_vec((entry.shape[0], entry.shape[1]), values)
            .map_err(|e| fail(&format!("tensor {}: {e}", entry.name)))?;
        if tensors.insert(entry.name.clone(), m).is_some() {
            return Err(fail(&format!("tensor {} appears twice", entry.name)));
        }
    }
    Ok(Checkpoint { meta: manifest.meta, tensors })
}

/// The four Table-3 transfer settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferSetting {
    All,
    FullSlot,
    FullMultidim,
    FullBiLstm,
}

impl TransferSetting {
    /// Namespace prefix freshly initialized instead of transferred.
    pub fn excluded_prefix(self) -> Option<&'static str> {
        match self {
            TransferSetting::All => None,
            TransferSetting::FullSlot => Some("slot."),
            TransferSetting::FullMultidim => Some("intent.attention."),
            TransferSetting::FullBiLstm => Some("encoder."),
        }
    }

    pub const NAMES: [&'static str; 4] = ["all", "full-slot", "full-multidim", "full-bilstm"];
}

impl FromStr for TransferSetting {
    type Err = SluError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TransferSetting::All),
            "full-slot" => Ok(TransferSetting::FullSlot),
            "full-multidim" => Ok(TransferSetting::FullMultidim),
            "full-bilstm" => Ok(TransferSetting::FullBiLstm),
            other => Err(SluError::InvalidArgument(format!(
                "unknown transfer setting {other:?}; expected one of {}",
                TransferSetting::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Transferred,
    Fresh,
}

/// Per-tensor provenance after a transfer_init.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferReport {
    pub setting: TransferSetting,
    pub entries: Vec<(String, Provenance)>,
}

/// Overwrite the target model's parameters with the source checkpoint's,
/// except for the namespace excluded by `setting`, which keeps the target's
/// fresh initialization. Transferred tensors must exist with equal shapes.
pub fn transfer_init(
    source: &Checkpoint,
    target: &mut Model,
    setting: TransferSetting,
) -> Result<TransferReport> {
    let excluded = setting.excluded_prefix();
    let mut entries = Vec::new();
    let names: Vec<String> = target.store.names().map(str::to_string).collect();
    for name in &names {
        if excluded.is_some_and(|p| name.starts_with(p)) {
            entries.push((name.clone(), Provenance::Fresh));
            continue;
        }
        let src = source.tensors.get(name).ok_or_else(|| {
            SluError::Checkpoint(format!("transfer: source checkpoint has no tensor {name}"))
        })?;
        if src.dim() != target.store.get(name).dim() {
            return Err(SluError::Checkpoint(format!(
                "transfer: tensor {name} is {:?} in source but {:?} in target",
                src.dim(),
                target.store.get(name).dim()
            )));
        }
        target.store.set(name, src.clone())?;
        entries.push((name.clone(), Provenance::Transferred));
    }
    Ok(TransferReport { setting, entries })
}

/// The three separable namespace groups of a joint model.
#[derive(Debug, Clone)]
pub struct SplitModules {
    pub trunk: IndexMap<String, Mat>,
    pub intent: IndexMap<String, Mat>,
    pub slot: IndexMap<String, Mat>,
}

/// Partition a checkpoint's tensors into shared trunk (embedder + encoder),
/// intent head and slot head.
pub fn split_modules(ckpt: &Checkpoint) -> Result<SplitModules> {
    let mut split = SplitModules {
        trunk: IndexMap::new(),
        intent: IndexMap::new(),
        slot: IndexMap::new(),
    };
    for (name, m) in &ckpt.tensors {
        let group = if name.starts_with("embed.") || name.starts_with("encoder.") {
            &mut split.trunk
        } else if name.starts_with("intent.") {
            &mut split.intent
        } else if name.starts_with("slot.") {
            &mut split.slot
        } else {
            return Err(SluError::Checkpoint(format!(
                "tensor {name} is outside the embed/encoder/intent/slot namespaces"
            )));
        };
        group.insert(name.clone(), m.clone());
    }
    Ok(split)
}

/// Reassemble a checkpoint from (possibly mixed-provenance) module groups.
/// `meta` must describe the model the parts plug into.
pub fn recombine(
    meta: CheckpointMeta,
    trunk: &IndexMap<String, Mat>,
    intent: &IndexMap<String, Mat>,
    slot: &IndexMap<String, Mat>,
) -> Checkpoint {
    let mut tensors = IndexMap::new();
    for group in [trunk, intent, slot] {
        for (name, m) in group {
            tensors.insert(name.clone(), m.clone());
        }
    }
    Checkpoint { meta, tensors }
}
