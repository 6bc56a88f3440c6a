//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic "SSLCKPT1"
//! offset 8   u64       header length H in bytes
//! offset 16  H bytes   UTF-8 JSON header (see `Header`)
//! then       f32 LE    parameter blocks, concatenated in header `tensors` order
//! ```
//!
//! The header carries the architecture fingerprint, the stage lineage,
//! epoch, seed and RNG position. Parameters are stored exactly as held in
//! memory (`f32`), so a round trip is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Model, ModelConfig, ParamKind, ParamSet};
use crate::error::{Error, Result};
use crate::numerics::RngState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSLCKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageTag {
    PretextObject,
    PretextScene,
    Downstream,
}

impl StageTag {
    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::PretextObject => "pretext-object",
            StageTag::PretextScene => "pretext-scene",
            StageTag::Downstream => "downstream",
        }
    }

    pub fn parse(s: &str) -> Option<StageTag> {
        match s {
            "pretext-object" => Some(StageTag::PretextObject),
            "pretext-scene" => Some(StageTag::PretextScene),
            "downstream" => Some(StageTag::Downstream),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Stage that produced this checkpoint; `None` for a fresh initialization.
    pub stage: Option<StageTag>,
    /// Every stage applied so far, oldest first.
    pub lineage: Vec<StageTag>,
    pub epoch: usize,
    pub seed: u64,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn fingerprint(&self) -> String {
        self.model.config.fingerprint()
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    fingerprint: String,
    config: ModelConfig,
    classes: Vec<String>,
    stage: Option<StageTag>,
    lineage: Vec<StageTag>,
    epoch: usize,
    seed: u64,
    rng: RngState,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        fingerprint: ckpt.fingerprint(),
        config: ckpt.model.config.clone(),
        classes: ckpt.model.classes.clone(),
        stage: ckpt.stage,
        lineage: ckpt.lineage.clone(),
        epoch: ckpt.epoch,
        seed: ckpt.seed,
        rng: ckpt.rng.clone(),
        tensors: ckpt
            .model
            .params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                kind: p.kind,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * ckpt.model.params.trainable_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in ckpt.model.params.iter() {
        for v in &p.value {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    // Write-then-rename so a crash never leaves a truncated checkpoint behind.
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Leaf-by-leaf differences between two configs, one line per leaf.
fn config_diff(expected: &ModelConfig, found: &ModelConfig) -> Vec<String> {
    fn walk(path: String, a: &Value, b: &Value, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(ma), Value::Object(mb)) => {
                let mut keys: Vec<&String> = ma.keys().chain(mb.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                    walk(p, ma.get(k).unwrap_or(&Value::Null), mb.get(k).unwrap_or(&Value::Null), out);
                }
            }
            _ if a != b => out.push(format!("{path}: expected {a}, found {b}")),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(
        String::new(),
        &serde_json::to_value(expected).expect("serializes"),
        &serde_json::to_value(found).expect("serializes"),
        &mut out,
    );
    out
}

/// Reads a checkpoint. When `expected` is given, the stored architecture
/// must match it exactly; otherwise the load is refused with a field diff.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |msg: &str| Error::Fingerprint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| corrupt(&format!("unreadable header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Fingerprint(format!(
            "format_version: expected {FORMAT_VERSION}, found {}",
            header.format_version
        )));
    }
    if header.config.fingerprint() != header.fingerprint {
        return Err(corrupt("stored fingerprint does not match stored config"));
    }
    if let Some(exp) = expected {
        if exp.fingerprint() != header.fingerprint {
            let diff = config_diff(exp, &header.config);
            return Err(Error::Fingerprint(format!(
                "fingerprint: expected {}, found {}\n{}",
                exp.fingerprint(),
                header.fingerprint,
                diff.join("\n")
            )));
        }
    }

    let mut params = ParamSet::new();
    let mut pos = 16 + hlen;
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        let raw = bytes
            .get(pos..pos + 4 * n)
            .ok_or_else(|| corrupt(&format!("truncated tensor `{}`", t.name)))?;
        let value = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.push(t.name.clone(), &t.shape, t.kind, value);
        pos += 4 * n;
    }
    if pos != bytes.len() {
        return Err(corrupt("trailing bytes after the last tensor"));
    }
    Ok(Checkpoint {
        model: Model {
            config: header.config,
            params,
            classes: header.classes,
        },
        stage: header.stage,
        lineage: header.lineage,
        epoch: header.epoch,
        seed: header.seed,
        rng: header.rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderConfig, NormKind, ProjectionConfig};
    use crate::numerics::{Rng, Tensor};

    fn config(embedding_dim: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                input_size: (16, 16, 3),
                stage_widths: vec![8, 16],
                blocks_per_stage: vec![1, 1],
                embedding_dim,
                norm: NormKind::Group { groups: 4 },
                stem_stride: 2,
            },
            projection: ProjectionConfig {
                hidden_dim: 16,
                output_dim: 8,
                use_batch_norm: false,
            },
        }
    }

    fn checkpoint() -> Checkpoint {
        let mut rng = Rng::new(11);
        let mut model = Model::new(config(8), &mut rng).unwrap();
        model
            .init_classifier(&["a".to_string(), "b".to_string()], &mut rng)
            .unwrap();
        Checkpoint {
            model,
            stage: Some(StageTag::PretextScene),
            lineage: vec![StageTag::PretextObject, StageTag::PretextScene],
            epoch: 4,
            seed: 11,
            rng: rng.state(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = checkpoint();
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path, Some(&ck.model.config)).unwrap();
        assert_eq!(back, ck);

        let mut rng = Rng::new(2);
        let x = Tensor::new(&[2, 3, 16, 16], (0..1536).map(|_| rng.normal()).collect()).unwrap();
        let a = ck.model.forward_logits(&ck.model.params.bind(false), &x, false).unwrap();
        let b = back.model.forward_logits(&back.model.params.bind(false), &x, false).unwrap();
        assert_eq!(a.output.data(), b.output.data());

        // Saving the reloaded checkpoint reproduces the same bytes.
        let path2 = dir.path().join("m2.ckpt");
        save_checkpoint(&back, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn wrong_embedding_dim_is_refused_with_diff() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&checkpoint(), &path).unwrap();
        match load_checkpoint(&path, Some(&config(16))) {
            Err(Error::Fingerprint(msg)) => {
                assert!(msg.contains("encoder.embedding_dim: expected 16, found 8"), "{msg}")
            }
            other => panic!("expected fingerprint error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_files_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&checkpoint(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(Error::Fingerprint(_))));
        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(Error::Fingerprint(_))));
    }
}
