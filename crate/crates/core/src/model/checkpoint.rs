//! Weight import/export.
//!
//! Pretrained backbones are read from safetensors files that use the upstream
//! state-dict names (`image_encoder.blocks.0.attn.qkv.weight`, ...).
//! Fine-tuned decoders are written in a small native format:
//!
//! ```text
//! b"PAVESAM\0" | u32 version | u64 header length | JSON header | f32 LE tensor data
//! ```
//!
//! The header carries the backbone config and its hash, the base weights the
//! decoder was trained on, a digest of the frozen encoders, the byte range of
//! every named tensor and an optional opaque training state.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::bundle::BackboneBundle;
use super::config::BackboneConfig;
use crate::dataio::manifest::write_atomic;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Module};

pub const MAGIC: &[u8; 8] = b"PAVESAM\0";
pub const FORMAT_VERSION: u32 = 1;
/// Literal checkpoint name selecting the randomly initialized surrogate.
pub const SURROGATE: &str = "surrogate";

const DECODER_PREFIX: &str = "mask_decoder";
const ADAM_M: &str = "adam.m";
const ADAM_V: &str = "adam.v";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    pub offset: u64,
    /// Number of f32 elements.
    pub len: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: BackboneConfig,
    pub config_hash: String,
    /// `surrogate` or the path of the pretrained weights.
    pub base: String,
    pub encoder_digest: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub optimizer: Option<OptimizerHeader>,
    #[serde(default)]
    pub train_state: Option<serde_json::Value>,
}

/// A parsed native checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: BTreeMap<String, ArrayD<f32>>,
}

/// Returns true when `path` starts with the native magic bytes.
pub fn is_native_checkpoint(path: &Path) -> bool {
    use std::io::Read;
    let mut buf = [0u8; 8];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut buf))
        .map(|_| &buf == MAGIC)
        .unwrap_or(false)
}

/// Serializes the decoder weights (and optionally optimizer moments and an
/// opaque training state) of `bundle`, replacing `path` atomically.
pub fn save_checkpoint(
    path: &Path,
    bundle: &BackboneBundle,
    optimizer: Option<&Adam>,
    train_state: Option<serde_json::Value>,
) -> Result<()> {
    let mut named: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    bundle.mask_decoder.visit(DECODER_PREFIX, &mut |name, p| {
        named.push((name.to_string(), p.shape().to_vec(), p.value.iter().copied().collect()));
    });
    if let Some(adam) = optimizer {
        for (i, name) in adam.names.iter().enumerate() {
            for (tag, store) in [(ADAM_M, &adam.m), (ADAM_V, &adam.v)] {
                let t = &store[i];
                named.push((format!("{tag}.{name}"), t.shape().to_vec(), t.iter().copied().collect()));
            }
        }
    }

    let mut tensors = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, shape, values) in &named {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
            len: values.len() as u64,
        });
        offset += 4 * values.len() as u64;
    }
    let header = CheckpointHeader {
        config: bundle.config.clone(),
        config_hash: bundle.config.hash(),
        base: bundle.source.clone(),
        encoder_digest: bundle.encoder_digest(),
        tensors,
        optimizer: optimizer.map(|a| OptimizerHeader {
            config: a.config,
            step: a.step,
        }),
        train_state,
    };
    let json = serde_json::to_vec(&header)?;

    let mut bytes = Vec::with_capacity(20 + json.len() + offset as usize);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, _, values) in &named {
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a native checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let data_start = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..data_start]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.config.hash() != header.config_hash {
        return Err(bad("config hash does not match the stored config"));
    }
    let data = &bytes[data_start..];
    let mut tensors = BTreeMap::new();
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        if n as u64 != t.len {
            return Err(Error::Checkpoint(format!("tensor `{}`: shape and length disagree", t.name)));
        }
        let start = t.offset as usize;
        let end = start
            .checked_add(4 * n)
            .filter(|&e| e <= data.len())
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` runs past the end of the file", t.name)))?;
        let values: Vec<f32> = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&t.shape), values).expect("length checked");
        tensors.insert(t.name.clone(), arr);
    }
    Ok(Checkpoint { header, tensors })
}

impl Checkpoint {
    /// Rebuilds the base bundle, checks that its encoders match the ones the
    /// decoder was trained against, and installs the stored decoder weights.
    pub fn restore_bundle(&self) -> Result<BackboneBundle> {
        let h = &self.header;
        let mut bundle = if h.base == SURROGATE {
            BackboneBundle::random(h.config.clone())?
        } else {
            load_safetensors(Path::new(&h.base), h.config.clone())?
        };
        self.apply_decoder(&mut bundle)?;
        bundle.source = h.base.clone();
        Ok(bundle)
    }

    /// Installs the stored decoder weights into `bundle` after checking that
    /// its config and frozen encoders are the ones they were trained with.
    pub fn apply_decoder(&self, bundle: &mut BackboneBundle) -> Result<()> {
        let h = &self.header;
        if bundle.config.hash() != h.config_hash {
            return Err(Error::Checkpoint("checkpoint was trained with a different backbone config".into()));
        }
        if bundle.encoder_digest() != h.encoder_digest {
            return Err(Error::Checkpoint(format!(
                "encoder weights of base `{}` differ from the ones this decoder was trained with",
                h.base
            )));
        }
        let mut lookup = |name: &str| self.tensors.get(name).cloned();
        assign_params(&mut bundle.mask_decoder, DECODER_PREFIX, &mut lookup)
    }

    /// Optimizer state over the decoder, when one was stored.
    pub fn restore_optimizer(&self, bundle: &BackboneBundle) -> Result<Option<Adam>> {
        let Some(opt) = self.header.optimizer else {
            return Ok(None);
        };
        let mut adam = Adam::new(opt.config, &bundle.mask_decoder);
        adam.step = opt.step;
        for (i, name) in adam.names.iter().enumerate() {
            for (tag, store) in [(ADAM_M, &mut adam.m), (ADAM_V, &mut adam.v)] {
                let key = format!("{tag}.{name}");
                let t = self
                    .tensors
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor `{key}`")))?;
                if t.shape() != store[i].shape() {
                    return Err(Error::ParamShape {
                        name: key,
                        expected: store[i].shape().to_vec(),
                        found: t.shape().to_vec(),
                    });
                }
                store[i].assign(t);
            }
        }
        Ok(Some(adam))
    }
}

/// Overwrites every tensor of `module` (parameters and buffers, in visit
/// order) with the one `lookup` returns for its name.
fn assign_params(
    module: &mut dyn Module,
    prefix: &str,
    lookup: &mut dyn FnMut(&str) -> Option<ArrayD<f32>>,
) -> Result<()> {
    let mut err: Option<Error> = None;
    module.visit_mut(prefix, &mut |name, p| {
        if err.is_some() {
            return;
        }
        match lookup(name) {
            None => err = Some(Error::Checkpoint(format!("missing parameter `{name}`"))),
            Some(t) if t.shape() != p.shape() => {
                err = Some(Error::ParamShape {
                    name: name.to_string(),
                    expected: p.shape().to_vec(),
                    found: t.shape().to_vec(),
                })
            }
            Some(t) => p.value = t,
        }
    });
    err.map_or(Ok(()), Err)
}

/// Loads a full backbone from safetensors bytes into a bundle built from
/// `config`.
pub fn import_safetensors(bytes: &[u8], config: BackboneConfig) -> Result<BackboneBundle> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(format!("safetensors: {e}")))?;
    let mut bundle = BackboneBundle::random(config)?;
    let mut convert_err: Option<Error> = None;
    let mut used = 0usize;
    let mut lookup = |name: &str| -> Option<ArrayD<f32>> {
        let view = st.tensor(name).ok()?;
        used += 1;
        if view.dtype() != Dtype::F32 {
            convert_err.get_or_insert(Error::Checkpoint(format!(
                "tensor `{name}` has dtype {:?}; only F32 is supported",
                view.dtype()
            )));
            return Some(ArrayD::zeros(IxDyn(view.shape())));
        }
        let values: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Some(ArrayD::from_shape_vec(IxDyn(view.shape()), values).expect("safetensors validated the length"))
    };
    assign_params(&mut bundle, "", &mut lookup)?;
    if let Some(e) = convert_err {
        return Err(e);
    }
    let extra = st.len().saturating_sub(used);
    if extra > 0 {
        log::warn!("{extra} tensors in the checkpoint are not used by this config");
    }
    bundle.refresh();
    Ok(bundle)
}

pub fn load_safetensors(path: &Path, config: BackboneConfig) -> Result<BackboneBundle> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut bundle = import_safetensors(&bytes, config)?;
    bundle.source = path.to_string_lossy().into_owned();
    Ok(bundle)
}

/// Writes every tensor of the bundle under its upstream name.
pub fn export_safetensors(path: &Path, bundle: &BackboneBundle) -> Result<()> {
    let mut named: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    bundle.visit("", &mut |name, p| {
        let bytes = p.value.iter().flat_map(|v| v.to_le_bytes()).collect();
        named.push((name.to_string(), p.shape().to_vec(), bytes));
    });
    let views: Vec<(String, TensorView<'_>)> = named
        .iter()
        .map(|(n, s, b)| (n.clone(), TensorView::new(Dtype::F32, s.clone(), b).expect("consistent tensor")))
        .collect();
    let bytes = safetensors::serialize(views, &None).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Opens `checkpoint`, which is the literal `surrogate`, a pretrained
/// safetensors file, or a native fine-tuned checkpoint, and checks that it
/// was built for `config`.
pub fn load_backbone(checkpoint: &str, config: BackboneConfig) -> Result<BackboneBundle> {
    if checkpoint == SURROGATE {
        return BackboneBundle::random(config);
    }
    let path = Path::new(checkpoint);
    if is_native_checkpoint(path) {
        let ckpt = read_checkpoint(path)?;
        if ckpt.header.config_hash != config.hash() {
            return Err(Error::Checkpoint(format!(
                "`{checkpoint}` was trained with a different backbone config"
            )));
        }
        return ckpt.restore_bundle();
    }
    load_safetensors(path, config)
}

/// Like [`load_backbone`] but picks the config itself: the surrogate config,
/// the one stored in a native checkpoint, or ViT-B for pretrained weights.
pub fn open_backbone(checkpoint: &str) -> Result<BackboneBundle> {
    if checkpoint == SURROGATE {
        return BackboneBundle::random(BackboneConfig::surrogate());
    }
    let path = Path::new(checkpoint);
    if is_native_checkpoint(path) {
        return read_checkpoint(path)?.restore_bundle();
    }
    load_safetensors(path, BackboneConfig::vit_b())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    fn tiny() -> BackboneConfig {
        let mut c = BackboneConfig::surrogate();
        c.init_seed = 3;
        c
    }

    #[test]
    fn native_round_trip_restores_decoder_and_optimizer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        let mut bundle = BackboneBundle::random(tiny()).unwrap();
        bundle.mask_decoder.visit_mut("", &mut |_, p: &mut Param| p.value.mapv_inplace(|v| v * 0.5 + 0.125));
        let mut adam = Adam::new(AdamConfig::default(), &bundle.mask_decoder);
        adam.step = 7;
        adam.m[0].fill(0.25);
        save_checkpoint(&path, &bundle, Some(&adam), Some(serde_json::json!({"epoch": 3}))).unwrap();

        let ckpt = read_checkpoint(&path).unwrap();
        assert_eq!(ckpt.header.train_state, Some(serde_json::json!({"epoch": 3})));
        let restored = ckpt.restore_bundle().unwrap();
        assert_eq!(
            restored.component_digest(super::super::bundle::Component::MaskDecoder),
            bundle.component_digest(super::super::bundle::Component::MaskDecoder)
        );
        let back = ckpt.restore_optimizer(&restored).unwrap().unwrap();
        assert_eq!(back.step, 7);
        assert_eq!(back.m[0], adam.m[0]);
    }

    #[test]
    fn corrupted_native_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        let bundle = BackboneBundle::random(tiny()).unwrap();
        save_checkpoint(&path, &bundle, None, None).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 10);
        assert!(matches!(parse_checkpoint(&bytes), Err(Error::Checkpoint(_))));
        assert!(parse_checkpoint(b"garbage").is_err());
    }

    #[test]
    fn safetensors_round_trip_and_shape_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        let bundle = BackboneBundle::random(tiny()).unwrap();
        export_safetensors(&path, &bundle).unwrap();

        let mut other = tiny();
        other.init_seed = 99;
        let loaded = load_backbone(path.to_str().unwrap(), other.clone()).unwrap();
        assert_eq!(loaded.encoder_digest(), bundle.encoder_digest());

        other.decoder.mlp_dim = 48;
        match load_backbone(path.to_str().unwrap(), other) {
            Err(Error::ParamShape { name, .. }) => assert_eq!(name, "mask_decoder.transformer.layers.0.mlp.lin1.weight"),
            r => panic!("expected shape error, got {r:?}"),
        }
    }

    #[test]
    fn unreadable_checkpoint_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load_backbone(path.to_str().unwrap(), tiny()).is_err());
        assert!(load_backbone("/nonexistent/file", tiny()).is_err());
    }
}
