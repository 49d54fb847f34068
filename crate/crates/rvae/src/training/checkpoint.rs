//! Checkpoint directory format: `manifest.json` + `weights.bin`.
//!
//! The manifest lists every tensor (name, shape, byte offset, element
//! count) in a fixed order — decoder first, then encoder — and the blob is
//! the concatenation of little-endian f64 values in that order. Round trips
//! are byte-exact.

use crate::encoder::EncoderParams;
use crate::prior::DecoderParams;
use crate::{Error, Result, Variant};
use std::path::Path;

const VERSION: &str = "rvae-checkpoint-v1";
const GATE_ORDER: &str = "ifco";

/// Training metadata carried alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub variant: Variant,
    pub latent_dim: usize,
    pub bins: usize,
    pub hidden: usize,
    pub epoch: usize,
    pub val_vfe: f64,
    pub seed: u64,
}

/// A trained decoder/encoder pair plus metadata.
#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub decoder: DecoderParams,
    pub encoder: EncoderParams,
    pub meta: CheckpointMeta,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into weights.bin.
    offset: u64,
    /// Element count.
    len: usize,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    version: String,
    variant: Variant,
    latent_dim: usize,
    bins: usize,
    hidden: usize,
    gate_order: String,
    epoch: usize,
    /// Stored as a string to keep non-finite values representable and the
    /// JSON byte-exact.
    val_vfe: String,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let dec = ckpt.decoder.named_tensors();
    let enc = ckpt.encoder.named_tensors();

    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for (name, t) in dec.iter().chain(enc.iter()) {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
            len: t.numel(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: VERSION.to_string(),
        variant: ckpt.meta.variant,
        latent_dim: ckpt.meta.latent_dim,
        bins: ckpt.meta.bins,
        hidden: ckpt.meta.hidden,
        gate_order: GATE_ORDER.to_string(),
        epoch: ckpt.meta.epoch,
        val_vfe: format_f64(ckpt.meta.val_vfe),
        seed: ckpt.meta.seed,
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    std::fs::write(dir.join("weights.bin"), blob)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelCheckpoint> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Io(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
    if manifest.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version `{}` (expected `{VERSION}`)",
            manifest.version
        )));
    }
    if manifest.gate_order != GATE_ORDER {
        return Err(Error::Format(format!(
            "unsupported LSTM gate order `{}` (expected `{GATE_ORDER}`)",
            manifest.gate_order
        )));
    }
    let blob = std::fs::read(dir.join("weights.bin"))?;

    let mut decoder = DecoderParams::zeros(
        manifest.variant,
        manifest.latent_dim,
        manifest.bins,
        manifest.hidden,
    );
    let mut encoder = EncoderParams::zeros(
        manifest.variant,
        manifest.latent_dim,
        manifest.bins,
        manifest.hidden,
    );

    // expected enumeration order must match the manifest exactly
    let mut expected: Vec<(String, &mut crate::autodiff::Tensor)> = Vec::new();
    expected.extend(decoder.named_tensors_mut());
    expected.extend(encoder.named_tensors_mut());
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Format(format!(
            "manifest lists {} tensors, model has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }

    let mut cursor: u64 = 0;
    for (entry, (name, tensor)) in manifest.tensors.iter().zip(expected.iter_mut()) {
        if entry.name != *name {
            return Err(Error::Format(format!(
                "tensor order mismatch: manifest `{}` vs expected `{name}`",
                entry.name
            )));
        }
        if entry.shape != tensor.shape() {
            return Err(Error::Format(format!(
                "tensor `{}` shape {:?} does not match expected {:?}",
                entry.name,
                entry.shape,
                tensor.shape()
            )));
        }
        if entry.offset != cursor {
            return Err(Error::Format(format!(
                "tensor `{}` offset {} is not contiguous (expected {cursor})",
                entry.name, entry.offset
            )));
        }
        if entry.len != tensor.numel() {
            return Err(Error::Format(format!(
                "tensor `{}` length {} does not match shape",
                entry.name, entry.len
            )));
        }
        let start = entry.offset as usize;
        let end = start + entry.len * 8;
        if end > blob.len() {
            return Err(Error::Format(format!(
                "weights.bin truncated: tensor `{}` needs bytes up to {end}, blob has {}",
                entry.name,
                blob.len()
            )));
        }
        for (i, chunk) in blob[start..end].chunks_exact(8).enumerate() {
            tensor.data_mut()[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        cursor = end as u64;
    }
    if cursor as usize != blob.len() {
        return Err(Error::Format(format!(
            "weights.bin has {} trailing bytes beyond the manifest",
            blob.len() - cursor as usize
        )));
    }

    let val_vfe = parse_f64(&manifest.val_vfe)?;
    Ok(ModelCheckpoint {
        decoder,
        encoder,
        meta: CheckpointMeta {
            variant: manifest.variant,
            latent_dim: manifest.latent_dim,
            bins: manifest.bins,
            hidden: manifest.hidden,
            epoch: manifest.epoch,
            val_vfe,
            seed: manifest.seed,
        },
    })
}

fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        // round-trip exact
        format!("{v:?}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    match s {
        "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => other
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("val_vfe `{other}`: {e}"))),
    }
}
