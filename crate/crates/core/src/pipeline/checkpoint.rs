//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "LGLAB\0\0" followed by the version byte 1
//! len      u64 LE   byte length of the manifest
//! manifest UTF-8    newline-separated records (see below)
//! payload           f32 LE values of every entry, back to back
//! ```
//!
//! Manifest records:
//!
//! ```text
//! architecture image=32;channels=16,32,64;latent=32;feature_layer=3
//! training batch_size=32;epochs=30;…
//! rng seed=0;epoch=30;step=1200
//! entry <name> <dim>x<dim>… <byte offset> <element count>
//! ```
//!
//! Offsets are relative to the start of the payload.

use std::fs;
use std::path::Path;

use crate::diffcore::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::vaegan::{Architecture, ModelTriple, TrainingConfig};

pub const MAGIC: [u8; 7] = *b"LGLAB\0\0";
pub const VERSION: u8 = 1;

/// A loaded checkpoint: model plus the training state it was saved at.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelTriple<f32>,
    pub training: TrainingConfig,
    pub epoch: usize,
    pub step: usize,
}

/// One named array in the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub count: u64,
}

fn training_snapshot(t: &TrainingConfig) -> String {
    format!(
        "batch_size={};epochs={};lr_encoder={};lr_decoder={};lr_discriminator={};gamma={};beta={};optimizer={};adam_beta1={};adam_beta2={};seed={}",
        t.batch_size,
        t.epochs,
        t.lr_encoder,
        t.lr_decoder,
        t.lr_discriminator,
        t.gamma,
        t.beta,
        t.optimizer.as_str(),
        t.adam_beta1,
        t.adam_beta2,
        t.seed
    )
}

fn mismatch(msg: impl Into<String>) -> Error {
    Error::ManifestMismatch(msg.into())
}

fn parse_training(s: &str, arch: Architecture) -> Result<TrainingConfig> {
    let mut t = TrainingConfig { architecture: arch, ..TrainingConfig::default() };
    for part in s.split(';') {
        let (k, v) = part.split_once('=').ok_or_else(|| mismatch(format!("bad training field `{part}`")))?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| mismatch(format!("bad value for `{k}`")));
        let int = |v: &str| v.parse::<u64>().map_err(|_| mismatch(format!("bad value for `{k}`")));
        match k {
            "batch_size" => t.batch_size = int(v)? as usize,
            "epochs" => t.epochs = int(v)? as usize,
            "lr_encoder" => t.lr_encoder = num(v)?,
            "lr_decoder" => t.lr_decoder = num(v)?,
            "lr_discriminator" => t.lr_discriminator = num(v)?,
            "gamma" => t.gamma = num(v)?,
            "beta" => t.beta = num(v)?,
            "optimizer" => t.optimizer = v.parse().map_err(|_| mismatch(format!("bad optimizer `{v}`")))?,
            "adam_beta1" => t.adam_beta1 = num(v)?,
            "adam_beta2" => t.adam_beta2 = num(v)?,
            "seed" => t.seed = int(v)?,
            _ => return Err(mismatch(format!("unknown training field `{k}`"))),
        }
    }
    Ok(t)
}

/// Serialize a model and its training state.
pub fn encode_checkpoint(model: &ModelTriple<f32>, training: &TrainingConfig, epoch: usize, step: usize) -> Vec<u8> {
    let mut manifest = format!(
        "architecture {}\ntraining {}\nrng seed={};epoch={epoch};step={step}\n",
        model.arch.descriptor(),
        training_snapshot(training),
        training.seed
    );
    let mut offset = 0u64;
    for (name, t) in model.params.iter() {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("entry {name} {} {offset} {}\n", shape.join("x"), t.len()));
        offset += 4 * t.len() as u64;
    }
    let mut out = Vec::with_capacity(16 + manifest.len() + offset as usize);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for (_, t) in model.params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(
    path: &Path,
    model: &ModelTriple<f32>,
    training: &TrainingConfig,
    epoch: usize,
    step: usize,
) -> Result<()> {
    fs::write(path, encode_checkpoint(model, training, epoch, step))?;
    Ok(())
}

/// Parse a checkpoint. Bad magic, unknown versions, short files and
/// inconsistent manifests each raise their own error.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || bytes[..7] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes[7] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[7]));
    }
    let actual = bytes.len() as u64;
    let len_bytes: [u8; 8] =
        bytes.get(8..16).and_then(|b| b.try_into().ok()).ok_or(Error::Truncated { expected: 16, actual })?;
    let manifest_len = u64::from_le_bytes(len_bytes);
    let payload_start = 16u64.checked_add(manifest_len).ok_or_else(|| mismatch("manifest length overflows"))?;
    if actual < payload_start {
        return Err(Error::Truncated { expected: payload_start, actual });
    }
    let manifest = std::str::from_utf8(&bytes[16..payload_start as usize]).map_err(|_| mismatch("manifest is not UTF-8"))?;

    let mut arch = None;
    let mut training = None;
    let mut rng = None;
    let mut entries = Vec::new();
    for line in manifest.lines().filter(|l| !l.is_empty()) {
        let (tag, rest) = line.split_once(' ').ok_or_else(|| mismatch(format!("bad manifest line `{line}`")))?;
        match tag {
            "architecture" => arch = Some(Architecture::parse_descriptor(rest).map_err(|e| mismatch(e.to_string()))?),
            "training" => training = Some(rest.to_string()),
            "rng" => rng = Some(rest.to_string()),
            "entry" => entries.push(parse_entry(rest)?),
            _ => return Err(mismatch(format!("unknown manifest record `{tag}`"))),
        }
    }
    let arch = arch.ok_or_else(|| mismatch("manifest has no architecture"))?;
    let training = parse_training(&training.ok_or_else(|| mismatch("manifest has no training record"))?, arch.clone())?;
    let (epoch, step) = parse_rng(&rng.ok_or_else(|| mismatch("manifest has no rng record"))?)?;

    let mut next = 0u64;
    for e in &entries {
        if e.offset != next {
            return Err(mismatch(format!("entry `{}` at offset {} overlaps or leaves a gap (expected {next})", e.name, e.offset)));
        }
        next = e.offset + 4 * e.count;
    }
    let expected = payload_start + next;
    if actual < expected {
        return Err(Error::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(mismatch(format!("{} trailing bytes after payload", actual - expected)));
    }

    let mut params = ParamStore::new();
    for e in entries {
        let start = (payload_start + e.offset) as usize;
        let data: Vec<f32> = bytes[start..start + 4 * e.count as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|_| mismatch(format!("entry `{}` count disagrees with shape", e.name)))?;
        params.insert(e.name.clone(), t).map_err(|_| mismatch(format!("duplicate entry `{}`", e.name)))?;
    }
    let model = ModelTriple::from_params(arch, params)?;
    Ok(Checkpoint { model, training, epoch, step })
}

fn parse_entry(rest: &str) -> Result<ManifestEntry> {
    let f: Vec<&str> = rest.split(' ').collect();
    let bad = || mismatch(format!("bad entry record `{rest}`"));
    if f.len() != 4 {
        return Err(bad());
    }
    let shape = f[1].split('x').map(|d| d.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad())?;
    let offset = f[2].parse().map_err(|_| bad())?;
    let count = f[3].parse().map_err(|_| bad())?;
    Ok(ManifestEntry { name: f[0].to_string(), shape, offset, count })
}

fn parse_rng(s: &str) -> Result<(usize, usize)> {
    let (mut epoch, mut step) = (None, None);
    for part in s.split(';') {
        match part.split_once('=') {
            Some(("epoch", v)) => epoch = v.parse().ok(),
            Some(("step", v)) => step = v.parse().ok(),
            Some(("seed", _)) => {}
            _ => return Err(mismatch(format!("bad rng field `{part}`"))),
        }
    }
    Ok((epoch.ok_or_else(|| mismatch("rng record lacks epoch"))?, step.ok_or_else(|| mismatch("rng record lacks step"))?))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

/// Load a checkpoint that must match `arch`.
pub fn load_checkpoint_for(path: &Path, arch: &Architecture) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if &ck.model.arch != arch {
        return Err(mismatch(format!(
            "checkpoint architecture `{}` differs from expected `{}`",
            ck.model.arch.descriptor(),
            arch.descriptor()
        )));
    }
    Ok(ck)
}
