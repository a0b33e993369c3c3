//! Binary checkpoints.
//!
//! Layout, little-endian: magic `DAPN`, `u32` version, `u64` config hash,
//! counters, the frozen config text, length-prefixed named `f32` blobs with
//! shape prefix, a metrics JSON string, and a trailing CRC32 of all
//! preceding bytes.

use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::nn::{Adam, ParamSet};
use crate::tensor::Tensor;

use super::state::TrainState;

pub const MAGIC: &[u8; 4] = b"DAPN";
pub const FORMAT_VERSION: u32 = 2;

const NETS: [&str; 3] = ["G", "D_img", "D_feat"];

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub tensor: Tensor,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: u64,
    pub epoch: usize,
    pub global_step: u64,
    pub rng_seed: u64,
    pub rng_stream: u64,
    pub adam_steps: [u64; 3],
    pub config_text: String,
    pub blobs: Vec<Blob>,
    pub metrics: serde_json::Value,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.bytes(name.as_bytes());
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CheckpointCorrupt("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CheckpointCorrupt("length overflow".into()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CheckpointCorrupt("invalid utf-8".into()))
    }
    fn tensor(&mut self) -> Result<Blob> {
        let name = self.string()?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.len()?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::CheckpointCorrupt(format!("blob `{name}` too large")))?;
        let data = self
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Blob {
            tensor: Tensor::from_vec(&shape, data)?,
            name,
        })
    }
}

fn optimizers(state: &TrainState) -> [(&ParamSet, &Adam); 3] {
    [
        (&state.nets.generator.params, &state.opt_g),
        (&state.nets.d_img.params, &state.opt_d_img),
        (&state.nets.d_feat.params, &state.opt_d_feat),
    ]
}

/// Serializes `state` with the given metrics snapshot.
pub fn encode_checkpoint(state: &TrainState, cfg: &ExperimentConfig, metrics: &serde_json::Value) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u64(state.config_hash);
    w.u64(state.epoch as u64);
    w.u64(state.global_step);
    w.u64(state.rng_seed);
    w.u64(state.rng_stream);
    for (_, opt) in optimizers(state) {
        w.u64(opt.step);
    }
    w.bytes(cfg.to_config_string().as_bytes());

    let mut count = 0u64;
    let mut body = Writer(Vec::new());
    for (net, (params, opt)) in NETS.iter().zip(optimizers(state)) {
        for (i, e) in params.entries().iter().enumerate() {
            body.tensor(&format!("{net}/param/{}", e.name), &e.value);
            count += 1;
            if let (Some(m), Some(v)) = (&opt.m[i], &opt.v[i]) {
                body.tensor(&format!("{net}/adam_m/{}", e.name), m);
                body.tensor(&format!("{net}/adam_v/{}", e.name), v);
                count += 2;
            }
        }
    }
    w.u64(count);
    w.0.extend_from_slice(&body.0);
    w.bytes(metrics.to_string().as_bytes());
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

/// Parses checkpoint bytes. Version is checked before integrity so that files
/// from other format versions are reported as such.
pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    if buf.len() < 8 || &buf[..4] != MAGIC {
        return Err(Error::CheckpointCorrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if buf.len() < 12 {
        return Err(Error::CheckpointCorrupt("truncated".into()));
    }
    let (payload, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored {
        return Err(Error::CheckpointCorrupt("checksum mismatch (truncated or modified file)".into()));
    }
    let mut r = Reader { buf: payload, pos: 8 };
    let config_hash = r.u64()?;
    let epoch = r.len()?;
    let global_step = r.u64()?;
    let rng_seed = r.u64()?;
    let rng_stream = r.u64()?;
    let adam_steps = [r.u64()?, r.u64()?, r.u64()?];
    let config_text = r.string()?;
    let count = r.len()?;
    let mut blobs = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        blobs.push(r.tensor()?);
    }
    let metrics = serde_json::from_str(&r.string()?)
        .map_err(|e| Error::CheckpointCorrupt(format!("metrics: {e}")))?;
    if r.pos != payload.len() {
        return Err(Error::CheckpointCorrupt("trailing bytes".into()));
    }
    Ok(Checkpoint {
        version,
        config_hash,
        epoch,
        global_step,
        rng_seed,
        rng_stream,
        adam_steps,
        config_text,
        blobs,
        metrics,
    })
}

impl Checkpoint {
    /// The configuration the checkpoint was written under.
    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(&self.config_text)
    }

    /// Rebuilds the training state for `cfg`, whose hash must match.
    pub fn into_state(self, cfg: &ExperimentConfig) -> Result<TrainState> {
        let expected = cfg.config_hash();
        if self.config_hash != expected {
            return Err(Error::ConfigHashMismatch {
                found: self.config_hash,
                expected,
            });
        }
        let mut state = TrainState::new(cfg);
        let mut by_name: std::collections::HashMap<String, Tensor> =
            self.blobs.into_iter().map(|b| (b.name, b.tensor)).collect();
        let mut restore = |key: String, dst: &mut Tensor| -> Result<()> {
            let t = by_name
                .remove(&key)
                .ok_or_else(|| Error::CheckpointCorrupt(format!("missing blob `{key}`")))?;
            if t.shape() != dst.shape() {
                return Err(Error::CheckpointCorrupt(format!(
                    "blob `{key}` has shape {:?}, expected {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
            *dst = t;
            Ok(())
        };
        let targets = [
            (&mut state.nets.generator.params, &mut state.opt_g),
            (&mut state.nets.d_img.params, &mut state.opt_d_img),
            (&mut state.nets.d_feat.params, &mut state.opt_d_feat),
        ];
        for ((net, (params, opt)), step) in NETS.iter().zip(targets).zip(self.adam_steps) {
            opt.step = step;
            for (i, e) in params.entries_mut().iter_mut().enumerate() {
                restore(format!("{net}/param/{}", e.name), &mut e.value)?;
                if let (Some(m), Some(v)) = (&mut opt.m[i], &mut opt.v[i]) {
                    restore(format!("{net}/adam_m/{}", e.name), m)?;
                    restore(format!("{net}/adam_v/{}", e.name), v)?;
                }
            }
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::CheckpointCorrupt(format!("unexpected blob `{extra}`")));
        }
        state.epoch = self.epoch;
        state.global_step = self.global_step;
        state.rng_seed = self.rng_seed;
        state.rng_stream = self.rng_stream;
        Ok(state)
    }
}

/// Writes atomically through a sibling temporary file.
pub fn save_checkpoint(
    state: &TrainState,
    cfg: &ExperimentConfig,
    metrics: &serde_json::Value,
    path: &Path,
) -> Result<()> {
    let bytes = encode_checkpoint(state, cfg, metrics);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::CheckpointNotFound(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    decode_checkpoint(&bytes)
}

impl Checkpoint {
    /// Restores only the segmentation network, for inference. The architecture
    /// comes from `width_scale`; every generator blob must match it.
    pub fn generator(&self, width_scale: f64) -> Result<crate::networks::SegmentationNetwork> {
        let mut net = crate::networks::SegmentationNetwork::new(0, width_scale);
        for e in net.params.entries_mut() {
            let key = format!("G/param/{}", e.name);
            let blob = self
                .blobs
                .iter()
                .find(|b| b.name == key)
                .ok_or_else(|| Error::CheckpointCorrupt(format!("missing blob `{key}`")))?;
            if blob.tensor.shape() != e.value.shape() {
                return Err(Error::CheckpointCorrupt(format!(
                    "blob `{key}` has shape {:?}, expected {:?}",
                    blob.tensor.shape(),
                    e.value.shape()
                )));
            }
            e.value = blob.tensor.clone();
        }
        Ok(net)
    }
}
