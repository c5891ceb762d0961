//! Binary checkpoints: magic, a JSON header, then little-endian f64 payload
//! (parameters in visitor order, the center, then optimizer moments).

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VadError};
use crate::model::{AnomalyModel, ModelConfig};
use crate::nn::{AdamState, Parameters};

const MAGIC: &[u8; 8] = b"VADKCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    params: Vec<(String, Vec<usize>)>,
    center_len: usize,
    center_frozen: bool,
    adam_step: Option<u64>,
    step: u64,
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AnomalyModel,
    pub adam: Option<AdamState>,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Caller-defined metadata, e.g. the resolved training config.
    pub meta: serde_json::Value,
}

fn ckpt_err(path: &Path, msg: impl Into<String>) -> VadError {
    VadError::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Writes to a temporary sibling and renames, so an interrupted save never
/// clobbers the previous checkpoint.
pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let model = &ckpt.model;
    let views = model.param_views();
    // moments exist only after the first optimizer step
    let adam = ckpt.adam.as_ref().filter(|a| !a.m.is_empty());
    let header = Header {
        version: VERSION,
        model: model.config.clone(),
        params: views.iter().map(|v| (v.name.clone(), v.shape.clone())).collect(),
        center_len: model.center.c.len(),
        center_frozen: model.center.frozen,
        adam_step: adam.map(|a| a.step),
        step: ckpt.step,
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ckpt_err(path, e.to_string()))?;
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| VadError::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| VadError::io(&tmp, e));
        put(MAGIC)?;
        put(&VERSION.to_le_bytes())?;
        put(&(json.len() as u64).to_le_bytes())?;
        put(&json)?;
        let mut floats = |xs: &[f64]| -> Result<()> {
            let mut buf = Vec::with_capacity(xs.len() * 8);
            xs.iter().for_each(|x| buf.extend(x.to_le_bytes()));
            put(&buf)
        };
        for v in &views {
            floats(v.data)?;
        }
        floats(&model.center.c)?;
        if let Some(a) = adam {
            for m in a.m.iter().chain(&a.v) {
                floats(m)?;
            }
        }
        drop(floats);
        w.flush().map_err(|e| VadError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| VadError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }

    fn floats(&mut self, n: usize) -> Option<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Some(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        )
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| VadError::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let truncated = || ckpt_err(path, "truncated file");
    if cur.take(8) != Some(MAGIC) {
        return Err(ckpt_err(path, "not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(cur.take(4).ok_or_else(truncated)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ckpt_err(path, format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(cur.take(8).ok_or_else(truncated)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(cur.take(len).ok_or_else(truncated)?).map_err(|e| ckpt_err(path, e.to_string()))?;
    // structure comes from the config; the seed is irrelevant because
    // every value is overwritten below
    let mut model = AnomalyModel::new(header.model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let expected: Vec<(String, Vec<usize>)> = model
        .param_views()
        .iter()
        .map(|v| (v.name.clone(), v.shape.clone()))
        .collect();
    if expected != header.params {
        return Err(ckpt_err(path, "parameter layout does not match the stored model config"));
    }
    let mut sizes = Vec::with_capacity(expected.len());
    for slot in model.param_slices_mut() {
        let values = cur.floats(slot.len()).ok_or_else(truncated)?;
        sizes.push(slot.len());
        slot.copy_from_slice(&values);
    }
    model.center.c = cur.floats(header.center_len).ok_or_else(truncated)?;
    model.center.frozen = header.center_frozen;
    let adam = match header.adam_step {
        Some(step) => {
            let mut read = || sizes.iter().map(|&n| cur.floats(n)).collect::<Option<Vec<_>>>();
            let m = read().ok_or_else(truncated)?;
            let v = read().ok_or_else(truncated)?;
            Some(AdamState { step, m, v })
        }
        None => None,
    };
    if cur.pos != bytes.len() {
        return Err(ckpt_err(path, "trailing bytes after payload"));
    }
    Ok(Checkpoint {
        model,
        adam,
        step: header.step,
        meta: header.meta,
    })
}
