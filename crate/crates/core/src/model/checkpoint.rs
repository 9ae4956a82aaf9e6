//! `CFM1` checkpoint files.
//!
//! Layout: magic `CFM1`, u32 LE version, then until end of file a sequence of
//! tensors, each `u16 name length, UTF-8 name, u32 rows, u32 cols, f64 LE
//! row-major data`. Every layer contributes `{name}.weight` (out x in) and
//! `{name}.bias` (1 x out).

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};
use crate::nn::{DenseLayer, Matrix};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CFM1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn encode_checkpoint<S: Scalar>(params: &ModelParams<S>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (_, name, layer) in params.store.iter() {
        let w = layer.weight.as_slice();
        put_tensor(
            &mut out,
            &format!("{name}.weight"),
            layer.out_dim(),
            layer.in_dim(),
            w,
        );
        put_tensor(
            &mut out,
            &format!("{name}.bias"),
            1,
            layer.out_dim(),
            &layer.bias,
        );
    }
    out
}

fn put_tensor<S: Scalar>(out: &mut Vec<u8>, name: &str, rows: usize, cols: usize, data: &[S]) {
    let bytes = name.as_bytes();
    out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
    out.extend_from_slice(bytes);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    subject: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Checkpoint {
                path: self.subject.into(),
                reason: format!("truncated at byte offset {}", self.at),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Parses the named tensors of a checkpoint, in file order.
pub fn decode_tensors(bytes: &[u8], subject: &str) -> Result<Vec<(String, Tensor)>> {
    let bad = |reason: String| Error::Checkpoint {
        path: subject.into(),
        reason,
    };
    let mut r = Reader {
        bytes,
        at: 0,
        subject,
    };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(bad("bad magic, not a CFM1 checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let mut tensors = Vec::new();
    while r.at < bytes.len() {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| bad(format!("tensor name at byte {} is not UTF-8", r.at - len)))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| bad(format!("tensor {name} is too large")))?;
        let raw = r.take(n)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Tensor { rows, cols, data }));
    }
    Ok(tensors)
}

/// Rebuilds parameters for `dims` from decoded tensors, checking every shape.
pub fn params_from_tensors<S: Scalar>(
    dims: ModelDims,
    tensors: Vec<(String, Tensor)>,
    subject: &str,
) -> Result<ModelParams<S>> {
    let mut map: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, t) in tensors {
        if map.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint {
                path: subject.into(),
                reason: format!("duplicate tensor {name}"),
            });
        }
    }
    if let Some(w) = map.get("stage1.enc_ii.0.weight") {
        if w.cols != dims.input_dim {
            return Err(Error::Config(format!(
                "checkpoint {subject} was trained with feature dim d={} but the store has d={}",
                w.cols, dims.input_dim
            )));
        }
    }
    let mut params = ModelParams::<S>::zeros(dims)?;
    let ids: Vec<_> = params.store.ids().collect();
    for id in ids {
        let name = params.store.name(id).to_string();
        let (out_dim, in_dim) = {
            let l = params.store.layer(id);
            (l.out_dim(), l.in_dim())
        };
        let w = take_tensor(
            &mut map,
            &format!("{name}.weight"),
            out_dim,
            in_dim,
            subject,
        )?;
        let b = take_tensor(&mut map, &format!("{name}.bias"), 1, out_dim, subject)?;
        let weight = Matrix::from_vec(out_dim, in_dim, w.data.into_iter().map(S::lit).collect())?;
        let bias = b.data.into_iter().map(S::lit).collect();
        *params.store.layer_mut(id) = DenseLayer::new(weight, bias)?;
    }
    if let Some(extra) = map.keys().next() {
        return Err(Error::Config(format!(
            "checkpoint {subject} has tensor {extra} that the configured model does not use"
        )));
    }
    Ok(params)
}

fn take_tensor(
    map: &mut BTreeMap<String, Tensor>,
    name: &str,
    rows: usize,
    cols: usize,
    subject: &str,
) -> Result<Tensor> {
    let t = map
        .remove(name)
        .ok_or_else(|| Error::Config(format!("checkpoint {subject} lacks tensor {name}")))?;
    if (t.rows, t.cols) != (rows, cols) {
        return Err(Error::Config(format!(
            "checkpoint {subject}: tensor {name} is {}x{}, model expects {rows}x{cols}",
            t.rows, t.cols
        )));
    }
    Ok(t)
}

pub fn save_checkpoint<S: Scalar>(path: &Path, params: &ModelParams<S>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path, dims: ModelDims) -> Result<ModelParams<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let subject = path.display().to_string();
    params_from_tensors(dims, decode_tensors(&bytes, &subject)?, &subject)
}
