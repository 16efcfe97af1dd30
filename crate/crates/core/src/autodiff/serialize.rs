//! `NSQM` parameter container: magic, version, a JSON metadata block, then
//! little-endian `f32` arrays in parameter-name order.

use serde_json::{json, Value};

use super::{AutodiffError, ParamSet, Tensor};
use crate::Scalar;

pub const MAGIC: &[u8; 4] = b"NSQM";
pub const VERSION: u32 = 1;

fn format_err<T>(msg: impl Into<String>) -> Result<T, AutodiffError> {
    Err(AutodiffError::Format(msg.into()))
}

/// Serializes `params` with caller metadata stored under `"meta"`.
pub fn write_params<T: Scalar>(params: &ParamSet<T>, meta: &Value) -> Vec<u8> {
    let table: Vec<Value> = params
        .iter()
        .map(|(_, p)| json!({"name": p.name, "shape": p.tensor.shape, "trainable": p.trainable}))
        .collect();
    let header = serde_json::to_vec(&json!({"params": table, "meta": meta})).expect("json values serialize");
    let mut out = Vec::with_capacity(12 + header.len() + 4 * params.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, p) in params.iter() {
        for &x in &p.tensor.data {
            out.extend_from_slice(&x.as_f32().to_le_bytes());
        }
    }
    out
}

pub fn read_params<T: Scalar>(bytes: &[u8]) -> Result<(ParamSet<T>, Value), AutodiffError> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return format_err("missing NSQM magic");
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return format_err(format!("unsupported version {version}"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let Some(header) = bytes.get(16..16 + hlen) else { return format_err("truncated header") };
    let header: Value = serde_json::from_slice(header).map_err(|e| AutodiffError::Format(e.to_string()))?;
    let Some(table) = header.get("params").and_then(Value::as_array) else { return format_err("missing table") };
    let mut pos = 16 + hlen;
    let mut params = ParamSet::new();
    let mut last: Option<String> = None;
    for entry in table {
        let name = entry.get("name").and_then(Value::as_str).ok_or_else(|| AutodiffError::Format("entry without name".into()))?;
        if last.as_deref().is_some_and(|l| l >= name) {
            return format_err("parameter table is not name-sorted");
        }
        let shape: Vec<usize> = entry
            .get("shape")
            .and_then(Value::as_array)
            .map(|s| s.iter().filter_map(Value::as_u64).map(|d| d as usize).collect())
            .ok_or_else(|| AutodiffError::Format(format!("{name}: bad shape")))?;
        let trainable = entry.get("trainable").and_then(Value::as_bool).unwrap_or(true);
        let n: usize = shape.iter().product();
        let Some(raw) = bytes.get(pos..pos + 4 * n) else { return format_err(format!("{name}: truncated data")) };
        pos += 4 * n;
        let data = raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)).collect();
        params.insert(name, Tensor::new(shape, data)?, trainable)?;
        last = Some(name.to_string());
    }
    if pos != bytes.len() {
        return format_err(format!("{} trailing bytes", bytes.len() - pos));
    }
    Ok((params, header.get("meta").cloned().unwrap_or(Value::Null)))
}
