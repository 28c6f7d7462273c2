//! Checkpoint files: `DNLC`, a little-endian `u32` version, a `u64` header
//! length, a UTF-8 text header, then every tensor as little-endian `f32` in
//! header order.
//!
//! Header lines are `config key=value`, `meta key=value` and
//! `tensor name f32 d0,d1,...`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{Model, ModelConfig, ModelError, Result};
use crate::tensor::{ParamStore, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"DNLC";
const VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 26;

/// Decoded checkpoint, weights kept in `f32`.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn into_model<T: Real>(self) -> Result<Model<T>> {
        Model::from_params(self.config, self.params.cast())
    }
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn check_field(s: &str) -> Result<()> {
    if s.is_empty() || s.contains(['\n', '=', ' ', '\t']) {
        return Err(bad(format!("unsupported key {s:?}")));
    }
    Ok(())
}

pub fn write_checkpoint<T: Real>(mut w: impl Write, model: &Model<T>, meta: &BTreeMap<String, String>) -> Result<()> {
    let mut header = String::new();
    for (k, v) in model.config.entries() {
        header.push_str(&format!("config {k}={v}\n"));
    }
    for (k, v) in meta {
        check_field(k)?;
        if v.contains('\n') {
            return Err(bad(format!("meta value for {k} spans lines")));
        }
        header.push_str(&format!("meta {k}={v}\n"));
    }
    for (_, name, t) in model.params.iter() {
        check_field(name)?;
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        header.push_str(&format!("tensor {name} f32 {}\n", dims.join(",")));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::new();
    for (_, _, t) in model.params.iter() {
        buf.clear();
        buf.reserve(t.numel() * 4);
        for &v in t.data() {
            let v = v.to_f32().ok_or_else(|| bad("value not representable as f32"))?;
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(bad(format!("header of {len} bytes")));
    }
    let mut header = vec![0u8; len as usize];
    r.read_exact(&mut header)?;
    let header = String::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;

    let mut config = BTreeMap::new();
    let mut meta = BTreeMap::new();
    let mut tensors = Vec::new();
    for line in header.lines() {
        let (kind, rest) = line.split_once(' ').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
        match kind {
            "config" | "meta" => {
                let (k, v) = rest.split_once('=').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
                let map = if kind == "config" { &mut config } else { &mut meta };
                if map.insert(k.to_string(), v.to_string()).is_some() {
                    return Err(bad(format!("duplicate {kind} key {k}")));
                }
            }
            "tensor" => {
                let parts: Vec<&str> = rest.split(' ').collect();
                let [name, dtype, dims] = parts[..] else {
                    return Err(bad(format!("malformed line {line:?}")));
                };
                if dtype != "f32" {
                    return Err(bad(format!("unsupported dtype {dtype}")));
                }
                let shape = dims
                    .split(',')
                    .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad shape {dims:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                tensors.push((name.to_string(), shape));
            }
            other => return Err(bad(format!("unknown header line kind {other:?}"))),
        }
    }
    let config = ModelConfig::from_entries(&config)?;
    let mut params = ParamStore::new();
    for (name, shape) in tensors {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes).map_err(|_| bad(format!("truncated data for {name}")))?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        params.add(name, Tensor::new(shape, data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after tensor data"));
    }
    // validates names and shapes against the config
    let model = Model::from_params(config, params)?;
    Ok(Checkpoint { config: model.config, meta, params: model.params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DecoderConfig;

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::desk(30, 5);
        c.encoder.channels = vec![4, 4, 4, 4, 4, 4, 4, 4, 4, 8];
        c.decoder = DecoderConfig { dim: 8, heads: 2, ffn: 16, ..DecoderConfig::desk(30) };
        c
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let m = Model::<f32>::new(tiny(), 9).unwrap();
        let meta: BTreeMap<String, String> = [("step".to_string(), "120".to_string())].into();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &m, &meta).unwrap();
        assert_eq!(&bytes[..4], MAGIC);
        let ck = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(ck.meta, meta);
        assert_eq!(ck.config, m.config);
        assert_eq!(ck.params, m.params);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &ck.into_model::<f32>().unwrap(), &meta).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = Model::<f32>::new(tiny(), 1).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &m, &BTreeMap::new()).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(read_checkpoint(magic.as_slice()).is_err());
    }
}
