//! Binary checkpoint envelope shared by all networks:
//!
//! ```text
//! magic[8] | version u32 | config_len u32 | config (key=value lines)
//! n_params u32 | per param: name_len u32, name, ndim u32, dims u32*, f64 LE*
//! sha256 of everything above [32]
//! ```

use sha2::{Digest, Sha256};
use strokesel_tape::{ParamStore, Tensor};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Ordered `key=value` pairs stored alongside the parameters.
pub type ConfigBlock = Vec<(String, String)>;

pub fn encode(magic: &[u8; 8], config: &ConfigBlock, store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let cfg: String = config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for d in p.value.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let hash = Sha256::digest(&out);
    out.extend_from_slice(&hash);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptCheckpoint("non-utf8 text".into()))
    }
}

pub fn decode(magic: &[u8; 8], bytes: &[u8]) -> Result<(ConfigBlock, ParamStore)> {
    if bytes.len() < 8 + 4 + 32 {
        return Err(Error::CorruptCheckpoint("truncated".into()));
    }
    if &bytes[..8] != magic {
        return Err(Error::CorruptCheckpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..8]),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let (body, hash) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != hash {
        return Err(Error::CorruptCheckpoint("integrity hash mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let cfg_len = r.u32()? as usize;
    let cfg_text = r.string(cfg_len)?;
    let mut config = Vec::new();
    for line in cfg_text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::CorruptCheckpoint(format!("bad config line {line:?}")))?;
        config.push((k.to_string(), v.to_string()));
    }
    let n = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..n {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::CorruptCheckpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.add(name, Tensor::new(shape, data)?);
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok((config, store))
}

/// Looks up and parses a config entry.
pub fn config_get<T: std::str::FromStr>(config: &ConfigBlock, key: &str) -> Result<T> {
    let raw = config
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::CorruptCheckpoint(format!("missing config key {key}")))?;
    raw.parse()
        .map_err(|_| Error::CorruptCheckpoint(format!("bad value {raw:?} for {key}")))
}

/// Copies values from `loaded` into `target`, requiring identical names and
/// shapes in the same order.
pub fn restore_into(target: &mut ParamStore, loaded: &ParamStore) -> Result<()> {
    if target.len() != loaded.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "expected {} parameter tensors, found {}",
            target.len(),
            loaded.len()
        )));
    }
    for ((_, t), (_, l)) in target.iter_mut().zip(loaded.iter()) {
        if t.name != l.name || t.value.shape() != l.value.shape() {
            return Err(Error::CorruptCheckpoint(format!(
                "parameter {} {:?} does not match {} {:?}",
                l.name,
                l.value.shape(),
                t.name,
                t.value.shape()
            )));
        }
        t.value = l.value.clone();
    }
    Ok(())
}
