//! The `VLMB` model checkpoint.
//!
//! Little-endian layout: magic `VLMB`, `u32` version, `u32` length plus the
//! JSON architecture descriptor, `u32` set count, then per set its tag and
//! `u32` parameter count, and per parameter its name, a trainable flag byte,
//! `u32` rank, `u32` extents and the `f64` values. Strings are a `u32`
//! length followed by UTF-8 bytes. Optimizer state is not stored.

use std::path::Path;

use super::arch::ArchConfig;
use super::bundle::ModelBundle;
use crate::compute::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VLMB";
pub const VERSION: u32 = 1;

pub fn encode_bundle(bundle: &ModelBundle) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend(VERSION.to_le_bytes());
    put_str(&mut out, &serde_json::to_string(&bundle.arch).expect("architecture serializes"));
    let sets = [&bundle.phi, &bundle.theta, &bundle.eta, &bundle.omega];
    out.extend((sets.len() as u32).to_le_bytes());
    for set in sets {
        put_str(&mut out, set.tag());
        out.extend((set.len() as u32).to_le_bytes());
        for (name, p) in set.iter() {
            put_str(&mut out, name);
            out.push(p.trainable as u8);
            out.extend((p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend((d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend(v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncated(format!("checkpoint needs {n} more bytes at offset {}", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::UnrecognizedFormat(e.to_string()))
    }
}

pub fn decode_bundle(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::UnrecognizedFormat("missing VLMB magic bytes".into()));
    }
    let mut r = Reader { bytes, at: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let arch: ArchConfig =
        serde_json::from_str(&r.string()?).map_err(|e| Error::UnrecognizedFormat(format!("architecture: {e}")))?;
    let mut sets = Vec::new();
    for _ in 0..r.u32()? {
        let mut set = ParamSet::new(r.string()?);
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let trainable = r.take(1)?[0] != 0;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::UnrecognizedFormat("huge tensor".into()))?)?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            set.insert(name, Tensor::new(shape, values)?, trainable);
        }
        sets.push(set);
    }
    if r.at != bytes.len() {
        return Err(Error::UnrecognizedFormat("trailing bytes after parameter blobs".into()));
    }
    let mut take = |tag: &str| {
        sets.iter()
            .position(|s| s.tag() == tag)
            .map(|i| sets.remove(i))
            .ok_or_else(|| Error::UnrecognizedFormat(format!("checkpoint lacks parameter set `{tag}`")))
    };
    Ok(ModelBundle { phi: take("phi")?, theta: take("theta")?, eta: take("eta")?, omega: take("omega")?, arch })
}

pub fn save_bundle(path: &Path, bundle: &ModelBundle) -> Result<()> {
    std::fs::write(path, encode_bundle(bundle))?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    decode_bundle(&std::fs::read(path)?)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}
