//! The `VLDS` dataset container.
//!
//! Little-endian layout: magic `VLDS`, then `u32` fields version, count,
//! height, width, channels, |U|, |S|, then for each example its `u8` pixels
//! (height × width × channels) followed by a `u8` utility label and a `u8`
//! sensitive label.

use std::path::Path;

use super::dataset::{Features, LabeledDataset};
use crate::error::{invalid, Error, Result};

pub const MAGIC: &[u8; 4] = b"VLDS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 7 * 4;

pub fn encode(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let Features::Image { height, width, channels, pixels } = &ds.features else {
        return Err(invalid("only image datasets can be stored in a VLDS container"));
    };
    if ds.n_u > 256 || ds.n_s > 256 {
        return Err(invalid("VLDS labels are single bytes; alphabets must have at most 256 symbols"));
    }
    let per = height * width * channels;
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * (per + 2));
    out.extend_from_slice(MAGIC);
    for v in [VERSION, ds.len() as u32, *height as u32, *width as u32, *channels as u32, ds.n_u as u32, ds.n_s as u32] {
        out.extend(v.to_le_bytes());
    }
    for i in 0..ds.len() {
        out.extend_from_slice(&pixels[i * per..(i + 1) * per]);
        out.push(ds.u[i] as u8);
        out.push(ds.s[i] as u8);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<LabeledDataset> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::UnrecognizedFormat("missing VLDS magic bytes".into()));
    }
    if bytes.len() < 8 {
        return Err(Error::Truncated(format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len())));
    }
    let field = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let version = field(0);
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len())));
    }
    let [count, height, width, channels, n_u, n_s] = [1, 2, 3, 4, 5, 6].map(|k| field(k) as usize);
    let per = height * width * channels;
    let expected = HEADER_LEN + count * (per + 2);
    if bytes.len() < expected {
        return Err(Error::Truncated(format!("{count} records need {expected} bytes, file has {}", bytes.len())));
    }
    if bytes.len() > expected {
        return Err(Error::UnrecognizedFormat(format!("{} trailing bytes after the last record", bytes.len() - expected)));
    }
    let mut pixels = Vec::with_capacity(count * per);
    let (mut u, mut s) = (Vec::with_capacity(count), Vec::with_capacity(count));
    for rec in bytes[HEADER_LEN..].chunks_exact(per + 2) {
        pixels.extend_from_slice(&rec[..per]);
        u.push(rec[per] as usize);
        s.push(rec[per + 1] as usize);
    }
    LabeledDataset::new(Features::Image { height, width, channels, pixels }, u, s, n_u, n_s)
}

pub fn save_dataset(path: &Path, ds: &LabeledDataset) -> Result<()> {
    std::fs::write(path, encode(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    decode(&std::fs::read(path)?)
}
