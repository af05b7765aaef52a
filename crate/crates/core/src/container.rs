//! Versioned binary model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        10 bytes   e.g. "HYPODETECT"
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON, must carry "version"
//! value_count  u64
//! payload      value_count × f32, row-major tensors in header-documented order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC_LEN: usize = 10;

pub fn write<W: Write, H: Serialize>(
    mut out: W,
    magic: &[u8; MAGIC_LEN],
    header: &H,
    payload: &[f64],
) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    let io = |e| Error::io("<model>", e);
    out.write_all(magic).map_err(io)?;
    out.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&header).map_err(io)?;
    out.write_all(&(payload.len() as u64).to_le_bytes()).map_err(io)?;
    let mut buf = Vec::with_capacity(payload.len() * 4);
    for &v in payload {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf).map_err(io)?;
    Ok(())
}

pub fn read<R: Read, H: DeserializeOwned>(
    mut input: R,
    magic: &[u8; MAGIC_LEN],
    version: u32,
) -> Result<(H, Vec<f64>)> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<model>", e))?;
    decode(&bytes, magic, version)
}

pub fn decode<H: DeserializeOwned>(
    bytes: &[u8],
    magic: &[u8; MAGIC_LEN],
    version: u32,
) -> Result<(H, Vec<f64>)> {
    let bad = |m: &str| Error::BadModelFile(m.to_string());
    if bytes.len() < MAGIC_LEN + 4 || &bytes[..MAGIC_LEN] != magic {
        return Err(Error::BadModelFile(format!(
            "expected magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = MAGIC_LEN;
    let header_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    let header_bytes = bytes.get(pos..pos + header_len).ok_or_else(|| bad("truncated header"))?;
    pos += header_len;
    let value: serde_json::Value = serde_json::from_slice(header_bytes)?;
    let found = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| bad("header has no version"))? as u32;
    if found != version {
        return Err(Error::VersionMismatch {
            expected: version,
            found,
        });
    }
    let header: H = serde_json::from_value(value)?;
    let count_bytes = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated payload length"))?;
    let count = u64::from_le_bytes(count_bytes.try_into().unwrap()) as usize;
    pos += 8;
    let data = bytes
        .get(pos..pos + count * 4)
        .ok_or_else(|| bad("truncated payload"))?;
    if pos + count * 4 != bytes.len() {
        return Err(bad("trailing bytes after payload"));
    }
    let payload = data
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok((header, payload))
}

pub fn save<H: Serialize>(path: &Path, magic: &[u8; MAGIC_LEN], header: &H, payload: &[f64]) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf, magic, header, payload)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load<H: DeserializeOwned>(path: &Path, magic: &[u8; MAGIC_LEN], version: u32) -> Result<(H, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, magic, version)
}

/// Sequential reader over a decoded payload.
pub(crate) struct Payload<'a> {
    values: &'a [f64],
    pos: usize,
}

impl<'a> Payload<'a> {
    pub(crate) fn new(values: &'a [f64]) -> Self {
        Payload { values, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        let out = self
            .values
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::BadModelFile("payload shorter than header implies".into()))?
            .to_vec();
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos == self.values.len() {
            Ok(())
        } else {
            Err(Error::BadModelFile("payload longer than header implies".into()))
        }
    }
}
