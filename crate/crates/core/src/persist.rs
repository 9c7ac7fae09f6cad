//! Versioned binary envelope for model artifacts: a magic tag, a format
//! version, then a serialized payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) fn save<T: Serialize>(
    path: &Path,
    magic: &[u8; 4],
    version: u32,
    payload: &T,
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(magic)?;
    file.write_all(&version.to_le_bytes())?;
    let bytes = serde_json::to_vec(payload)?;
    file.write_all(&(bytes.len() as u64).to_le_bytes())?;
    file.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn load<T: DeserializeOwned>(path: &Path, magic: &[u8; 4], version: u32) -> Result<T> {
    let mut file = std::fs::File::open(path)?;
    let mut head = [0u8; 4];
    file.read_exact(&mut head)?;
    if &head != magic {
        return Err(Error::Config(format!(
            "{} is not a {} file",
            path.display(),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut v = [0u8; 4];
    file.read_exact(&mut v)?;
    let got = u32::from_le_bytes(v);
    if got != version {
        return Err(Error::Config(format!(
            "{}: format version {got}, expected {version}",
            path.display()
        )));
    }
    let mut len = [0u8; 8];
    file.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut bytes = vec![0u8; len];
    file.read_exact(&mut bytes)?;
    Ok(serde_json::from_slice(&bytes)?)
}
