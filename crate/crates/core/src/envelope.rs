//! Checksummed JSON documents.
//!
//! Every file the toolkit writes has the same outer layout:
//!
//! ```text
//! {"format_version":1,"kind":"corpus","checksum":"<sha256 hex>","payload":{...}}
//! ```
//!
//! The checksum covers the exact payload bytes as written. Floats are written
//! with shortest round-trip formatting and parsed exactly, so a load after a
//! save reproduces every `f64` bit for bit.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct Outgoing<'a> {
    format_version: u32,
    kind: &'a str,
    checksum: &'a str,
    payload: &'a RawValue,
}

#[derive(Deserialize)]
struct Incoming<'a> {
    format_version: u32,
    kind: String,
    checksum: String,
    #[serde(borrow)]
    payload: &'a RawValue,
}

/// Serializes `payload` into an envelope. Returns the document and the
/// payload checksum.
pub fn encode<T: Serialize>(kind: &str, version: u32, payload: &T) -> Result<(String, String)> {
    let body = serde_json::to_string(payload)?;
    let checksum = sha256_hex(body.as_bytes());
    let raw = RawValue::from_string(body)?;
    let doc = serde_json::to_string(&Outgoing {
        format_version: version,
        kind,
        checksum: &checksum,
        payload: &raw,
    })?;
    Ok((doc, checksum))
}

/// Parses an envelope, checking kind, version and checksum before the
/// payload is deserialized. Returns the payload and its checksum.
pub fn decode<T: DeserializeOwned>(kind: &str, version: u32, doc: &str) -> Result<(T, String)> {
    let env: Incoming<'_> = serde_json::from_str(doc)?;
    if env.kind != kind {
        return Err(Error::Kind {
            expected: kind.to_string(),
            found: env.kind,
        });
    }
    if env.format_version != version {
        return Err(Error::FormatVersion {
            kind: kind.to_string(),
            found: env.format_version,
            expected: version,
        });
    }
    let actual = sha256_hex(env.payload.get().as_bytes());
    if actual != env.checksum {
        return Err(Error::Checksum {
            expected: env.checksum,
            actual,
        });
    }
    let payload = serde_json::from_str(env.payload.get())?;
    Ok((payload, actual))
}

pub fn write<T: Serialize>(path: &Path, kind: &str, version: u32, payload: &T) -> Result<String> {
    let (doc, checksum) = encode(kind, version, payload)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, doc).map_err(|e| Error::io(path, e))?;
    Ok(checksum)
}

pub fn read<T: DeserializeOwned>(path: &Path, kind: &str, version: u32) -> Result<(T, String)> {
    let doc = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode(kind, version, &doc)
}
