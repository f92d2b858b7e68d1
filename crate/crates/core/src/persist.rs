//! Versioned JSON documents written atomically (temp file + rename).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schema version stamped into every persisted document.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct EnvelopeOut<'a, T: Serialize> {
    schema_version: u32,
    kind: &'a str,
    body: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    schema_version: u32,
    kind: String,
    body: T,
}

/// Pretty-printed JSON with a trailing newline. Struct fields serialize in
/// declaration order and maps are `BTreeMap`s, so output bytes are stable.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes `bytes` to `path` via a sibling temporary file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Saves `body` wrapped in a `{schema_version, kind, body}` envelope.
pub fn save_document<T: Serialize>(path: &Path, kind: &str, body: &T) -> Result<()> {
    let env = EnvelopeOut {
        schema_version: SCHEMA_VERSION,
        kind,
        body,
    };
    write_atomic(path, to_json_string(&env)?.as_bytes())
}

/// Loads a document written by [`save_document`], checking version and kind.
pub fn load_document<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let env: EnvelopeIn<T> = serde_json::from_str(&text)?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            found: env.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    if env.kind != kind {
        return Err(Error::Integrity(format!(
            "{} holds a '{}' document, expected '{kind}'",
            path.display(),
            env.kind
        )));
    }
    Ok(env.body)
}

/// Writes a plain (envelope-free) JSON report atomically.
pub fn save_report<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json_string(value)?.as_bytes())
}

pub fn load_report<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
