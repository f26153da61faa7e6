//! Checkpoint files: a text manifest plus one flat little-endian `f32` payload.
//!
//! ```text
//! format=GRAFTNET-CKPT-1
//! payload=model.bin
//! name=word_emb shape=120,16 offset=0
//! name=entity_emb shape=40,16 offset=7680
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;

pub const FORMAT_TAG: &str = "GRAFTNET-CKPT-1";

fn bad(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

/// Writes `store` as `<manifest>` plus a payload file next to it named
/// after the manifest with a `.bin` extension.
pub fn save(store: &ParamStore<f32>, manifest: &Path) -> Result<PathBuf> {
    let payload = manifest.with_extension("bin");
    let payload_name = payload
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| bad("payload path has no file name"))?
        .to_string();

    let mut text = format!("format={FORMAT_TAG}\npayload={payload_name}\n");
    let mut bytes = Vec::with_capacity(store.total_numel() * 4);
    for p in store.iter() {
        let shape = p.shape.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        text.push_str(&format!("name={} shape={} offset={}\n", p.name, shape, bytes.len()));
        for x in &p.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(manifest, text)?;
    fs::write(&payload, bytes)?;
    Ok(payload)
}

/// Reads a checkpoint back into a fresh store (optimizer state zeroed).
pub fn load(manifest: &Path) -> Result<ParamStore<f32>> {
    let text = fs::read_to_string(manifest)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == format!("format={FORMAT_TAG}") => {}
        other => {
            return Err(bad(format!(
                "line 1: expected format={FORMAT_TAG}, found {:?}",
                other.map(|(_, l)| l)
            )))
        }
    }
    let payload_name = match lines.next() {
        Some((_, l)) => l
            .strip_prefix("payload=")
            .ok_or_else(|| bad(format!("line 2: expected payload=, found {l:?}")))?,
        None => return Err(bad("line 2: missing payload")),
    };
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let bytes = fs::read(dir.join(payload_name))?;

    let mut store = ParamStore::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let mut name = None;
        let mut shape = None;
        let mut offset = None;
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| bad(format!("line {lineno}: malformed field {field:?}")))?;
            match k {
                "name" => name = Some(v.to_string()),
                "shape" => {
                    let dims = v
                        .split(',')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| bad(format!("line {lineno}: shape: {e}")))?;
                    shape = Some(dims);
                }
                "offset" => {
                    offset = Some(
                        v.parse::<usize>()
                            .map_err(|e| bad(format!("line {lineno}: offset: {e}")))?,
                    )
                }
                _ => return Err(bad(format!("line {lineno}: unknown key {k:?}"))),
            }
        }
        let (Some(name), Some(shape), Some(offset)) = (name, shape, offset) else {
            return Err(bad(format!("line {lineno}: needs name, shape and offset")));
        };
        let n: usize = shape.iter().product();
        let end = offset + 4 * n;
        if end > bytes.len() {
            return Err(bad(format!(
                "line {lineno}: {name} needs bytes [{offset}, {end}) but payload has {}",
                bytes.len()
            )));
        }
        let data = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.register(&name, &shape, data)?;
    }
    Ok(store)
}
