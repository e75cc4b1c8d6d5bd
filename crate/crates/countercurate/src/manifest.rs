//! Line-delimited JSON artifacts with a provenance header line.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Key of the header object on the first line.
pub const PROVENANCE_KEY: &str = "_provenance";

/// A parsed artifact.
#[derive(Debug)]
pub struct Jsonl<T> {
    pub provenance: Option<Value>,
    pub rows: Vec<T>,
    /// `(line, message)` for lines that failed to parse.
    pub errors: Vec<(usize, String)>,
}

/// Header object for an artifact.
pub fn provenance(stage: &str, settings: Value) -> Value {
    serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "stage": stage,
        "settings": settings,
    })
}

/// Hex sha256 of a file's bytes.
pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the header and rows, replacing `path` atomically.
pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    provenance: &Value,
    rows: impl IntoIterator<Item = &'a T>,
) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut out, &serde_json::json!({ PROVENANCE_KEY: provenance }))?;
        out.write_all(b"\n")?;
        for row in rows {
            serde_json::to_writer(&mut out, row)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    fs::rename(tmp, path)
}

/// Reads an artifact. A first line holding only the header is taken as
/// provenance; bad lines are collected rather than fatal.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> std::io::Result<Jsonl<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Jsonl { provenance: None, rows: Vec::new(), errors: Vec::new() };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && line.starts_with(&format!("{{\"{PROVENANCE_KEY}\"")) {
            if let Ok(Value::Object(mut obj)) = serde_json::from_str::<Value>(&line) {
                out.provenance = obj.remove(PROVENANCE_KEY);
                continue;
            }
        }
        match serde_json::from_str(&line) {
            Ok(row) => out.rows.push(row),
            Err(e) => out.errors.push((i + 1, e.to_string())),
        }
    }
    Ok(out)
}
