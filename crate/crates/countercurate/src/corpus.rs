//! Corpus manifest reading and writing.
//!
//! One JSON object per line: `image_id`, `width`, `height`, `image_path`,
//! `captions` as tagged strings, `boxes` as `{entity_id: [[x1,y1,x2,y2], ...]}`
//! and `categories` as `{entity_id: category}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use countercurate_core::grounded::{parse_entity_caption, BoundingBox, ImageRecord};
use serde::{Deserialize, Serialize};

/// A manifest line before validation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub image_path: String,
    pub captions: Vec<String>,
    #[serde(default)]
    pub boxes: BTreeMap<u32, Vec<[i64; 4]>>,
    #[serde(default)]
    pub categories: BTreeMap<u32, String>,
}

/// A line that did not yield a record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineError {
    /// One-based line number.
    pub line: usize,
    /// Image named on the line, when it got that far.
    pub image_id: Option<String>,
    /// Offending field path.
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let id = self.image_id.as_deref().unwrap_or("?");
        write!(f, "line {}: record {}: {}: {}", self.line, id, self.field, self.message)
    }
}

/// Records that validated and lines that did not.
#[derive(Debug, Default)]
pub struct Corpus {
    pub records: Vec<ImageRecord>,
    pub errors: Vec<LineError>,
}

impl RawRecord {
    /// Validates into a record. `line` is only used in errors.
    pub fn validate(self, line: usize) -> Result<ImageRecord, LineError> {
        let id = Some(self.image_id.clone());
        let fail = |field: String, message: String| LineError { line, image_id: id.clone(), field, message };
        let mut captions = Vec::with_capacity(self.captions.len());
        for (k, text) in self.captions.iter().enumerate() {
            captions.push(parse_entity_caption(text).map_err(|e| fail(format!("captions[{k}]"), e.to_string()))?);
        }
        let mut boxes = BTreeMap::new();
        for (entity, list) in &self.boxes {
            let mut out = Vec::with_capacity(list.len());
            for (k, c) in list.iter().enumerate() {
                let field = || format!("boxes.{entity}[{k}]");
                let coord = |v: i64| u32::try_from(v).map_err(|_| fail(field(), format!("coordinate {v} out of range")));
                let b = BoundingBox::new(coord(c[0])?, coord(c[1])?, coord(c[2])?, coord(c[3])?)
                    .map_err(|e| fail(field(), e.to_string()))?;
                out.push(b);
            }
            boxes.insert(*entity, out);
        }
        ImageRecord::new(self.image_id, self.width, self.height, self.image_path, captions, boxes, self.categories)
            .map_err(|e| LineError { line, image_id: Some(e.image_id), field: e.field, message: e.message })
    }

    /// Manifest form of a record.
    pub fn from_record(record: &ImageRecord) -> Self {
        Self {
            image_id: record.image_id().into(),
            width: record.width(),
            height: record.height(),
            image_path: record.image_path().into(),
            captions: record.captions().iter().map(|c| c.to_tagged()).collect(),
            boxes: record
                .boxes()
                .iter()
                .map(|(id, list)| (*id, list.iter().map(|b| b.to_array().map(i64::from)).collect()))
                .collect(),
            categories: record.categories().clone(),
        }
    }
}

/// Parses one manifest line.
pub fn parse_line(text: &str, line: usize) -> Result<ImageRecord, LineError> {
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| {
        let image_id = serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|v| v.get("image_id").and_then(|s| s.as_str()).map(String::from));
        LineError { line, image_id, field: "record".into(), message: e.to_string() }
    })?;
    raw.validate(line)
}

/// Reads a corpus manifest, skipping blank lines. Invalid lines are logged
/// and collected, never fatal.
pub fn load_corpus(path: &Path) -> std::io::Result<Corpus> {
    let reader = BufReader::new(File::open(path)?);
    let mut corpus = Corpus::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, i + 1) {
            Ok(r) => corpus.records.push(r),
            Err(e) => {
                log::warn!("skipping {e}");
                corpus.errors.push(e);
            }
        }
    }
    Ok(corpus)
}

/// Writes records as a corpus manifest.
pub fn write_corpus(path: &Path, records: &[ImageRecord]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, &RawRecord::from_record(r))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
