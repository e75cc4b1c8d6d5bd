//! Entity-tagged grounded captions and the image records built from them.
//!
//! Tagged captions mark each grounded phrase as `[/EN#<id>/<type> <phrase>]`,
//! for example `[/EN#1/people A child] in [/EN#2/clothing a pink dress]`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entity identifier as it appears in the `#<id>` part of a tag.
pub type EntityId = u32;

/// Axis-aligned pixel box, origin top-left, y growing downward.
///
/// Serialized as `[x1, y1, x2, y2]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    x1: u32,
    y1: u32,
    x2: u32,
    y2: u32,
}

/// A box whose corners are not strictly ordered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("degenerate box [{x1}, {y1}, {x2}, {y2}]: need x1 < x2 and y1 < y2")]
pub struct DegenerateBox {
    /// Left edge as given.
    pub x1: u32,
    /// Top edge as given.
    pub y1: u32,
    /// Right edge as given.
    pub x2: u32,
    /// Bottom edge as given.
    pub y2: u32,
}

impl BoundingBox {
    /// Builds a box, rejecting empty or inverted extents.
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self, DegenerateBox> {
        if x1 < x2 && y1 < y2 {
            Ok(Self { x1, y1, x2, y2 })
        } else {
            Err(DegenerateBox { x1, y1, x2, y2 })
        }
    }

    /// Left edge.
    pub fn x1(&self) -> u32 {
        self.x1
    }
    /// Top edge.
    pub fn y1(&self) -> u32 {
        self.y1
    }
    /// Right edge (exclusive in pixel terms).
    pub fn x2(&self) -> u32 {
        self.x2
    }
    /// Bottom edge (exclusive in pixel terms).
    pub fn y2(&self) -> u32 {
        self.y2
    }
    /// Horizontal extent.
    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }
    /// Vertical extent.
    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }
    /// Pixel area.
    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }
    /// Whether the box lies inside a `width` x `height` canvas.
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x2 <= width && self.y2 <= height
    }
    /// Corners as `[x1, y1, x2, y2]`.
    pub fn to_array(self) -> [u32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = DegenerateBox;
    fn try_from([x1, y1, x2, y2]: [u32; 4]) -> Result<Self, Self::Error> {
        Self::new(x1, y1, x2, y2)
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// One grounded phrase inside a caption.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    /// Positive id, unique within the caption.
    pub entity_id: EntityId,
    /// Entity type from the tag header (`people`, `clothing`, ...). Open set.
    pub entity_type: String,
    /// Phrase text, verbatim.
    pub phrase: String,
    /// Byte range of `phrase` inside the plain caption.
    pub range: Range<usize>,
}

/// What went wrong while reading a tagged caption.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    /// A `[` not followed by a well-formed `/EN#<id>/<type> ` header.
    MalformedTag(&'static str),
    /// The same entity id tagged twice.
    DuplicateEntity(EntityId),
    /// A `]` without an open tag, a `[` inside a tag, or an unterminated tag.
    UnbalancedBracket,
    /// A tag with nothing after the header.
    EmptyPhrase,
}

/// A tagged-caption parse failure at a byte offset of the input.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind} at byte {offset}")]
pub struct ParseError {
    /// Byte offset into the tagged text.
    pub offset: usize,
    /// Failure category.
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MalformedTag(what) => write!(f, "malformed tag header ({what})"),
            Self::DuplicateEntity(id) => write!(f, "duplicate entity id {id}"),
            Self::UnbalancedBracket => f.write_str("unbalanced bracket"),
            Self::EmptyPhrase => f.write_str("empty phrase"),
        }
    }
}

const TAG_OPEN: &str = "[/EN#";

/// A caption with its grounded phrases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedCaption {
    plain: String,
    spans: Vec<EntitySpan>,
}

impl GroundedCaption {
    /// Parses tagged text such as `[/EN#1/people A child] in a park`.
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        parse_entity_caption(text)
    }

    /// Caption with no grounded phrases.
    pub fn untagged(plain: &str) -> Result<Self, ParseError> {
        if let Some(offset) = plain.find(['[', ']']) {
            return Err(ParseError { offset, kind: ParseErrorKind::UnbalancedBracket });
        }
        Ok(Self { plain: plain.to_string(), spans: Vec::new() })
    }

    /// The caption with tags stripped.
    pub fn plain(&self) -> &str {
        &self.plain
    }

    /// Grounded phrases in caption order.
    pub fn spans(&self) -> &[EntitySpan] {
        &self.spans
    }

    /// Span for an entity id, if tagged here.
    pub fn span(&self, id: EntityId) -> Option<&EntitySpan> {
        self.spans.iter().find(|s| s.entity_id == id)
    }

    /// Re-inserts the tags around each phrase.
    pub fn to_tagged(&self) -> String {
        let mut out = String::with_capacity(self.plain.len() + self.spans.len() * 16);
        let mut cursor = 0;
        for span in &self.spans {
            out.push_str(&self.plain[cursor..span.range.start]);
            out.push_str(&format!(
                "{TAG_OPEN}{}/{} {}]",
                span.entity_id, span.entity_type, span.phrase
            ));
            cursor = span.range.end;
        }
        out.push_str(&self.plain[cursor..]);
        out
    }
}

/// Parses one tagged caption.
pub fn parse_entity_caption(text: &str) -> Result<GroundedCaption, ParseError> {
    let bytes = text.as_bytes();
    let mut plain = String::with_capacity(text.len());
    let mut spans = Vec::new();
    let mut seen = BTreeSet::new();
    let mut i = 0;
    let err = |offset, kind| Err(ParseError { offset, kind });

    while i < bytes.len() {
        match bytes[i] {
            b']' => return err(i, ParseErrorKind::UnbalancedBracket),
            b'[' => {
                let start = i;
                if !text[i..].starts_with(TAG_OPEN) {
                    return err(i, ParseErrorKind::MalformedTag("expected `[/EN#`"));
                }
                i += TAG_OPEN.len();
                let digits = bytes[i..].iter().take_while(|b| b.is_ascii_digit()).count();
                if digits == 0 {
                    return err(i, ParseErrorKind::MalformedTag("missing entity id"));
                }
                let id: EntityId = match text[i..i + digits].parse() {
                    Ok(id) if id > 0 => id,
                    _ => return err(i, ParseErrorKind::MalformedTag("entity id must be a positive integer")),
                };
                i += digits;
                if bytes.get(i) != Some(&b'/') {
                    return err(i, ParseErrorKind::MalformedTag("expected `/` after entity id"));
                }
                i += 1;
                let type_start = i;
                while i < bytes.len() && !matches!(bytes[i], b' ' | b'[' | b']') {
                    if bytes[i].is_ascii_whitespace() {
                        return err(i, ParseErrorKind::MalformedTag("whitespace in entity type"));
                    }
                    i += 1;
                }
                if i == type_start {
                    return err(i, ParseErrorKind::MalformedTag("missing entity type"));
                }
                match bytes.get(i) {
                    None => return err(start, ParseErrorKind::UnbalancedBracket),
                    Some(b'[') => return err(i, ParseErrorKind::UnbalancedBracket),
                    Some(b']') => return err(i, ParseErrorKind::EmptyPhrase),
                    _ => {}
                }
                let entity_type = &text[type_start..i];
                i += 1;
                let phrase_start = i;
                let Some(rel) = text[i..].find(['[', ']']) else {
                    return err(start, ParseErrorKind::UnbalancedBracket);
                };
                i += rel;
                if bytes[i] == b'[' {
                    return err(i, ParseErrorKind::UnbalancedBracket);
                }
                let phrase = &text[phrase_start..i];
                if phrase.trim().is_empty() {
                    return err(phrase_start, ParseErrorKind::EmptyPhrase);
                }
                if !seen.insert(id) {
                    return err(start, ParseErrorKind::DuplicateEntity(id));
                }
                let from = plain.len();
                plain.push_str(phrase);
                spans.push(EntitySpan {
                    entity_id: id,
                    entity_type: entity_type.to_string(),
                    phrase: phrase.to_string(),
                    range: from..plain.len(),
                });
                i += 1;
            }
            _ => {
                let run = text[i..].find(['[', ']']).unwrap_or(text.len() - i);
                plain.push_str(&text[i..i + run]);
                i += run;
            }
        }
    }
    Ok(GroundedCaption { plain, spans })
}

/// The caption with tags stripped.
pub fn render_plain(caption: &GroundedCaption) -> &str {
    caption.plain()
}

/// A record that failed validation, naming the offending field.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("record {image_id}: {field}: {message}")]
pub struct RecordError {
    /// Image the record describes.
    pub image_id: String,
    /// Dotted path of the failing field, e.g. `boxes.3[0]`.
    pub field: String,
    /// Human-readable reason.
    pub message: String,
}

/// One image with its grounded captions and per-entity boxes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    image_id: String,
    width: u32,
    height: u32,
    image_path: String,
    captions: Vec<GroundedCaption>,
    boxes: BTreeMap<EntityId, Vec<BoundingBox>>,
    categories: BTreeMap<EntityId, String>,
}

impl ImageRecord {
    /// Validates and assembles a record.
    ///
    /// Every boxed entity must be tagged in some caption, and every box must
    /// fit the canvas.
    pub fn new(
        image_id: impl Into<String>,
        width: u32,
        height: u32,
        image_path: impl Into<String>,
        captions: Vec<GroundedCaption>,
        boxes: BTreeMap<EntityId, Vec<BoundingBox>>,
        categories: BTreeMap<EntityId, String>,
    ) -> Result<Self, RecordError> {
        let image_id = image_id.into();
        let fail = |field: String, message: String| RecordError {
            image_id: image_id.clone(),
            field,
            message,
        };
        if image_id.is_empty() {
            return Err(fail("image_id".into(), "must not be empty".into()));
        }
        if width == 0 || height == 0 {
            return Err(fail("width".into(), format!("canvas {width}x{height} is empty")));
        }
        let tagged: BTreeSet<EntityId> = captions
            .iter()
            .flat_map(|c| c.spans.iter().map(|s| s.entity_id))
            .collect();
        for (id, list) in &boxes {
            if !tagged.contains(id) {
                return Err(fail(format!("boxes.{id}"), "entity is not tagged in any caption".into()));
            }
            for (k, b) in list.iter().enumerate() {
                if !b.fits(width, height) {
                    return Err(fail(
                        format!("boxes.{id}[{k}]"),
                        format!("box {b} exceeds canvas {width}x{height}"),
                    ));
                }
            }
        }
        Ok(Self {
            image_id,
            width,
            height,
            image_path: image_path.into(),
            captions,
            boxes,
            categories,
        })
    }

    /// Corpus-wide image identifier.
    pub fn image_id(&self) -> &str {
        &self.image_id
    }
    /// Canvas width in pixels.
    pub fn width(&self) -> u32 {
        self.width
    }
    /// Canvas height in pixels.
    pub fn height(&self) -> u32 {
        self.height
    }
    /// Image location as written in the corpus manifest.
    pub fn image_path(&self) -> &str {
        &self.image_path
    }
    /// Grounded captions in corpus order.
    pub fn captions(&self) -> &[GroundedCaption] {
        &self.captions
    }
    /// Boxes per entity.
    pub fn boxes(&self) -> &BTreeMap<EntityId, Vec<BoundingBox>> {
        &self.boxes
    }
    /// Category string per entity.
    pub fn categories(&self) -> &BTreeMap<EntityId, String> {
        &self.categories
    }
    /// Category of one entity.
    pub fn category(&self, id: EntityId) -> Option<&str> {
        self.categories.get(&id).map(String::as_str)
    }

    /// Every box in the image, paired with its entity, in entity order.
    pub fn all_boxes(&self) -> impl Iterator<Item = (EntityId, BoundingBox)> + '_ {
        self.boxes
            .iter()
            .flat_map(|(id, list)| list.iter().map(move |b| (*id, *b)))
    }
}

/// Number of boxes per category. Entities without a category are skipped.
pub fn category_counts(record: &ImageRecord) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for (id, list) in &record.boxes {
        if list.is_empty() {
            continue;
        }
        if let Some(cat) = record.categories.get(id) {
            *counts.entry(cat.clone()).or_insert(0) += list.len();
        }
    }
    counts
}
