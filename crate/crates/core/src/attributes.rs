//! Attribute items: negative-caption requests, response parsing, image jobs.
//!
//! A multimodal model gets the positive image, the same image with entity
//! boxes drawn on it, and the caption in plain and tagged form. It answers
//! with three negatives: one noun change, one adjective change and an
//! optional swap of two entities. Each negative caption then becomes a
//! text-to-image job.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounded::{EntityId, GroundedCaption, ImageRecord};
use crate::jobs::{ExpectedFormat, GenerationJob, ImageParams, JobError, JobId, JobSpec, LlmRequest};

/// Instruction template for negative-caption generation, verbatim.
pub const ATTRIBUTE_NEGATIVES_PROMPT: &str = include_str!("prompts/attribute_negatives.txt");

/// Rendering quality requested from the text-to-image service.
pub const T2I_QUALITY: &str = "hd";
/// Rendering style requested from the text-to-image service.
pub const T2I_STYLE: &str = "natural";

/// Box colours, assigned to entities in id order and cycling.
pub const PALETTE: [(&str, [u8; 3]); 8] = [
    ("purple", [128, 0, 128]),
    ("red", [255, 0, 0]),
    ("green", [0, 128, 0]),
    ("blue", [0, 0, 255]),
    ("orange", [255, 165, 0]),
    ("cyan", [0, 255, 255]),
    ("magenta", [255, 0, 255]),
    ("yellow", [255, 255, 0]),
];

/// Colour assigned to each overlaid entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Legend {
    /// `(entity id, colour name, rgb)` in drawing order.
    pub entries: Vec<(EntityId, &'static str, [u8; 3])>,
}

impl Legend {
    /// Assigns palette colours to `ids` in ascending order.
    pub fn for_entities(ids: impl IntoIterator<Item = EntityId>) -> Self {
        let mut ids: Vec<EntityId> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let entries = ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| {
                let (name, rgb) = PALETTE[i % PALETTE.len()];
                (id, name, rgb)
            })
            .collect();
        Self { entries }
    }

    /// Boxed entities of the record that are tagged in its first caption.
    pub fn for_record(record: &ImageRecord) -> Self {
        let Some(caption) = record.captions().first() else {
            return Self { entries: Vec::new() };
        };
        Self::for_entities(
            record
                .boxes()
                .iter()
                .filter(|(id, list)| !list.is_empty() && caption.span(**id).is_some())
                .map(|(id, _)| *id),
        )
    }

    /// `#1: purple, #2: red`.
    pub fn text(&self) -> String {
        let parts: Vec<String> = self.entries.iter().map(|(id, name, _)| format!("#{id}: {name}")).collect();
        parts.join(", ")
    }
}

/// Attribute-track failures.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AttributeError {
    /// The record has no caption to negate.
    #[error("record has no caption")]
    NoCaption,
    /// The response could not be read.
    #[error("unparseable response at byte {offset}: {message}")]
    Syntax {
        /// Byte offset of the failure in the (fence-stripped) text.
        offset: usize,
        /// What was expected.
        message: &'static str,
    },
    /// A required key is missing or has the wrong shape.
    #[error("response field `{0}` missing or malformed")]
    Field(&'static str),
    /// A negative caption equals the positive one.
    #[error("{0} negative repeats the positive caption")]
    Unchanged(&'static str),
    /// An action names an untagged entity.
    #[error("{kind} action names entity {id}, which the caption does not tag")]
    UnknownEntity {
        /// Negative kind.
        kind: &'static str,
        /// Offending id.
        id: EntityId,
    },
    /// Empty caption passed to the image planner.
    #[error("empty caption")]
    EmptyCaption,
    /// Invalid job.
    #[error(transparent)]
    Job(#[from] JobError),
}

/// Request for the record's first caption.
///
/// `boxed_image` is where the overlaid copy of the image lives.
pub fn build_attribute_request(record: &ImageRecord, boxed_image: &str) -> Result<LlmRequest, AttributeError> {
    let caption = record.captions().first().ok_or(AttributeError::NoCaption)?;
    let legend = Legend::for_record(record);
    Ok(LlmRequest {
        system: ATTRIBUTE_NEGATIVES_PROMPT.to_string(),
        user: attribute_query(caption, &legend),
        images: alloc::vec![
            ("original".to_string(), record.image_path().to_string()),
            ("boxed".to_string(), boxed_image.to_string()),
        ],
        expected_format: ExpectedFormat::AttributeJson,
    })
}

/// The per-item block appended to the template.
pub fn attribute_query(caption: &GroundedCaption, legend: &Legend) -> String {
    format!(
        "Original Caption: {}\nEnhanced Caption: {}\nBounding Boxes: {}\nYour answer:",
        caption.plain(),
        caption.to_tagged(),
        legend.text()
    )
}

/// Replace one phrase of an entity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseEdit {
    /// Entity edited.
    pub entity_id: EntityId,
    /// Phrase before.
    pub old_phrase: String,
    /// Phrase after.
    pub new_phrase: String,
}

/// A noun or adjective negative.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditNegative {
    /// What changed.
    pub action: PhraseEdit,
    /// Resulting caption.
    pub caption: String,
}

/// A swap of two entities or their qualifiers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapNegative {
    /// Entities swapped.
    pub entities: (EntityId, EntityId),
    /// Resulting caption.
    pub caption: String,
}

/// The three negative kinds of one answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeNegatives {
    /// Changed noun.
    pub noun: EditNegative,
    /// Changed adjective.
    pub adjective: EditNegative,
    /// Swapped pair; absent when the model reported none.
    pub reverse: Option<SwapNegative>,
}

/// Negative kind, also the scoring category of attribute items.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    /// Changed noun.
    Noun,
    /// Changed adjective.
    Adjective,
    /// Swapped pair.
    Reverse,
}

impl NegativeKind {
    /// Lowercase name.
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Noun => "noun",
            Self::Adjective => "adjective",
            Self::Reverse => "reverse",
        }
    }
}

impl AttributeNegatives {
    /// The negatives present, in kind order.
    pub fn captions(&self) -> Vec<(NegativeKind, &str)> {
        let mut out = alloc::vec![
            (NegativeKind::Noun, self.noun.caption.as_str()),
            (NegativeKind::Adjective, self.adjective.caption.as_str()),
        ];
        if let Some(r) = &self.reverse {
            out.push((NegativeKind::Reverse, r.caption.as_str()));
        }
        out
    }

    /// Checks the negatives against the caption they were made from.
    pub fn check(&self, source: &GroundedCaption) -> Result<(), AttributeError> {
        for (kind, caption) in self.captions() {
            if caption.trim() == source.plain().trim() {
                return Err(AttributeError::Unchanged(kind.as_str()));
            }
        }
        let known = |kind, id| {
            if source.span(id).is_some() {
                Ok(())
            } else {
                Err(AttributeError::UnknownEntity { kind, id })
            }
        };
        known("noun", self.noun.action.entity_id)?;
        known("adjective", self.adjective.action.entity_id)?;
        if let Some(r) = &self.reverse {
            known("reverse", r.entities.0)?;
            known("reverse", r.entities.1)?;
        }
        Ok(())
    }
}

// Tolerant reader for the loosely JSON-like answers models produce.

#[derive(Clone, Debug, PartialEq)]
enum Loose {
    Object(Vec<(String, Loose)>),
    Seq(Vec<Loose>),
    Str(String),
    Int(i64),
    Null,
}

impl Loose {
    fn get(&self, key: &str) -> Option<&Loose> {
        match self {
            Self::Object(fields) => fields.iter().find(|(k, _)| k == key).map(|(_, v)| v),
            _ => None,
        }
    }
    fn as_str(&self) -> Option<&str> {
        match self {
            Self::Str(s) => Some(s),
            _ => None,
        }
    }
    fn as_id(&self) -> Option<EntityId> {
        match self {
            Self::Int(n) => EntityId::try_from(*n).ok(),
            Self::Str(s) => s.trim().trim_start_matches('#').parse().ok(),
            _ => None,
        }
    }
    fn is_none_marker(&self) -> bool {
        match self {
            Self::Null => true,
            Self::Str(s) => matches!(s.trim(), "None" | "none" | "null" | ""),
            _ => false,
        }
    }
}

struct Reader<'a> {
    text: &'a str,
    pos: usize,
}

type ReadResult<T> = Result<T, AttributeError>;

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: &'static str) -> ReadResult<T> {
        Err(AttributeError::Syntax { offset: self.pos, message })
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn value(&mut self) -> ReadResult<Loose> {
        self.skip_ws();
        match self.peek() {
            Some('{') => self.object(),
            Some('(') => self.seq(')'),
            Some('[') => self.seq(']'),
            Some(q @ ('"' | '\'' | '“' | '‘')) => {
                self.bump();
                self.string(q).map(Loose::Str)
            }
            Some(c) if c == '-' || c.is_ascii_digit() => self.int(),
            Some(c) if c.is_alphabetic() => {
                let word = self.word();
                Ok(match word {
                    "None" | "null" | "none" | "NULL" => Loose::Null,
                    other => Loose::Str(other.to_string()),
                })
            }
            None => self.fail("unexpected end of input"),
            _ => self.fail("expected a value"),
        }
    }

    fn word(&mut self) -> &'a str {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_alphanumeric() || c == '_') {
            self.bump();
        }
        &self.text[start..self.pos]
    }

    fn int(&mut self) -> ReadResult<Loose> {
        let start = self.pos;
        if self.peek() == Some('-') {
            self.bump();
        }
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        match self.text[start..self.pos].parse() {
            Ok(n) => Ok(Loose::Int(n)),
            Err(_) => self.fail("bad integer"),
        }
    }

    /// Reads up to the closing quote that matches `open`. Single and curly
    /// quotes only close when followed by a structural character, so
    /// apostrophes inside captions survive.
    fn string(&mut self, open: char) -> ReadResult<String> {
        let mut out = String::new();
        loop {
            let Some(c) = self.bump() else {
                return self.fail("unterminated string");
            };
            match (open, c) {
                ('"', '"') => return Ok(out),
                ('"', '\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(other) => out.push(other),
                    None => return self.fail("unterminated escape"),
                },
                ('\'', '\'') | ('“', '”') | ('“', '"') | ('‘', '’') if self.at_string_end() => return Ok(out),
                _ => out.push(c),
            }
        }
    }

    fn at_string_end(&self) -> bool {
        let rest = self.text[self.pos..].trim_start();
        rest.is_empty() || rest.starts_with([',', ':', '}', ')', ']'])
    }

    fn key(&mut self) -> ReadResult<String> {
        self.skip_ws();
        match self.peek() {
            Some(q @ ('"' | '\'' | '“' | '‘')) => {
                self.bump();
                self.string(q)
            }
            Some(c) if c.is_alphabetic() || c == '_' => Ok(self.word().to_string()),
            _ => self.fail("expected a key"),
        }
    }

    fn object(&mut self) -> ReadResult<Loose> {
        self.bump();
        let mut fields = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some('}') {
                self.bump();
                return Ok(Loose::Object(fields));
            }
            let key = self.key()?;
            self.skip_ws();
            if self.bump() != Some(':') {
                return self.fail("expected `:`");
            }
            let value = self.value()?;
            fields.push((key, value));
            self.skip_ws();
            // stray closers after a value are dropped
            while matches!(self.peek(), Some(']' | ')')) {
                self.bump();
                self.skip_ws();
            }
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some('}') => {}
                _ => return self.fail("expected `,` or `}`"),
            }
        }
    }

    fn seq(&mut self, close: char) -> ReadResult<Loose> {
        self.bump();
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(close) {
                self.bump();
                return Ok(Loose::Seq(items));
            }
            items.push(self.value()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(c) if c == close => {}
                _ => return self.fail("expected `,` or a closing bracket"),
            }
        }
    }
}

/// Removes a Markdown code fence around the answer, if present.
fn strip_fences(text: &str) -> &str {
    let Some(start) = text.find("```") else {
        return text;
    };
    let after = &text[start + 3..];
    // drop the info string (`json`, ...) up to the end of the fence line
    let body = after.find('\n').map_or(after, |nl| &after[nl + 1..]);
    match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    }
}

fn edit_negative(root: &Loose, key: &'static str) -> ReadResult<EditNegative> {
    let entry = root.get(key).ok_or(AttributeError::Field(key))?;
    let action = match entry.get("action") {
        Some(Loose::Seq(parts)) if parts.len() == 3 => parts,
        _ => return Err(AttributeError::Field(key)),
    };
    let entity_id = action[0].as_id().ok_or(AttributeError::Field(key))?;
    let old_phrase = action[1].as_str().ok_or(AttributeError::Field(key))?;
    let new_phrase = action[2].as_str().ok_or(AttributeError::Field(key))?;
    let caption = entry.get("caption").and_then(Loose::as_str).ok_or(AttributeError::Field(key))?;
    if caption.trim().is_empty() {
        return Err(AttributeError::Field(key));
    }
    Ok(EditNegative {
        action: PhraseEdit { entity_id, old_phrase: old_phrase.into(), new_phrase: new_phrase.into() },
        caption: caption.trim().into(),
    })
}

fn swap_negative(root: &Loose) -> ReadResult<Option<SwapNegative>> {
    let entry = match root.get("reverse") {
        None => return Ok(None),
        Some(v) if v.is_none_marker() => return Ok(None),
        Some(v) => v,
    };
    let caption = entry.get("caption");
    if entry.get("action").is_some_and(Loose::is_none_marker) || caption.is_some_and(Loose::is_none_marker) {
        return Ok(None);
    }
    let (a, b) = match entry.get("action") {
        Some(Loose::Seq(ids)) if ids.len() == 2 => (ids[0].as_id(), ids[1].as_id()),
        _ => return Err(AttributeError::Field("reverse")),
    };
    let (Some(a), Some(b)) = (a, b) else {
        return Err(AttributeError::Field("reverse"));
    };
    let caption = caption.and_then(Loose::as_str).ok_or(AttributeError::Field("reverse"))?;
    if caption.trim().is_empty() {
        return Err(AttributeError::Field("reverse"));
    }
    Ok(Some(SwapNegative { entities: (a, b), caption: caption.trim().into() }))
}

/// Reads a model answer into the three negative kinds.
///
/// Accepts code fences, single, double or curly quotes, tuples or lists for
/// actions, `None`/`null` for a missing swap, and stray closing brackets.
pub fn parse_attribute_response(text: &str) -> Result<AttributeNegatives, AttributeError> {
    let body = strip_fences(text);
    let start = body.find('{').ok_or(AttributeError::Syntax { offset: 0, message: "no object found" })?;
    let mut reader = Reader { text: body, pos: start };
    let root = reader.value()?;
    Ok(AttributeNegatives {
        noun: edit_negative(&root, "noun")?,
        adjective: edit_negative(&root, "adjective")?,
        reverse: swap_negative(&root)?,
    })
}

fn normalized_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Widths of the contiguous token runs that differ between two captions,
/// by longest-common-subsequence alignment on lowercased words. A run's
/// width is the larger of its removed and inserted token counts.
pub fn diff_spans(positive: &str, negative: &str) -> Vec<usize> {
    let a = normalized_tokens(positive);
    let b = normalized_tokens(negative);
    let (n, m) = (a.len(), b.len());
    let mut lcs = alloc::vec![alloc::vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j] { lcs[i + 1][j + 1] + 1 } else { lcs[i + 1][j].max(lcs[i][j + 1]) };
        }
    }
    let mut spans = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (mut removed, mut inserted) = (0usize, 0usize);
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] {
            if removed + inserted > 0 {
                spans.push(removed.max(inserted));
                (removed, inserted) = (0, 0);
            }
            i += 1;
            j += 1;
        } else if j < m && (i == n || lcs[i][j + 1] >= lcs[i + 1][j]) {
            inserted += 1;
            j += 1;
        } else {
            removed += 1;
            i += 1;
        }
    }
    if removed + inserted > 0 {
        spans.push(removed.max(inserted));
    }
    spans
}

/// Number of differing runs; see [`diff_spans`].
pub fn token_span_diffs(positive: &str, negative: &str) -> usize {
    diff_spans(positive, negative).len()
}

/// Most differing spans tolerated for noun and adjective negatives.
pub const MAX_EDIT_SPANS: usize = 2;
/// Widest differing run tolerated in any negative.
pub const MAX_SPAN_TOKENS: usize = 4;

/// Whether a negative has the single-slot shape expected of its kind:
/// one or two differing spans for noun/adjective edits, exactly two for a
/// swap, none wider than [`MAX_SPAN_TOKENS`].
pub fn single_slot_ok(kind: NegativeKind, positive: &str, negative: &str) -> bool {
    let spans = diff_spans(positive, negative);
    let count_ok = match kind {
        NegativeKind::Noun | NegativeKind::Adjective => (1..=MAX_EDIT_SPANS).contains(&spans.len()),
        NegativeKind::Reverse => spans.len() == 2,
    };
    count_ok && spans.iter().all(|w| *w <= MAX_SPAN_TOKENS)
}

/// Text-to-image job for a negative caption, at hd quality and natural style.
pub fn plan_t2i_job(negative_caption: &str) -> Result<GenerationJob, AttributeError> {
    if negative_caption.trim().is_empty() {
        return Err(AttributeError::EmptyCaption);
    }
    Ok(GenerationJob::new(JobSpec::TextToImage {
        prompt: negative_caption.to_string(),
        params: ImageParams { quality: T2I_QUALITY.into(), style: T2I_STYLE.into() },
    })?)
}

/// What a negative changed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeAction {
    /// Phrase replacement.
    Edit(PhraseEdit),
    /// Entity swap.
    Swap {
        /// The swapped pair.
        entities: (EntityId, EntityId),
    },
}

/// One attribute item, a line of the attribute item file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeItem {
    /// `{image}/attr/{kind}`.
    pub item_id: String,
    /// Source image.
    pub image_id: String,
    /// Source image location.
    pub image_path: String,
    /// Always `attributes`.
    pub track: String,
    /// Scoring category; equals `kind`.
    pub category: String,
    /// Negative kind.
    pub kind: NegativeKind,
    /// Positive caption C.
    pub caption: String,
    /// What changed.
    pub action: AttributeAction,
    /// Negative caption C′.
    pub negative_caption: String,
    /// Text-to-image job.
    pub job_id: JobId,
    /// Language-model job the negative came from.
    pub source_job_id: JobId,
    /// False when the edit touches more spans than its kind allows.
    pub single_slot: bool,
}

/// Items and jobs derived from one answer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeBatch {
    /// Two or three items.
    pub items: Vec<AttributeItem>,
    /// One text-to-image job per item.
    pub jobs: Vec<GenerationJob>,
}

/// Turns a model answer for `record` into items and image jobs.
pub fn curate_attributes(
    record: &ImageRecord,
    source_job: &JobId,
    response: &str,
) -> Result<AttributeBatch, AttributeError> {
    let caption = record.captions().first().ok_or(AttributeError::NoCaption)?;
    let negatives = parse_attribute_response(response)?;
    negatives.check(caption)?;
    let mut batch = AttributeBatch { items: Vec::new(), jobs: Vec::new() };
    for (kind, negative) in negatives.captions() {
        let job = plan_t2i_job(negative)?;
        let action = match kind {
            NegativeKind::Noun => AttributeAction::Edit(negatives.noun.action.clone()),
            NegativeKind::Adjective => AttributeAction::Edit(negatives.adjective.action.clone()),
            NegativeKind::Reverse => AttributeAction::Swap {
                entities: negatives.reverse.as_ref().map(|r| r.entities).expect("present"),
            },
        };
        batch.items.push(AttributeItem {
            item_id: format!("{}/attr/{}", record.image_id(), kind.as_str()),
            image_id: record.image_id().into(),
            image_path: record.image_path().into(),
            track: "attributes".into(),
            category: kind.as_str().into(),
            kind,
            caption: caption.plain().into(),
            action,
            negative_caption: negative.into(),
            job_id: job.job_id.clone(),
            source_job_id: source_job.clone(),
            single_slot: single_slot_ok(kind, caption.plain(), negative),
        });
        batch.jobs.push(job);
    }
    Ok(batch)
}
