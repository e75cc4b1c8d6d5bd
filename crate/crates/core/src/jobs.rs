//! Generation work orders.
//!
//! A job is identified by the SHA-256 of its canonical JSON specification, so
//! planning the same work twice yields the same id and re-runs are idempotent.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grounded::{BoundingBox, EntityId};

/// Content hash of a [`JobSpec`], 32 lowercase hex digits.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(String);

impl JobId {
    /// Hex digest as a string.
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wraps an id read from a manifest.
    pub fn from_hex(hex: &str) -> Option<Self> {
        (hex.len() == 32 && hex.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()))
            .then(|| Self(hex.into()))
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Kind of generator a job needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    /// Local horizontal mirror.
    #[serde(rename = "hflip")]
    HFlip,
    /// Region inpainting on an existing image.
    Inpaint,
    /// Box-grounded text-to-image generation.
    #[serde(rename = "boxed_t2i")]
    BoxedT2I,
    /// Plain text-to-image generation.
    TextToImage,
    /// Language-model completion.
    LlmText,
}

impl JobKind {
    /// All kinds in declaration order.
    pub const ALL: [JobKind; 5] = [Self::HFlip, Self::Inpaint, Self::BoxedT2I, Self::TextToImage, Self::LlmText];

    /// Wire name, also used in `COUNTERCURATE_ENDPOINT_<KIND>`.
    pub fn name(self) -> &'static str {
        match self {
            Self::HFlip => "hflip",
            Self::Inpaint => "inpaint",
            Self::BoxedT2I => "boxed_t2i",
            Self::TextToImage => "text_to_image",
            Self::LlmText => "llm_text",
        }
    }

    /// Whether the job produces an image (as opposed to text).
    pub fn yields_image(self) -> bool {
        !matches!(self, Self::LlmText)
    }
}

impl fmt::Display for JobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a job reads its source image from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRef {
    /// A corpus image path.
    Original(String),
    /// The output of another job.
    Generated(JobId),
}

/// Where a prompt comes from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    /// Known at planning time.
    Literal(String),
    /// The text output of an earlier `llm_text` job.
    FromJob(JobId),
}

/// A box plus the phrase to generate inside it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    /// Target rectangle.
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// What to draw there.
    pub prompt: String,
}

/// Text-to-image rendering options.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageParams {
    /// Quality tier, e.g. `hd`.
    pub quality: String,
    /// Style preset, e.g. `natural`.
    pub style: String,
}

/// Expected shape of a language-model answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedFormat {
    /// Object literal with noun/adjective/reverse negatives.
    AttributeJson,
    /// Free text.
    FreeText,
}

/// A prompt for a (possibly multimodal) language model.
///
/// `system` holds a fixed instruction template; `user` holds the per-item
/// content substituted into it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmRequest {
    /// Instruction template, byte-identical to the stored constant.
    pub system: String,
    /// Per-item query.
    pub user: String,
    /// Images attached, with a role tag such as `original` or `boxed`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<(String, String)>,
    /// How the answer will be parsed.
    pub expected_format: ExpectedFormat,
}

impl LlmRequest {
    /// Single prompt string for completion endpoints.
    pub fn prompt(&self) -> String {
        let mut s = String::with_capacity(self.system.len() + self.user.len() + 2);
        s.push_str(&self.system);
        s.push_str("\n\n");
        s.push_str(&self.user);
        s
    }
}

// Integer map keys do not survive the buffering of adjacently tagged enums,
// so entity ids go through strings explicitly.
mod entity_keys {
    use super::*;
    use alloc::string::ToString;
    use serde::de::Error as _;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<EntityId, Vec<BoundingBox>>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(map.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<EntityId, Vec<BoundingBox>>, D::Error> {
        let raw = BTreeMap::<String, Vec<BoundingBox>>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| k.parse().map(|id| (id, v)).map_err(|_| D::Error::custom(alloc::format!("entity id `{k}`"))))
            .collect()
    }
}

/// Everything that determines a job's output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum JobSpec {
    /// Mirror `source` left to right.
    #[serde(rename = "hflip")]
    HFlip {
        /// Image to mirror; must be an original.
        source: ImageRef,
        /// Canvas width.
        width: u32,
        /// Canvas height.
        height: u32,
        /// Every entity box after mirroring, so the flipped image stays grounded.
        #[serde(with = "entity_keys")]
        boxes: BTreeMap<EntityId, Vec<BoundingBox>>,
    },
    /// Repaint regions of `source`.
    Inpaint {
        /// Image to edit.
        source: ImageRef,
        /// Canvas width.
        width: u32,
        /// Canvas height.
        height: u32,
        /// Regions with their replacement prompts.
        regions: Vec<Region>,
        /// Inference options passed through to the service.
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        params: BTreeMap<String, String>,
    },
    /// Generate a new image from a scene prompt and grounded boxes.
    #[serde(rename = "boxed_t2i")]
    BoxedT2I {
        /// Scene prompt.
        prompt: PromptSource,
        /// Canvas width.
        width: u32,
        /// Canvas height.
        height: u32,
        /// Grounded boxes with their phrases.
        regions: Vec<Region>,
        /// Inference options passed through to the service.
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        params: BTreeMap<String, String>,
    },
    /// Generate an image from a caption.
    TextToImage {
        /// Caption, verbatim.
        prompt: String,
        /// Rendering options.
        params: ImageParams,
    },
    /// Ask a language model.
    LlmText {
        /// The request.
        request: LlmRequest,
    },
}

/// A job specification rejected at planning time.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum JobError {
    /// Flips and inpaints only read corpus images.
    #[error("{0} jobs must read an original image, not another job's output")]
    ChainedSource(JobKind),
    /// A region does not fit the canvas.
    #[error("region {bbox} lies outside the {width}x{height} canvas")]
    RegionOutsideCanvas {
        /// Offending box.
        bbox: BoundingBox,
        /// Canvas width.
        width: u32,
        /// Canvas height.
        height: u32,
    },
    /// Inpaint or grounded generation without regions.
    #[error("{0} job has no regions")]
    NoRegions(JobKind),
    /// Empty prompt text.
    #[error("{0} job has an empty prompt")]
    EmptyPrompt(JobKind),
}

impl JobSpec {
    /// The generator kind this spec needs.
    pub fn kind(&self) -> JobKind {
        match self {
            Self::HFlip { .. } => JobKind::HFlip,
            Self::Inpaint { .. } => JobKind::Inpaint,
            Self::BoxedT2I { .. } => JobKind::BoxedT2I,
            Self::TextToImage { .. } => JobKind::TextToImage,
            Self::LlmText { .. } => JobKind::LlmText,
        }
    }

    /// Content hash of the canonical JSON form.
    pub fn job_id(&self) -> JobId {
        let bytes = serde_json::to_vec(self).expect("job specs always serialize");
        let digest = Sha256::digest(&bytes);
        let mut hex = String::with_capacity(32);
        for b in &digest[..16] {
            hex.push(char::from_digit(u32::from(b >> 4), 16).unwrap());
            hex.push(char::from_digit(u32::from(b & 0xf), 16).unwrap());
        }
        JobId(hex)
    }

    /// Jobs whose outputs this one reads.
    pub fn dependencies(&self) -> Vec<JobId> {
        match self {
            Self::HFlip { source: ImageRef::Generated(id), .. }
            | Self::Inpaint { source: ImageRef::Generated(id), .. }
            | Self::BoxedT2I { prompt: PromptSource::FromJob(id), .. } => alloc::vec![id.clone()],
            _ => Vec::new(),
        }
    }

    /// Checks structural invariants.
    pub fn validate(&self) -> Result<(), JobError> {
        let kind = self.kind();
        let check_regions = |regions: &[Region], width: u32, height: u32| {
            if regions.is_empty() {
                return Err(JobError::NoRegions(kind));
            }
            for r in regions {
                if !r.bbox.fits(width, height) {
                    return Err(JobError::RegionOutsideCanvas { bbox: r.bbox, width, height });
                }
                if r.prompt.trim().is_empty() {
                    return Err(JobError::EmptyPrompt(kind));
                }
            }
            Ok(())
        };
        match self {
            Self::HFlip { source: ImageRef::Generated(_), .. } | Self::Inpaint { source: ImageRef::Generated(_), .. } => {
                Err(JobError::ChainedSource(kind))
            }
            Self::HFlip { .. } => Ok(()),
            Self::Inpaint { width, height, regions, .. } => check_regions(regions, *width, *height),
            Self::BoxedT2I { prompt, width, height, regions, .. } => {
                if matches!(prompt, PromptSource::Literal(p) if p.trim().is_empty()) {
                    return Err(JobError::EmptyPrompt(kind));
                }
                check_regions(regions, *width, *height)
            }
            Self::TextToImage { prompt, .. } if prompt.trim().is_empty() => Err(JobError::EmptyPrompt(kind)),
            Self::TextToImage { .. } => Ok(()),
            Self::LlmText { request } if request.user.trim().is_empty() => Err(JobError::EmptyPrompt(kind)),
            Self::LlmText { .. } => Ok(()),
        }
    }
}

/// Lifecycle state of a job.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    /// Not yet run, or waiting on a dependency.
    #[default]
    Pending,
    /// Output written.
    Done,
    /// Gave up after retries.
    Failed,
}

/// A job plus its execution state, one line of the job manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationJob {
    /// Content hash of `spec`.
    pub job_id: JobId,
    /// Kind and payload.
    #[serde(flatten)]
    pub spec: JobSpec,
    /// Current state.
    #[serde(default)]
    pub status: JobStatus,
    /// Output location relative to the run directory, once done.
    #[serde(default)]
    pub output_path: Option<String>,
    /// Executions tried so far.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub attempts: u32,
    /// Last failure message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl GenerationJob {
    /// Validates `spec` and wraps it as a pending job.
    pub fn new(spec: JobSpec) -> Result<Self, JobError> {
        spec.validate()?;
        Ok(Self {
            job_id: spec.job_id(),
            spec,
            status: JobStatus::Pending,
            output_path: None,
            attempts: 0,
            error: None,
        })
    }

    /// Kind of the underlying spec.
    pub fn kind(&self) -> JobKind {
        self.spec.kind()
    }

    /// Whether the stored id matches the payload hash.
    pub fn id_is_consistent(&self) -> bool {
        self.spec.job_id() == self.job_id
    }
}
