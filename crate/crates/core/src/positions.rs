//! Left/right and above/below items with their negative-image plans.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounded::{BoundingBox, EntityId, ImageRecord};
use crate::jobs::{
    ExpectedFormat, GenerationJob, ImageRef, JobError, JobId, JobSpec, LlmRequest, PromptSource, Region,
};
use crate::spatial::{
    classify_relations, hflip_box, swap_centers, unique_category_filter, Relation, RelationFact, Unsatisfiable,
};
use crate::text::with_article;

/// Instruction used to rewrite a vanilla above/below caption into a scene
/// description for grounded generation.
pub const ABOVE_BELOW_EXPANSION_PROMPT: &str = include_str!("prompts/above_below_expansion.txt");

/// Which half of the positions benchmark an item belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    /// Left/right.
    LR,
    /// Above/below.
    AB,
}

impl Subset {
    /// Subset of a relation.
    pub fn of(rel: Relation) -> Self {
        if rel.is_horizontal() {
            Self::LR
        } else {
            Self::AB
        }
    }

    /// `LR` or `AB`.
    pub fn as_str(self) -> &'static str {
        match self {
            Self::LR => "LR",
            Self::AB => "AB",
        }
    }
}

/// Why a position item could not be built.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PositionError {
    /// Entity has no category, or an empty one.
    #[error("entity {0} has no category")]
    MissingCategory(EntityId),
    /// Entity has no single box.
    #[error("entity {0} does not have exactly one box")]
    NotSingleBox(EntityId),
    /// Planner called for the wrong subset.
    #[error("{relation} fact cannot be planned as {expected}")]
    WrongSubset {
        /// Relation of the fact.
        relation: Relation,
        /// Subset the planner handles.
        expected: &'static str,
    },
    /// Recentred box cannot fit.
    #[error(transparent)]
    Unsatisfiable(#[from] Unsatisfiable),
    /// Invalid job.
    #[error(transparent)]
    Job(#[from] JobError),
}

/// One positions item, a line of the positions item file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionItem {
    /// Stable id derived from image, entities and relation.
    pub item_id: String,
    /// Source image.
    pub image_id: String,
    /// Source image location.
    pub image_path: String,
    /// Always `positions`.
    pub track: String,
    /// Scoring category; equals the subset tag.
    pub category: String,
    /// `LR` or `AB`.
    pub subset: Subset,
    /// Positive caption C.
    pub caption: String,
    /// Negative caption C′.
    pub negative_caption: String,
    /// Terminal job producing the negative image.
    pub job_id: JobId,
    /// Prompt-expansion job feeding `job_id`, above/below only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion_job_id: Option<JobId>,
    /// Subject and object entity ids.
    pub entities: (EntityId, EntityId),
    /// Relation of subject to object in the original image.
    pub relation: Relation,
}

fn single_box(record: &ImageRecord, id: EntityId) -> Result<BoundingBox, PositionError> {
    match record.boxes().get(&id).map(Vec::as_slice) {
        Some([b]) => Ok(*b),
        _ => Err(PositionError::NotSingleBox(id)),
    }
}

/// Relation facts between every pair of singly-boxed entities.
///
/// Facts are phrased from the satisfying subject so the relation is always
/// `Left` or `Above`; a diagonal pair yields one fact of each. Returns
/// nothing when some category has more than one instance.
pub fn extract_position_facts(record: &ImageRecord) -> Vec<RelationFact> {
    if !unique_category_filter(record) {
        return Vec::new();
    }
    let entities: Vec<(EntityId, BoundingBox)> = record
        .boxes()
        .iter()
        .filter(|(id, _)| record.category(**id).is_some_and(|c| !c.is_empty()))
        .filter_map(|(id, list)| match list.as_slice() {
            [b] => Some((*id, *b)),
            _ => None,
        })
        .collect();

    let mut facts = Vec::new();
    for (i, (a, box_a)) in entities.iter().enumerate() {
        for (b, box_b) in &entities[i + 1..] {
            let rels = classify_relations(box_a, box_b);
            let mut push = |subject: EntityId, object: EntityId, relation| {
                facts.push(RelationFact { image_id: record.image_id().into(), subject, object, relation });
            };
            match rels.horizontal() {
                Some(Relation::Left) => push(*a, *b, Relation::Left),
                Some(Relation::Right) => push(*b, *a, Relation::Left),
                _ => {}
            }
            match rels.vertical() {
                Some(Relation::Above) => push(*a, *b, Relation::Above),
                Some(Relation::Below) => push(*b, *a, Relation::Above),
                _ => {}
            }
        }
    }
    facts
}

fn category_of(categories: &BTreeMap<EntityId, String>, id: EntityId) -> Result<&str, PositionError> {
    match categories.get(&id) {
        Some(c) if !c.trim().is_empty() => Ok(c),
        _ => Err(PositionError::MissingCategory(id)),
    }
}

fn position_caption(subject: &str, relation: Relation, object: &str) -> String {
    format!("{} {} {}", with_article(subject), relation.phrase(), with_article(object))
}

/// Positive and negative captions for a fact; the negative flips only the
/// relation keyword.
pub fn make_position_captions(
    fact: &RelationFact,
    categories: &BTreeMap<EntityId, String>,
) -> Result<(String, String), PositionError> {
    let subject = category_of(categories, fact.subject)?;
    let object = category_of(categories, fact.object)?;
    Ok((
        position_caption(subject, fact.relation, object),
        position_caption(subject, fact.relation.opposite(), object),
    ))
}

/// Swaps the relation keyword of a position caption. `None` if the caption
/// has no recognisable keyword.
pub fn flip_position_keyword(caption: &str) -> Option<String> {
    const PAIRS: [(&str, &str); 4] = [
        (" is to the left of ", " is to the right of "),
        (" is to the right of ", " is to the left of "),
        (" is above ", " is below "),
        (" is below ", " is above "),
    ];
    PAIRS
        .iter()
        .find_map(|(from, to)| caption.find(from).map(|i| (i, from, to)))
        .map(|(i, from, to)| format!("{}{}{}", &caption[..i], to, &caption[i + from.len()..]))
}

/// Negative image for a left/right fact: mirror the whole image.
///
/// The job also carries every entity box mirrored, so the flipped image
/// stays grounded.
pub fn plan_lr_negative(record: &ImageRecord, fact: &RelationFact) -> Result<GenerationJob, PositionError> {
    if !fact.relation.is_horizontal() {
        return Err(PositionError::WrongSubset { relation: fact.relation, expected: "LR" });
    }
    plan_hflip(ImageRef::Original(record.image_path().into()), record)
}

/// A mirror job for `source` with the record's boxes mirrored.
pub fn plan_hflip(source: ImageRef, record: &ImageRecord) -> Result<GenerationJob, PositionError> {
    let width = record.width();
    let boxes = record
        .boxes()
        .iter()
        .map(|(id, list)| (*id, list.iter().map(|b| hflip_box(b, width)).collect()))
        .collect();
    Ok(GenerationJob::new(JobSpec::HFlip { source, width, height: record.height(), boxes })?)
}

/// Prompt expansion followed by grounded generation, for above/below facts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AboveBelowPlan {
    /// Rewrites the vanilla negative caption.
    pub expansion: GenerationJob,
    /// Generates the negative image from the expanded prompt.
    pub image: GenerationJob,
}

impl AboveBelowPlan {
    /// The expansion request.
    pub fn request(&self) -> &LlmRequest {
        match &self.expansion.spec {
            JobSpec::LlmText { request } => request,
            _ => unreachable!("expansion is always an llm_text job"),
        }
    }
}

/// Expansion request for a vanilla above/below caption.
pub fn expansion_request(vanilla_negative: &str) -> LlmRequest {
    LlmRequest {
        system: ABOVE_BELOW_EXPANSION_PROMPT.into(),
        user: vanilla_negative.into(),
        images: Vec::new(),
        expected_format: ExpectedFormat::FreeText,
    }
}

/// Negative image for an above/below fact: swap the two box centres and
/// generate a new scene from the expanded negative caption.
pub fn plan_ab_negative(record: &ImageRecord, fact: &RelationFact) -> Result<AboveBelowPlan, PositionError> {
    if fact.relation.is_horizontal() {
        return Err(PositionError::WrongSubset { relation: fact.relation, expected: "AB" });
    }
    let (_, negative) = make_position_captions(fact, record.categories())?;
    let subject_box = single_box(record, fact.subject)?;
    let object_box = single_box(record, fact.object)?;
    let (subject_new, object_new) = swap_centers(&subject_box, &object_box, record.width(), record.height())?;

    let expansion = GenerationJob::new(JobSpec::LlmText { request: expansion_request(&negative) })?;
    let regions = alloc::vec![
        Region { bbox: subject_new, prompt: category_of(record.categories(), fact.subject)?.into() },
        Region { bbox: object_new, prompt: category_of(record.categories(), fact.object)?.into() },
    ];
    let image = GenerationJob::new(JobSpec::BoxedT2I {
        prompt: PromptSource::FromJob(expansion.job_id.clone()),
        width: record.width(),
        height: record.height(),
        regions,
        params: BTreeMap::new(),
    })?;
    Ok(AboveBelowPlan { expansion, image })
}

/// Items and jobs for one record, plus per-fact failures.
#[derive(Clone, Debug, Default)]
pub struct PositionBatch {
    /// Emitted items in fact order.
    pub items: Vec<PositionItem>,
    /// Jobs the items reference, in planning order.
    pub jobs: Vec<GenerationJob>,
    /// Facts that could not be planned.
    pub skipped: Vec<(RelationFact, PositionError)>,
}

/// Runs the positions track over one record.
pub fn curate_positions(record: &ImageRecord) -> PositionBatch {
    let mut out = PositionBatch::default();
    for fact in extract_position_facts(record) {
        match curate_fact(record, &fact) {
            Ok((item, jobs)) => {
                out.items.push(item);
                out.jobs.extend(jobs);
            }
            Err(e) => out.skipped.push((fact, e)),
        }
    }
    out
}

fn curate_fact(
    record: &ImageRecord,
    fact: &RelationFact,
) -> Result<(PositionItem, Vec<GenerationJob>), PositionError> {
    let (caption, negative_caption) = make_position_captions(fact, record.categories())?;
    let subset = Subset::of(fact.relation);
    let (job_id, expansion_job_id, jobs) = match subset {
        Subset::LR => {
            let job = plan_lr_negative(record, fact)?;
            (job.job_id.clone(), None, alloc::vec![job])
        }
        Subset::AB => {
            let plan = plan_ab_negative(record, fact)?;
            (plan.image.job_id.clone(), Some(plan.expansion.job_id.clone()), alloc::vec![plan.expansion, plan.image])
        }
    };
    let item = PositionItem {
        item_id: format!("{}/pos/{}-{}/{}", record.image_id(), fact.subject, fact.object, fact.relation),
        image_id: record.image_id().into(),
        image_path: record.image_path().into(),
        track: "positions".into(),
        category: subset.as_str().into(),
        subset,
        caption,
        negative_caption,
        job_id,
        expansion_job_id,
        entities: (fact.subject, fact.object),
        relation: fact.relation,
    };
    Ok((item, jobs))
}
