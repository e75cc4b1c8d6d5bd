//! Counting items: count captions, counterfactual counts, inpainting plans.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounded::{category_counts, BoundingBox, EntityId, ImageRecord};
use crate::jobs::{GenerationJob, ImageRef, JobError, JobId, JobSpec, Region};
use crate::spatial::boxes_overlap;
use crate::text::{count_phrase, NumberStyle};

/// Prompt used to paint over removed objects.
pub const REMOVAL_PROMPT: &str = "plant";

/// How a negative count caption was derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// No P/Q box overlaps anything: one Q becomes a P.
    SwapCounts,
    /// Some box overlaps: remove one P or Q box and what it overlaps.
    RemoveClosure,
}

/// Which boxes go with a removed box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapClosure {
    /// Boxes overlapping the removed box directly.
    #[default]
    Direct,
    /// Everything reachable through chains of overlaps.
    Transitive,
}

/// Options for the counting track.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingOptions {
    /// Removal neighbourhood.
    pub closure: OverlapClosure,
    /// Number rendering in captions.
    pub number_style: NumberStyle,
}

/// One edit on the positive image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "edit", rename_all = "snake_case")]
pub enum BoxEdit {
    /// Paint an object of category `to` over a `from` box.
    Replace {
        /// Category removed.
        from: String,
        /// Category painted in.
        to: String,
        /// Where.
        #[serde(rename = "box")]
        bbox: BoundingBox,
    },
    /// Paint a plant over the box.
    RemoveAsPlant {
        /// Where.
        #[serde(rename = "box")]
        bbox: BoundingBox,
    },
}

/// The two categories a counting caption talks about; `n_p <= n_q`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryPair {
    /// Category with fewer boxes.
    pub p: String,
    /// Its box count.
    pub n_p: u32,
    /// Category with more boxes.
    pub q: String,
    /// Its box count.
    pub n_q: u32,
}

/// Counting failures.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CountingError {
    /// Captions never mention zero objects.
    #[error("count of {0} would be zero")]
    ZeroCount(String),
    /// An edit plan must contain at least one edit.
    #[error("empty edit plan")]
    EmptyPlan,
    /// Invalid job.
    #[error(transparent)]
    Job(#[from] JobError),
}

/// Negative caption and the edits that realise it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountingNegative {
    /// Negative caption C′.
    pub caption: String,
    /// How it was derived.
    pub branch: Branch,
    /// Counts of P and Q in the negative.
    pub counts: (u32, u32),
    /// Image edits.
    pub edit_plan: Vec<BoxEdit>,
}

/// One counting item, a line of the counting item file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingItem {
    /// Stable id derived from image and categories.
    pub item_id: String,
    /// Source image.
    pub image_id: String,
    /// Source image location.
    pub image_path: String,
    /// Always `counting`.
    pub track: String,
    /// Scoring category, always `counting`.
    pub category: String,
    /// Category with fewer boxes.
    #[serde(rename = "P")]
    pub p: String,
    /// Category with more boxes.
    #[serde(rename = "Q")]
    pub q: String,
    /// Boxes of P.
    #[serde(rename = "n_P")]
    pub n_p: u32,
    /// Boxes of Q.
    #[serde(rename = "n_Q")]
    pub n_q: u32,
    /// P count in the negative caption.
    #[serde(rename = "n_P_negative")]
    pub n_p_negative: u32,
    /// Q count in the negative caption.
    #[serde(rename = "n_Q_negative")]
    pub n_q_negative: u32,
    /// Derivation branch.
    pub branch: Branch,
    /// Positive caption C.
    pub caption: String,
    /// Negative caption C′.
    pub negative_caption: String,
    /// Edits behind the negative image.
    pub edit_plan: Vec<BoxEdit>,
    /// Inpainting job.
    pub job_id: JobId,
}

/// The two most frequent categories, ties broken alphabetically.
///
/// `p` has fewer boxes than `q`; on equal counts `p` sorts first.
pub fn select_category_pair(record: &ImageRecord) -> Option<CategoryPair> {
    let mut ranked: Vec<(String, usize)> = category_counts(record).into_iter().filter(|(_, n)| *n > 0).collect();
    ranked.sort_by(|(ca, na), (cb, nb)| nb.cmp(na).then_with(|| ca.cmp(cb)));
    let mut top = ranked.into_iter().take(2);
    let (first, n_first) = top.next()?;
    let (second, n_second) = top.next()?;
    let (n_first, n_second) = (n_first as u32, n_second as u32);
    Some(if n_second < n_first || (n_second == n_first && second < first) {
        CategoryPair { p: second, n_p: n_second, q: first, n_q: n_first }
    } else {
        CategoryPair { p: first, n_p: n_first, q: second, n_q: n_second }
    })
}

/// `there are {n_p} {P}s and {n_q} {Q}s`.
pub fn make_counting_caption(p: &str, n_p: u32, q: &str, n_q: u32, style: NumberStyle) -> Result<String, CountingError> {
    if n_p == 0 {
        return Err(CountingError::ZeroCount(p.into()));
    }
    if n_q == 0 {
        return Err(CountingError::ZeroCount(q.into()));
    }
    Ok(format!("there are {} and {}", count_phrase(n_p, p, style), count_phrase(n_q, q, style)))
}

struct Instance<'a> {
    category: Option<&'a str>,
    bbox: BoundingBox,
}

fn instances(record: &ImageRecord) -> Vec<Instance<'_>> {
    record
        .all_boxes()
        .map(|(id, bbox): (EntityId, BoundingBox)| Instance { category: record.category(id), bbox })
        .collect()
}

fn overlap_graph(inst: &[Instance<'_>]) -> Vec<Vec<usize>> {
    let mut adj = alloc::vec![Vec::new(); inst.len()];
    for i in 0..inst.len() {
        for j in i + 1..inst.len() {
            if boxes_overlap(&inst[i].bbox, &inst[j].bbox) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    adj
}

/// Largest area first, then smallest corner coordinates, then index.
fn pick_largest(candidates: impl Iterator<Item = usize>, inst: &[Instance<'_>]) -> Option<usize> {
    candidates.min_by(|&a, &b| {
        let (ba, bb) = (inst[a].bbox, inst[b].bbox);
        bb.area().cmp(&ba.area()).then_with(|| ba.to_array().cmp(&bb.to_array())).then_with(|| a.cmp(&b))
    })
}

/// Negative caption for a category pair.
///
/// When no P or Q box overlaps any other box in the image, the counts move
/// by one (`n_p + 1`, `n_q - 1`) and the largest Q box is repainted as P.
/// Otherwise the largest overlapping P-or-Q box is removed together with the
/// boxes it overlaps (per [`OverlapClosure`]) and the counts are taken from
/// what remains.
pub fn negate_counting(
    record: &ImageRecord,
    pair: &CategoryPair,
    options: CountingOptions,
) -> Result<CountingNegative, CountingError> {
    let inst = instances(record);
    let adj = overlap_graph(&inst);
    let in_pair = |i: usize| matches!(inst[i].category, Some(c) if c == pair.p || c == pair.q);
    let style = options.number_style;

    let contested: Vec<usize> = (0..inst.len()).filter(|&i| in_pair(i) && !adj[i].is_empty()).collect();
    if contested.is_empty() {
        let q_box = pick_largest((0..inst.len()).filter(|&i| inst[i].category == Some(pair.q.as_str())), &inst)
            .ok_or_else(|| CountingError::ZeroCount(pair.q.clone()))?;
        let counts = (pair.n_p + 1, pair.n_q - 1);
        let caption = make_counting_caption(&pair.p, counts.0, &pair.q, counts.1, style)?;
        return Ok(CountingNegative {
            caption,
            branch: Branch::SwapCounts,
            counts,
            edit_plan: alloc::vec![BoxEdit::Replace {
                from: pair.q.clone(),
                to: pair.p.clone(),
                bbox: inst[q_box].bbox,
            }],
        });
    }

    let chosen = pick_largest(contested.into_iter(), &inst).expect("non-empty");
    let mut removed = BTreeSet::from([chosen]);
    match options.closure {
        OverlapClosure::Direct => removed.extend(adj[chosen].iter().copied()),
        OverlapClosure::Transitive => {
            let mut stack = alloc::vec![chosen];
            while let Some(i) = stack.pop() {
                for &j in &adj[i] {
                    if removed.insert(j) {
                        stack.push(j);
                    }
                }
            }
        }
    }
    let remaining = |cat: &str| {
        (0..inst.len()).filter(|i| !removed.contains(i) && inst[*i].category == Some(cat)).count() as u32
    };
    let counts = (remaining(&pair.p), remaining(&pair.q));
    let caption = make_counting_caption(&pair.p, counts.0, &pair.q, counts.1, style)?;
    // chosen box first, the rest in image order
    let edit_plan = core::iter::once(chosen)
        .chain(removed.iter().copied().filter(|&i| i != chosen))
        .map(|i| BoxEdit::RemoveAsPlant { bbox: inst[i].bbox })
        .collect();
    Ok(CountingNegative { caption, branch: Branch::RemoveClosure, counts, edit_plan })
}

/// Inpainting job for an edit plan on the record's image.
pub fn plan_counting_image(record: &ImageRecord, edit_plan: &[BoxEdit]) -> Result<GenerationJob, CountingError> {
    if edit_plan.is_empty() {
        return Err(CountingError::EmptyPlan);
    }
    let regions = edit_plan
        .iter()
        .map(|edit| match edit {
            BoxEdit::Replace { to, bbox, .. } => Region { bbox: *bbox, prompt: to.clone() },
            BoxEdit::RemoveAsPlant { bbox } => Region { bbox: *bbox, prompt: REMOVAL_PROMPT.into() },
        })
        .collect();
    Ok(GenerationJob::new(JobSpec::Inpaint {
        source: ImageRef::Original(record.image_path().into()),
        width: record.width(),
        height: record.height(),
        regions,
        params: BTreeMap::new(),
    })?)
}

/// Why a record produced no counting item.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CountingSkip {
    /// Fewer than two boxed categories.
    #[error("fewer than two boxed categories")]
    NoPair,
    /// Negation or planning failed.
    #[error(transparent)]
    Failed(#[from] CountingError),
}

/// Runs the counting track over one record.
pub fn curate_counting(
    record: &ImageRecord,
    options: CountingOptions,
) -> Result<(CountingItem, GenerationJob), CountingSkip> {
    let pair = select_category_pair(record).ok_or(CountingSkip::NoPair)?;
    let caption = make_counting_caption(&pair.p, pair.n_p, &pair.q, pair.n_q, options.number_style)?;
    let negative = negate_counting(record, &pair, options)?;
    let job = plan_counting_image(record, &negative.edit_plan)?;
    let item = CountingItem {
        item_id: format!("{}/count/{}-{}", record.image_id(), pair.p, pair.q),
        image_id: record.image_id().into(),
        image_path: record.image_path().into(),
        track: "counting".into(),
        category: "counting".into(),
        n_p_negative: negative.counts.0,
        n_q_negative: negative.counts.1,
        p: pair.p,
        q: pair.q,
        n_p: pair.n_p,
        n_q: pair.n_q,
        branch: negative.branch,
        caption,
        negative_caption: negative.caption,
        edit_plan: negative.edit_plan,
        job_id: job.job_id.clone(),
    };
    Ok((item, job))
}
