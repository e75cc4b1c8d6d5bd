//! Training artifacts: train/test split, grouped contrastive batches and
//! two-option conversation records.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::keyed_rng;

/// Track tags carried by groups.
pub const TRACKS: [&str; 4] = ["positions-LR", "positions-AB", "counting", "attributes"];

/// Assembly failures.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AssembleError {
    /// Nothing to split or batch.
    #[error("no items")]
    Empty,
    /// The split ratio has a zero part.
    #[error("split ratio {0}:{1} is degenerate")]
    BadRatio(u32, u32),
    /// Batch size zero or larger than the pool.
    #[error("batch size {batch} does not fit a pool of {pool} groups")]
    BatchSize {
        /// Requested N.
        batch: usize,
        /// Groups available after sampling.
        pool: usize,
    },
    /// Sampling fraction outside (0, 1].
    #[error("sample fraction {0} outside (0, 1]")]
    Fraction(String),
    /// A group whose two captions coincide.
    #[error("group {0}: positive and negative captions are identical")]
    SameCaption(String),
    /// Unknown track tag.
    #[error("group {0}: unknown track `{1}`")]
    Track(String, String),
}

/// A positive pair and its counterfactual: (C, I, C′, I′).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualGroup {
    /// Usually the item id.
    pub group_id: String,
    /// One of [`TRACKS`].
    pub track: String,
    /// C.
    pub caption: String,
    /// I.
    pub image: String,
    /// C′.
    pub negative_caption: String,
    /// I′.
    pub negative_image: String,
}

impl CounterfactualGroup {
    /// Checks the group invariants.
    pub fn new(
        group_id: impl Into<String>,
        track: impl Into<String>,
        caption: impl Into<String>,
        image: impl Into<String>,
        negative_caption: impl Into<String>,
        negative_image: impl Into<String>,
    ) -> Result<Self, AssembleError> {
        let group = Self {
            group_id: group_id.into(),
            track: track.into(),
            caption: caption.into(),
            image: image.into(),
            negative_caption: negative_caption.into(),
            negative_image: negative_image.into(),
        };
        if !TRACKS.contains(&group.track.as_str()) {
            return Err(AssembleError::Track(group.group_id, group.track));
        }
        if group.caption == group.negative_caption {
            return Err(AssembleError::SameCaption(group.group_id));
        }
        Ok(group)
    }
}

/// Train:test proportion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    /// Train part.
    pub train: u32,
    /// Test part.
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self { train: 4, test: 1 }
    }
}

/// Splits items by image: images are shuffled with `seed` and the first
/// `⌊images · test / (train + test)⌋` go to test. Item order is kept on
/// both sides.
pub fn split_train_test<T: Clone>(
    items: &[T],
    image_of: impl Fn(&T) -> &str,
    ratio: SplitRatio,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), AssembleError> {
    if items.is_empty() {
        return Err(AssembleError::Empty);
    }
    if ratio.train == 0 || ratio.test == 0 {
        return Err(AssembleError::BadRatio(ratio.train, ratio.test));
    }
    let mut images: Vec<&str> = items.iter().map(&image_of).collect::<BTreeSet<_>>().into_iter().collect();
    images.shuffle(&mut keyed_rng(seed, "split"));
    let n_test = images.len() * ratio.test as usize / (ratio.train + ratio.test) as usize;
    let test_images: BTreeSet<&str> = images[..n_test].iter().copied().collect();
    let (test, train): (Vec<T>, Vec<T>) = items.iter().cloned().partition(|it| test_images.contains(image_of(it)));
    Ok((train, test))
}

/// Ablation switches for batch assembly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Drop I′.
    pub no_negative_images: bool,
    /// Drop C′.
    pub no_negative_captions: bool,
    /// Shuffle positive and negative pairs independently instead of keeping
    /// each quadruple in one batch.
    pub no_grouping: bool,
}

impl AblationFlags {
    /// All three switches on: plain (C, I) batches.
    pub const VANILLA: Self = Self { no_negative_images: true, no_negative_captions: true, no_grouping: true };
}

/// Batch assembly settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchOptions {
    /// Groups per batch, N.
    pub batch_size: usize,
    /// Shuffle seed.
    pub seed: u64,
    /// Ablations.
    pub flags: AblationFlags,
    /// Fraction of groups used, in (0, 1].
    pub sample_fraction: f64,
}

impl BatchOptions {
    /// Full pool, no ablations.
    pub fn new(batch_size: usize, seed: u64) -> Self {
        Self { batch_size, seed, flags: AblationFlags::default(), sample_fraction: 1.0 }
    }
}

/// One batch manifest line. Caption `i` and image `j` form a positive pair
/// iff `(i, j)` is listed in `positives`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupedBatch {
    /// Zero-based index within the manifest.
    pub batch_id: usize,
    /// Groups supplying C and I, in caption order.
    pub group_ids: Vec<String>,
    /// Groups supplying C′ and I′; equal to `group_ids` when grouping.
    pub negative_group_ids: Vec<String>,
    /// Positive captions first, then negative captions.
    pub captions: Vec<String>,
    /// Positive images first, then negative images.
    pub images: Vec<String>,
    /// Positive (caption, image) index pairs.
    pub positives: Vec<(usize, usize)>,
}

impl GroupedBatch {
    /// Caption × image positive mask.
    pub fn positive_mask(&self) -> Vec<Vec<bool>> {
        let mut mask = alloc::vec![alloc::vec![false; self.images.len()]; self.captions.len()];
        for &(c, i) in &self.positives {
            mask[c][i] = true;
        }
        mask
    }
}

fn batch_from(
    batch_id: usize,
    pos: &[&CounterfactualGroup],
    neg: &[&CounterfactualGroup],
    flags: AblationFlags,
) -> GroupedBatch {
    let mut captions: Vec<String> = pos.iter().map(|g| g.caption.clone()).collect();
    let mut images: Vec<String> = pos.iter().map(|g| g.image.clone()).collect();
    let mut positives: Vec<(usize, usize)> = (0..pos.len()).map(|i| (i, i)).collect();
    if !flags.no_negative_captions {
        captions.extend(neg.iter().map(|g| g.negative_caption.clone()));
    }
    if !flags.no_negative_images {
        images.extend(neg.iter().map(|g| g.negative_image.clone()));
    }
    if !flags.no_negative_captions && !flags.no_negative_images {
        positives.extend((pos.len()..pos.len() + neg.len()).map(|i| (i, i)));
    }
    let negative_group_ids = if flags.no_negative_captions && flags.no_negative_images {
        Vec::new()
    } else {
        neg.iter().map(|g| g.group_id.clone()).collect()
    };
    GroupedBatch {
        batch_id,
        group_ids: pos.iter().map(|g| g.group_id.clone()).collect(),
        negative_group_ids,
        captions,
        images,
        positives,
    }
}

/// Packs groups into batches of N.
///
/// With grouping, each batch holds N whole quadruples, so C′ and I′ of a
/// group sit beside its C and I. Without it, the (C, I) pairs and the
/// (C′, I′) pairs are shuffled separately and each batch takes N of each.
/// The trailing partial batch is dropped.
pub fn build_grouped_batches(
    groups: &[CounterfactualGroup],
    options: &BatchOptions,
) -> Result<Vec<GroupedBatch>, AssembleError> {
    if groups.is_empty() {
        return Err(AssembleError::Empty);
    }
    let fraction = options.sample_fraction;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(AssembleError::Fraction(format!("{fraction}")));
    }
    let mut pool: Vec<&CounterfactualGroup> = groups.iter().collect();
    pool.shuffle(&mut keyed_rng(options.seed, "batches"));
    let keep = ((pool.len() as f64) * fraction) as usize;
    pool.truncate(keep);
    let n = options.batch_size;
    if n == 0 || n > pool.len() {
        return Err(AssembleError::BatchSize { batch: n, pool: pool.len() });
    }
    let negatives: Vec<&CounterfactualGroup> = if options.flags.no_grouping {
        let mut other = pool.clone();
        other.shuffle(&mut keyed_rng(options.seed, "batches/negatives"));
        other
    } else {
        pool.clone()
    };
    Ok(pool
        .chunks_exact(n)
        .zip(negatives.chunks_exact(n))
        .enumerate()
        .map(|(b, (pos, neg))| batch_from(b, pos, neg, options.flags))
        .collect())
}

/// One conversation turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    /// `human` or `assistant`.
    pub from: String,
    /// Turn text.
    pub value: String,
}

/// A two-option multiple-choice record for instruction tuning.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationRecord {
    /// `{group}/pos` or `{group}/neg`.
    pub id: String,
    /// Image shown.
    pub image: String,
    /// Human question then assistant answer.
    pub conversations: Vec<Turn>,
    /// Options in presentation order.
    pub options: [String; 2],
    /// Correct letter.
    pub answer: String,
}

/// Image placeholder token prefixed to the first human turn.
pub const IMAGE_TOKEN: &str = "<image>";

/// The multiple-choice question for two options.
pub fn choice_question(option_a: &str, option_b: &str) -> String {
    format!("Which caption better describes the image?\nA) {option_a}\nB) {option_b}\nAnswer with A or B.")
}

fn conversation(id: String, image: &str, right: &str, wrong: &str, seed: u64) -> ConversationRecord {
    let right_first = keyed_rng(seed, &id).random_bool(0.5);
    let (a, b) = if right_first { (right, wrong) } else { (wrong, right) };
    let answer = if right_first { "A" } else { "B" };
    ConversationRecord {
        conversations: alloc::vec![
            Turn { from: "human".into(), value: format!("{IMAGE_TOKEN}\n{}", choice_question(a, b)) },
            Turn { from: "assistant".into(), value: answer.into() },
        ],
        options: [a.to_string(), b.to_string()],
        answer: answer.into(),
        image: image.into(),
        id,
    }
}

/// Two records per group: I with C correct, I′ with C′ correct. Option
/// order is drawn per group and image side.
pub fn build_conversation(group: &CounterfactualGroup, seed: u64) -> [ConversationRecord; 2] {
    [
        conversation(format!("{}/pos", group.group_id), &group.image, &group.caption, &group.negative_caption, seed),
        conversation(
            format!("{}/neg", group.group_id),
            &group.negative_image,
            &group.negative_caption,
            &group.caption,
            seed,
        ),
    ]
}

/// Number of groups per track.
pub fn track_counts(groups: &[CounterfactualGroup]) -> BTreeMap<&str, usize> {
    let mut out = BTreeMap::new();
    for g in groups {
        *out.entry(g.track.as_str()).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn groups(n: usize) -> Vec<CounterfactualGroup> {
        (0..n)
            .map(|i| {
                CounterfactualGroup::new(
                    format!("g{i}"),
                    "counting",
                    format!("c{i}"),
                    format!("i{i}.png"),
                    format!("c'{i}"),
                    format!("i'{i}.png"),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn group_invariants() {
        assert_eq!(
            CounterfactualGroup::new("g", "counting", "x", "a", "x", "b").unwrap_err(),
            AssembleError::SameCaption("g".into())
        );
        assert!(matches!(
            CounterfactualGroup::new("g", "shapes", "x", "a", "y", "b"),
            Err(AssembleError::Track(..))
        ));
    }

    #[test]
    fn split_sizes() {
        let items: Vec<(String, u32)> = (0..10).flat_map(|i| [(format!("img{i}"), 0), (format!("img{i}"), 1)]).collect();
        fn img(it: &(String, u32)) -> &str {
            it.0.as_str()
        }
        let (train, test) = split_train_test(&items, img, SplitRatio::default(), 7).unwrap();
        assert_eq!((train.len(), test.len()), (16, 4));
        let again = split_train_test(&items, img, SplitRatio::default(), 7).unwrap();
        assert_eq!(again, (train.clone(), test.clone()));
        let test_imgs: BTreeSet<_> = test.iter().map(img).collect();
        assert_eq!(test_imgs.len(), 2);
        assert!(train.iter().all(|it| !test_imgs.contains(img(it))));

        let memberships: BTreeSet<Vec<String>> = (0..8)
            .map(|s| {
                let (_, t) = split_train_test(&items, img, SplitRatio::default(), s).unwrap();
                let mut v: Vec<String> = t.iter().map(|it| it.0.clone()).collect();
                v.dedup();
                assert_eq!(v.len(), 2);
                v
            })
            .collect();
        assert!(memberships.len() > 1);

        let one = [("only".to_string(), 0u32)];
        let (train, test) = split_train_test(&one, img, SplitRatio::default(), 1).unwrap();
        assert_eq!((train.len(), test.len()), (1, 0));
        assert_eq!(split_train_test::<(String, u32)>(&[], img, SplitRatio::default(), 1), Err(AssembleError::Empty));
    }

    fn diagonal_2n(b: &GroupedBatch, n: usize) {
        assert_eq!(b.captions.len(), 2 * n);
        assert_eq!(b.images.len(), 2 * n);
        let mask = b.positive_mask();
        for (i, row) in mask.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                assert_eq!(*p, i == j);
            }
        }
    }

    #[test]
    fn grouped_layout() {
        let gs = groups(4);
        let batches = build_grouped_batches(&gs, &BatchOptions::new(2, 3)).unwrap();
        assert_eq!(batches.len(), 2);
        for b in &batches {
            diagonal_2n(b, 2);
            assert_eq!(b.group_ids, b.negative_group_ids);
            for (k, id) in b.group_ids.iter().enumerate() {
                let g = gs.iter().find(|g| &g.group_id == id).unwrap();
                assert_eq!(b.captions[k], g.caption);
                assert_eq!(b.captions[2 + k], g.negative_caption);
                assert_eq!(b.images[2 + k], g.negative_image);
            }
        }
        let partial = build_grouped_batches(&groups(5), &BatchOptions::new(2, 3)).unwrap();
        assert_eq!(partial.len(), 2);
        assert!(matches!(
            build_grouped_batches(&gs, &BatchOptions::new(5, 3)),
            Err(AssembleError::BatchSize { batch: 5, pool: 4 })
        ));
    }

    #[test]
    fn ungrouped_splits_quadruples() {
        let gs = groups(40);
        let mut opts = BatchOptions::new(4, 11);
        opts.flags.no_grouping = true;
        let batches = build_grouped_batches(&gs, &opts).unwrap();
        assert_eq!(batches.len(), 10);
        for b in &batches {
            diagonal_2n(b, 4);
        }
        assert!(batches.iter().any(|b| b.group_ids != b.negative_group_ids));
    }

    #[test]
    fn ablation_multiplicities() {
        let gs = groups(6);
        let shape = |flags: AblationFlags| {
            let mut opts = BatchOptions::new(3, 1);
            opts.flags = flags;
            let b = build_grouped_batches(&gs, &opts).unwrap().remove(0);
            (b.captions.len(), b.images.len(), b.positives.len())
        };
        let f = |a, b, c| AblationFlags { no_negative_images: a, no_negative_captions: b, no_grouping: c };
        assert_eq!(shape(f(false, false, false)), (6, 6, 6));
        assert_eq!(shape(f(true, false, false)), (6, 3, 3));
        assert_eq!(shape(f(false, true, false)), (3, 6, 3));
        assert_eq!(shape(f(true, true, false)), (3, 3, 3));
        assert_eq!(shape(AblationFlags::VANILLA), (3, 3, 3));

        let mut opts = BatchOptions::new(3, 1);
        opts.flags = AblationFlags::VANILLA;
        let b = build_grouped_batches(&gs, &opts).unwrap().remove(0);
        assert!(b.negative_group_ids.is_empty());
        assert!(b.captions.iter().all(|c| !c.starts_with("c'")));
    }

    #[test]
    fn sampling_fraction() {
        let gs = groups(20);
        let mut opts = BatchOptions::new(2, 1);
        opts.sample_fraction = 0.5;
        assert_eq!(build_grouped_batches(&gs, &opts).unwrap().len(), 5);
        opts.sample_fraction = 0.0;
        assert!(matches!(build_grouped_batches(&gs, &opts), Err(AssembleError::Fraction(_))));
    }

    #[test]
    fn conversations() {
        let g = &groups(1)[0];
        let [pos, neg] = build_conversation(g, 5);
        assert_eq!(pos.image, g.image);
        assert_eq!(neg.image, g.negative_image);
        let correct = |r: &ConversationRecord| r.options[if r.answer == "A" { 0 } else { 1 }].clone();
        assert_eq!(correct(&pos), g.caption);
        assert_eq!(correct(&neg), g.negative_caption);
        assert!(pos.conversations[0].value.starts_with("<image>\nWhich caption better describes the image?\nA) "));
        assert!(pos.conversations[0].value.ends_with("\nAnswer with A or B."));
        assert_eq!(pos.conversations[1].value, pos.answer);
        assert_eq!(build_conversation(g, 5), [pos, neg]);
    }

    #[test]
    fn answer_balance() {
        let gs = groups(1000);
        let a = gs.iter().flat_map(|g| build_conversation(g, 2024)).filter(|r| r.answer == "A").count();
        let share = a as f64 / 2000.0;
        assert!((0.48..=0.52).contains(&share), "{share}");
    }

    proptest! {
        #[test]
        fn grouped_masks_are_identity(n in 1usize..6, extra in 0usize..12, seed in any::<u64>(), ng in any::<bool>()) {
            let gs = groups(n + extra);
            let mut opts = BatchOptions::new(n, seed);
            opts.flags.no_grouping = ng;
            let batches = build_grouped_batches(&gs, &opts).unwrap();
            prop_assert_eq!(batches.len(), (n + extra) / n);
            for b in &batches {
                let mask = b.positive_mask();
                prop_assert_eq!(mask.iter().flatten().filter(|p| **p).count(), 2 * n);
                for (i, row) in mask.iter().enumerate() {
                    prop_assert!(row[i]);
                }
            }
        }

        #[test]
        fn split_partitions(n in 1usize..40, seed in any::<u64>()) {
            let items: Vec<(String, usize)> = (0..n).map(|i| (format!("img{}", i % 13), i)).collect();
            let (train, test) = split_train_test(&items, |it| it.0.as_str(), SplitRatio::default(), seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), n);
            let mut all: Vec<usize> = train.iter().chain(&test).map(|it| it.1).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let images = items.iter().map(|it| &it.0).collect::<BTreeSet<_>>().len();
            prop_assert_eq!(test.iter().map(|it| &it.0).collect::<BTreeSet<_>>().len(), images / 5);
        }
    }

    #[test]
    fn counts_by_track() {
        let mut gs = groups(3);
        gs[0].track = "attributes".into();
        assert_eq!(track_counts(&gs), BTreeMap::from([("attributes", 1), ("counting", 2)]));
    }
}
