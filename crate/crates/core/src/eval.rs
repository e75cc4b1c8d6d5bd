//! Scoring from exchanged score and choice files, per-category aggregation,
//! PointQA caption reformatting and retrieval precision.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{pluralize, render_number, NumberStyle};

/// Evaluation failures.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    /// A score the protocol needs is absent.
    #[error("item {item}: missing `{field}`")]
    MissingField {
        /// Item id.
        item: String,
        /// Field name.
        field: &'static str,
    },
    /// NaN or infinite score.
    #[error("item {item}: `{field}` is not finite")]
    NotFinite {
        /// Item id.
        item: String,
        /// Field name.
        field: &'static str,
    },
    /// `k` is zero or exceeds the matrix.
    #[error("k = {k} outside 1..={max}")]
    BadK {
        /// Requested k.
        k: usize,
        /// Largest valid k.
        max: usize,
    },
    /// Ragged or empty matrix.
    #[error("score matrix is empty or ragged")]
    BadMatrix,
    /// Count zero given to the PointQA reformatter.
    #[error("count must be positive")]
    ZeroCount,
}

/// Similarities of one item: s(C,I), s(C′,I), s(C,I′), s(C′,I′).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    /// Item scored.
    pub item_id: String,
    /// s(C, I).
    #[serde(rename = "s_CI")]
    pub s_ci: f64,
    /// s(C′, I).
    #[serde(rename = "s_CnI")]
    pub s_cni: f64,
    /// s(C, I′); absent for text-only items.
    #[serde(rename = "s_CIn", default, skip_serializing_if = "Option::is_none")]
    pub s_cin: Option<f64>,
    /// s(C′, I′); absent for text-only items.
    #[serde(rename = "s_CnIn", default, skip_serializing_if = "Option::is_none")]
    pub s_cnin: Option<f64>,
}

impl ScoreRecord {
    /// Rejects non-finite scores.
    pub fn validate(&self) -> Result<(), EvalError> {
        let fields = [
            ("s_CI", Some(self.s_ci)),
            ("s_CnI", Some(self.s_cni)),
            ("s_CIn", self.s_cin),
            ("s_CnIn", self.s_cnin),
        ];
        for (field, value) in fields {
            if value.is_some_and(|v| !v.is_finite()) {
                return Err(EvalError::NotFinite { item: self.item_id.clone(), field });
            }
        }
        Ok(())
    }

    /// Whether both negative-image scores are present.
    pub fn has_negative_image(&self) -> bool {
        self.s_cin.is_some() && self.s_cnin.is_some()
    }
}

/// Which caption a generative model picked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chosen {
    /// C.
    Positive,
    /// C′.
    Negative,
}

/// One line of a choice file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceRecord {
    /// Item answered.
    pub item_id: String,
    /// The pick.
    pub chosen: Chosen,
    /// Set when the model output had no readable letter.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub parse_failure: bool,
}

/// Score in half points, so sums stay exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct HalfPoints(pub u8);

impl HalfPoints {
    /// As a fraction in `[0, 1]`.
    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }
}

/// Image-and-text protocol: half a point for s(C,I) > s(C′,I), half for
/// s(C,I′) < s(C′,I′). Ties earn nothing.
pub fn score_contrastive_item(r: &ScoreRecord) -> Result<HalfPoints, EvalError> {
    let missing = |field| EvalError::MissingField { item: r.item_id.clone(), field };
    let s_cin = r.s_cin.ok_or_else(|| missing("s_CIn"))?;
    let s_cnin = r.s_cnin.ok_or_else(|| missing("s_CnIn"))?;
    Ok(HalfPoints(u8::from(r.s_ci > r.s_cni) + u8::from(s_cin < s_cnin)))
}

/// Text-only protocol: a full point iff s(C,I) > s(C′,I).
pub fn score_text_only_item(r: &ScoreRecord) -> HalfPoints {
    HalfPoints(if r.s_ci > r.s_cni { 2 } else { 0 })
}

/// Choice protocol: a full point for picking C.
pub fn score_choice(r: &ChoiceRecord) -> HalfPoints {
    HalfPoints(if r.chosen == Chosen::Positive { 2 } else { 0 })
}

/// Accuracy of one category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryStat {
    /// Items scored.
    pub count: usize,
    /// Sum of scores.
    pub score: f64,
    /// Mean score × 100.
    pub accuracy: f64,
}

impl CategoryStat {
    fn from_halves(count: usize, halves: u64) -> Self {
        let score = halves as f64 / 2.0;
        let accuracy = if count == 0 { 0.0 } else { score * 100.0 / count as f64 };
        Self { count, score, accuracy }
    }
}

/// Aggregate accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Per category, sorted by name.
    pub categories: BTreeMap<String, CategoryStat>,
    /// Named unions of categories, pooled over their items.
    pub rollups: BTreeMap<String, CategoryStat>,
    /// Pooled over every scored item.
    pub overall: CategoryStat,
    /// Unweighted mean of category accuracies.
    pub macro_accuracy: f64,
    /// Score records whose item is unknown.
    pub orphans: Vec<String>,
    /// Items with no score record.
    pub unscored: Vec<String>,
    /// Non-fatal problems.
    pub warnings: Vec<String>,
}

/// Streaming accumulator. [`Aggregator::merge`] is associative, and
/// commutative over shards with disjoint items, so score files may be sharded.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Aggregator {
    per_item: BTreeMap<String, HalfPoints>,
    orphans: Vec<String>,
    duplicates: Vec<String>,
    categories: BTreeMap<String, String>,
}

impl Aggregator {
    /// Accumulator over the given `item_id → category` table.
    pub fn new(categories: BTreeMap<String, String>) -> Self {
        Self { categories, ..Self::default() }
    }

    /// Records one item's score. Unknown ids become orphans; repeats are
    /// ignored with a warning.
    pub fn add(&mut self, item_id: &str, score: HalfPoints) {
        if !self.categories.contains_key(item_id) {
            self.orphans.push(item_id.into());
        } else if self.per_item.contains_key(item_id) {
            self.duplicates.push(item_id.into());
        } else {
            self.per_item.insert(item_id.into(), score);
        }
    }

    /// Folds another shard in. Both must share the item table.
    pub fn merge(&mut self, other: Self) {
        for (id, score) in other.per_item {
            self.add(&id, score);
        }
        self.orphans.extend(other.orphans);
        self.duplicates.extend(other.duplicates);
    }

    /// Number of score records seen, including orphans and repeats.
    pub fn records_seen(&self) -> usize {
        self.per_item.len() + self.orphans.len() + self.duplicates.len()
    }

    /// Final report. Each `expected` category without items is omitted
    /// with a warning; `rollups` name unions such as `Both = LR ∪ AB`.
    pub fn finish(mut self, expected: &[&str], rollups: &[(&str, &[&str])]) -> Report {
        let mut halves: BTreeMap<&str, (usize, u64)> = BTreeMap::new();
        for (id, score) in &self.per_item {
            let cat = self.categories[id].as_str();
            let e = halves.entry(cat).or_default();
            e.0 += 1;
            e.1 += u64::from(score.0);
        }
        let mut warnings = Vec::new();
        for cat in expected {
            if !halves.contains_key(cat) {
                warnings.push(format!("category {cat} has no scored items; omitted"));
            }
        }
        self.orphans.sort();
        self.duplicates.sort();
        for id in &self.duplicates {
            warnings.push(format!("duplicate score for {id}; first kept"));
        }
        if !self.orphans.is_empty() {
            warnings.push(format!("{} score records name unknown items", self.orphans.len()));
        }
        let unscored: Vec<String> =
            self.categories.keys().filter(|id| !self.per_item.contains_key(*id)).cloned().collect();
        if !unscored.is_empty() {
            warnings.push(format!("{} items have no score", unscored.len()));
        }
        let categories: BTreeMap<String, CategoryStat> =
            halves.iter().map(|(cat, (n, h))| (String::from(*cat), CategoryStat::from_halves(*n, *h))).collect();
        let pooled = |members: &[&str]| {
            let (n, h) = members
                .iter()
                .filter_map(|m| halves.get(m))
                .fold((0, 0), |(n, h), (dn, dh)| (n + dn, h + dh));
            CategoryStat::from_halves(n, h)
        };
        let rollups = rollups
            .iter()
            .filter(|(_, members)| members.iter().any(|m| halves.contains_key(m)))
            .map(|(name, members)| (String::from(*name), pooled(members)))
            .collect();
        let all = halves.values().fold((0, 0), |(n, h), (dn, dh)| (n + dn, h + dh));
        let macro_accuracy = if categories.is_empty() {
            0.0
        } else {
            categories.values().map(|c| c.accuracy).sum::<f64>() / categories.len() as f64
        };
        Report {
            categories,
            rollups,
            overall: CategoryStat::from_halves(all.0, all.1),
            macro_accuracy,
            orphans: self.orphans,
            unscored,
            warnings,
        }
    }
}

/// One-shot [`Aggregator`] over `(item_id, score)` pairs.
pub fn aggregate<'a>(
    scores: impl IntoIterator<Item = (&'a str, HalfPoints)>,
    categories: BTreeMap<String, String>,
    expected: &[&str],
    rollups: &[(&str, &[&str])],
) -> Report {
    let mut agg = Aggregator::new(categories);
    for (id, s) in scores {
        agg.add(id, s);
    }
    agg.finish(expected, rollups)
}

/// PointQA caption options.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointQaOptions {
    /// `there is 1 person` instead of the plural-only `there are 1 people`.
    pub singular_agreement: bool,
    /// Number rendering; digits by default.
    pub number_style: NumberStyle,
}

impl Default for PointQaOptions {
    fn default() -> Self {
        Self { singular_agreement: true, number_style: NumberStyle::Digits }
    }
}

fn pointqa_caption(noun: &str, n: u32, options: PointQaOptions) -> String {
    let num = render_number(n, options.number_style);
    if n == 1 && options.singular_agreement {
        format!("there is {num} {noun}")
    } else {
        format!("there are {num} {}", pluralize(noun))
    }
}

/// Positive and negative captions for a counting question: `n` and `n + 1`
/// instances of `noun`.
pub fn reformat_pointqa(noun: &str, n: u32, options: PointQaOptions) -> Result<(String, String), EvalError> {
    if n == 0 {
        return Err(EvalError::ZeroCount);
    }
    Ok((pointqa_caption(noun, n, options), pointqa_caption(noun, n + 1, options)))
}

/// Precision at k in both directions and their mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    /// Share of captions whose paired image ranks in the top k.
    pub image_at_k: f64,
    /// Share of images whose paired caption ranks in the top k.
    pub text_at_k: f64,
    /// Mean of the two.
    pub average_at_k: f64,
}

/// Precision at k over a caption × image matrix whose true pairs lie on the
/// diagonal. Rank is pessimistic: a tie with the true pair counts against it.
pub fn retrieval_precision_at_k(matrix: &[Vec<f64>], k: usize) -> Result<RetrievalScores, EvalError> {
    let rows = matrix.len();
    let cols = matrix.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || matrix.iter().any(|r| r.len() != cols) {
        return Err(EvalError::BadMatrix);
    }
    let max = rows.min(cols);
    if k == 0 || k > max {
        return Err(EvalError::BadK { k, max });
    }
    let pairs = max;
    let image_hits = (0..pairs)
        .filter(|&i| {
            let truth = matrix[i][i];
            let above = (0..cols).filter(|&j| j != i && matrix[i][j] >= truth).count();
            above < k
        })
        .count();
    let text_hits = (0..pairs)
        .filter(|&j| {
            let truth = matrix[j][j];
            let above = (0..rows).filter(|&i| i != j && matrix[i][j] >= truth).count();
            above < k
        })
        .count();
    let image_at_k = image_hits as f64 / pairs as f64;
    let text_at_k = text_hits as f64 / pairs as f64;
    Ok(RetrievalScores { image_at_k, text_at_k, average_at_k: (image_at_k + text_at_k) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn rec(s: [f64; 4]) -> ScoreRecord {
        ScoreRecord { item_id: "x".into(), s_ci: s[0], s_cni: s[1], s_cin: Some(s[2]), s_cnin: Some(s[3]) }
    }

    #[test]
    fn contrastive_examples() {
        assert_eq!(score_contrastive_item(&rec([0.9, 0.2, 0.1, 0.8])).unwrap().value(), 1.0);
        assert_eq!(score_contrastive_item(&rec([0.2, 0.9, 0.8, 0.1])).unwrap().value(), 0.0);
        assert_eq!(score_contrastive_item(&rec([0.9, 0.2, 0.8, 0.1])).unwrap().value(), 0.5);
        assert_eq!(score_contrastive_item(&rec([0.5, 0.5, 0.1, 0.8])).unwrap().value(), 0.5);
        assert_eq!(score_contrastive_item(&rec([0.5, 0.5, 0.3, 0.3])).unwrap().value(), 0.0);
        let mut r = rec([1.0, 0.0, 0.0, 1.0]);
        r.s_cnin = None;
        assert_eq!(
            score_contrastive_item(&r).unwrap_err(),
            EvalError::MissingField { item: "x".into(), field: "s_CnIn" }
        );
    }

    #[test]
    fn text_only_examples() {
        let t = |a, b| score_text_only_item(&rec([a, b, 0.0, 0.0])).value();
        assert_eq!(t(0.6, 0.5), 1.0);
        assert_eq!(t(0.5, 0.5), 0.0);
        assert_eq!(t(0.1, 0.2), 0.0);
    }

    #[test]
    fn score_record_wire_names() {
        let r: ScoreRecord = serde_json::from_str(r#"{"item_id":"a","s_CI":0.3,"s_CnI":0.1}"#).unwrap();
        assert!(!r.has_negative_image());
        let json = serde_json::to_string(&rec([1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(json, r#"{"item_id":"x","s_CI":1.0,"s_CnI":2.0,"s_CIn":3.0,"s_CnIn":4.0}"#);
        let c: ChoiceRecord = serde_json::from_str(r#"{"item_id":"a","chosen":"negative"}"#).unwrap();
        assert_eq!(score_choice(&c).value(), 0.0);
        assert_eq!(serde_json::to_string(&c).unwrap(), r#"{"item_id":"a","chosen":"negative"}"#);
        assert!(serde_json::from_str::<ChoiceRecord>(r#"{"item_id":"a","chosen":"maybe"}"#).is_err());
        let mut bad = rec([0.0; 4]);
        bad.s_cin = Some(f64::NAN);
        assert!(matches!(bad.validate(), Err(EvalError::NotFinite { field: "s_CIn", .. })));
    }

    fn table(spec: &[(&str, &str)]) -> BTreeMap<String, String> {
        spec.iter().map(|(i, c)| (i.to_string(), c.to_string())).collect()
    }

    #[test]
    fn aggregate_report() {
        let cats = table(&[("a", "LR"), ("b", "LR"), ("c", "AB"), ("d", "AB"), ("e", "AB")]);
        let scores = [("a", HalfPoints(2)), ("b", HalfPoints(1)), ("c", HalfPoints(2)), ("d", HalfPoints(0)), ("zz", HalfPoints(2))];
        let report = aggregate(scores, cats, &["LR", "AB", "Add"], &[("Both", &["LR", "AB"])]);
        assert_eq!(report.categories["LR"].accuracy, 75.0);
        assert_eq!(report.categories["AB"].accuracy, 50.0);
        assert_eq!(report.rollups["Both"].count, 4);
        assert_eq!(report.rollups["Both"].accuracy, 62.5);
        assert_eq!(report.overall.accuracy, 62.5);
        assert_eq!(report.macro_accuracy, 62.5);
        assert_eq!(report.orphans, ["zz"]);
        assert_eq!(report.unscored, ["e"]);
        assert!(!report.categories.contains_key("Add"));
        assert!(report.warnings.iter().any(|w| w.contains("Add")));
        let total: usize = report.categories.values().map(|c| c.count).sum();
        assert_eq!(total + report.orphans.len(), 5);
    }

    #[test]
    fn shards_merge() {
        let cats = table(&[("a", "x"), ("b", "x"), ("c", "y")]);
        let mut left = Aggregator::new(cats.clone());
        left.add("a", HalfPoints(2));
        left.add("q", HalfPoints(0));
        let mut right = Aggregator::new(cats.clone());
        right.add("c", HalfPoints(1));
        right.add("a", HalfPoints(0));
        let mut one = left.clone();
        one.merge(right.clone());
        let mut other = right;
        other.merge(left);
        let (r1, r2) = (one.finish(&[], &[]), other.finish(&[], &[]));
        assert_eq!(r1.overall.count, 2);
        assert_eq!(r1.orphans, r2.orphans);
        assert_eq!(r1.categories.len(), r2.categories.len());
    }

    #[test]
    fn pointqa_templates() {
        let d = PointQaOptions::default();
        assert_eq!(reformat_pointqa("dog", 3, d).unwrap(), ("there are 3 dogs".into(), "there are 4 dogs".into()));
        assert_eq!(reformat_pointqa("cat", 20, d).unwrap(), ("there are 20 cats".into(), "there are 21 cats".into()));
        assert_eq!(
            reformat_pointqa("person", 1, d).unwrap(),
            ("there is 1 person".into(), "there are 2 people".into())
        );
        let plural_only = PointQaOptions { singular_agreement: false, ..d };
        assert_eq!(reformat_pointqa("person", 1, plural_only).unwrap().0, "there are 1 people");
        assert_eq!(reformat_pointqa("dog", 0, d).unwrap_err(), EvalError::ZeroCount);
        let words = PointQaOptions { number_style: NumberStyle::Words, ..d };
        assert_eq!(reformat_pointqa("dog", 3, words).unwrap().1, "there are four dogs");
    }

    #[test]
    fn retrieval_examples() {
        let id = vec![vec![0.9, 0.1, 0.2], vec![0.1, 0.8, 0.3], vec![0.2, 0.1, 0.7]];
        let r = retrieval_precision_at_k(&id, 1).unwrap();
        assert_eq!((r.image_at_k, r.text_at_k, r.average_at_k), (1.0, 1.0, 1.0));
        let anti = vec![vec![0.1, 0.2, 0.9], vec![0.1, 0.0, 0.2], vec![0.9, 0.2, 0.1]];
        let r = retrieval_precision_at_k(&anti, 1).unwrap();
        assert_eq!((r.image_at_k, r.text_at_k, r.average_at_k), (0.0, 0.0, 0.0));
        let tied = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        assert_eq!(retrieval_precision_at_k(&tied, 1).unwrap().image_at_k, 0.0);
        assert_eq!(retrieval_precision_at_k(&tied, 2).unwrap().image_at_k, 1.0);
        assert_eq!(retrieval_precision_at_k(&id, 4).unwrap_err(), EvalError::BadK { k: 4, max: 3 });
        assert_eq!(retrieval_precision_at_k(&[], 1).unwrap_err(), EvalError::BadMatrix);
    }

    proptest! {
        #[test]
        fn monotone_invariance(s in proptest::array::uniform4(-5.0f64..5.0), a in 0.1f64..10.0, b in -3.0f64..3.0) {
            let r = rec(s);
            let t = rec(s.map(|x| a * x + b));
            let cubed = rec(s.map(|x| x * x * x));
            let base = score_contrastive_item(&r).unwrap();
            prop_assert_eq!(base, score_contrastive_item(&t).unwrap());
            prop_assert_eq!(base, score_contrastive_item(&cubed).unwrap());
        }

        #[test]
        fn totals_balance(entries in proptest::collection::vec((0usize..30, 0u8..3), 0..60)) {
            let cats: BTreeMap<String, String> =
                (0..20).map(|i| (format!("i{i}"), format!("c{}", i % 4))).collect();
            let ids: Vec<String> = entries.iter().map(|(i, _)| format!("i{i}")).collect();
            let mut agg = Aggregator::new(cats);
            for (id, (_, s)) in ids.iter().zip(&entries) {
                agg.add(id, HalfPoints(*s));
            }
            let seen = agg.records_seen();
            prop_assert_eq!(seen, entries.len());
            let report = agg.finish(&[], &[]);
            let counted: usize = report.categories.values().map(|c| c.count).sum();
            let dups = report.warnings.iter().filter(|w| w.starts_with("duplicate")).count();
            prop_assert_eq!(counted + report.orphans.len() + dups, entries.len());
        }
    }
}
