//! One PASS/FAIL line per acceptance criterion. Runs without a test
//! harness so the lines always print; exits non-zero if any criterion fails.
//!
//! Oracles here are written from the definitions, not from the library code
//! they check.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use countercurate::config::{Layer, PipelineConfig};
use countercurate::pipeline;
use countercurate::synth::write_synthetic_corpus;
use countercurate_core::assemble::{build_grouped_batches, AblationFlags, BatchOptions, CounterfactualGroup, GroupedBatch};
use countercurate_core::attributes::parse_attribute_response;
use countercurate_core::counting::{negate_counting, select_category_pair, Branch, BoxEdit, CountingOptions};
use countercurate_core::eval::{
    aggregate, reformat_pointqa, retrieval_precision_at_k, score_contrastive_item, HalfPoints, PointQaOptions, ScoreRecord,
};
use countercurate_core::grounded::{parse_entity_caption, BoundingBox, GroundedCaption, ImageRecord};
use countercurate_core::positions::curate_positions;
use countercurate_core::rng::keyed_rng;
use countercurate_core::spatial::{classify_relations, hflip_box, Relation};
use countercurate_core::text::NumberStyle;
use countercurate_verify as oracle;
use rand::seq::SliceRandom;
use rand::Rng;

// Tolerances and budgets.
const RELATION_PAIRS: usize = 1000;
const RELATION_BUDGET: Duration = Duration::from_secs(1);
const FLIP_FACTS: usize = 1000;
const FLIP_BUDGET: Duration = Duration::from_secs(1);
const COUNTING_SCENES: usize = 500;
const COUNTING_BUDGET: Duration = Duration::from_secs(2);
const RANDOM_SCORE_ITEMS: usize = 2000;
const RANDOM_SCORE_MEAN: f64 = 50.0;
const RANDOM_SCORE_TOL: f64 = 3.0;
const FIXPOINT_CAPTIONS: usize = 200;
const RETRIEVAL_SEEDS: u64 = 20;
const RETRIEVAL_MEAN: f64 = 0.05;
const RETRIEVAL_TOL: f64 = 0.02;

struct Outcome {
    ok: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome { ok: true, detail: detail.into() }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome { ok: false, detail: detail.into() }
}

fn bx(x1: u32, y1: u32, x2: u32, y2: u32) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).unwrap()
}

fn random_box(rng: &mut impl Rng, w: u32, h: u32) -> BoundingBox {
    let x1 = rng.random_range(0..w - 1);
    let y1 = rng.random_range(0..h - 1);
    bx(x1, y1, rng.random_range(x1 + 1..=w), rng.random_range(y1 + 1..=h))
}

fn edges(b: &BoundingBox) -> oracle::Edges {
    [b.x1(), b.y1(), b.x2(), b.y2()]
}

fn oracle_relations(a: &BoundingBox, b: &BoundingBox) -> Vec<Relation> {
    oracle::relations(edges(a), edges(b))
}

fn area_overlap(a: &BoundingBox, b: &BoundingBox) -> bool {
    oracle::overlaps(edges(a), edges(b))
}

const ALL_RELATIONS: [Relation; 4] = [Relation::Left, Relation::Right, Relation::Above, Relation::Below];

fn relation_oracle() -> Outcome {
    let mut rng = keyed_rng(1, "acceptance/relations");
    let start = Instant::now();
    let mut disagreements = 0;
    let mut asymmetric = 0;
    for _ in 0..RELATION_PAIRS {
        // a small canvas makes touching edges common
        let a = random_box(&mut rng, 40, 40);
        let b = random_box(&mut rng, 40, 40);
        let got = classify_relations(&a, &b);
        let want = oracle_relations(&a, &b);
        if ALL_RELATIONS.iter().any(|r| got.contains(*r) != want.contains(r)) {
            disagreements += 1;
        }
        let back = classify_relations(&b, &a);
        if ALL_RELATIONS.iter().any(|r| got.contains(*r) != back.contains(oracle::opposite(*r))) {
            asymmetric += 1;
        }
    }
    let took = start.elapsed();
    let detail = format!("{RELATION_PAIRS} pairs, {disagreements} disagreements, {asymmetric} asymmetric, {took:?}");
    if disagreements == 0 && asymmetric == 0 && took < RELATION_BUDGET {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn flip_coherence() -> Outcome {
    let mut rng = keyed_rng(2, "acceptance/flip");
    let start = Instant::now();
    let (mut facts, mut bad) = (0, 0);
    while facts < FLIP_FACTS {
        let w = rng.random_range(20..400);
        let a = random_box(&mut rng, w, 300);
        let b = random_box(&mut rng, w, 300);
        let before = oracle_relations(&a, &b);
        if !before.contains(&Relation::Left) && !before.contains(&Relation::Right) {
            continue;
        }
        facts += 1;
        let (fa, fb) = (hflip_box(&a, w), hflip_box(&b, w));
        // mirrored edges computed independently
        let want: Vec<Relation> = before
            .iter()
            .map(|r| match r {
                Relation::Left => Relation::Right,
                Relation::Right => Relation::Left,
                other => *other,
            })
            .collect();
        let got = classify_relations(&fa, &fb);
        let ok = ALL_RELATIONS.iter().all(|r| got.contains(*r) == want.contains(r))
            && edges(&fa) == oracle::mirrored(edges(&a), w)
            && hflip_box(&fa, w) == a
            && hflip_box(&fb, w) == b;
        if !ok {
            bad += 1;
        }
    }
    let took = start.elapsed();
    let detail = format!("{facts} horizontal facts, {bad} incoherent, {took:?}");
    if bad == 0 && took < FLIP_BUDGET {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn counting_scene(rng: &mut impl Rng, i: usize) -> ImageRecord {
    let cats = ["cat", "dog", "plant"];
    let mut boxes: BTreeMap<u32, Vec<BoundingBox>> = BTreeMap::new();
    let mut seen = Vec::new();
    let n_entities = rng.random_range(2..=4u32);
    let mut categories = BTreeMap::new();
    for e in 1..=n_entities {
        categories.insert(e, cats[(e as usize - 1) % cats.len()].to_string());
        let n = rng.random_range(1..=4);
        let list = boxes.entry(e).or_default();
        while list.len() < n {
            // sparse scenes so both branches occur
            let b = random_box(rng, 400, 400);
            let b = bx(b.x1(), b.y1(), b.x1() + (b.width() % 80) + 1, b.y1() + (b.height() % 80) + 1);
            if b.fits(400, 400) && !seen.contains(&b) {
                seen.push(b);
                list.push(b);
            }
        }
    }
    let tagged: Vec<String> = categories.iter().map(|(e, c)| format!("[/EN#{e}/other {c}s]")).collect();
    let caption = parse_entity_caption(&tagged.join(" and ")).unwrap();
    ImageRecord::new(format!("scene{i}"), 400, 400, "s.png", vec![caption], boxes, categories).unwrap()
}

fn counting_oracle() -> Outcome {
    let mut rng = keyed_rng(3, "acceptance/counting");
    let opts = CountingOptions { number_style: NumberStyle::Digits, ..CountingOptions::default() };
    let start = Instant::now();
    let mut problems: Vec<String> = Vec::new();
    let mut branches = BTreeMap::new();
    for i in 0..COUNTING_SCENES {
        let record = counting_scene(&mut rng, i);
        let Some(pair) = select_category_pair(&record) else {
            problems.push(format!("scene{i}: no pair"));
            continue;
        };
        let all: Vec<(String, BoundingBox)> =
            record.all_boxes().map(|(e, b)| (record.category(e).unwrap().to_string(), b)).collect();
        let in_pair = |c: &str| c == pair.p || c == pair.q;
        let touches = |k: usize| (0..all.len()).any(|j| j != k && area_overlap(&all[k].1, &all[j].1));
        let any_contested = (0..all.len()).any(|k| in_pair(&all[k].0) && touches(k));
        let expected_branch = if any_contested { Branch::RemoveClosure } else { Branch::SwapCounts };
        let result = negate_counting(&record, &pair, opts);
        let expected_counts = if any_contested {
            let Ok(neg) = &result else {
                // the library may only refuse when the recount hits zero; checked below
                let outcome = &result;
                if !matches!(outcome, Err(countercurate_core::counting::CountingError::ZeroCount(_))) {
                    problems.push(format!("scene{i}: {outcome:?}"));
                }
                *branches.entry("zero".to_string()).or_insert(0) += 1;
                continue;
            };
            let Some(BoxEdit::RemoveAsPlant { bbox: chosen }) = neg.edit_plan.first() else {
                problems.push(format!("scene{i}: remove branch without removal"));
                continue;
            };
            let k = all.iter().position(|(_, b)| b == chosen).unwrap();
            if !in_pair(&all[k].0) || !touches(k) {
                problems.push(format!("scene{i}: removed box is not a contested pair box"));
            }
            let removed: Vec<usize> =
                (0..all.len()).filter(|&j| j == k || area_overlap(&all[k].1, &all[j].1)).collect();
            let plan: Vec<BoundingBox> = neg
                .edit_plan
                .iter()
                .map(|e| match e {
                    BoxEdit::RemoveAsPlant { bbox } => *bbox,
                    BoxEdit::Replace { bbox, .. } => *bbox,
                })
                .collect();
            if plan.len() != removed.len() || removed.iter().any(|j| !plan.contains(&all[*j].1)) {
                problems.push(format!("scene{i}: removal set differs from direct overlap closure"));
            }
            let left = |cat: &str| (0..all.len()).filter(|j| !removed.contains(j) && all[*j].0 == cat).count() as u32;
            (left(&pair.p), left(&pair.q))
        } else {
            (pair.n_p + 1, pair.n_q - 1)
        };
        match result {
            Ok(neg) => {
                *branches.entry(format!("{:?}", neg.branch)).or_insert(0) += 1;
                if neg.branch != expected_branch {
                    problems.push(format!("scene{i}: branch {:?}, expected {expected_branch:?}", neg.branch));
                }
                if neg.counts != expected_counts {
                    problems.push(format!("scene{i}: counts {:?}, recount {expected_counts:?}", neg.counts));
                }
            }
            Err(countercurate_core::counting::CountingError::ZeroCount(_)) => {
                *branches.entry("zero".to_string()).or_insert(0) += 1;
                if expected_counts.0 != 0 && expected_counts.1 != 0 {
                    problems.push(format!("scene{i}: refused although recount is {expected_counts:?}"));
                }
            }
            Err(e) => problems.push(format!("scene{i}: {e}")),
        }
    }
    let took = start.elapsed();
    let both = branches.contains_key("SwapCounts") && branches.contains_key("RemoveClosure");
    let detail = format!("{COUNTING_SCENES} scenes {branches:?}, {} mismatches, {took:?}", problems.len());
    if problems.is_empty() && both && took < COUNTING_BUDGET {
        pass(detail)
    } else {
        fail(format!("{detail}; first: {:?}", problems.first()))
    }
}

fn record(width: u32, entities: &[(u32, &str, &[BoundingBox])], caption: &str) -> ImageRecord {
    let boxes = entities.iter().map(|(e, _, b)| (*e, b.to_vec())).collect();
    let cats = entities.iter().map(|(e, c, _)| (*e, c.to_string())).collect();
    ImageRecord::new("ex", width, 100, "ex.png", vec![parse_entity_caption(caption).unwrap()], boxes, cats).unwrap()
}

fn worked_examples() -> Outcome {
    let mut got: Vec<(String, String, String)> = Vec::new();
    let bike = record(
        200,
        &[(1, "woman", &[bx(120, 10, 160, 90)]), (2, "bike", &[bx(10, 40, 90, 95)])],
        "[/EN#1/people a woman] next to [/EN#2/vehicles a bike]",
    );
    let batch = curate_positions(&bike);
    let lr = batch.items.iter().find(|i| i.category == "LR");
    got.push((
        "a bike is to the left of a woman".into(),
        lr.map(|i| i.caption.clone()).unwrap_or_default(),
        "positive".into(),
    ));
    got.push((
        "a bike is to the right of a woman".into(),
        lr.map(|i| i.negative_caption.clone()).unwrap_or_default(),
        "negative".into(),
    ));

    let words = CountingOptions::default();
    let apart = |k: u32| bx(k * 22, 0, k * 22 + 20, 20);
    let cats: Vec<BoundingBox> = (0..3).map(apart).collect();
    let dogs: Vec<BoundingBox> = (3..7).map(apart).collect();
    let swap = record(200, &[(1, "cat", &cats), (2, "dog", &dogs)], "[/EN#1/animals cats] and [/EN#2/animals dogs]");
    let pair = select_category_pair(&swap).unwrap();
    got.push((
        "there are three cats and four dogs".into(),
        countercurate_core::counting::make_counting_caption(&pair.p, pair.n_p, &pair.q, pair.n_q, NumberStyle::Words)
            .unwrap_or_default(),
        "counting positive".into(),
    ));
    got.push((
        "there are four cats and three dogs".into(),
        negate_counting(&swap, &pair, words).map(|n| n.caption).unwrap_or_default(),
        "swap counts".into(),
    ));
    // one dog stands in front of one cat
    let cats = [bx(0, 0, 30, 40), bx(50, 0, 80, 40), bx(100, 0, 130, 40)];
    let dogs = [bx(10, 10, 36, 80), bx(150, 0, 160, 10), bx(170, 0, 180, 10), bx(185, 0, 195, 10)];
    let remove = record(200, &[(1, "cat", &cats), (2, "dog", &dogs)], "[/EN#1/animals cats] and [/EN#2/animals dogs]");
    let pair = select_category_pair(&remove).unwrap();
    got.push((
        "there are two cats and three dogs".into(),
        negate_counting(&remove, &pair, words).map(|n| n.caption).unwrap_or_default(),
        "remove closure".into(),
    ));
    let digits = PointQaOptions { number_style: NumberStyle::Digits, ..PointQaOptions::default() };
    let (pos, neg) = reformat_pointqa("dog", 3, digits).unwrap();
    got.push(("there are 3 dogs".into(), pos, "pointqa positive".into()));
    got.push(("there are 4 dogs".into(), neg, "pointqa negative".into()));

    let wrong: Vec<String> =
        got.iter().filter(|(w, g, _)| w != g).map(|(w, g, what)| format!("{what}: want {w:?} got {g:?}")).collect();
    if wrong.is_empty() {
        pass(format!("{} strings match exactly", got.len()))
    } else {
        fail(wrong.join("; "))
    }
}

fn quad_items(n: usize) -> BTreeMap<String, String> {
    (0..n).map(|i| (format!("q{i}"), if i % 2 == 0 { "LR" } else { "AB" }.to_string())).collect()
}

fn accuracy(records: &[ScoreRecord], cats: &BTreeMap<String, String>) -> f64 {
    let scores: Vec<(String, HalfPoints)> =
        records.iter().map(|r| (r.item_id.clone(), score_contrastive_item(r).unwrap())).collect();
    aggregate(scores.iter().map(|(i, s)| (i.as_str(), *s)), cats.clone(), &[], &[]).overall.accuracy
}

fn write_jsonl_lines(path: &Path, rows: &[serde_json::Value]) {
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

fn scoring_protocol() -> Outcome {
    let cats = quad_items(RANDOM_SCORE_ITEMS);
    let rec = |id: &str, s: [f64; 4]| ScoreRecord {
        item_id: id.into(),
        s_ci: s[0],
        s_cni: s[1],
        s_cin: Some(s[2]),
        s_cnin: Some(s[3]),
    };
    // oracle and adversarial go through the score-file path
    let dir = tempfile::tempdir().unwrap();
    let items: Vec<serde_json::Value> =
        cats.iter().map(|(id, c)| serde_json::json!({"item_id": id, "category": c})).collect();
    write_jsonl_lines(&dir.path().join("items.jsonl"), &items);
    let file_accuracy = |name: &str, s: [f64; 4]| {
        let rows: Vec<serde_json::Value> =
            cats.keys().map(|id| serde_json::to_value(rec(id, s)).unwrap()).collect();
        let path = dir.path().join(name);
        write_jsonl_lines(&path, &rows);
        let r = pipeline::evaluate(&dir.path().join("items.jsonl"), Some(&path), None).unwrap();
        r.scores.unwrap().overall.accuracy
    };
    let oracle = file_accuracy("oracle.jsonl", [0.9, 0.1, 0.2, 0.8]);
    let adversarial = file_accuracy("adversarial.jsonl", [0.1, 0.9, 0.8, 0.2]);

    let mut rng = keyed_rng(4, "acceptance/random-scores");
    let random: Vec<ScoreRecord> = cats
        .keys()
        .map(|id| rec(id, [rng.random(), rng.random(), rng.random(), rng.random()]))
        .collect();
    let random_acc = accuracy(&random, &cats);

    let half = |s: [f64; 4]| score_contrastive_item(&rec("t", s)).unwrap().value();
    let ties_ok = half([0.5, 0.5, 0.1, 0.9]) == 0.5
        && half([0.9, 0.1, 0.4, 0.4]) == 0.5
        && half([0.3, 0.3, 0.6, 0.6]) == 0.0;

    let detail = format!("oracle {oracle:.2}, adversarial {adversarial:.2}, random {random_acc:.2} over {RANDOM_SCORE_ITEMS}, ties {ties_ok}");
    if oracle == 100.0 && adversarial == 0.0 && (random_acc - RANDOM_SCORE_MEAN).abs() <= RANDOM_SCORE_TOL && ties_ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn is_diagonal(b: &GroupedBatch, n: usize) -> bool {
    let mask = b.positive_mask();
    mask.len() == n
        && mask.iter().all(|row| row.len() == n)
        && (0..n).all(|i| (0..n).all(|j| mask[i][j] == (i == j)))
        && b.positives.len() == n
}

fn synthetic_groups(n: usize) -> Vec<CounterfactualGroup> {
    (0..n)
        .map(|i| CounterfactualGroup::new(format!("g{i}"), "counting", format!("c{i}"), format!("i{i}"), format!("c'{i}"), format!("i'{i}")).unwrap())
        .collect()
}

fn grouped_batches(assembled: &Path) -> Outcome {
    let text = std::fs::read_to_string(assembled.join(pipeline::BATCHES_FILE)).unwrap();
    let batches: Vec<GroupedBatch> = text.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    let assembled_ok = !batches.is_empty() && batches.iter().all(|b| is_diagonal(b, 2 * b.group_ids.len()));

    let n = 8;
    let groups = synthetic_groups(100);
    let shape = |flags: AblationFlags| {
        let opts = BatchOptions { flags, ..BatchOptions::new(n, 5) };
        let bs = build_grouped_batches(&groups, &opts).unwrap();
        let b = &bs[0];
        (bs.len(), b.captions.len(), b.images.len(), b.positives.len(), b.group_ids == b.negative_group_ids)
    };
    let f = |i, c, g| AblationFlags { no_negative_images: i, no_negative_captions: c, no_grouping: g };
    let table = [
        ("full", f(false, false, false), (12, 2 * n, 2 * n, 2 * n, true)),
        ("no I'", f(true, false, false), (12, 2 * n, n, n, true)),
        ("no C'", f(false, true, false), (12, n, 2 * n, n, true)),
        ("no grouping", f(false, false, true), (12, 2 * n, 2 * n, 2 * n, false)),
        ("vanilla", AblationFlags::VANILLA, (12, n, n, n, false)),
    ];
    let mut wrong = Vec::new();
    for (name, flags, want) in table {
        let got = shape(flags);
        if got != want {
            wrong.push(format!("{name}: got {got:?} want {want:?}"));
        }
    }
    // without grouping the negatives are still each group's exactly once
    let opts = BatchOptions { flags: f(false, false, true), ..BatchOptions::new(n, 5) };
    let bs = build_grouped_batches(&groups, &opts).unwrap();
    let mut pos: Vec<&String> = bs.iter().flat_map(|b| &b.group_ids).collect();
    let mut neg: Vec<&String> = bs.iter().flat_map(|b| &b.negative_group_ids).collect();
    pos.sort();
    neg.sort();
    pos.dedup();
    neg.dedup();
    if pos.len() != 96 || neg.len() != 96 || !bs.iter().all(|b| is_diagonal(b, 2 * n)) {
        wrong.push("no grouping: batches do not each hold 2N distinct diagonal pairs".into());
    }
    let detail = format!("{} assembled batches diagonal: {assembled_ok}; ablation table {}", batches.len(), if wrong.is_empty() { "exact".into() } else { wrong.join("; ") });
    if assembled_ok && wrong.is_empty() {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn mock_run(root: &Path, name: &str, workers: usize) -> PathBuf {
    let layer = Layer {
        corpus: Some(root.join("data/corpus.jsonl")),
        out: Some(root.join(name)),
        mock: Some(true),
        workers: Some(workers),
        max_in_flight: Some(workers),
        batch_size: Some(4),
        ..Layer::default()
    };
    let config = PipelineConfig::resolve(layer).unwrap();
    let summary = pipeline::run(&config, None).unwrap();
    assert!(summary.generate.values().all(|g| g.failed == 0));
    root.join(name)
}

fn determinism(root: &Path) -> Outcome {
    let a = mock_run(root, "run-w1", 1);
    let b = mock_run(root, "run-w7", 7);
    let (fa, fb) = (files_under(&a), files_under(&b));
    if fa != fb {
        return fail(format!("file sets differ: {} vs {}", fa.len(), fb.len()));
    }
    let differing: Vec<&PathBuf> =
        fa.iter().filter(|p| std::fs::read(a.join(p)).unwrap() != std::fs::read(b.join(p)).unwrap()).collect();
    let manifests = fa.iter().filter(|p| p.extension().is_some_and(|e| e == "jsonl")).count();
    let detail = format!("{} files ({manifests} manifests) at 1 and 7 workers, {} differ", fa.len(), differing.len());
    if differing.is_empty() && manifests >= 9 {
        pass(detail)
    } else {
        fail(format!("{detail}: {differing:?}"))
    }
}

const WORKED_ORIGINAL: &str =
    "A child in a pink dress is helping a baby in a blue dress climb up a set of stairs in an entry way.";
const WORKED_ENHANCED: &str = "[/EN#1/people A child] in [/EN#2/clothing a pink dress] helping  [/EN#3/people a baby] in  [/EN#4/clothing a blue dress] climb up [/EN#5/other a set of stairs] in [/EN#6/scene an entry way].";
const WORKED_ANSWER: &str = "{“noun”: {“action”: (1, “a child”, “an adult”), “caption”: “An adult in a green dress is helping a baby in a blue dress climb up a set of stairs in an entry way.”]}, “adjective”: {“action”: (2, “a pink dress”, “a green dress”), “caption”: “A child in a green dress is helping a baby in a blue dress climb up a set of stairs in an entry way.”}, “reverse”: {“action”: (2, 4), “caption”: “A child in a blue blouse is helping a baby in a pink dress climb up a set of stairs in an entry way.”}}";

fn random_caption(rng: &mut impl Rng) -> String {
    let words = ["a", "man", "red", "dog", "in", "the", "park", "with", "two", "kites", "near", "old", "bench", "é", "über"];
    let types = ["people", "animals", "other", "clothing", "scene"];
    let mut ids: Vec<u32> = (1..=12).collect();
    ids.shuffle(rng);
    let mut parts = Vec::new();
    for k in 0..rng.random_range(1..8) {
        let phrase: Vec<&str> = (0..rng.random_range(1..4)).map(|_| words[rng.random_range(0..words.len())]).collect();
        if rng.random_bool(0.5) && k < ids.len() {
            parts.push(format!("[/EN#{}/{} {}]", ids[k], types[rng.random_range(0..types.len())], phrase.join(" ")));
        } else {
            parts.push(phrase.join(" "));
        }
    }
    let sep = if rng.random_bool(0.2) { "  " } else { " " };
    parts.join(sep) + if rng.random_bool(0.5) { "." } else { "" }
}

fn parser_round_trip() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    match parse_entity_caption(WORKED_ENHANCED) {
        Ok(c) if c.plain() == WORKED_ORIGINAL => notes.push("worked caption renders to its original".to_string()),
        Ok(c) => {
            ok = false;
            notes.push(format!("worked caption renders to {:?}, original is {WORKED_ORIGINAL:?}", c.plain()));
        }
        Err(e) => {
            ok = false;
            notes.push(format!("worked caption does not parse: {e}"));
        }
    }
    let mut rng = keyed_rng(6, "acceptance/fixpoint");
    let fixture: Vec<String> = (0..FIXPOINT_CAPTIONS).map(|_| random_caption(&mut rng)).collect();
    let fixpoints = fixture
        .iter()
        .filter(|text| {
            let Ok(first) = parse_entity_caption(text) else { return false };
            let again: GroundedCaption = parse_entity_caption(&first.to_tagged()).unwrap();
            again == first && again.to_tagged() == first.to_tagged() && first.to_tagged() == **text
        })
        .count();
    ok &= fixpoints == FIXPOINT_CAPTIONS;
    notes.push(format!("fixpoint {fixpoints}/{FIXPOINT_CAPTIONS}"));

    let answer = parse_attribute_response(WORKED_ANSWER);
    let noun_ok = answer.as_ref().is_ok_and(|a| {
        (a.noun.action.entity_id, a.noun.action.old_phrase.as_str(), a.noun.action.new_phrase.as_str())
            == (1, "a child", "an adult")
            && a.reverse.as_ref().is_some_and(|r| r.entities == (2, 4))
    });
    let without_reverse = WORKED_ANSWER.split(", “reverse”").next().unwrap().to_string() + ", “reverse”: None}";
    let none_ok = parse_attribute_response(&without_reverse).is_ok_and(|a| a.reverse.is_none());
    ok &= noun_ok && none_ok;
    notes.push(format!("sample answer noun action {noun_ok}, reverse None {none_ok}"));
    if ok {
        pass(notes.join("; "))
    } else {
        fail(notes.join("; "))
    }
}

fn retrieval() -> Outcome {
    let n = 100;
    let identity: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.1 }).collect()).collect();
    let at1 = retrieval_precision_at_k(&identity, 1).unwrap();
    let mean: f64 = (0..RETRIEVAL_SEEDS)
        .map(|seed| {
            let mut rng = keyed_rng(seed, "acceptance/retrieval");
            let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random()).collect()).collect();
            retrieval_precision_at_k(&m, 5).unwrap().image_at_k
        })
        .sum::<f64>()
        / RETRIEVAL_SEEDS as f64;
    let detail = format!("identity@1 image {} text {}; random image@5 mean {mean:.4} over {RETRIEVAL_SEEDS} seeds", at1.image_at_k, at1.text_at_k);
    if at1.image_at_k == 1.0 && at1.text_at_k == 1.0 && (mean - RETRIEVAL_MEAN).abs() <= RETRIEVAL_TOL {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn main() {
    // cargo may pass harness flags such as --list; listing has nothing to do
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_corpus(&dir.path().join("data"), 60, 11).unwrap();
    let determinism_outcome = determinism(dir.path());
    let assembled = dir.path().join("run-w1").join(pipeline::ASSEMBLED_DIR);

    let outcomes: Vec<(&str, Outcome)> = vec![
        ("relation oracle", relation_oracle()),
        ("flip coherence", flip_coherence()),
        ("counting branch oracle", counting_oracle()),
        ("worked examples", worked_examples()),
        ("scoring protocol", scoring_protocol()),
        ("grouped-batch invariant", grouped_batches(&assembled)),
        ("determinism", determinism_outcome),
        ("parser round-trip", parser_round_trip()),
        ("retrieval@k", retrieval()),
    ];
    let mut failed = 0;
    for (name, o) in &outcomes {
        println!("{} {name}: {}", if o.ok { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.ok);
    }
    println!("{} of {} criteria pass", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
