//! The stages behind the CLI: curate, generate, assemble, evaluate.
//!
//! Output layout under the run directory:
//!
//! ```text
//! {track}/items.jsonl     curated items
//! {track}/jobs.jsonl      job manifest; outputs in {track}/outputs/
//! attributes/overlays/    boxed copies shown to the language model
//! assembled/              batches, conversations and evaluation items
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use countercurate_core::assemble::{
    build_conversation, build_grouped_batches, split_train_test, BatchOptions, CounterfactualGroup,
};
use countercurate_core::attributes::{build_attribute_request, curate_attributes, Legend};
use countercurate_core::counting::{curate_counting, CountingOptions, CountingSkip};
use countercurate_core::eval::{
    score_choice, score_contrastive_item, score_text_only_item, Aggregator, ChoiceRecord, Report, ScoreRecord,
};
use countercurate_core::grounded::ImageRecord;
use countercurate_core::jobs::{GenerationJob, JobId, JobKind, JobSpec, JobStatus};
use countercurate_core::positions::curate_positions;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clients::{LocalFlip, Registry};
use crate::config::{PipelineConfig, Track};
use crate::corpus::{load_corpus, Corpus};
use crate::dispatch::{dispatch, DispatchOptions, DispatchSummary};
use crate::error::{Failure, Result};
use crate::http::HttpClient;
use crate::images;
use crate::manifest::{file_sha256, provenance, read_jsonl, write_jsonl};
use crate::mock::mock_registry;
use crate::store::{JobStore, BOXED_ROLE};

pub const ITEMS_FILE: &str = "items.jsonl";
pub const JOBS_FILE: &str = "jobs.jsonl";
pub const OVERLAYS_DIR: &str = "overlays";
pub const ASSEMBLED_DIR: &str = "assembled";
pub const BATCHES_FILE: &str = "batches.jsonl";
pub const CONVERSATIONS_FILE: &str = "conversations.jsonl";
pub const EVAL_ITEMS_FILE: &str = "eval_items.jsonl";

/// Named category unions reported beside the per-category rows.
pub const ROLLUPS: [(&str, &[&str]); 2] = [("Both", &["LR", "AB"]), ("Attributes", &["noun", "adjective", "reverse"])];

/// A loaded corpus plus what the headers need to know about it.
pub struct CorpusInput {
    pub corpus: Corpus,
    /// Directory image paths are relative to.
    pub image_root: PathBuf,
    pub sha256: String,
}

impl CorpusInput {
    pub fn load(path: &Path) -> Result<Self> {
        let corpus = load_corpus(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        let abs = path.canonicalize()?;
        let image_root = abs.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { sha256: file_sha256(&abs)?, corpus, image_root })
    }
}

fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool")
}

fn settings(config: &PipelineConfig, extra: &[(&str, Value)]) -> Value {
    let mut v = config.provenance();
    for (k, x) in extra {
        v[*k] = x.clone();
    }
    v
}

/// Counts from one curation pass.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CurateSummary {
    pub track: String,
    pub records: usize,
    pub corpus_errors: usize,
    pub items: usize,
    pub jobs: usize,
    pub new_jobs: usize,
    /// Records or facts that produced nothing, with reasons.
    pub skipped: BTreeMap<String, usize>,
    /// Attribute records still waiting for their language-model answer.
    pub awaiting_answers: usize,
}

fn bump(map: &mut BTreeMap<String, usize>, key: impl Into<String>) {
    *map.entry(key.into()).or_insert(0) += 1;
}

fn file_stem_for(image_id: &str) -> String {
    image_id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

/// Runs one track over the corpus, merging planned jobs into the track's
/// manifest and rewriting its item file.
pub fn curate(track: Track, input: &CorpusInput, config: &PipelineConfig, out: &Path) -> Result<CurateSummary> {
    let dir = out.join(track.as_str());
    std::fs::create_dir_all(&dir)?;
    let header = provenance(
        &format!("curate/{track}"),
        settings(
            config,
            &[
                ("corpus_sha256", input.sha256.clone().into()),
                ("image_root", input.image_root.display().to_string().into()),
            ],
        ),
    );
    let mut store = JobStore::open_or_create(&dir.join(JOBS_FILE), &input.image_root, header.clone())?;
    let records = &input.corpus.records;
    let mut summary = CurateSummary {
        track: track.to_string(),
        records: records.len(),
        corpus_errors: input.corpus.errors.len(),
        ..CurateSummary::default()
    };
    let workers = pool(config.workers);
    let mut jobs: Vec<GenerationJob> = Vec::new();
    let items: Vec<Value> = match track {
        Track::Positions => {
            let batches = workers.install(|| records.par_iter().map(curate_positions).collect::<Vec<_>>());
            let mut items = Vec::new();
            for b in batches {
                for (_, e) in &b.skipped {
                    bump(&mut summary.skipped, error_tag(&e.to_string()));
                }
                items.extend(b.items.iter().map(|i| serde_json::to_value(i).expect("item json")));
                jobs.extend(b.jobs);
            }
            items
        }
        Track::Counting => {
            let options = CountingOptions { closure: config.closure, number_style: config.number_style };
            let results = workers.install(|| records.par_iter().map(|r| curate_counting(r, options)).collect::<Vec<_>>());
            let mut items = Vec::new();
            for (r, res) in records.iter().zip(results) {
                match res {
                    Ok((item, job)) => {
                        items.push(serde_json::to_value(&item).expect("item json"));
                        jobs.push(job);
                    }
                    Err(CountingSkip::NoPair) => bump(&mut summary.skipped, "no category pair"),
                    Err(e) => {
                        log::info!("counting: {}: {e}", r.image_id());
                        bump(&mut summary.skipped, error_tag(&e.to_string()));
                    }
                }
            }
            items
        }
        Track::Attributes => {
            let planned = workers.install(|| {
                records.par_iter().map(|r| plan_attribute_request(r, &input.image_root, &dir)).collect::<Vec<_>>()
            });
            let mut items = Vec::new();
            for (r, plan) in records.iter().zip(planned) {
                let job = match plan {
                    Ok(j) => j,
                    Err(why) => {
                        log::info!("attributes: {}: {why}", r.image_id());
                        bump(&mut summary.skipped, why);
                        continue;
                    }
                };
                let id = job.job_id.clone();
                jobs.push(job);
                let answered = store.get(&id).is_some_and(|j| j.status == JobStatus::Done);
                let Some(answer) = answered.then(|| store.text_output(&id)).flatten() else {
                    summary.awaiting_answers += 1;
                    continue;
                };
                match curate_attributes(r, &id, &answer) {
                    Ok(batch) => {
                        items.extend(batch.items.iter().map(|i| serde_json::to_value(i).expect("item json")));
                        jobs.extend(batch.jobs);
                    }
                    Err(e) => {
                        log::info!("attributes: {}: dropped answer: {e}", r.image_id());
                        bump(&mut summary.skipped, "unusable answer");
                    }
                }
            }
            items
        }
    };
    for job in jobs {
        if store.insert(job) {
            summary.new_jobs += 1;
        }
    }
    summary.items = items.len();
    summary.jobs = store.len();
    store.save()?;
    write_jsonl(&dir.join(ITEMS_FILE), &header, &items)?;
    Ok(summary)
}

fn error_tag(message: &str) -> String {
    // group messages by their leading words so ids do not split buckets
    message.split(|c: char| c.is_ascii_digit() || c == '(').next().unwrap_or(message).trim().to_string()
}

fn plan_attribute_request(record: &ImageRecord, image_root: &Path, dir: &Path) -> std::result::Result<GenerationJob, String> {
    if record.captions().is_empty() {
        return Err("no caption".into());
    }
    let rel = format!("{OVERLAYS_DIR}/{}.png", file_stem_for(record.image_id()));
    let src = images::load_rgb(&image_root.join(record.image_path())).map_err(|e| {
        log::warn!("attributes: {e}");
        "image unreadable".to_string()
    })?;
    let overlay = images::draw_overlay(&src, record, &Legend::for_record(record));
    images::save_png(&overlay, &dir.join(&rel)).map_err(|e| e.to_string())?;
    let request = build_attribute_request(record, &rel).map_err(|e| e.to_string())?;
    debug_assert!(request.images.iter().any(|(role, _)| role == BOXED_ROLE));
    GenerationJob::new(JobSpec::LlmText { request }).map_err(|e| e.to_string())
}

/// Clients per kind: mocks in mock mode, otherwise local flips plus an HTTP
/// client for every configured endpoint.
pub fn build_registry(config: &PipelineConfig, token: Option<String>) -> Registry {
    if config.mock {
        return mock_registry(config.max_in_flight);
    }
    let mut r = Registry::new();
    r.register(JobKind::HFlip, Arc::new(LocalFlip), config.max_in_flight);
    for kind in JobKind::ALL {
        if let Some(url) = config.endpoints.get(kind.name()) {
            r.register(kind, Arc::new(HttpClient::new(url.clone(), token.clone(), config.timeout)), config.max_in_flight);
        }
    }
    r
}

pub fn dispatch_options(config: &PipelineConfig) -> DispatchOptions {
    DispatchOptions { workers: config.workers, attempts: config.attempts, backoff: config.backoff, seed: config.seed }
}

/// Executes the pending jobs of one manifest.
pub fn generate(jobs: &Path, image_root: Option<&Path>, registry: &Registry, config: &PipelineConfig) -> Result<DispatchSummary> {
    let mut store = JobStore::open(jobs, image_root).map_err(|e| Failure::data(e.to_string()))?;
    let summary = dispatch(&mut store, registry, &dispatch_options(config))?;
    Ok(summary)
}

/// Path of `target` relative to directory `base`; both absolute.
pub fn relative_path(base: &Path, target: &Path) -> PathBuf {
    let b: Vec<Component> = base.components().collect();
    let t: Vec<Component> = target.components().collect();
    let common = b.iter().zip(&t).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c.as_os_str());
    }
    out
}

/// One evaluation item: what a scorer needs for the four similarities and
/// the two-option question.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub image_id: String,
    pub track: String,
    pub category: String,
    pub caption: String,
    pub negative_caption: String,
    /// Relative to the item file's directory.
    pub image: String,
    pub negative_image: String,
    /// Options for the question about `image`, in presentation order.
    pub options: [String; 2],
    pub answer: String,
}

/// Counts from assembly.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AssembleSummary {
    pub items: usize,
    pub groups: usize,
    pub train_groups: usize,
    pub test_groups: usize,
    pub batches: usize,
    pub conversations: usize,
    /// Items dropped because the negative image is not done.
    pub unresolved: usize,
    pub invalid: usize,
}

#[derive(Clone)]
struct GroupMeta {
    image_id: String,
    category: String,
}

fn str_field<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str)
}

fn lexical(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other.as_os_str()),
        }
    }
    out
}

/// Builds groups from item files, splits them by image, and writes batches
/// and conversations for train and evaluation items for test.
///
/// Each item file's job manifest is `jobs` at the same position, else the
/// `jobs.jsonl` beside it.
pub fn assemble(items: &[PathBuf], jobs: &[PathBuf], config: &PipelineConfig, out: &Path) -> Result<AssembleSummary> {
    std::fs::create_dir_all(out)?;
    let out_abs = out.canonicalize()?;
    let mut summary = AssembleSummary::default();
    let mut groups: Vec<(CounterfactualGroup, GroupMeta)> = Vec::new();
    let mut inputs = Vec::new();
    for (k, items_path) in items.iter().enumerate() {
        let manifest = jobs.get(k).cloned().unwrap_or_else(|| items_path.with_file_name(JOBS_FILE));
        let store = JobStore::open(&manifest, None).map_err(|e| Failure::data(format!("{}: {e}", manifest.display())))?;
        let parsed = read_jsonl::<Value>(items_path).map_err(|e| Failure::data(format!("{}: {e}", items_path.display())))?;
        for (line, e) in &parsed.errors {
            log::warn!("{}: line {line}: {e}", items_path.display());
            summary.invalid += 1;
        }
        inputs.push(serde_json::json!({
            "items": file_sha256(items_path)?,
            "jobs": file_sha256(&manifest)?,
        }));
        for item in &parsed.rows {
            summary.items += 1;
            match group_of(item, &store, &out_abs) {
                Ok(Some(g)) => groups.push(g),
                Ok(None) => summary.unresolved += 1,
                Err(why) => {
                    log::warn!("{}: {why}", items_path.display());
                    summary.invalid += 1;
                }
            }
        }
    }
    summary.groups = groups.len();
    if groups.is_empty() {
        return Err(Failure::data("no complete groups to assemble"));
    }
    let (train, test) = split_train_test(&groups, |(_, m)| m.image_id.as_str(), config.split, config.seed)
        .map_err(|e| Failure::data(e.to_string()))?;
    summary.train_groups = train.len();
    summary.test_groups = test.len();
    let header = provenance("assemble", settings(config, &[("inputs", Value::Array(inputs))]));

    let train_groups: Vec<CounterfactualGroup> = train.iter().map(|(g, _)| g.clone()).collect();
    let options = BatchOptions {
        batch_size: config.batch_size,
        seed: config.seed,
        flags: config.flags,
        sample_fraction: config.sample_fraction,
    };
    let batches = build_grouped_batches(&train_groups, &options).map_err(|e| Failure::data(e.to_string()))?;
    summary.batches = batches.len();
    write_jsonl(&out.join(BATCHES_FILE), &header, &batches)?;

    let conversations: Vec<_> = train_groups.iter().flat_map(|g| build_conversation(g, config.seed)).collect();
    summary.conversations = conversations.len();
    write_jsonl(&out.join(CONVERSATIONS_FILE), &header, &conversations)?;

    let eval_items: Vec<EvalItem> = test
        .iter()
        .map(|(g, m)| {
            let [first, _] = build_conversation(g, config.seed);
            EvalItem {
                item_id: g.group_id.clone(),
                image_id: m.image_id.clone(),
                track: g.track.clone(),
                category: m.category.clone(),
                caption: g.caption.clone(),
                negative_caption: g.negative_caption.clone(),
                image: g.image.clone(),
                negative_image: g.negative_image.clone(),
                options: first.options,
                answer: first.answer,
            }
        })
        .collect();
    write_jsonl(&out.join(EVAL_ITEMS_FILE), &header, &eval_items)?;
    Ok(summary)
}

fn group_of(
    item: &Value,
    store: &JobStore,
    out_abs: &Path,
) -> std::result::Result<Option<(CounterfactualGroup, GroupMeta)>, String> {
    let field = |k: &str| str_field(item, k).ok_or_else(|| format!("item lacks `{k}`: {item}"));
    let item_id = field("item_id")?;
    let track = field("track")?;
    let category = field("category")?;
    let job_id = JobId::from_hex(field("job_id")?).ok_or_else(|| format!("{item_id}: malformed job id"))?;
    let Some(negative) = store.output_file(&job_id) else {
        log::info!("{item_id}: negative image job {job_id} not done");
        return Ok(None);
    };
    let tag = if track == "positions" { format!("positions-{category}") } else { track.to_string() };
    let image = lexical(&store.image_root().join(field("image_path")?));
    let negative = lexical(&if negative.is_absolute() { negative } else { std::env::current_dir().map_err(|e| e.to_string())?.join(negative) });
    let rel = |p: &Path| relative_path(out_abs, p).to_string_lossy().replace('\\', "/");
    let group = CounterfactualGroup::new(
        item_id,
        tag,
        field("caption")?,
        rel(&image),
        field("negative_caption")?,
        rel(&negative),
    )
    .map_err(|e| e.to_string())?;
    Ok(Some((group, GroupMeta { image_id: field("image_id")?.into(), category: category.into() })))
}

/// Reports from an evaluation.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReports {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Report>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub choices: Option<Report>,
    /// Lines of the inputs that failed to parse.
    pub schema_errors: Vec<String>,
}

/// Scores an item file against score and/or choice files.
///
/// A score record with both negative-image similarities is scored with the
/// four-way protocol, one without them text-only.
pub fn evaluate(items: &Path, scores: Option<&Path>, choices: Option<&Path>) -> Result<EvalReports> {
    let parsed = read_jsonl::<Value>(items).map_err(|e| Failure::data(format!("{}: {e}", items.display())))?;
    let mut schema_errors: Vec<String> =
        parsed.errors.iter().map(|(l, e)| format!("{}: line {l}: {e}", items.display())).collect();
    let mut categories = BTreeMap::new();
    for v in &parsed.rows {
        match (str_field(v, "item_id"), str_field(v, "category").or_else(|| str_field(v, "track"))) {
            (Some(id), Some(cat)) => {
                categories.insert(id.to_string(), cat.to_string());
            }
            _ => schema_errors.push(format!("{}: item without item_id/category: {v}", items.display())),
        }
    }
    let expected: BTreeSet<String> = categories.values().cloned().collect();
    let expected: Vec<&str> = expected.iter().map(String::as_str).collect();

    let score_report = match scores {
        None => None,
        Some(path) => {
            let records = read_jsonl::<ScoreRecord>(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            schema_errors.extend(records.errors.iter().map(|(l, e)| format!("{}: line {l}: {e}", path.display())));
            let mut agg = Aggregator::new(categories.clone());
            for r in &records.rows {
                if let Err(e) = r.validate() {
                    schema_errors.push(format!("{}: {e}", path.display()));
                    continue;
                }
                let score = if r.has_negative_image() {
                    score_contrastive_item(r).expect("both negative-image scores present")
                } else {
                    score_text_only_item(r)
                };
                agg.add(&r.item_id, score);
            }
            Some(agg.finish(&expected, &ROLLUPS))
        }
    };
    let choice_report = match choices {
        None => None,
        Some(path) => {
            let records = read_jsonl::<ChoiceRecord>(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            schema_errors.extend(records.errors.iter().map(|(l, e)| format!("{}: line {l}: {e}", path.display())));
            let mut agg = Aggregator::new(categories.clone());
            for r in &records.rows {
                agg.add(&r.item_id, score_choice(r));
            }
            Some(agg.finish(&expected, &ROLLUPS))
        }
    };
    Ok(EvalReports { scores: score_report, choices: choice_report, schema_errors })
}

/// Job counts from the generation passes of one track.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct GenerateCounts {
    pub done: usize,
    pub failed: usize,
    pub skipped: usize,
}

/// Counts from a full run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunSummary {
    pub curate: Vec<CurateSummary>,
    pub generate: BTreeMap<String, GenerateCounts>,
    pub assemble: Option<AssembleSummary>,
}

fn generate_track(dir: &Path, registry: &Registry, config: &PipelineConfig, summary: &mut RunSummary, track: Track) -> Result<()> {
    let s = generate(&dir.join(JOBS_FILE), None, registry, config)?;
    let e = summary.generate.entry(track.to_string()).or_default();
    e.done += s.done;
    e.failed += s.failed;
    e.skipped += s.skipped;
    Ok(())
}

/// Curates every configured track, runs the jobs, runs the second
/// attributes pass once answers exist, and assembles everything.
pub fn run(config: &PipelineConfig, token: Option<String>) -> Result<RunSummary> {
    let corpus = config.corpus.as_deref().ok_or_else(|| Failure::usage("no corpus given"))?;
    let out = config.out.as_deref().ok_or_else(|| Failure::usage("no output directory given"))?;
    let input = CorpusInput::load(corpus)?;
    let registry = build_registry(config, token);
    let mut summary = RunSummary::default();
    let mut item_files = Vec::new();
    for &track in &config.tracks {
        let dir = out.join(track.as_str());
        let mut s = curate(track, &input, config, out)?;
        generate_track(&dir, &registry, config, &mut summary, track)?;
        if track == Track::Attributes {
            s = curate(track, &input, config, out)?;
            generate_track(&dir, &registry, config, &mut summary, track)?;
        }
        summary.curate.push(s);
        item_files.push(dir.join(ITEMS_FILE));
    }
    summary.assemble = Some(assemble(&item_files, &[], config, &out.join(ASSEMBLED_DIR))?);
    Ok(summary)
}
