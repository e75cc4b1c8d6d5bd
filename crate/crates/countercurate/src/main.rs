use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use countercurate::config::{Layer, PipelineConfig, Track};
use countercurate::error::{Failure, Result, EXIT_USAGE};
use countercurate::http::TOKEN_VAR;
use countercurate::manifest::{provenance, read_jsonl, write_jsonl};
use countercurate::pipeline::{self, CorpusInput};
use countercurate::report::render_table;
use countercurate::synth::write_synthetic_corpus;
use countercurate::dispatch::DispatchSummary;
use countercurate_core::eval::{reformat_pointqa, PointQaOptions};
use countercurate_core::text::NumberStyle;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Counterfactual image-caption curation and evaluation.
#[derive(Parser)]
#[command(name = "countercurate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Curate items and plan generation jobs for one or more tracks.
    Curate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Track to run; repeat for several. Defaults to all.
        #[arg(long = "track", value_enum)]
        tracks: Vec<Track>,
        #[command(flatten)]
        common: Common,
    },
    /// Execute the pending jobs of a job manifest.
    Generate {
        #[arg(long)]
        jobs: PathBuf,
        /// Directory original image paths are relative to; defaults to the
        /// one recorded when the manifest was curated.
        #[arg(long)]
        image_root: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build batches, conversations and evaluation items from item files.
    Assemble {
        /// Item file; repeat for several.
        #[arg(long = "items", required = true)]
        items: Vec<PathBuf>,
        /// Job manifest per item file, in the same order; defaults to the
        /// jobs.jsonl beside each item file.
        #[arg(long = "jobs")]
        jobs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score similarity and/or choice files against an item file.
    Eval {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        choices: Option<PathBuf>,
        /// Print JSON instead of tables.
        #[arg(long)]
        json: bool,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Curate, generate and assemble in one go.
    Run {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "track", value_enum)]
        tracks: Vec<Track>,
        #[command(flatten)]
        common: Common,
    },
    /// Turn counting questions into caption pairs for contrastive scoring.
    ReformatPointqa {
        /// JSONL with `id`, `noun` and `count` per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use `there are 1 ...` instead of singular agreement.
        #[arg(long)]
        plural_only: bool,
        #[arg(long, value_parser = ["digits", "words"], default_value = "digits")]
        number_style: String,
    },
    /// Write a synthetic corpus with images.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Settings shared by the pipeline commands. Unset flags fall back to the
/// environment, then the config file, then defaults.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train and test proportions, `TRAIN:TEST`.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    no_negative_images: bool,
    #[arg(long)]
    no_negative_captions: bool,
    #[arg(long)]
    no_grouping: bool,
    /// All three ablations: plain caption-image batches.
    #[arg(long)]
    vanilla: bool,
    #[arg(long)]
    sample_fraction: Option<f64>,
    #[arg(long, value_parser = ["direct", "transitive"])]
    closure: Option<String>,
    #[arg(long, value_parser = ["words", "digits"])]
    number_style: Option<String>,
    /// Use deterministic placeholder clients instead of services.
    #[arg(long)]
    mock: bool,
    #[arg(long)]
    workers: Option<usize>,
    /// Concurrent calls per client kind.
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    attempts: Option<u32>,
    #[arg(long)]
    backoff_ms: Option<u64>,
    #[arg(long)]
    timeout_secs: Option<u64>,
}

fn enum_value<T: for<'de> Deserialize<'de>>(s: Option<String>) -> Option<T> {
    s.and_then(|s| serde_json::from_value(Value::String(s)).ok())
}

fn flag(on: bool) -> Option<bool> {
    on.then_some(true)
}

impl Common {
    fn layer(self, corpus: Option<PathBuf>, out: Option<PathBuf>, tracks: Vec<Track>) -> (Layer, Option<PathBuf>) {
        let layer = Layer {
            corpus,
            out,
            tracks: (!tracks.is_empty()).then_some(tracks),
            seed: self.seed,
            split: self.split,
            batch_size: self.batch_size,
            no_negative_images: flag(self.no_negative_images || self.vanilla),
            no_negative_captions: flag(self.no_negative_captions || self.vanilla),
            no_grouping: flag(self.no_grouping || self.vanilla),
            sample_fraction: self.sample_fraction,
            closure: enum_value(self.closure),
            number_style: enum_value(self.number_style),
            mock: flag(self.mock),
            workers: self.workers,
            max_in_flight: self.max_in_flight,
            attempts: self.attempts,
            backoff_ms: self.backoff_ms,
            timeout_secs: self.timeout_secs,
            endpoints: Default::default(),
        };
        (layer, self.config)
    }

    fn resolve(self, corpus: Option<PathBuf>, out: Option<PathBuf>, tracks: Vec<Track>) -> Result<PipelineConfig> {
        let (layer, file) = self.layer(corpus, out, tracks);
        Ok(PipelineConfig::load(layer, std::env::vars(), file.as_deref())?)
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::data(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn dispatch_json(s: &DispatchSummary) -> Value {
    let peak: serde_json::Map<String, Value> =
        s.peak_in_flight.iter().map(|(k, v)| (k.name().to_string(), Value::from(*v))).collect();
    serde_json::json!({
        "skipped": s.skipped,
        "done": s.done,
        "failed": s.failed,
        "calls": s.calls,
        "peak_in_flight": peak,
    })
}

fn check_failed(failed: usize) -> Result<()> {
    if failed > 0 {
        return Err(Failure::service(format!("{failed} jobs failed; rerun to retry them")));
    }
    Ok(())
}

fn token() -> Option<String> {
    std::env::var(TOKEN_VAR).ok().filter(|t| !t.is_empty())
}

#[derive(Deserialize)]
struct PointQaQuestion {
    id: String,
    noun: String,
    count: u32,
}

fn reformat(input: &Path, out: &Path, options: PointQaOptions) -> Result<usize> {
    let parsed = read_jsonl::<PointQaQuestion>(input).map_err(|e| Failure::data(format!("{}: {e}", input.display())))?;
    if let Some((line, e)) = parsed.errors.first() {
        return Err(Failure::data(format!("{}: line {line}: {e}", input.display())));
    }
    let mut rows = Vec::with_capacity(parsed.rows.len());
    for q in &parsed.rows {
        let (caption, negative) =
            reformat_pointqa(&q.noun, q.count, options).map_err(|e| Failure::data(format!("{}: {e}", q.id)))?;
        rows.push(serde_json::json!({
            "item_id": q.id,
            "category": "counting",
            "noun": q.noun,
            "count": q.count,
            "caption": caption,
            "negative_caption": negative,
        }));
    }
    let settings = serde_json::json!({"singular_agreement": options.singular_agreement, "number_style": options.number_style});
    write_jsonl(out, &provenance("reformat-pointqa", settings), &rows)?;
    Ok(rows.len())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Curate { corpus, out, tracks, common } => {
            let config = common.resolve(Some(corpus.clone()), Some(out.clone()), tracks)?;
            let input = CorpusInput::load(&corpus)?;
            let mut summaries = Vec::new();
            for &track in &config.tracks {
                summaries.push(pipeline::curate(track, &input, &config, &out)?);
            }
            print_json(&summaries)
        }
        Command::Generate { jobs, image_root, common } => {
            let config = common.resolve(None, None, Vec::new())?;
            let registry = pipeline::build_registry(&config, token());
            let s = pipeline::generate(&jobs, image_root.as_deref(), &registry, &config)?;
            print_json(&dispatch_json(&s))?;
            check_failed(s.failed)
        }
        Command::Assemble { items, jobs, out, common } => {
            let config = common.resolve(None, Some(out.clone()), Vec::new())?;
            if !jobs.is_empty() && jobs.len() != items.len() {
                return Err(Failure::usage("give one --jobs per --items, or none"));
            }
            print_json(&pipeline::assemble(&items, &jobs, &config, &out)?)
        }
        Command::Eval { items, scores, choices, json, report } => {
            if scores.is_none() && choices.is_none() {
                return Err(Failure::usage("give --scores and/or --choices"));
            }
            let r = pipeline::evaluate(&items, scores.as_deref(), choices.as_deref())?;
            if let Some(path) = report {
                let text = serde_json::to_string_pretty(&r).map_err(|e| Failure::data(e.to_string()))?;
                std::fs::write(path, text + "\n")?;
            }
            if json {
                print_json(&r)?;
            } else {
                let mut out = std::io::stdout().lock();
                if let Some(s) = &r.scores {
                    write!(out, "{}", render_table("similarity scores", s))?;
                }
                if let Some(c) = &r.choices {
                    write!(out, "{}", render_table("multiple choice", c))?;
                }
            }
            if !r.schema_errors.is_empty() {
                for e in &r.schema_errors {
                    log::error!("{e}");
                }
                return Err(Failure::data(format!("{} malformed input lines", r.schema_errors.len())));
            }
            Ok(())
        }
        Command::Run { corpus, out, tracks, common } => {
            let config = common.resolve(corpus, out, tracks)?;
            let s = pipeline::run(&config, token())?;
            let failed: usize = s.generate.values().map(|g| g.failed).sum();
            print_json(&s)?;
            check_failed(failed)
        }
        Command::ReformatPointqa { input, out, plural_only, number_style } => {
            let style = if number_style == "words" { NumberStyle::Words } else { NumberStyle::Digits };
            let n = reformat(&input, &out, PointQaOptions { singular_agreement: !plural_only, number_style: style })?;
            print_json(&serde_json::json!({ "items": n }))
        }
        Command::SynthCorpus { out, count, seed } => {
            let records = write_synthetic_corpus(&out, count, seed)?;
            print_json(&serde_json::json!({
                "records": records.len(),
                "corpus": out.join("corpus.jsonl"),
            }))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE as u8) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
