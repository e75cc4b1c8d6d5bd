//! Pipeline settings, layered as flags over environment over a TOML file
//! over defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use countercurate_core::assemble::{AblationFlags, SplitRatio};
use countercurate_core::counting::OverlapClosure;
use countercurate_core::jobs::JobKind;
use countercurate_core::text::NumberStyle;
use serde::{Deserialize, Serialize};

/// Curation tracks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Positions,
    Counting,
    Attributes,
}

impl Track {
    pub const ALL: [Track; 3] = [Track::Positions, Track::Counting, Track::Attributes];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Positions => "positions",
            Self::Counting => "counting",
            Self::Attributes => "attributes",
        }
    }
}

impl std::fmt::Display for Track {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One layer of settings; unset fields fall through to the layer below.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub tracks: Option<Vec<Track>>,
    pub seed: Option<u64>,
    /// `train:test`, e.g. `4:1`.
    pub split: Option<String>,
    pub batch_size: Option<usize>,
    pub no_negative_images: Option<bool>,
    pub no_negative_captions: Option<bool>,
    pub no_grouping: Option<bool>,
    pub sample_fraction: Option<f64>,
    pub closure: Option<OverlapClosure>,
    pub number_style: Option<NumberStyle>,
    pub mock: Option<bool>,
    pub workers: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub attempts: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub timeout_secs: Option<u64>,
    /// Base URL per job kind name.
    #[serde(default)]
    pub endpoints: BTreeMap<String, String>,
}

impl Layer {
    /// `self` where set, else `lower`.
    pub fn over(self, lower: Layer) -> Layer {
        let mut endpoints = lower.endpoints;
        endpoints.extend(self.endpoints);
        Layer {
            corpus: self.corpus.or(lower.corpus),
            out: self.out.or(lower.out),
            tracks: self.tracks.or(lower.tracks),
            seed: self.seed.or(lower.seed),
            split: self.split.or(lower.split),
            batch_size: self.batch_size.or(lower.batch_size),
            no_negative_images: self.no_negative_images.or(lower.no_negative_images),
            no_negative_captions: self.no_negative_captions.or(lower.no_negative_captions),
            no_grouping: self.no_grouping.or(lower.no_grouping),
            sample_fraction: self.sample_fraction.or(lower.sample_fraction),
            closure: self.closure.or(lower.closure),
            number_style: self.number_style.or(lower.number_style),
            mock: self.mock.or(lower.mock),
            workers: self.workers.or(lower.workers),
            max_in_flight: self.max_in_flight.or(lower.max_in_flight),
            attempts: self.attempts.or(lower.attempts),
            backoff_ms: self.backoff_ms.or(lower.backoff_ms),
            timeout_secs: self.timeout_secs.or(lower.timeout_secs),
            endpoints,
        }
    }

    /// Reads a TOML settings file.
    pub fn from_toml_file(path: &Path) -> Result<Layer, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// Settings from `COUNTERCURATE_*` variables.
    pub fn from_env(vars: impl IntoIterator<Item = (String, String)>) -> Result<Layer, ConfigError> {
        let mut layer = Layer::default();
        for (key, value) in vars {
            let Some(name) = key.strip_prefix("COUNTERCURATE_") else { continue };
            let parse_err = |what: &str| ConfigError(format!("{key}={value}: expected {what}"));
            match name {
                "SEED" => layer.seed = Some(value.parse().map_err(|_| parse_err("an integer"))?),
                "WORKERS" => layer.workers = Some(value.parse().map_err(|_| parse_err("an integer"))?),
                "MAX_IN_FLIGHT" => layer.max_in_flight = Some(value.parse().map_err(|_| parse_err("an integer"))?),
                "TIMEOUT_SECS" => layer.timeout_secs = Some(value.parse().map_err(|_| parse_err("seconds"))?),
                "MOCK" => layer.mock = Some(matches!(value.as_str(), "1" | "true" | "yes")),
                _ => {
                    if let Some(kind) = name.strip_prefix("ENDPOINT_") {
                        let kind = kind.to_ascii_lowercase();
                        if !JobKind::ALL.iter().any(|k| k.name() == kind) {
                            return Err(ConfigError(format!("{key}: unknown job kind `{kind}`")));
                        }
                        layer.endpoints.insert(kind, value);
                    }
                }
            }
        }
        Ok(layer)
    }
}

/// Invalid or unreadable settings.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("configuration: {0}")]
pub struct ConfigError(pub String);

/// Fully resolved settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub tracks: Vec<Track>,
    pub seed: u64,
    pub split: SplitRatio,
    pub batch_size: usize,
    pub flags: AblationFlags,
    pub sample_fraction: f64,
    pub closure: OverlapClosure,
    pub number_style: NumberStyle,
    pub mock: bool,
    pub workers: usize,
    pub max_in_flight: usize,
    pub attempts: u32,
    pub backoff: Duration,
    pub timeout: Duration,
    pub endpoints: BTreeMap<String, String>,
}

/// Parses `4:1`.
pub fn parse_split(text: &str) -> Result<SplitRatio, ConfigError> {
    let bad = || ConfigError(format!("split `{text}`: expected TRAIN:TEST with positive integers"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let train: u32 = a.trim().parse().map_err(|_| bad())?;
    let test: u32 = b.trim().parse().map_err(|_| bad())?;
    if train == 0 || test == 0 {
        return Err(bad());
    }
    Ok(SplitRatio { train, test })
}

impl PipelineConfig {
    /// Fills unset fields with defaults.
    pub fn resolve(layer: Layer) -> Result<Self, ConfigError> {
        for kind in layer.endpoints.keys() {
            if !JobKind::ALL.iter().any(|k| k.name() == kind) {
                return Err(ConfigError(format!("endpoint for unknown job kind `{kind}`")));
            }
        }
        let sample_fraction = layer.sample_fraction.unwrap_or(1.0);
        if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
            return Err(ConfigError(format!("sample_fraction {sample_fraction} outside (0, 1]")));
        }
        let mut tracks = layer.tracks.unwrap_or_else(|| Track::ALL.to_vec());
        tracks.sort();
        tracks.dedup();
        Ok(Self {
            corpus: layer.corpus,
            out: layer.out,
            tracks,
            seed: layer.seed.unwrap_or(0),
            split: layer.split.as_deref().map(parse_split).transpose()?.unwrap_or_default(),
            batch_size: layer.batch_size.unwrap_or(8),
            flags: AblationFlags {
                no_negative_images: layer.no_negative_images.unwrap_or(false),
                no_negative_captions: layer.no_negative_captions.unwrap_or(false),
                no_grouping: layer.no_grouping.unwrap_or(false),
            },
            sample_fraction,
            closure: layer.closure.unwrap_or_default(),
            number_style: layer.number_style.unwrap_or_default(),
            mock: layer.mock.unwrap_or(false),
            workers: layer.workers.unwrap_or(4).max(1),
            max_in_flight: layer.max_in_flight.unwrap_or(4).max(1),
            attempts: layer.attempts.unwrap_or(3).max(1),
            backoff: Duration::from_millis(layer.backoff_ms.unwrap_or(500)),
            timeout: Duration::from_secs(layer.timeout_secs.unwrap_or(120)),
            endpoints: layer.endpoints,
        })
    }

    /// Layers flags over environment over an optional file.
    pub fn load(
        flags: Layer,
        env: impl IntoIterator<Item = (String, String)>,
        file: Option<&Path>,
    ) -> Result<Self, ConfigError> {
        let file = match file {
            Some(p) => Layer::from_toml_file(p)?,
            None => Layer::default(),
        };
        Self::resolve(flags.over(Layer::from_env(env)?.over(file)))
    }

    /// The settings that determine output content, for manifest headers.
    /// Output location and execution knobs are left out.
    pub fn provenance(&self) -> serde_json::Value {
        serde_json::json!({
            "tracks": self.tracks,
            "seed": self.seed,
            "split": format!("{}:{}", self.split.train, self.split.test),
            "batch_size": self.batch_size,
            "flags": self.flags,
            "sample_fraction": self.sample_fraction,
            "closure": self.closure,
            "number_style": self.number_style,
            "mock": self.mock,
            "endpoints": self.endpoints,
        })
    }
}
