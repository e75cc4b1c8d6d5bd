//! Executor contract shared by the local flipper, the mocks and the HTTP
//! clients.

use std::collections::BTreeMap;
use std::sync::Arc;

use countercurate_core::jobs::{GenerationJob, JobKind, JobSpec};

use crate::images;

/// A job with its inputs loaded.
#[derive(Clone, Debug)]
pub struct ResolvedJob {
    pub job: GenerationJob,
    /// Encoded source image for flips and inpaints.
    pub source: Option<Vec<u8>>,
    /// Scene prompt, after following a `from_job` reference.
    pub prompt: Option<String>,
    /// Encoded images attached to a language-model request, by role.
    pub images: Vec<(String, Vec<u8>)>,
}

/// What a job produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Output {
    /// PNG bytes.
    Image(Vec<u8>),
    Text(String),
}

/// A failed execution.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct ClientError {
    pub message: String,
    /// False for errors a retry cannot fix, such as a rejected request.
    pub retryable: bool,
}

impl ClientError {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: true }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: false }
    }
}

/// Executes jobs of some kinds.
pub trait Client: Send + Sync {
    /// Short name for logs.
    fn name(&self) -> &str;
    fn execute(&self, job: &ResolvedJob) -> Result<Output, ClientError>;
}

/// Flips on the local machine.
#[derive(Clone, Copy, Debug, Default)]
pub struct LocalFlip;

/// Mirrors the job's source image.
pub fn execute_hflip(job: &ResolvedJob) -> Result<Output, ClientError> {
    let JobSpec::HFlip { width, height, .. } = &job.job.spec else {
        return Err(ClientError::fatal(format!("local flip cannot run {} jobs", job.job.kind())));
    };
    let bytes = job.source.as_deref().ok_or_else(|| ClientError::fatal("source image missing"))?;
    let img = images::decode(bytes).map_err(|e| ClientError::fatal(format!("source image unreadable: {e}")))?;
    if img.dimensions() != (*width, *height) {
        return Err(ClientError::fatal(format!(
            "source is {}x{}, record says {width}x{height}",
            img.width(),
            img.height()
        )));
    }
    Ok(Output::Image(images::png_bytes(&images::hflip(&img))))
}

impl Client for LocalFlip {
    fn name(&self) -> &str {
        "local-flip"
    }

    fn execute(&self, job: &ResolvedJob) -> Result<Output, ClientError> {
        execute_hflip(job)
    }
}

/// Client per job kind, with an in-flight cap per client.
#[derive(Clone, Default)]
pub struct Registry {
    clients: BTreeMap<JobKind, (Arc<dyn Client>, usize)>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Routes `kind` to `client`, allowing at most `max_in_flight` concurrent
    /// calls per kind.
    pub fn register(&mut self, kind: JobKind, client: Arc<dyn Client>, max_in_flight: usize) -> &mut Self {
        self.clients.insert(kind, (client, max_in_flight.max(1)));
        self
    }

    pub fn get(&self, kind: JobKind) -> Option<(&Arc<dyn Client>, usize)> {
        self.clients.get(&kind).map(|(c, n)| (c, *n))
    }
}
