//! The job manifest and the outputs directory beside it.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use countercurate_core::jobs::{GenerationJob, ImageRef, JobId, JobStatus, PromptSource};
use countercurate_core::JobSpec;
use serde_json::Value;

use crate::clients::ResolvedJob;
use crate::manifest::{read_jsonl, write_jsonl};

/// Directory, relative to the manifest, that holds job outputs.
pub const OUTPUTS_DIR: &str = "outputs";
/// Attachment role resolved against the manifest directory rather than the
/// image root.
pub const BOXED_ROLE: &str = "boxed";

/// Jobs keyed by id, persisted as a manifest sorted by id.
#[derive(Debug)]
pub struct JobStore {
    path: PathBuf,
    dir: PathBuf,
    image_root: PathBuf,
    provenance: Value,
    jobs: BTreeMap<JobId, GenerationJob>,
}

fn invalid(message: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, message)
}

impl JobStore {
    /// An empty store that will be written to `path`.
    pub fn create(path: &Path, image_root: &Path, provenance: Value) -> Self {
        Self {
            path: path.to_path_buf(),
            dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            image_root: image_root.to_path_buf(),
            provenance,
            jobs: BTreeMap::new(),
        }
    }

    /// Loads a manifest. The image root comes from `image_root`, else from
    /// the header's `settings.image_root`, else the manifest directory.
    pub fn open(path: &Path, image_root: Option<&Path>) -> io::Result<Self> {
        let parsed = read_jsonl::<GenerationJob>(path)?;
        if let Some((line, e)) = parsed.errors.first() {
            return Err(invalid(format!("{}: line {line}: {e}", path.display())));
        }
        let provenance = parsed.provenance.unwrap_or(Value::Null);
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let root = match image_root {
            Some(r) => r.to_path_buf(),
            None => provenance["settings"]["image_root"].as_str().map(PathBuf::from).unwrap_or_else(|| dir.clone()),
        };
        let mut jobs = BTreeMap::new();
        for job in parsed.rows {
            if !job.id_is_consistent() {
                return Err(invalid(format!("{}: job {} does not match its payload", path.display(), job.job_id)));
            }
            jobs.insert(job.job_id.clone(), job);
        }
        Ok(Self { path: path.to_path_buf(), dir, image_root: root, provenance, jobs })
    }

    /// Opens `path` if it exists, otherwise starts empty. The header is
    /// replaced by `provenance` either way.
    pub fn open_or_create(path: &Path, image_root: &Path, provenance: Value) -> io::Result<Self> {
        if path.exists() {
            let mut s = Self::open(path, Some(image_root))?;
            s.provenance = provenance;
            Ok(s)
        } else {
            Ok(Self::create(path, image_root, provenance))
        }
    }

    /// Adds a planned job unless one with its id exists. Returns whether it
    /// was new.
    pub fn insert(&mut self, job: GenerationJob) -> bool {
        if self.jobs.contains_key(&job.job_id) {
            return false;
        }
        self.jobs.insert(job.job_id.clone(), job);
        true
    }

    pub fn get(&self, id: &JobId) -> Option<&GenerationJob> {
        self.jobs.get(id)
    }

    pub(crate) fn get_mut(&mut self, id: &JobId) -> Option<&mut GenerationJob> {
        self.jobs.get_mut(id)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &GenerationJob> {
        self.jobs.values()
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn image_root(&self) -> &Path {
        &self.image_root
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Number of jobs per status.
    pub fn status_counts(&self) -> BTreeMap<JobStatus, usize> {
        let mut out = BTreeMap::new();
        for j in self.jobs.values() {
            *out.entry(j.status).or_insert(0) += 1;
        }
        out
    }

    pub fn save(&self) -> io::Result<()> {
        write_jsonl(&self.path, &self.provenance, self.jobs.values())
    }

    /// Absolute location of a done job's output.
    pub fn output_file(&self, id: &JobId) -> Option<PathBuf> {
        let job = self.jobs.get(id)?;
        if job.status != JobStatus::Done {
            return None;
        }
        job.output_path.as_ref().map(|p| self.dir.join(p))
    }

    /// Text output of a done job.
    pub fn text_output(&self, id: &JobId) -> Option<String> {
        fs::read_to_string(self.output_file(id)?).ok()
    }

    /// Where an output of the given extension is written.
    pub fn output_rel(id: &JobId, ext: &str) -> String {
        format!("{OUTPUTS_DIR}/{id}.{ext}")
    }

    fn image_bytes(&self, source: &ImageRef) -> Result<Vec<u8>, String> {
        let path = match source {
            ImageRef::Original(p) => self.image_root.join(p),
            ImageRef::Generated(id) => self.output_file(id).ok_or_else(|| format!("job {id} has no output"))?,
        };
        fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Loads a job's inputs.
    pub fn resolve(&self, job: &GenerationJob) -> Result<ResolvedJob, String> {
        let mut out = ResolvedJob { job: job.clone(), source: None, prompt: None, images: Vec::new() };
        match &job.spec {
            JobSpec::HFlip { source, .. } | JobSpec::Inpaint { source, .. } => {
                out.source = Some(self.image_bytes(source)?);
            }
            JobSpec::BoxedT2I { prompt, .. } => {
                out.prompt = Some(match prompt {
                    PromptSource::Literal(s) => s.clone(),
                    PromptSource::FromJob(id) => self
                        .text_output(id)
                        .map(|t| t.trim().to_string())
                        .ok_or_else(|| format!("prompt job {id} has no text output"))?,
                });
            }
            JobSpec::TextToImage { prompt, .. } => out.prompt = Some(prompt.clone()),
            JobSpec::LlmText { request } => {
                for (role, path) in &request.images {
                    let abs = if role == BOXED_ROLE { self.dir.join(path) } else { self.image_root.join(path) };
                    let bytes = fs::read(&abs).map_err(|e| format!("{}: {e}", abs.display()))?;
                    out.images.push((role.clone(), bytes));
                }
            }
        }
        Ok(out)
    }
}
