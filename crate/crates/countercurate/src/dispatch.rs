//! Runs pending jobs through their clients.
//!
//! Jobs execute in dependency waves. Within a wave, worker threads pull
//! jobs from a shared queue and each client kind admits a bounded number of
//! concurrent calls. Results flow back over a channel to the calling thread,
//! which alone writes outputs and updates the store.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::time::Duration;

use countercurate_core::jobs::{JobId, JobKind, JobStatus};
use countercurate_core::rng::keyed_rng;
use rand::Rng;

use crate::clients::{Client, ClientError, Output, Registry, ResolvedJob};
use crate::store::JobStore;

/// Execution settings.
#[derive(Clone, Debug)]
pub struct DispatchOptions {
    pub workers: usize,
    /// Tries per job, including the first.
    pub attempts: u32,
    /// Delay before the first retry; doubles after each further failure.
    pub backoff: Duration,
    /// Seeds retry jitter.
    pub seed: u64,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        Self { workers: 4, attempts: 3, backoff: Duration::from_millis(500), seed: 0 }
    }
}

/// What a dispatch did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DispatchSummary {
    /// Already done before this run.
    pub skipped: usize,
    pub done: usize,
    pub failed: usize,
    /// Client invocations, retries included.
    pub calls: usize,
    /// Highest concurrent calls observed per kind.
    pub peak_in_flight: BTreeMap<JobKind, usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum DispatchError {
    #[error("no client registered for {0} jobs")]
    NoClient(JobKind),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Gate {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

impl Gate {
    fn new(max: usize) -> Self {
        Self { max, current: Mutex::new(0), freed: Condvar::new(), peak: AtomicUsize::new(0) }
    }

    fn enter(&self) {
        let mut n = self.current.lock().expect("gate lock");
        while *n >= self.max {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        self.peak.fetch_max(*n, Ordering::SeqCst);
    }

    fn leave(&self) {
        *self.current.lock().expect("gate lock") -= 1;
        self.freed.notify_one();
    }
}

fn run_with_retries(
    client: &dyn Client,
    job: &ResolvedJob,
    opts: &DispatchOptions,
    calls: &AtomicUsize,
) -> (Result<Output, ClientError>, u32) {
    let mut rng = keyed_rng(opts.seed, &format!("retry/{}", job.job.job_id));
    let attempts = opts.attempts.max(1);
    let mut attempt = 1;
    loop {
        calls.fetch_add(1, Ordering::SeqCst);
        match client.execute(job) {
            Ok(out) => return (Ok(out), attempt),
            Err(e) if e.retryable && attempt < attempts => {
                let jitter: f64 = rng.random();
                let delay = opts.backoff.mul_f64(f64::from(1u32 << (attempt - 1)) * (1.0 + jitter));
                log::debug!("job {} attempt {attempt} failed ({e}); retrying in {delay:?}", job.job.job_id);
                std::thread::sleep(delay);
                attempt += 1;
            }
            Err(e) => return (Err(e), attempt),
        }
    }
}

fn fail(store: &mut JobStore, id: &JobId, message: String, attempts: u32) {
    if let Some(job) = store.get_mut(id) {
        log::warn!("job {id} failed: {message}");
        job.status = JobStatus::Failed;
        job.error = Some(message);
        job.attempts += attempts;
        job.output_path = None;
    }
}

fn record(store: &mut JobStore, id: &JobId, result: Result<Output, ClientError>, attempts: u32) -> std::io::Result<bool> {
    let output = match result {
        Ok(o) => o,
        Err(e) => {
            fail(store, id, e.message, attempts);
            return Ok(false);
        }
    };
    let (rel, bytes) = match output {
        Output::Image(b) => (JobStore::output_rel(id, "png"), b),
        Output::Text(t) => (JobStore::output_rel(id, "txt"), t.into_bytes()),
    };
    let abs = store.dir().join(&rel);
    if let Some(parent) = abs.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&abs, bytes)?;
    let job = store.get_mut(id).expect("dispatched job is stored");
    job.status = JobStatus::Done;
    job.output_path = Some(rel);
    job.attempts += attempts;
    job.error = None;
    Ok(true)
}

fn run_wave(
    store: &mut JobStore,
    wave: Vec<ResolvedJob>,
    registry: &Registry,
    gates: &BTreeMap<JobKind, Arc<Gate>>,
    opts: &DispatchOptions,
    calls: &AtomicUsize,
    summary: &mut DispatchSummary,
) -> std::io::Result<()> {
    let workers = opts.workers.max(1).min(wave.len());
    let queue = Mutex::new(VecDeque::from(wave));
    let (tx, rx) = mpsc::channel::<(JobId, Result<Output, ClientError>, u32)>();
    std::thread::scope(|scope| -> std::io::Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let queue = &queue;
            scope.spawn(move || loop {
                let Some(job) = queue.lock().expect("queue lock").pop_front() else { break };
                let kind = job.job.kind();
                let (client, _) = registry.get(kind).expect("clients checked before dispatch");
                let gate = &gates[&kind];
                gate.enter();
                let (result, attempts) = run_with_retries(client.as_ref(), &job, opts, calls);
                gate.leave();
                if tx.send((job.job.job_id.clone(), result, attempts)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (id, result, attempts) in rx {
            if record(store, &id, result, attempts)? {
                summary.done += 1;
            } else {
                summary.failed += 1;
            }
        }
        Ok(())
    })
}

/// Executes every pending job whose dependencies complete.
///
/// Done jobs with their output present are skipped; failed jobs are retried.
/// A job whose dependency fails is marked failed without a call.
pub fn dispatch(store: &mut JobStore, registry: &Registry, opts: &DispatchOptions) -> Result<DispatchSummary, DispatchError> {
    let mut summary = DispatchSummary::default();
    let ids: Vec<JobId> = store.jobs().map(|j| j.job_id.clone()).collect();
    for id in &ids {
        let has_output = store.output_file(id).is_some_and(|p| p.exists());
        let job = store.get_mut(id).expect("listed");
        match job.status {
            JobStatus::Done if has_output => summary.skipped += 1,
            JobStatus::Done | JobStatus::Failed => {
                job.status = JobStatus::Pending;
                job.output_path = None;
            }
            JobStatus::Pending => {}
        }
    }
    let mut gates = BTreeMap::new();
    for job in store.jobs().filter(|j| j.status == JobStatus::Pending) {
        let (_, cap) = registry.get(job.kind()).ok_or(DispatchError::NoClient(job.kind()))?;
        gates.entry(job.kind()).or_insert_with(|| Arc::new(Gate::new(cap)));
    }
    let calls = AtomicUsize::new(0);
    loop {
        let mut wave = Vec::new();
        let mut blocked: Vec<(JobId, String)> = Vec::new();
        for job in store.jobs().filter(|j| j.status == JobStatus::Pending) {
            let mut ready = true;
            for dep in job.spec.dependencies() {
                match store.get(&dep).map(|d| d.status) {
                    Some(JobStatus::Done) => {}
                    Some(JobStatus::Pending) => ready = false,
                    Some(JobStatus::Failed) => {
                        blocked.push((job.job_id.clone(), format!("dependency {dep} failed")));
                        ready = false;
                        break;
                    }
                    None => {
                        blocked.push((job.job_id.clone(), format!("dependency {dep} is not in this manifest")));
                        ready = false;
                        break;
                    }
                }
            }
            if ready {
                wave.push(job.job_id.clone());
            }
        }
        let progressed = !wave.is_empty() || !blocked.is_empty();
        for (id, why) in blocked {
            fail(store, &id, why, 0);
            summary.failed += 1;
        }
        let mut resolved = Vec::with_capacity(wave.len());
        for id in wave {
            match store.resolve(store.get(&id).expect("listed")) {
                Ok(r) => resolved.push(r),
                Err(message) => {
                    fail(store, &id, message, 1);
                    summary.failed += 1;
                }
            }
        }
        if !resolved.is_empty() {
            run_wave(store, resolved, registry, &gates, opts, &calls, &mut summary)?;
            store.save()?;
        }
        if !progressed {
            break;
        }
    }
    store.save()?;
    summary.calls = calls.into_inner();
    summary.peak_in_flight = gates.iter().map(|(k, g)| (*k, g.peak.load(Ordering::SeqCst))).collect();
    Ok(summary)
}
