//! The 2D-to-3D generation job: segmentation from a three-point prompt, a
//! confirmation gate, conditioned multiview generation and splat fusion.
//!
//! ```text
//! segmenting -> awaiting_confirmation -> multiview -> fusing -> done
//!      \________________\__________________\___________\_____-> failed
//! ```
//!
//! Each backend stage runs on a worker thread, bounded by the configured
//! timeout and retried once. Jobs are independent; a job's transitions are
//! serialized by its own lock.

mod config;
mod http;
mod mock;
mod prompt;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use image::RgbaImage;
use serde::{Deserialize, Serialize};

pub use config::{MockConfig, PipelineConfig, StageBackendConfig, StageBackends};
pub use http::{
    image_from_b64, png_b64, GaussianRequest, GaussianResponse, HttpBackend, MultiviewRequest, MultiviewResponse,
    SegmentRequest, SegmentResponse,
};
pub use mock::{billboard_asset, mock_gaussian, mock_multiview, mock_segment, MockBackend};
pub use prompt::{cutout, Mask, MultiviewSet, Point, PromptSource, SegmentationPrompt, SegmentedObject, CUTOUT_MARGIN};

use crate::splat::{AssetId, Provenance};
use crate::store::AssetStore;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct BackendError(pub String);

/// The model-server contract.
pub trait Backend: Send + Sync {
    fn segment(&self, frame: &RgbaImage, points: &[Point; 3]) -> Result<Mask, BackendError>;
    /// Front, left, right and back views of a cutout.
    fn multiview(&self, cutout: &RgbaImage) -> Result<[RgbaImage; 4], BackendError>;
    /// Splat `.ply` bytes fused from a cutout and its views.
    fn gaussian(&self, cutout: &RgbaImage, views: &[RgbaImage; 4]) -> Result<Vec<u8>, BackendError>;

    fn provenance(&self) -> Provenance {
        Provenance::Backend
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("InvalidPrompt: {0}")]
    InvalidPrompt(String),
    #[error("UnknownJob: {0}")]
    UnknownJob(JobId),
    #[error("WrongStage: job {job} is {stage}")]
    WrongStage { job: JobId, stage: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(String);

impl JobId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for JobId {
    fn from(s: &str) -> Self {
        JobId(s.to_owned())
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStage {
    Segmenting,
    AwaitingConfirmation,
    Multiview,
    Fusing,
    Done,
    Failed,
}

impl JobStage {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStage::Done | JobStage::Failed)
    }

    /// Position along the success path.
    fn rank(self) -> Option<u8> {
        match self {
            JobStage::Segmenting => Some(0),
            JobStage::AwaitingConfirmation => Some(1),
            JobStage::Multiview => Some(2),
            JobStage::Fusing => Some(3),
            JobStage::Done => Some(4),
            JobStage::Failed => None,
        }
    }

    /// Whether a job may move directly from `self` to `next`.
    pub fn can_advance_to(self, next: JobStage) -> bool {
        match (self.rank(), next.rank()) {
            (Some(_), None) => self != JobStage::Done,
            (Some(a), Some(b)) => b == a + 1,
            (None, _) => false,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobStage::Segmenting => "segmenting",
            JobStage::AwaitingConfirmation => "awaiting_confirmation",
            JobStage::Multiview => "multiview",
            JobStage::Fusing => "fusing",
            JobStage::Done => "done",
            JobStage::Failed => "failed",
        }
    }
}

impl fmt::Display for JobStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a job failed: the backend stage (`segment`, `multiview`, `gaussian`)
/// and a message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("BackendFailure({stage:?}, {message})")]
pub struct BackendFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct GenerationJob {
    pub job_id: JobId,
    pub prompt: SegmentationPrompt,
    pub stage: JobStage,
    pub segmented: Option<SegmentedObject>,
    pub multiview: Option<MultiviewSet>,
    pub result_asset: Option<AssetId>,
    pub error: Option<BackendFailure>,
    /// Duration of each completed backend stage, in completion order.
    pub timings: Vec<(JobStage, Duration)>,
    pub submitted_at: Instant,
    pub finished_at: Option<Instant>,
}

impl GenerationJob {
    pub fn timing_ms(&self, stage: JobStage) -> Option<f64> {
        self.timings.iter().find(|(s, _)| *s == stage).map(|(_, d)| d.as_secs_f64() * 1e3)
    }
}

pub type JobListener = Arc<dyn Fn(&GenerationJob) + Send + Sync>;

struct JobSlot {
    job: Mutex<GenerationJob>,
    changed: Condvar,
}

struct Inner {
    backends: StageBackends,
    config: PipelineConfig,
    store: Arc<AssetStore>,
    jobs: RwLock<HashMap<JobId, Arc<JobSlot>>>,
    discarded: Mutex<HashSet<JobId>>,
    next_id: AtomicU64,
    listeners: RwLock<Vec<JobListener>>,
}

/// Job table and orchestrator. Cheap to clone.
#[derive(Clone)]
pub struct Pipeline {
    inner: Arc<Inner>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, store: Arc<AssetStore>) -> Self {
        let backends = config.backends();
        Self::with_backends(config, backends, store)
    }

    pub fn with_backends(config: PipelineConfig, backends: StageBackends, store: Arc<AssetStore>) -> Self {
        Self {
            inner: Arc::new(Inner {
                backends,
                config,
                store,
                jobs: RwLock::new(HashMap::new()),
                discarded: Mutex::new(HashSet::new()),
                next_id: AtomicU64::new(1),
                listeners: RwLock::new(Vec::new()),
            }),
        }
    }

    pub fn store(&self) -> &Arc<AssetStore> {
        &self.inner.store
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.inner.config
    }

    /// Registers a callback invoked after every stage change.
    pub fn subscribe(&self, listener: JobListener) {
        self.inner.listeners.write().expect("listeners poisoned").push(listener);
    }

    pub fn submit_prompt(&self, prompt: SegmentationPrompt) -> JobId {
        let n = self.inner.next_id.fetch_add(1, Ordering::Relaxed);
        let job_id = JobId(format!("job-{n}"));
        let job = GenerationJob {
            job_id: job_id.clone(),
            prompt,
            stage: JobStage::Segmenting,
            segmented: None,
            multiview: None,
            result_asset: None,
            error: None,
            timings: Vec::new(),
            submitted_at: Instant::now(),
            finished_at: None,
        };
        let slot = Arc::new(JobSlot { job: Mutex::new(job), changed: Condvar::new() });
        self.inner.jobs.write().expect("job table poisoned").insert(job_id.clone(), slot.clone());
        let inner = self.inner.clone();
        thread::spawn(move || inner.run_segmentation(&slot));
        job_id
    }

    fn slot(&self, job_id: &JobId) -> Result<Arc<JobSlot>, PipelineError> {
        if let Some(slot) = self.inner.jobs.read().expect("job table poisoned").get(job_id) {
            return Ok(slot.clone());
        }
        if self.inner.discarded.lock().expect("discarded poisoned").contains(job_id) {
            return Err(PipelineError::WrongStage { job: job_id.clone(), stage: "rejected".into() });
        }
        Err(PipelineError::UnknownJob(job_id.clone()))
    }

    /// Sends a segmented job on to multiview generation and fusion.
    pub fn confirm(&self, job_id: &JobId) -> Result<(), PipelineError> {
        let slot = self.slot(job_id)?;
        {
            let mut job = slot.job.lock().expect("job poisoned");
            if job.stage != JobStage::AwaitingConfirmation {
                return Err(PipelineError::WrongStage { job: job_id.clone(), stage: job.stage.to_string() });
            }
            self.inner.advance(&slot, &mut job, JobStage::Multiview);
        }
        let inner = self.inner.clone();
        thread::spawn(move || inner.run_generation(&slot));
        Ok(())
    }

    /// Discards a job waiting for confirmation.
    pub fn reject(&self, job_id: &JobId) -> Result<(), PipelineError> {
        let slot = self.slot(job_id)?;
        let job = slot.job.lock().expect("job poisoned");
        if job.stage != JobStage::AwaitingConfirmation {
            return Err(PipelineError::WrongStage { job: job_id.clone(), stage: job.stage.to_string() });
        }
        self.inner.jobs.write().expect("job table poisoned").remove(job_id);
        self.inner.discarded.lock().expect("discarded poisoned").insert(job_id.clone());
        Ok(())
    }

    pub fn job(&self, job_id: &JobId) -> Option<GenerationJob> {
        let slot = self.inner.jobs.read().expect("job table poisoned").get(job_id).cloned()?;
        let job = slot.job.lock().expect("job poisoned").clone();
        Some(job)
    }

    /// Blocks until the job reaches `stage` or a terminal stage, or until
    /// `timeout` elapses. Returns the job as last observed.
    pub fn wait_for(&self, job_id: &JobId, stage: JobStage, timeout: Duration) -> Option<GenerationJob> {
        let slot = self.inner.jobs.read().expect("job table poisoned").get(job_id).cloned()?;
        let deadline = Instant::now() + timeout;
        let mut job = slot.job.lock().expect("job poisoned");
        while job.stage != stage && !job.stage.is_terminal() {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            job = slot.changed.wait_timeout(job, deadline - now).expect("job poisoned").0;
        }
        Some(job.clone())
    }
}

impl Inner {
    fn advance(&self, slot: &JobSlot, job: &mut GenerationJob, next: JobStage) {
        debug_assert!(job.stage.can_advance_to(next), "{} -> {}", job.stage, next);
        job.stage = next;
        if next.is_terminal() {
            job.finished_at = Some(Instant::now());
        }
        slot.changed.notify_all();
        for listener in self.listeners.read().expect("listeners poisoned").iter() {
            listener(job);
        }
    }

    fn fail(&self, slot: &JobSlot, failure: BackendFailure) {
        let mut job = slot.job.lock().expect("job poisoned");
        log::warn!("job {} failed: {failure}", job.job_id);
        job.error = Some(failure);
        self.advance(slot, &mut job, JobStage::Failed);
    }

    /// Runs `call` on a worker thread with the stage timeout, retrying per
    /// config. Abandoned attempts finish in the background and are ignored.
    fn call<T: Send + 'static>(
        &self,
        stage: &str,
        call: impl Fn() -> Result<T, BackendError> + Send + Sync + 'static,
    ) -> Result<(T, Duration), BackendFailure> {
        let call = Arc::new(call);
        let timeout = self.config.timeout();
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            let (tx, rx) = mpsc::channel();
            let f = call.clone();
            let started = Instant::now();
            thread::spawn(move || {
                let _ = tx.send(f());
            });
            match rx.recv_timeout(timeout) {
                Ok(Ok(value)) => return Ok((value, started.elapsed())),
                Ok(Err(e)) => last = e.0,
                Err(_) => last = format!("timed out after {} ms", timeout.as_millis()),
            }
            log::debug!("{stage} attempt {} failed: {last}", attempt + 1);
        }
        Err(BackendFailure { stage: stage.to_owned(), message: last })
    }

    fn run_segmentation(&self, slot: &JobSlot) {
        let prompt = slot.job.lock().expect("job poisoned").prompt.clone();
        let backend = self.backends.segment.clone();
        let p = prompt.clone();
        let (mask, elapsed) = match self.call("segment", move || backend.segment(p.frame(), p.points())) {
            Ok(v) => v,
            Err(f) => return self.fail(slot, f),
        };
        let segment_failure = |message: String| BackendFailure { stage: "segment".into(), message };
        if mask.dimensions() != prompt.frame().dimensions() {
            return self.fail(slot, segment_failure("mask size differs from frame".into()));
        }
        let Some(cut) = cutout(prompt.frame(), &mask) else {
            return self.fail(slot, segment_failure("empty mask".into()));
        };
        let points_outside_mask = prompt.points().iter().any(|p| !mask.get(p.x, p.y));
        if points_outside_mask {
            log::warn!("segmentation mask misses a prompt point");
        }
        let mut job = slot.job.lock().expect("job poisoned");
        job.timings.push((JobStage::Segmenting, elapsed));
        job.segmented = Some(SegmentedObject { mask, cutout: Arc::new(cut), points_outside_mask });
        self.advance(slot, &mut job, JobStage::AwaitingConfirmation);
    }

    fn run_generation(&self, slot: &JobSlot) {
        let cut = {
            let job = slot.job.lock().expect("job poisoned");
            job.segmented.as_ref().expect("confirmed jobs are segmented").cutout.clone()
        };

        let backend = self.backends.multiview.clone();
        let c = cut.clone();
        let (views, elapsed) = match self.call("multiview", move || backend.multiview(&c)) {
            Ok(v) => v,
            Err(f) => return self.fail(slot, f),
        };
        let views = Arc::new(views);
        {
            let mut job = slot.job.lock().expect("job poisoned");
            job.timings.push((JobStage::Multiview, elapsed));
            job.multiview = Some(MultiviewSet { source: cut.clone(), views: views.clone() });
            self.advance(slot, &mut job, JobStage::Fusing);
        }

        let backend = self.backends.gaussian.clone();
        let provenance = backend.provenance();
        let (c, v) = (cut.clone(), views.clone());
        let (ply, elapsed) = match self.call("gaussian", move || backend.gaussian(&c, &v)) {
            Ok(v) => v,
            Err(f) => return self.fail(slot, f),
        };
        let gaussian_failure = |message: String| BackendFailure { stage: "gaussian".into(), message };
        let asset = match crate::splat::parse_ply_with(&ply, provenance) {
            Ok(a) if a.is_empty() => return self.fail(slot, gaussian_failure("empty asset".into())),
            Ok(a) => a,
            Err(e) => return self.fail(slot, gaussian_failure(e.to_string())),
        };
        let asset_id = self.store.insert(asset);
        let mut job = slot.job.lock().expect("job poisoned");
        job.timings.push((JobStage::Fusing, elapsed));
        job.result_asset = Some(asset_id);
        self.advance(slot, &mut job, JobStage::Done);
    }
}
