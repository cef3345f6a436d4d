//! TCP endpoint: one reader and one writer task per connection, a job-event
//! task bridging the pipeline to clients, and a lease-expiry tick.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use splatspace_core::pipeline::{
    image_from_b64, png_b64, GenerationJob, JobId, JobStage, Pipeline, PipelineError, Point, PromptSource,
    SegmentationPrompt, StageBackends,
};
use splatspace_core::session::{SessionError, SessionId, SessionOp, UserId, MAX_IMAGE_EDGE};
use splatspace_core::store::AssetStore;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinSet;

use crate::config::ServerConfig;
use crate::frame::FrameDecoder;
use crate::hub::{encode_frame, Clock, ConnId, Hub, HubConfig, Sink};
use crate::message::{Body, JobBody, JobPayload, Message};

enum Out {
    Frame(Arc<Vec<u8>>),
    /// Flush what is queued, then close.
    Close,
}

struct ChannelSink {
    tx: mpsc::Sender<Out>,
    kill: watch::Sender<bool>,
    killed: AtomicBool,
}

impl Sink for ChannelSink {
    fn send(&self, frame: Arc<Vec<u8>>) -> bool {
        !self.killed.load(Ordering::SeqCst) && self.tx.try_send(Out::Frame(frame)).is_ok()
    }

    fn kill(&self) {
        self.killed.store(true, Ordering::SeqCst);
        self.kill.send_replace(true);
    }
}

#[derive(Clone)]
struct JobOwner {
    session: SessionId,
    user: UserId,
    sink: Arc<ChannelSink>,
}

struct Shared {
    config: ServerConfig,
    hub: Arc<Hub>,
    pipeline: Pipeline,
    jobs: Mutex<HashMap<JobId, JobOwner>>,
    next_conn: AtomicU64,
}

/// A bound, not yet running server.
pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
    job_events: mpsc::UnboundedReceiver<GenerationJob>,
}

/// Cloneable view of a running server's state, for tests and tooling.
#[derive(Clone)]
pub struct ServerHandle {
    shared: Arc<Shared>,
}

impl ServerHandle {
    pub fn hub(&self) -> &Arc<Hub> {
        &self.shared.hub
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.shared.pipeline
    }
}

impl Server {
    pub async fn bind(config: ServerConfig) -> std::io::Result<Self> {
        Self::bind_with(config, Clock::Wall, None).await
    }

    /// Binds with an explicit clock and optional backend override.
    pub async fn bind_with(config: ServerConfig, clock: Clock, backends: Option<StageBackends>) -> std::io::Result<Self> {
        let assets = Arc::new(AssetStore::new());
        let hub_config = HubConfig { resync_depth: config.resync_depth, settings: config.session.into() };
        let hub = Arc::new(Hub::new(hub_config, assets.clone(), clock));
        if let Some(dir) = &config.snapshot_dir {
            let n = hub.restore(dir)?;
            if n > 0 {
                log::info!("restored {n} session(s) from {}", dir.display());
            }
        }
        let pipeline = match backends {
            Some(b) => Pipeline::with_backends(config.pipeline.clone(), b, assets),
            None => Pipeline::new(config.pipeline.clone(), assets),
        };
        let (events_tx, job_events) = mpsc::unbounded_channel();
        pipeline.subscribe(Arc::new(move |job: &GenerationJob| {
            let _ = events_tx.send(job.clone());
        }));
        let listener = TcpListener::bind(&config.listen).await?;
        let shared = Arc::new(Shared { config, hub, pipeline, jobs: Mutex::new(HashMap::new()), next_conn: AtomicU64::new(1) });
        Ok(Self { listener, shared, job_events })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn handle(&self) -> ServerHandle {
        ServerHandle { shared: self.shared.clone() }
    }

    /// Serves until `shutdown` resolves, then writes session snapshots (when
    /// configured) and drops every connection.
    pub async fn run(self, shutdown: impl Future<Output = ()>) -> std::io::Result<()> {
        let Server { listener, shared, mut job_events } = self;
        let mut tasks = JoinSet::new();

        let s = shared.clone();
        tasks.spawn(async move {
            while let Some(job) = job_events.recv().await {
                let s = s.clone();
                if tokio::task::spawn_blocking(move || on_job_event(&s, job)).await.is_err() {
                    log::error!("job event handler panicked");
                }
            }
        });

        let s = shared.clone();
        tasks.spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_millis(s.config.lease_tick_ms));
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tick.tick().await;
                let hub = s.hub.clone();
                let _ = tokio::task::spawn_blocking(move || hub.expire_leases()).await;
            }
        });

        tokio::pin!(shutdown);
        loop {
            tokio::select! {
                accepted = listener.accept() => match accepted {
                    Ok((stream, peer)) => {
                        let conn = shared.next_conn.fetch_add(1, Ordering::Relaxed);
                        log::debug!("connection {conn} from {peer}");
                        tasks.spawn(serve_connection(shared.clone(), stream, conn));
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                },
                _ = &mut shutdown => break,
            }
        }

        if let Some(dir) = &shared.config.snapshot_dir {
            let hub = shared.hub.clone();
            let dir = dir.clone();
            let n = tokio::task::spawn_blocking(move || hub.persist(&dir)).await.map_err(std::io::Error::other)??;
            log::info!("wrote {n} session snapshot(s)");
        }
        tasks.shutdown().await;
        Ok(())
    }
}

fn job_message(job: &GenerationJob) -> Body {
    let mut payload = JobPayload::default();
    match job.stage {
        JobStage::AwaitingConfirmation => {
            if let Some(seg) = &job.segmented {
                payload.cutout = Some(png_b64(&seg.cutout));
                payload.mask = Some(B64.encode(seg.mask.to_png()));
                payload.points_outside_mask = seg.points_outside_mask;
            }
        }
        JobStage::Fusing => {
            if let Some(mv) = &job.multiview {
                payload.views = Some(mv.views.iter().map(png_b64).collect());
            }
        }
        JobStage::Done => payload.asset_id = job.result_asset.clone(),
        JobStage::Failed => payload.error = job.error.clone(),
        JobStage::Segmenting | JobStage::Multiview => {}
    }
    if job.stage.is_terminal() {
        payload.timings_ms = job.timings.iter().map(|(s, d)| (s.as_str().to_owned(), d.as_secs_f64() * 1e3)).collect();
    }
    Body::Job(JobBody { job_id: job.job_id.clone(), stage: job.stage.as_str().to_owned(), payload })
}

fn on_job_event(shared: &Shared, job: GenerationJob) {
    // Holding the table lock orders this after the submit reply.
    let owner = {
        let mut jobs = shared.jobs.lock().expect("job owners poisoned");
        let owner = jobs.get(&job.job_id).cloned();
        if job.stage.is_terminal() {
            jobs.remove(&job.job_id);
        }
        owner
    };
    let Some(owner) = owner else { return };
    owner.sink.send(encode_frame(&Message::new(job_message(&job))));
    if let (JobStage::Done, Some(asset_id)) = (job.stage, &job.result_asset) {
        let hub = &shared.hub;
        hub.renders().warm_menu(asset_id, hub.settings().view_resolution);
        let source = job.segmented.as_ref().map(|s| png_b64(&s.cutout));
        if let Err(e) = hub.open_asset_menu(&owner.session, &owner.user, asset_id, source) {
            log::debug!("menu for {} not opened: {e}", owner.user);
        }
    }
}

fn valid_session_id(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn valid_user_id(s: &str) -> bool {
    !s.is_empty() && s.len() <= 64 && !s.starts_with('@') && !s.chars().any(char::is_control)
}

enum Flow {
    Continue,
    Close,
}

struct Conn {
    id: ConnId,
    shared: Arc<Shared>,
    sink: Arc<ChannelSink>,
    joined: Option<(SessionId, UserId)>,
}

impl Conn {
    fn reply(&self, seq: Option<u64>, body: Body) {
        self.sink.send(encode_frame(&Message::reply(seq, body)));
    }

    fn session_error(&self, seq: Option<u64>, e: SessionError) {
        self.reply(seq, Body::error(e.code(), e.to_string()));
    }

    async fn protocol_violation(&self, seq: Option<u64>, message: impl Into<String>) -> Flow {
        let message = message.into();
        log::debug!("connection {}: protocol violation: {message}", self.id);
        let frame = encode_frame(&Message::reply(seq, Body::error("protocol", message)));
        let _ = self.sink.tx.send(Out::Frame(frame)).await;
        Flow::Close
    }

    async fn blocking<T: Send + 'static>(&self, f: impl FnOnce(&Shared) -> T + Send + 'static) -> T {
        let shared = self.shared.clone();
        tokio::task::spawn_blocking(move || f(&shared)).await.expect("request handler panicked")
    }

    async fn handle(&mut self, message: Message) -> Flow {
        let seq = message.seq;
        let Some((session, user)) = self.joined.clone() else {
            let Body::Hello { user, session } = message.body else {
                return self.protocol_violation(seq, "expected hello").await;
            };
            if !valid_user_id(user.as_str()) || !valid_session_id(session.as_str()) {
                return self.protocol_violation(seq, "invalid user or session id").await;
            }
            let (id, sink) = (self.id, self.sink.clone());
            let (s, u) = (session.clone(), user.clone());
            let joined = self.blocking(move |sh| sh.hub.join(&s, &u, id, sink)).await;
            return match joined {
                Ok(_) => {
                    self.joined = Some((session, user));
                    Flow::Continue
                }
                Err(e) => self.protocol_violation(seq, e.to_string()).await,
            };
        };

        match message.body {
            Body::Hello { .. } => return self.protocol_violation(seq, "already joined").await,
            Body::Op { op } => {
                if matches!(op, SessionOp::Join | SessionOp::Leave | SessionOp::ExpireLeases) {
                    self.reply(seq, Body::error("forbidden_op", "membership and lease expiry are server-managed"));
                    return Flow::Continue;
                }
                let id = self.id;
                let result = self.blocking(move |sh| sh.hub.apply(&session, &user, &op, id, seq)).await;
                if let Err(e) = result {
                    self.session_error(seq, e);
                }
            }
            Body::JobSubmit { image, points, source } => self.submit(seq, session, user, image, points, source).await,
            Body::JobConfirm { job_id } => {
                if self.owns(&job_id, &user) {
                    let (pipeline, id) = (self.shared.pipeline.clone(), job_id.clone());
                    let result = tokio::task::spawn_blocking(move || pipeline.confirm(&id)).await.expect("confirm panicked");
                    match result {
                        Ok(()) => self.reply(seq, job_reply(job_id, JobStage::Multiview.as_str())),
                        Err(e) => self.reply(seq, pipeline_error(e)),
                    }
                } else {
                    self.reply(seq, pipeline_error(PipelineError::UnknownJob(job_id)));
                }
            }
            Body::JobReject { job_id } => {
                if self.owns(&job_id, &user) {
                    match self.shared.pipeline.reject(&job_id) {
                        Ok(()) => {
                            self.shared.jobs.lock().expect("job owners poisoned").remove(&job_id);
                            self.reply(seq, job_reply(job_id, "rejected"));
                        }
                        Err(e) => self.reply(seq, pipeline_error(e)),
                    }
                } else {
                    let e = match self.shared.pipeline.reject(&job_id) {
                        Err(e @ PipelineError::WrongStage { .. }) if self.shared.pipeline.job(&job_id).is_none() => e,
                        _ => PipelineError::UnknownJob(job_id),
                    };
                    self.reply(seq, pipeline_error(e));
                }
            }
            Body::FetchAsset { asset_id } => match self.shared.hub.assets().ply(&asset_id) {
                Some(ply) => self.reply(seq, Body::Asset { asset_id, ply: B64.encode(ply.as_slice()) }),
                None => self.reply(seq, Body::error("unknown_id", format!("UnknownId: asset {asset_id}"))),
            },
            Body::Resync { from_revision, .. } => {
                let sink = self.sink.clone();
                let result =
                    self.blocking(move |sh| sh.hub.resync(&session, &user, from_revision, sink.as_ref(), seq)).await;
                if let Err(e) = result {
                    self.session_error(seq, e);
                }
            }
            Body::Ping {} => self.reply(seq, Body::Pong {}),
            Body::Unknown { type_name, .. } => {
                self.reply(seq, Body::error("unsupported", format!("unsupported message type {type_name:?}")));
            }
            other => return self.protocol_violation(seq, format!("{} is a server message", other.type_name())).await,
        }
        Flow::Continue
    }

    fn owns(&self, job_id: &JobId, user: &UserId) -> bool {
        self.shared.jobs.lock().expect("job owners poisoned").get(job_id).is_some_and(|o| &o.user == user)
    }

    async fn submit(
        &self,
        seq: Option<u64>,
        session: SessionId,
        user: UserId,
        image: String,
        points: Vec<Point>,
        source: PromptSource,
    ) {
        let prompt = tokio::task::spawn_blocking(move || {
            let frame = image_from_b64(&image).map_err(|e| PipelineError::InvalidPrompt(e.to_string()))?;
            if frame.width().max(frame.height()) > MAX_IMAGE_EDGE {
                return Err(PipelineError::InvalidPrompt(format!("image edge exceeds {MAX_IMAGE_EDGE}")));
            }
            SegmentationPrompt::new(frame, &points, source)
        })
        .await
        .expect("prompt decoding panicked");
        let prompt = match prompt {
            Ok(p) => p,
            Err(e) => return self.reply(seq, pipeline_error(e)),
        };
        let mut jobs = self.shared.jobs.lock().expect("job owners poisoned");
        let job_id = self.shared.pipeline.submit_prompt(prompt);
        jobs.insert(job_id.clone(), JobOwner { session, user, sink: self.sink.clone() });
        self.reply(seq, job_reply(job_id, JobStage::Segmenting.as_str()));
    }
}

fn job_reply(job_id: JobId, stage: &str) -> Body {
    Body::Job(JobBody { job_id, stage: stage.to_owned(), payload: JobPayload::default() })
}

fn pipeline_error(e: PipelineError) -> Body {
    let code = match &e {
        PipelineError::InvalidPrompt(_) => "invalid_prompt",
        PipelineError::UnknownJob(_) => "unknown_job",
        PipelineError::WrongStage { .. } => "wrong_stage",
    };
    Body::error(code, e.to_string())
}

async fn serve_connection(shared: Arc<Shared>, stream: TcpStream, id: ConnId) {
    let _ = stream.set_nodelay(true);
    let (mut reader, mut writer) = stream.into_split();
    let (tx, mut rx) = mpsc::channel::<Out>(shared.config.queue_depth);
    let (kill, _) = watch::channel(false);
    let mut writer_kill = kill.subscribe();
    let mut reader_kill = kill.subscribe();
    let sink = Arc::new(ChannelSink { tx, kill, killed: AtomicBool::new(false) });

    let writer_task = tokio::spawn(async move {
        loop {
            let out = tokio::select! {
                biased;
                _ = writer_kill.wait_for(|k| *k) => break,
                out = rx.recv() => out,
            };
            match out {
                Some(Out::Frame(frame)) => {
                    if writer.write_all(&frame).await.is_err() {
                        break;
                    }
                }
                Some(Out::Close) | None => break,
            }
        }
        let _ = writer.shutdown().await;
    });

    let mut conn = Conn { id, shared: shared.clone(), sink: sink.clone(), joined: None };
    let mut decoder = FrameDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    'read: loop {
        let n = tokio::select! {
            biased;
            _ = reader_kill.wait_for(|k| *k) => break,
            r = reader.read(&mut buf) => match r {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            },
        };
        decoder.push(&buf[..n]);
        loop {
            match decoder.next_message() {
                Ok(Some(message)) => {
                    if let Flow::Close = conn.handle(message).await {
                        break 'read;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    conn.protocol_violation(None, e.to_string()).await;
                    break 'read;
                }
            }
        }
    }

    if let Some((session, _)) = conn.joined.take() {
        let hub = shared.hub.clone();
        let _ = tokio::task::spawn_blocking(move || hub.disconnect(&session, id)).await;
    }
    let _ = sink.tx.send(Out::Close).await;
    let _ = writer_task.await;
    log::debug!("connection {id} closed");
}

/// A server running on its own runtime thread, for tools and tests that
/// are otherwise synchronous.
pub struct BackgroundServer {
    addr: SocketAddr,
    handle: ServerHandle,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    pub fn start(config: ServerConfig, clock: Clock, backends: Option<StageBackends>) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let server = runtime.block_on(Server::bind_with(config, clock, backends))?;
        let addr = server.local_addr()?;
        let handle = server.handle();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("splatspace-server".into()).spawn(move || {
            runtime.block_on(server.run(async {
                let _ = stopped.await;
            }))
        })?;
        Ok(Self { addr, handle, stop: Some(stop), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn handle(&self) -> &ServerHandle {
        &self.handle
    }

    /// Stops accepting, writes snapshots if configured and joins the thread.
    pub fn stop(mut self) -> std::io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| std::io::Error::other("server thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Err(e) = self.shutdown() {
            log::warn!("server shutdown: {e}");
        }
    }
}
