//! HTTP/WebSocket front end and the fixed-rate tick loop.
//!
//! The tick loop runs on its own thread and is the only owner of the
//! session. Client tasks push into the [`CommandQueue`] and read frames
//! from a broadcast channel; a lagging client loses frames, the loop never
//! waits for it.

use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use ballchain::session::{compute_metrics, Scenario, Session, TickRecord};
use futures_util::{SinkExt, StreamExt};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tower_http::services::ServeDir;

use crate::queue::{CommandQueue, DEAD_MAN};
use crate::wire::{SolverHealth, WireCommand, WireFrame, WireState};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Session(#[from] ballchain::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("tick loop panicked")]
    TickLoop,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Directory served at `/` (the UI bundle).
    pub static_dir: Option<PathBuf>,
    /// JSON-lines tick records.
    pub session_log: Option<PathBuf>,
    /// JSON-lines command records, replayable against the scenario.
    pub command_log: Option<PathBuf>,
    pub dead_man: Duration,
}

impl ServiceConfig {
    pub fn new(bind: SocketAddr) -> Self {
        Self { bind, static_dir: None, session_log: None, command_log: None, dead_man: DEAD_MAN }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub scenario: String,
    pub tick: u64,
    pub target_tick_rate_hz: f64,
    pub measured_tick_rate_hz: f64,
    pub clients: usize,
    pub solver: SolverHealth,
}

#[derive(Debug, Clone, Serialize)]
pub struct ServiceSummary {
    pub ticks: u64,
    pub failed_ticks: u64,
    pub resets: u64,
}

struct Shared {
    queue: CommandQueue,
    frames: broadcast::Sender<Utf8Bytes>,
    health: Mutex<Health>,
    clients: AtomicUsize,
    stopping: watch::Receiver<bool>,
}

/// A started service. Dropping it without [`RunningService::shutdown`]
/// leaves the tick thread running until the process exits.
pub struct RunningService {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    stop_clients: watch::Sender<bool>,
    stop_server: oneshot::Sender<()>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
    ticker: std::thread::JoinHandle<Result<ServiceSummary, ServiceError>>,
}

impl RunningService {
    /// Stop accepting input, finish the current tick, flush and close the logs.
    pub async fn shutdown(self) -> Result<ServiceSummary, ServiceError> {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.stop_clients.send(true);
        let _ = self.stop_server.send(());
        self.server.await.map_err(|_| ServiceError::TickLoop)??;
        tokio::task::spawn_blocking(move || self.ticker.join())
            .await
            .map_err(|_| ServiceError::TickLoop)?
            .map_err(|_| ServiceError::TickLoop)?
    }
}

fn create_log(path: &Option<PathBuf>) -> Result<Option<BufWriter<File>>, ServiceError> {
    Ok(match path {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    })
}

fn write_line<T: Serialize>(log: &mut Option<BufWriter<File>>, value: &T) -> Result<(), ServiceError> {
    if let Some(w) = log {
        serde_json::to_writer(&mut *w, value).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn restart_log(log: &mut Option<BufWriter<File>>) -> Result<(), ServiceError> {
    if let Some(w) = log {
        w.flush()?;
        let f = w.get_mut();
        f.set_len(0)?;
        std::io::Seek::rewind(f)?;
    }
    Ok(())
}

fn encode(frame: &WireFrame) -> Utf8Bytes {
    serde_json::to_string(frame).expect("frames serialize").into()
}

struct TickLoop {
    scenario: Scenario,
    session: Session,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
    session_log: Option<BufWriter<File>>,
    command_log: Option<BufWriter<File>>,
    last_error: Option<String>,
    summary: ServiceSummary,
}

impl TickLoop {
    fn broadcast(&self, record: &TickRecord) {
        let state = &self.session.state;
        let metrics = compute_metrics(
            &self.scenario.targets,
            &state.touched,
            0,
            self.scenario.tick_dt,
            state.tip_path_length,
        );
        for event in &record.events {
            let _ = self.shared.frames.send(encode(&WireFrame::Event { tick: record.tick, event: event.clone() }));
        }
        let wire = WireState::new(state, record, metrics, self.last_error.clone());
        // no receivers is fine
        let _ = self.shared.frames.send(encode(&WireFrame::State(wire)));
    }

    fn tick(&mut self, now: Instant) -> Result<(), ServiceError> {
        let intake = self.shared.queue.take(now);
        if intake.reset {
            self.session = Session::new(self.scenario.clone())?;
            restart_log(&mut self.session_log)?;
            restart_log(&mut self.command_log)?;
            self.summary.resets += 1;
            tracing::info!("session reset");
        }
        let logged = self.session.commands.len();
        match self.session.advance(&intake.command) {
            Ok(record) => {
                self.last_error = None;
                self.summary.ticks += 1;
                write_line(&mut self.session_log, &record)?;
                for c in &self.session.commands[logged..] {
                    write_line(&mut self.command_log, c)?;
                }
                self.broadcast(&record);
            }
            Err(e) => {
                // state kept, command dropped
                tracing::warn!(error = %e, "tick failed");
                self.last_error = Some(e.to_string());
                self.summary.failed_ticks += 1;
                let state = &self.session.state;
                let record = ballchain::session::tick_record(state, Vec::new(), &self.scenario);
                self.broadcast(&record);
            }
        }
        Ok(())
    }

    fn run(mut self) -> Result<ServiceSummary, ServiceError> {
        let dt = Duration::from_secs_f64(self.scenario.tick_dt);
        let mut next = Instant::now() + dt;
        let mut last = Instant::now();
        let mut mean_interval = dt.as_secs_f64();
        while !self.stop.load(Ordering::SeqCst) {
            let now = Instant::now();
            if next > now {
                std::thread::sleep(next - now);
            }
            let now = Instant::now();
            self.tick(now)?;
            mean_interval = 0.9 * mean_interval + 0.1 * (now - last).as_secs_f64();
            last = now;
            {
                let state = &self.session.state;
                let mut h = self.shared.health.lock().expect("health poisoned");
                h.tick = state.tick;
                h.measured_tick_rate_hz = 1.0 / mean_interval;
                h.clients = self.shared.clients.load(Ordering::SeqCst);
                h.status = if self.last_error.is_some() { "degraded" } else { "ok" };
                h.solver = SolverHealth {
                    converged: state.diagnostics.converged,
                    iterations: state.diagnostics.iterations,
                    gradient_norm: state.diagnostics.gradient_norm,
                    last_error: self.last_error.clone(),
                };
            }
            next += dt;
            if next < Instant::now() {
                // overran; skip rather than burst
                next = Instant::now() + dt;
            }
        }
        for log in [&mut self.session_log, &mut self.command_log].into_iter().flatten() {
            log.flush()?;
            log.get_ref().sync_all()?;
        }
        tracing::info!(ticks = self.summary.ticks, "tick loop stopped, logs flushed");
        Ok(self.summary)
    }
}

async fn health(State(shared): State<Arc<Shared>>) -> Json<Health> {
    let mut h = shared.health.lock().expect("health poisoned").clone();
    h.clients = shared.clients.load(Ordering::SeqCst);
    Json(h)
}

async fn websocket(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> Response {
    let stop = shared.stopping.clone();
    ws.on_upgrade(move |socket| client(socket, shared, stop)).into_response()
}

fn error_frame(message: String) -> Utf8Bytes {
    encode(&WireFrame::Error { message })
}

async fn client(socket: WebSocket, shared: Arc<Shared>, mut stop: watch::Receiver<bool>) {
    shared.clients.fetch_add(1, Ordering::SeqCst);
    let (mut sink, mut stream) = socket.split();
    let mut frames = shared.frames.subscribe();
    let (err_tx, mut err_rx) = mpsc::channel::<Utf8Bytes>(16);
    let writer = tokio::spawn(async move {
        loop {
            let text = tokio::select! {
                f = frames.recv() => match f {
                    Ok(t) => t,
                    Err(broadcast::error::RecvError::Lagged(skipped)) => {
                        tracing::debug!(skipped, "slow client, frames dropped");
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                e = err_rx.recv() => match e {
                    Some(t) => t,
                    None => break,
                },
            };
            if sink.send(Message::Text(text)).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });
    loop {
        let msg = tokio::select! {
            m = stream.next() => m,
            _ = stop.changed() => break,
        };
        let Some(Ok(msg)) = msg else { break };
        let reply = match msg {
            Message::Text(text) => match serde_json::from_str::<WireCommand>(&text) {
                Ok(cmd) => shared.queue.push(cmd, Instant::now()).err().map(|e| e.to_string()),
                Err(e) => Some(format!("malformed command: {e}")),
            },
            Message::Binary(_) => Some("binary frames are not supported".into()),
            Message::Close(_) => break,
            _ => None,
        };
        if let Some(message) = reply {
            // a full error queue means the client is not reading; drop
            let _ = err_tx.try_send(error_frame(message));
        }
    }
    drop(err_tx);
    writer.abort();
    shared.clients.fetch_sub(1, Ordering::SeqCst);
}

/// Bind, start the tick loop and serve until [`RunningService::shutdown`].
pub async fn start(scenario: Scenario, config: ServiceConfig) -> Result<RunningService, ServiceError> {
    let session = Session::new(scenario.clone())?;
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|source| ServiceError::Bind { addr: config.bind, source })?;
    let addr = listener.local_addr()?;
    let session_log = create_log(&config.session_log)?;
    let command_log = create_log(&config.command_log)?;

    let (stop_clients, stopping) = watch::channel(false);
    let unit_ids = scenario.units.iter().map(|u| u.id.clone()).collect();
    let shared = Arc::new(Shared {
        queue: CommandQueue::new(unit_ids, scenario.max_angular_velocity, scenario.max_balls)
            .with_dead_man(config.dead_man),
        frames: broadcast::channel(32).0,
        health: Mutex::new(Health {
            status: "ok",
            scenario: scenario.name.clone(),
            tick: 0,
            target_tick_rate_hz: 1.0 / scenario.tick_dt,
            measured_tick_rate_hz: 0.0,
            clients: 0,
            solver: SolverHealth {
                converged: session.state.diagnostics.converged,
                iterations: session.state.diagnostics.iterations,
                gradient_norm: session.state.diagnostics.gradient_norm,
                last_error: None,
            },
        }),
        clients: AtomicUsize::new(0),
        stopping,
    });

    let stop = Arc::new(AtomicBool::new(false));
    let tick_loop = TickLoop {
        scenario,
        session,
        shared: shared.clone(),
        stop: stop.clone(),
        session_log,
        command_log,
        last_error: None,
        summary: ServiceSummary { ticks: 0, failed_ticks: 0, resets: 0 },
    };
    let ticker = std::thread::Builder::new().name("tick-loop".into()).spawn(move || tick_loop.run())?;

    let mut app = Router::new().route("/health", get(health)).route("/ws", get(websocket)).with_state(shared);
    if let Some(dir) = &config.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let (stop_server, stop_server_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stop_server_rx.await;
            })
            .await
    });
    tracing::info!(%addr, "teleop service listening");
    Ok(RunningService { addr, stop, stop_clients, stop_server, server, ticker })
}

/// Run until `signal` resolves, then shut down cleanly.
pub async fn serve(
    scenario: Scenario,
    config: ServiceConfig,
    signal: impl std::future::Future<Output = ()>,
) -> Result<ServiceSummary, ServiceError> {
    let running = start(scenario, config).await?;
    signal.await;
    tracing::info!("shutdown requested");
    running.shutdown().await
}
