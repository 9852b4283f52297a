//! `serve`: the fleet under operator control behind an HTTP + WebSocket API.
//!
//! Routes:
//! - `GET /snapshot` returns the current [`Snapshot`].
//! - `POST /command` takes an [`OperatorCommand`] and answers with a [`CommandAck`]
//!   (200 accepted, 409 rejected, 4xx for a malformed body).
//! - `GET /events` upgrades to a WebSocket carrying fleet notices and a 10 Hz
//!   `tick` document; command documents sent on the socket are acknowledged in band.

use std::net::SocketAddr;
use std::sync::mpsc as std_mpsc;
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use swarmlab_core::config::{ClockMode, FleetConfig};
use swarmlab_core::fleet::{CommandAck, DroneView, OperatorCommand, Snapshot};
use swarmlab_core::sim::{SimOptions, Simulation, BASE_RATE_HZ};
use tokio::sync::{broadcast, oneshot, watch};

use crate::CliError;

/// Base ticks between `tick` events (10 Hz of simulated time).
const TICK_EVENT_EVERY: u64 = 12;
/// Simulated seconds allowed for landing on shutdown.
const LAND_GRACE_S: f64 = 10.0;
/// Base ticks per batch when the clock is virtual.
const VIRTUAL_BATCH: u64 = 12;

#[derive(Debug, Clone, Serialize)]
pub struct DroneMetrics {
    pub drone_id: u32,
    pub fix_rate_hz: f64,
    pub bitrate_mbps: f64,
    pub frames: u64,
    pub max_loc_error: f64,
}

#[derive(Debug, Clone, Serialize)]
struct TickEvent<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    t: f64,
    drones: &'a [DroneView],
    metrics: Vec<DroneMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShutdownSummary {
    pub land_all: CommandAck,
    pub t: f64,
    pub airborne_after: usize,
}

enum Request {
    Command(OperatorCommand, oneshot::Sender<CommandAck>),
    Shutdown(oneshot::Sender<ShutdownSummary>),
}

/// Client side of the simulation thread.
#[derive(Clone)]
pub struct Engine {
    requests: std_mpsc::Sender<Request>,
    snapshot: watch::Receiver<Snapshot>,
    events: broadcast::Sender<String>,
}

impl Engine {
    /// Starts the fleet on its own thread in live (operator-driven) mode.
    pub fn start(config: &FleetConfig, clock: ClockMode) -> Result<Self, CliError> {
        let mut sim = Simulation::new(config, config.seed, SimOptions::live()).map_err(|e| CliError::usage(e.to_string()))?;
        let (requests, rx) = std_mpsc::channel();
        let (snap_tx, snapshot) = watch::channel(sim.snapshot());
        let (events, _) = broadcast::channel(1024);
        let ev = events.clone();
        thread::Builder::new()
            .name("fleet".into())
            .spawn(move || run_engine(&mut sim, clock, rx, snap_tx, ev))
            .map_err(|e| CliError::runtime(format!("spawning fleet thread: {e}")))?;
        Ok(Self { requests, snapshot, events })
    }

    pub fn snapshot(&self) -> Snapshot {
        self.snapshot.borrow().clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<String> {
        self.events.subscribe()
    }

    pub async fn command(&self, cmd: OperatorCommand) -> Result<CommandAck, CliError> {
        let (tx, rx) = oneshot::channel();
        self.requests.send(Request::Command(cmd, tx)).map_err(|_| CliError::runtime("fleet stopped"))?;
        rx.await.map_err(|_| CliError::runtime("fleet stopped"))
    }

    /// Lands every airborne drone and stops the simulation thread.
    pub async fn shutdown(&self) -> Result<ShutdownSummary, CliError> {
        let (tx, rx) = oneshot::channel();
        self.requests.send(Request::Shutdown(tx)).map_err(|_| CliError::runtime("fleet stopped"))?;
        rx.await.map_err(|_| CliError::runtime("fleet stopped"))
    }
}

fn metrics(sim: &Simulation) -> Vec<DroneMetrics> {
    let t = sim.now();
    sim.stats()
        .iter()
        .enumerate()
        .map(|(i, s)| DroneMetrics {
            drone_id: i as u32,
            fix_rate_hz: s.fix_rate_hz(t),
            bitrate_mbps: s.bitrate_mbps(t),
            frames: s.frames_completed,
            max_loc_error: s.max_loc_error,
        })
        .collect()
}

fn publish_notices(sim: &mut Simulation, events: &broadcast::Sender<String>) {
    for n in sim.drain_notices() {
        if let Ok(text) = serde_json::to_string(&n) {
            let _ = events.send(text);
        }
    }
}

fn step_once(sim: &mut Simulation, snap: &watch::Sender<Snapshot>, events: &broadcast::Sender<String>) {
    sim.step();
    publish_notices(sim, events);
    if (sim.now() * BASE_RATE_HZ).round() as u64 % TICK_EVENT_EVERY == 0 {
        let snapshot = sim.snapshot();
        let tick = TickEvent { kind: "tick", t: snapshot.t, drones: &snapshot.drones, metrics: metrics(sim) };
        if let Ok(text) = serde_json::to_string(&tick) {
            let _ = events.send(text);
        }
        snap.send_replace(snapshot);
    }
}

fn airborne(sim: &Simulation) -> usize {
    sim.fleet().sessions().iter().filter(|s| s.fsm.airborne()).count()
}

fn run_engine(
    sim: &mut Simulation,
    clock: ClockMode,
    requests: std_mpsc::Receiver<Request>,
    snap: watch::Sender<Snapshot>,
    events: broadcast::Sender<String>,
) {
    let started = Instant::now();
    let t0 = sim.now();
    let tick = Duration::from_secs_f64(1.0 / BASE_RATE_HZ);
    loop {
        loop {
            match requests.try_recv() {
                Ok(Request::Command(cmd, reply)) => {
                    let ack = sim.command(&cmd);
                    publish_notices(sim, &events);
                    snap.send_replace(sim.snapshot());
                    let _ = reply.send(ack);
                }
                Ok(Request::Shutdown(reply)) => {
                    let land_all = sim.command(&OperatorCommand::LandAll);
                    publish_notices(sim, &events);
                    let deadline = sim.now() + LAND_GRACE_S;
                    while airborne(sim) > 0 && sim.now() < deadline {
                        step_once(sim, &snap, &events);
                    }
                    snap.send_replace(sim.snapshot());
                    let _ = reply.send(ShutdownSummary { land_all, t: sim.now(), airborne_after: airborne(sim) });
                    return;
                }
                Err(std_mpsc::TryRecvError::Empty) => break,
                Err(std_mpsc::TryRecvError::Disconnected) => return,
            }
        }
        match clock {
            ClockMode::Wall => {
                let due = started.elapsed().as_secs_f64() + t0;
                while sim.now() + 1.0 / BASE_RATE_HZ <= due {
                    step_once(sim, &snap, &events);
                }
                thread::sleep(tick);
            }
            ClockMode::Virtual => {
                for _ in 0..VIRTUAL_BATCH {
                    step_once(sim, &snap, &events);
                }
                thread::sleep(Duration::from_millis(1));
            }
        }
    }
}

#[derive(Clone)]
struct AppState {
    engine: Engine,
    closing: watch::Receiver<bool>,
}

/// HTTP routes over a running engine. Flip `closing` to end open event streams.
pub fn router(engine: Engine, closing: watch::Receiver<bool>) -> Router {
    Router::new()
        .route("/snapshot", get(get_snapshot))
        .route("/command", post(post_command))
        .route("/events", get(events_ws))
        .with_state(AppState { engine, closing })
}

async fn get_snapshot(State(app): State<AppState>) -> Json<Snapshot> {
    Json(app.engine.snapshot())
}

async fn post_command(State(app): State<AppState>, Json(cmd): Json<OperatorCommand>) -> impl IntoResponse {
    match app.engine.command(cmd).await {
        Ok(ack) => {
            let status = if ack.accepted { StatusCode::OK } else { StatusCode::CONFLICT };
            (status, Json(ack)).into_response()
        }
        Err(e) => (StatusCode::SERVICE_UNAVAILABLE, e.message).into_response(),
    }
}

async fn events_ws(State(app): State<AppState>, ws: WebSocketUpgrade) -> impl IntoResponse {
    ws.on_upgrade(move |socket| event_stream(socket, app))
}

#[derive(Serialize)]
struct InbandAck {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    ack: CommandAck,
}

async fn event_stream(mut socket: WebSocket, app: AppState) {
    let mut events = app.engine.subscribe();
    let mut closing = app.closing.clone();
    loop {
        tokio::select! {
            ev = events.recv() => match ev {
                Ok(text) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            },
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let ack = match serde_json::from_str::<OperatorCommand>(&text) {
                        Ok(cmd) => match app.engine.command(cmd).await {
                            Ok(ack) => ack,
                            Err(e) => CommandAck { accepted: false, reason: Some(e.message) },
                        },
                        Err(e) => CommandAck { accepted: false, reason: Some(format!("malformed command: {e}")) },
                    };
                    let reply = serde_json::to_string(&InbandAck { kind: "ack", ack }).unwrap_or_default();
                    if socket.send(Message::Text(reply.into())).await.is_err() {
                        return;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
            _ = closing.changed() => break,
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

/// Binds `listen`, serves until Ctrl-C, then lands the fleet.
pub fn serve(config: &FleetConfig, listen: &str, clock: ClockMode) -> Result<ShutdownSummary, CliError> {
    let addr: SocketAddr = listen.parse().map_err(|e| CliError::usage(format!("--listen {listen}: {e}")))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::runtime(format!("bind {addr}: {e}")))?;
        let engine = Engine::start(config, clock)?;
        let (close_tx, close_rx) = watch::channel(false);
        let app = router(engine.clone(), close_rx);
        eprintln!("listening on {}", listener.local_addr()?);
        let (done_tx, done_rx) = oneshot::channel();
        let lander = engine.clone();
        let server = axum::serve(listener, app).with_graceful_shutdown(async move {
            let _ = tokio::signal::ctrl_c().await;
            let _ = done_tx.send(lander.shutdown().await);
            let _ = close_tx.send(true);
        });
        server.await?;
        let summary = done_rx.await.map_err(|_| CliError::runtime("fleet stopped"))??;
        Ok(summary)
    })
}
