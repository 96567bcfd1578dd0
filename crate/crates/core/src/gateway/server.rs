//! Network side: axum routes, client roles and per-client send queues, plus
//! the thread that runs the engine at a fixed cadence.

use super::engine::{Engine, EngineConfig, Reply};
use super::protocol::{
    decode_command, encode_server, CommandMessage, Layer, RejectCode, Role, ServerMessage, Snapshot,
};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};
use thiserror::Error;
use tokio::sync::Notify;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {0}: {1}")]
    Bind(SocketAddr, std::io::Error),
    #[error("cannot open tick log in {0}: {1}")]
    Record(PathBuf, std::io::Error),
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub engine: EngineConfig,
    pub bind: SocketAddr,
    /// Multiple of real time; zero or less runs unpaced.
    pub speed: f64,
    pub record: Option<PathBuf>,
    /// Messages held per client before the oldest is dropped.
    pub queue_len: usize,
}

impl ServeConfig {
    pub fn new(engine: EngineConfig, bind: SocketAddr) -> Self {
        Self {
            engine,
            bind,
            speed: 1.0,
            record: None,
            queue_len: 64,
        }
    }
}

/// Who holds the driver role. The first client to connect drives; when the
/// driver leaves, the longest-connected observer takes over.
#[derive(Debug, Default, Clone)]
pub struct Roles {
    driver: Option<u64>,
    order: Vec<u64>,
}

impl Roles {
    pub fn connect(&mut self, id: u64) -> Role {
        self.order.push(id);
        if self.driver.is_none() {
            self.driver = Some(id);
            Role::Driver
        } else {
            Role::Observer
        }
    }

    /// Returns the client promoted to driver, if any.
    pub fn disconnect(&mut self, id: u64) -> Option<u64> {
        self.order.retain(|&c| c != id);
        if self.driver == Some(id) {
            self.driver = self.order.first().copied();
            return self.driver;
        }
        None
    }

    pub fn role(&self, id: u64) -> Role {
        if self.driver == Some(id) {
            Role::Driver
        } else {
            Role::Observer
        }
    }
}

#[derive(Debug, Default)]
struct QueueInner {
    msgs: VecDeque<String>,
    closed: bool,
    dropped: u64,
}

/// Bounded outgoing queue; a full queue drops its oldest message so the
/// simulation thread never waits on a slow client.
#[derive(Debug)]
struct ClientQueue {
    inner: Mutex<QueueInner>,
    notify: Notify,
    cap: usize,
}

impl ClientQueue {
    fn new(cap: usize) -> Self {
        Self {
            inner: Mutex::new(QueueInner::default()),
            notify: Notify::new(),
            cap: cap.max(1),
        }
    }

    fn push(&self, msg: String) -> u64 {
        let dropped = {
            let mut q = self.inner.lock().expect("queue lock");
            let mut dropped = 0;
            while q.msgs.len() >= self.cap {
                q.msgs.pop_front();
                dropped += 1;
            }
            q.dropped += dropped;
            q.msgs.push_back(msg);
            dropped
        };
        self.notify.notify_one();
        dropped
    }

    fn close(&self) {
        self.inner.lock().expect("queue lock").closed = true;
        self.notify.notify_one();
    }

    async fn next_batch(&self) -> Option<Vec<String>> {
        loop {
            {
                let mut q = self.inner.lock().expect("queue lock");
                if !q.msgs.is_empty() {
                    return Some(q.msgs.drain(..).collect());
                }
                if q.closed {
                    return None;
                }
            }
            self.notify.notified().await;
        }
    }
}

enum Inbound {
    Command { client: u64, cmd: CommandMessage },
    /// The driver went away; stop whatever it was commanding.
    DriverLeft,
}

/// Pacing and delivery figures from the simulation thread.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LoopStats {
    pub ticks: u64,
    /// Worst delay between a tick's deadline and its start.
    pub max_lateness: Duration,
    pub dropped_messages: u64,
}

struct Hub {
    clients: Mutex<BTreeMap<u64, Arc<ClientQueue>>>,
    roles: Mutex<Roles>,
    inbound: Mutex<mpsc::Sender<Inbound>>,
    snapshots: RwLock<Option<Arc<(Snapshot, Snapshot)>>>,
    stats: Mutex<LoopStats>,
    shutdown: AtomicBool,
    next_id: AtomicU64,
    queue_len: usize,
}

impl Hub {
    fn send_to(&self, client: u64, msg: &ServerMessage) {
        let q = self.clients.lock().expect("clients lock").get(&client).cloned();
        if let Some(q) = q {
            let d = q.push(encode_server(msg));
            self.stats.lock().expect("stats lock").dropped_messages += d;
        }
    }

    fn broadcast(&self, msg: &ServerMessage) {
        let text = encode_server(msg);
        let queues: Vec<Arc<ClientQueue>> = self.clients.lock().expect("clients lock").values().cloned().collect();
        let dropped: u64 = queues.iter().map(|q| q.push(text.clone())).sum();
        if dropped > 0 {
            self.stats.lock().expect("stats lock").dropped_messages += dropped;
        }
    }

    fn role(&self, client: u64) -> Role {
        self.roles.lock().expect("roles lock").role(client)
    }

    fn submit(&self, msg: Inbound) {
        let _ = self.inbound.lock().expect("inbound lock").send(msg);
    }
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    hub: Arc<Hub>,
    sim: Option<std::thread::JoinHandle<()>>,
    server: tokio::task::JoinHandle<Result<(), std::io::Error>>,
}

impl ServerHandle {
    pub fn stats(&self) -> LoopStats {
        *self.hub.stats.lock().expect("stats lock")
    }

    /// Stops the simulation thread and the listener.
    pub async fn shutdown(mut self) {
        self.hub.shutdown.store(true, Ordering::SeqCst);
        self.server.abort();
        if let Some(h) = self.sim.take() {
            let _ = tokio::task::spawn_blocking(move || h.join()).await;
        }
    }

    /// Serves until the listener fails or the process is interrupted.
    pub async fn run_until_ctrl_c(self) -> Result<(), GatewayError> {
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            r = &mut { self.server } => {
                if let Ok(Err(e)) = r {
                    self.hub.shutdown.store(true, Ordering::SeqCst);
                    return Err(GatewayError::Serve(e));
                }
            }
        }
        self.hub.shutdown.store(true, Ordering::SeqCst);
        Ok(())
    }
}

/// Binds the listener and starts the simulation thread.
pub async fn start(cfg: ServeConfig) -> Result<ServerHandle, GatewayError> {
    let mut engine = Engine::new(cfg.engine.clone());
    if let Some(dir) = &cfg.record {
        let file = std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::File::create(dir.join("ticks.jsonl")))
            .map_err(|e| GatewayError::Record(dir.clone(), e))?;
        engine.record_to(Box::new(std::io::BufWriter::new(file)));
    }
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|e| GatewayError::Bind(cfg.bind, e))?;
    let addr = listener.local_addr().map_err(|e| GatewayError::Bind(cfg.bind, e))?;

    let (tx, rx) = mpsc::channel();
    let hub = Arc::new(Hub {
        clients: Mutex::new(BTreeMap::new()),
        roles: Mutex::new(Roles::default()),
        inbound: Mutex::new(tx),
        snapshots: RwLock::new(Some(Arc::new((engine.snapshot(Layer::Map), engine.snapshot(Layer::Costmap))))),
        stats: Mutex::new(LoopStats::default()),
        shutdown: AtomicBool::new(false),
        next_id: AtomicU64::new(1),
        queue_len: cfg.queue_len,
    });

    let sim_hub = hub.clone();
    let dt = cfg.engine.sim.dt;
    let speed = cfg.speed;
    let sim = std::thread::Builder::new()
        .name("sim".into())
        .spawn(move || run_loop(engine, rx, sim_hub, dt, speed))
        .map_err(GatewayError::Serve)?;

    let app = Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/map", get(map_snapshot))
        .route("/costmap", get(costmap_snapshot))
        .with_state(hub.clone());
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    tracing::info!(%addr, "gateway listening");
    Ok(ServerHandle {
        addr,
        hub,
        sim: Some(sim),
        server,
    })
}

/// Snapshots for the HTTP routes are refreshed this often.
const SNAPSHOT_EVERY: u64 = 10;

fn run_loop(mut engine: Engine, rx: mpsc::Receiver<Inbound>, hub: Arc<Hub>, dt: f64, speed: f64) {
    let start = Instant::now();
    let mut k: u64 = 0;
    while !hub.shutdown.load(Ordering::SeqCst) {
        k += 1;
        if speed > 0.0 {
            // absolute deadlines so sleep overshoot never accumulates
            let deadline = start + Duration::from_secs_f64(k as f64 * dt / speed);
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            }
            let late = Instant::now().saturating_duration_since(deadline);
            let mut s = hub.stats.lock().expect("stats lock");
            s.max_lateness = s.max_lateness.max(late);
        }

        while let Ok(msg) = rx.try_recv() {
            match msg {
                Inbound::Command { client, cmd } => {
                    let reply = match engine.handle(hub.role(client), &cmd) {
                        Ok(Reply::Ack(detail)) => ServerMessage::Ack {
                            command: cmd.kind().into(),
                            tick: engine.tick(),
                            detail,
                        },
                        Ok(Reply::Snapshot(s)) => ServerMessage::Snapshot(s),
                        Err(r) => ServerMessage::Rejected {
                            command: cmd.kind().into(),
                            code: r.code,
                            reason: r.reason,
                        },
                    };
                    hub.send_to(client, &reply);
                }
                Inbound::DriverLeft => {
                    let _ = engine.handle(Role::Driver, &CommandMessage::Joystick { fwd: 0.0, turn: 0.0 });
                }
            }
        }

        if let Some(state) = engine.step() {
            hub.broadcast(&ServerMessage::State(state));
        }
        if engine.tick() % SNAPSHOT_EVERY == 0 {
            let snaps = Arc::new((engine.snapshot(Layer::Map), engine.snapshot(Layer::Costmap)));
            *hub.snapshots.write().expect("snapshot lock") = Some(snaps);
        }
        hub.stats.lock().expect("stats lock").ticks = engine.tick();
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(hub): State<Arc<Hub>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client_session(socket, hub))
}

async fn client_session(socket: WebSocket, hub: Arc<Hub>) {
    let id = hub.next_id.fetch_add(1, Ordering::SeqCst);
    let queue = Arc::new(ClientQueue::new(hub.queue_len));
    hub.clients.lock().expect("clients lock").insert(id, queue.clone());
    let role = hub.roles.lock().expect("roles lock").connect(id);
    queue.push(encode_server(&ServerMessage::Welcome { client_id: id, role }));
    tracing::debug!(client = id, ?role, "client connected");

    let (mut sink, mut stream) = socket.split();
    let outgoing = queue.clone();
    let writer = tokio::spawn(async move {
        while let Some(batch) = outgoing.next_batch().await {
            for text in batch {
                if sink.send(Message::Text(text.into())).await.is_err() {
                    return;
                }
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        let bytes = match &msg {
            Message::Text(t) => t.as_bytes(),
            Message::Binary(b) => b.as_ref(),
            Message::Close(_) => break,
            _ => continue,
        };
        match decode_command(bytes) {
            Ok(cmd) => hub.submit(Inbound::Command { client: id, cmd }),
            Err(e) => {
                queue.push(encode_server(&ServerMessage::Rejected {
                    command: "unknown".into(),
                    code: RejectCode::Decode,
                    reason: e.to_string(),
                }));
            }
        }
    }

    queue.close();
    writer.abort();
    hub.clients.lock().expect("clients lock").remove(&id);
    let was_driver = hub.role(id) == Role::Driver;
    let promoted = hub.roles.lock().expect("roles lock").disconnect(id);
    if was_driver {
        hub.submit(Inbound::DriverLeft);
    }
    if let Some(p) = promoted {
        hub.send_to(p, &ServerMessage::RoleChanged { role: Role::Driver });
    }
    tracing::debug!(client = id, "client disconnected");
}

fn current_snapshot(hub: &Hub, layer: Layer) -> Result<Json<Snapshot>, StatusCode> {
    let snaps = hub.snapshots.read().expect("snapshot lock").clone();
    let snaps = snaps.ok_or(StatusCode::SERVICE_UNAVAILABLE)?;
    Ok(Json(match layer {
        Layer::Map => snaps.0.clone(),
        Layer::Costmap => snaps.1.clone(),
    }))
}

async fn map_snapshot(State(hub): State<Arc<Hub>>) -> Result<Json<Snapshot>, StatusCode> {
    current_snapshot(&hub, Layer::Map)
}

async fn costmap_snapshot(State(hub): State<Arc<Hub>>) -> Result<Json<Snapshot>, StatusCode> {
    current_snapshot(&hub, Layer::Costmap)
}
