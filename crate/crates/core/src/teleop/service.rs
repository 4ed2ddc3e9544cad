use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::http::StatusCode;
use tungstenite::Message;

use super::wire::{ArmState, StateMessage};
use super::{lock, Hub, IngestCounters, Ingested, Mailbox, PoseIngest, PoseUpdateMessage};
use crate::error::{Error, Result};
use crate::metrics::CSV_HEADER;
use crate::pose::Pose;
use crate::runner::{LiveConfig, RunSettings, Runner, TimingStats};
use crate::scene::Scene;
use crate::trajectories::{Recording, RecordingSource, TrajWriter, TrajectorySample};

const POLL: Duration = Duration::from_millis(10);

/// Network and session settings for a live run.
#[derive(Clone, Debug)]
pub struct TeleopConfig {
    pub bind: String,
    /// UDP port for pose updates; 0 picks a free one.
    pub pose_port: u16,
    /// TCP port for state subscribers; 0 picks a free one.
    pub state_port: u16,
    /// WebSocket gateway port, serving `/ws`.
    pub ws_port: Option<u16>,
    /// Stop after this many ticks.
    pub max_ticks: Option<u64>,
    pub record: Option<PathBuf>,
    pub metrics_csv: Option<PathBuf>,
    pub queue_depth: usize,
    pub session_timeout: Duration,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self::from(&LiveConfig::default())
    }
}

impl From<&LiveConfig> for TeleopConfig {
    fn from(live: &LiveConfig) -> Self {
        Self {
            bind: live.bind.clone(),
            pose_port: live.pose_port,
            state_port: live.state_port,
            ws_port: live.ws_port,
            max_ticks: None,
            record: live.record.clone(),
            metrics_csv: None,
            queue_depth: live.queue_depth,
            session_timeout: Duration::from_secs(2),
        }
    }
}

/// What a finished live session produced.
#[derive(Clone, Debug)]
pub struct SessionReport {
    pub ticks: u64,
    /// Payload pose per tick, stamped with server tick time. `None` with
    /// fewer than two ticks.
    pub recording: Option<Recording>,
    pub csv: String,
    pub timing: TimingStats,
    pub ingest: IngestCounters,
    /// State records dropped because a subscriber fell behind.
    pub dropped_states: u64,
}

struct Shared {
    stop: AtomicBool,
    mailbox: Mailbox<PoseUpdateMessage>,
    ingest: Mutex<PoseIngest>,
    hub: Hub,
}

impl Shared {
    fn stopped(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }

    fn ingest(&self, bytes: &[u8]) -> Ingested {
        let outcome = lock(&self.ingest).ingest(bytes, Instant::now());
        if let Ingested::Accepted(m) = &outcome {
            self.mailbox.put(m.clone());
        }
        outcome
    }
}

/// A running live session.
pub struct ServiceHandle {
    pose_addr: SocketAddr,
    state_addr: SocketAddr,
    ws_addr: Option<SocketAddr>,
    shared: Arc<Shared>,
    ticker: Option<JoinHandle<Result<SessionReport>>>,
    workers: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn pose_addr(&self) -> SocketAddr {
        self.pose_addr
    }

    pub fn state_addr(&self) -> SocketAddr {
        self.state_addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    pub fn ingest_counters(&self) -> IngestCounters {
        lock(&self.shared.ingest).counters()
    }

    pub fn subscribers(&self) -> usize {
        self.shared.hub.subscribers()
    }

    /// Asks every thread to finish.
    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::Relaxed);
    }

    pub fn is_finished(&self) -> bool {
        self.ticker.as_ref().is_none_or(|t| t.is_finished())
    }

    /// Waits for the tick loop to end, either through `stop` or the tick
    /// limit, then shuts down the network threads.
    pub fn wait(mut self) -> Result<SessionReport> {
        let ticker = self.ticker.take().expect("wait is called once");
        let report = ticker
            .join()
            .unwrap_or_else(|_| Err(Error::Setup("tick loop panicked".into())));
        self.shutdown();
        report
    }

    fn shutdown(&mut self) {
        self.stop();
        self.shared.hub.close_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown();
        if let Some(t) = self.ticker.take() {
            let _ = t.join();
        }
    }
}

fn bind_addr(bind: &str, port: u16) -> String {
    format!("{bind}:{port}")
}

/// Binds the sockets and starts the tick loop.
pub fn start(scene: Scene, settings: RunSettings, config: TeleopConfig) -> Result<ServiceHandle> {
    if !(settings.tick_rate > 0.0 && settings.tick_rate.is_finite()) {
        return Err(Error::Config(format!(
            "tick_rate must be positive, got {}",
            settings.tick_rate
        )));
    }
    let udp = UdpSocket::bind(bind_addr(&config.bind, config.pose_port))?;
    udp.set_read_timeout(Some(POLL))?;
    let state = TcpListener::bind(bind_addr(&config.bind, config.state_port))?;
    state.set_nonblocking(true)?;
    let ws = match config.ws_port {
        Some(p) => {
            let l = TcpListener::bind(bind_addr(&config.bind, p))?;
            l.set_nonblocking(true)?;
            Some(l)
        }
        None => None,
    };
    let writer = match &config.record {
        Some(p) => Some(TrajWriter::new(BufWriter::new(
            File::create(p).map_err(|e| Error::io(p, e))?,
        ))),
        None => None,
    };

    let shared = Arc::new(Shared {
        stop: AtomicBool::new(false),
        mailbox: Mailbox::new(),
        ingest: Mutex::new(PoseIngest::new(config.session_timeout)),
        hub: Hub::new(config.queue_depth),
    });
    let pose_addr = udp.local_addr()?;
    let state_addr = state.local_addr()?;
    let ws_addr = ws.as_ref().map(|l| l.local_addr()).transpose()?;

    let mut workers = Vec::new();
    let s = shared.clone();
    workers.push(thread::spawn(move || pose_receiver(udp, s)));
    let s = shared.clone();
    workers.push(thread::spawn(move || accept_loop(state, s, state_subscriber)));
    if let Some(l) = ws {
        let s = shared.clone();
        workers.push(thread::spawn(move || accept_loop(l, s, ws_client)));
    }
    let s = shared.clone();
    let ticker = thread::spawn(move || tick_loop(scene, settings, &config, writer, &s));
    Ok(ServiceHandle {
        pose_addr,
        state_addr,
        ws_addr,
        shared,
        ticker: Some(ticker),
        workers,
    })
}

fn tick_loop(
    scene: Scene,
    settings: RunSettings,
    config: &TeleopConfig,
    mut writer: Option<TrajWriter<BufWriter<File>>>,
    shared: &Shared,
) -> Result<SessionReport> {
    let result = run_ticks(scene, settings, config, &mut writer, shared);
    shared.stop.store(true, Ordering::Relaxed);
    if let (Some(w), Some(p)) = (writer.as_mut(), &config.record) {
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    result
}

fn run_ticks(
    scene: Scene,
    settings: RunSettings,
    config: &TeleopConfig,
    writer: &mut Option<TrajWriter<BufWriter<File>>>,
    shared: &Shared,
) -> Result<SessionReport> {
    let ids: Vec<String> = scene.arms.iter().map(|a| a.id.clone()).collect();
    let mut payload: Pose = scene.payload_start;
    let mut scene = Some(scene);
    let mut runner: Option<Runner> = None;
    let mut csv = format!("{CSV_HEADER}\n");
    let mut samples = Vec::new();
    let mut timings = Vec::new();
    let period = Duration::from_secs_f64(1.0 / settings.tick_rate);
    let started = Instant::now();
    let mut k: u64 = 0;
    while !shared.stopped() && config.max_ticks.is_none_or(|m| k < m) {
        // A released grab keeps the payload where it was.
        if let Some(msg) = shared.mailbox.take() {
            if msg.grab {
                payload = msg.pose;
            }
        }
        // Seeds come from the first tick's pose so a batch replay of the
        // recording starts from the same state.
        let r = match &mut runner {
            Some(r) => r,
            None => runner.insert(Runner::new(
                scene.take().expect("scene is used once"),
                settings,
                &payload,
            )?),
        };
        let tick = r.step(&payload);
        timings.push(r.last_timing());
        tick.frame.write_csv_rows(&ids, &mut csv);
        samples.push(TrajectorySample {
            t: tick.t,
            payload_pose: payload,
        });
        if let (Some(w), Some(p)) = (writer.as_mut(), &config.record) {
            w.append(tick.t, &payload)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(p, e))?;
        }
        let arms = ids
            .iter()
            .zip(&tick.arms)
            .zip(&tick.frame.arms)
            .map(|((id, a), m)| ArmState {
                id: id.clone(),
                joints: a.solution.q.iter().copied().collect(),
                manipulability: m.manipulability,
                position_error: m.position_error,
            })
            .collect();
        let state = StateMessage::new(tick.tick, tick.t, arms, payload)?;
        shared.hub.publish(&state.encode());
        k += 1;

        let deadline = started + period.mul_f64(k as f64);
        let now = Instant::now();
        if deadline > now {
            thread::sleep(deadline - now);
        }
    }
    if let Some(p) = &config.metrics_csv {
        std::fs::write(p, &csv).map_err(|e| Error::io(p, e))?;
    }
    let recording = if samples.len() >= 2 {
        Some(Recording::new(samples, RecordingSource::Live)?)
    } else {
        None
    };
    Ok(SessionReport {
        ticks: k,
        recording,
        csv,
        timing: TimingStats::from_samples(&timings),
        ingest: lock(&shared.ingest).counters(),
        dropped_states: shared.hub.dropped(),
    })
}

fn pose_receiver(socket: UdpSocket, shared: Arc<Shared>) {
    let mut buf = vec![0u8; 64 * 1024];
    while !shared.stopped() {
        let (n, from) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(_) => continue,
        };
        if let Ingested::Busy(notice) = shared.ingest(&buf[..n]) {
            let _ = socket.send_to(notice.encode().as_bytes(), from);
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, serve: fn(TcpStream, Arc<Shared>)) {
    let mut clients = Vec::new();
    while !shared.stopped() {
        match listener.accept() {
            Ok((stream, _)) => {
                let s = shared.clone();
                clients.push(thread::spawn(move || serve(stream, s)));
            }
            Err(_) => thread::sleep(POLL),
        }
        clients.retain(|c: &JoinHandle<()>| !c.is_finished());
    }
    for c in clients {
        let _ = c.join();
    }
}

/// Streams state records as `u32` big-endian length plus UTF-8 body.
fn state_subscriber(mut stream: TcpStream, shared: Arc<Shared>) {
    let queue = shared.hub.subscribe();
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    while !shared.stopped() {
        let Some(record) = queue.pop(POLL) else {
            if queue.is_closed() {
                break;
            }
            continue;
        };
        let len = (record.len() as u32).to_be_bytes();
        if stream
            .write_all(&len)
            .and_then(|_| stream.write_all(record.as_bytes()))
            .is_err()
        {
            break;
        }
    }
    queue.close();
}

// The callback signature is fixed by tungstenite.
#[allow(clippy::result_large_err)]
fn only_ws_path(req: &Request, resp: Response) -> std::result::Result<Response, ErrorResponse> {
    if req.uri().path() == "/ws" {
        Ok(resp)
    } else {
        let mut err = ErrorResponse::new(Some("not found".into()));
        *err.status_mut() = StatusCode::NOT_FOUND;
        Err(err)
    }
}

/// One WebSocket client: state records go out as text frames, pose records
/// come in as text frames.
fn ws_client(stream: TcpStream, shared: Arc<Shared>) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_read_timeout(Some(Duration::from_secs(2)));
    let mut ws = match tungstenite::accept_hdr(stream, only_ws_path) {
        Ok(ws) => ws,
        Err(_) => return,
    };
    let _ = ws.get_mut().set_read_timeout(Some(POLL));
    let _ = ws.get_mut().set_nodelay(true);
    let queue = shared.hub.subscribe();
    'session: while !shared.stopped() && !queue.is_closed() {
        while let Some(record) = queue.try_pop() {
            if ws.write(Message::text(&*record)).is_err() {
                break 'session;
            }
        }
        if ws.flush().is_err() {
            break;
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                if let Ingested::Busy(notice) = shared.ingest(text.as_bytes()) {
                    if ws.send(Message::text(notice.encode())).is_err() {
                        break;
                    }
                }
            }
            Ok(Message::Binary(bytes)) => {
                if let Ingested::Busy(notice) = shared.ingest(&bytes) {
                    if ws.send(Message::text(notice.encode())).is_err() {
                        break;
                    }
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    queue.close();
    let _ = ws.close(None);
    let _ = ws.flush();
}
