//! One TCP connection per container replica.
//!
//! Containers dial in and open with a handshake. After that a reader task
//! routes responses to the single outstanding request, a writer task drains
//! an outbox, and a liveness task sends heartbeats on idle connections and
//! drops ones that stay silent.

use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use predserve_core::wire::{decode_header, decode_payload, encode_message, Handshake, PredictRequest, WireError, WireMessage, HEADER_LEN};
use predserve_core::{Error, InputPayload, ReplicaId, Result};
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot, watch, OwnedSemaphorePermit, Semaphore};

#[derive(Debug, Clone, Copy)]
pub struct TransportConfig {
    /// Idle time after which a heartbeat is sent.
    pub heartbeat_interval: Duration,
    /// Unanswered heartbeats tolerated before the connection is dropped.
    pub missed_heartbeats: u32,
    pub handshake_timeout: Duration,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig { heartbeat_interval: Duration::from_secs(1), missed_heartbeats: 3, handshake_timeout: Duration::from_secs(5) }
    }
}

struct Pending {
    request_id: u32,
    batch: usize,
    reply: oneshot::Sender<Result<Vec<Vec<String>>>>,
    // Held until the response arrives, even if the caller gave up waiting.
    _permit: OwnedSemaphorePermit,
}

pub struct ReplicaConnection {
    id: ReplicaId,
    handshake: Handshake,
    outbox: mpsc::UnboundedSender<WireMessage>,
    pending: Mutex<Option<Pending>>,
    slot: Arc<Semaphore>,
    next_id: AtomicU32,
    suspect: AtomicBool,
    last_heard: Mutex<Instant>,
    closed: watch::Sender<bool>,
}

pub async fn read_message<R: AsyncRead + Unpin>(r: &mut R) -> std::result::Result<WireMessage, WireError> {
    let mut header = [0u8; HEADER_LEN];
    read_full(r, &mut header).await?;
    let (kind, len) = decode_header(&header)?;
    let mut payload = vec![0u8; len];
    read_full(r, &mut payload).await?;
    decode_payload(kind, &payload)
}

async fn read_full<R: AsyncRead + Unpin>(r: &mut R, buf: &mut [u8]) -> std::result::Result<(), WireError> {
    match r.read_exact(buf).await {
        Ok(_) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(WireError::ConnectionClosed),
        Err(e) => Err(WireError::Io(e)),
    }
}

impl ReplicaConnection {
    /// Reads the handshake and starts the connection's tasks.
    pub async fn accept(stream: TcpStream, id: ReplicaId, cfg: TransportConfig) -> Result<Arc<Self>> {
        stream.set_nodelay(true).ok();
        let (mut rd, wr) = stream.into_split();
        let first = tokio::time::timeout(cfg.handshake_timeout, read_message(&mut rd))
            .await
            .map_err(|_| Error::Protocol("no handshake before timeout".into()))??;
        let WireMessage::Handshake(handshake) = first else {
            return Err(Error::Protocol(format!("expected handshake, got {:?}", first.kind())));
        };
        Ok(Self::start(rd, wr, id, handshake, cfg))
    }

    fn start(rd: OwnedReadHalf, wr: OwnedWriteHalf, id: ReplicaId, handshake: Handshake, cfg: TransportConfig) -> Arc<Self> {
        let (outbox, rx) = mpsc::unbounded_channel();
        let conn = Arc::new(ReplicaConnection {
            id,
            handshake,
            outbox,
            pending: Mutex::new(None),
            slot: Arc::new(Semaphore::new(1)),
            next_id: AtomicU32::new(1),
            suspect: AtomicBool::new(false),
            last_heard: Mutex::new(Instant::now()),
            closed: watch::channel(false).0,
        });
        tokio::spawn(writer(wr, rx, conn.clone()));
        tokio::spawn(reader(rd, conn.clone()));
        tokio::spawn(liveness(conn.clone(), cfg));
        conn
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    pub fn is_suspect(&self) -> bool {
        self.suspect.load(Ordering::Relaxed)
    }

    pub fn is_closed(&self) -> bool {
        *self.closed.borrow()
    }

    /// Whether a request is outstanding (including one that already timed out).
    pub fn is_busy(&self) -> bool {
        self.slot.available_permits() == 0
    }

    /// Resolves once the connection is gone.
    pub async fn closed(&self) {
        let mut rx = self.closed.subscribe();
        let _ = rx.wait_for(|c| *c).await;
    }

    pub fn close(&self, reason: &str) {
        if self.closed.send_replace(true) {
            return;
        }
        tracing::info!(replica = %self.id, model = %self.handshake.model_name, reason, "replica disconnected");
        if let Some(p) = self.pending.lock().take() {
            let _ = p.reply.send(Err(Error::ConnectionClosed));
        }
    }

    /// Sends one batch and waits for its response. Only one request is ever
    /// outstanding: a caller that times out leaves the slot occupied until the
    /// late response (or a disconnect) releases it.
    pub async fn predict(&self, inputs: &[InputPayload], timeout: Duration) -> Result<Vec<Vec<String>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let permit = tokio::select! {
            p = self.slot.clone().acquire_owned() => p.map_err(|_| Error::ConnectionClosed)?,
            _ = self.closed() => return Err(Error::ConnectionClosed),
        };
        if self.is_closed() {
            return Err(Error::ConnectionClosed);
        }
        let request_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = oneshot::channel();
        *self.pending.lock() = Some(Pending { request_id, batch: inputs.len(), reply: tx, _permit: permit });
        let req = WireMessage::PredictRequest(PredictRequest::from_inputs(request_id, inputs));
        if self.outbox.send(req).is_err() {
            self.close("writer gone");
            return Err(Error::ConnectionClosed);
        }
        match tokio::time::timeout(timeout, rx).await {
            Ok(Ok(r)) => r,
            Ok(Err(_)) => Err(Error::ConnectionClosed),
            Err(_) => {
                self.suspect.store(true, Ordering::Relaxed);
                Err(Error::ReplicaTimeout(timeout))
            }
        }
    }

    fn send(&self, msg: WireMessage) {
        let _ = self.outbox.send(msg);
    }

    fn on_message(&self, msg: WireMessage) -> std::result::Result<(), String> {
        *self.last_heard.lock() = Instant::now();
        match msg {
            WireMessage::Heartbeat => Ok(()),
            WireMessage::PredictResponse(resp) => {
                let mut slot = self.pending.lock();
                let Some(p) = slot.take() else {
                    return Err(format!("response {} with no request outstanding", resp.request_id));
                };
                if p.request_id != resp.request_id {
                    let msg = format!("response id {} does not match request {}", resp.request_id, p.request_id);
                    let _ = p.reply.send(Err(Error::Protocol(msg.clone())));
                    return Err(msg);
                }
                if resp.outputs.len() != p.batch {
                    let msg = format!("response carries {} outputs for a batch of {}", resp.outputs.len(), p.batch);
                    let _ = p.reply.send(Err(Error::Protocol(msg.clone())));
                    return Err(msg);
                }
                self.suspect.store(false, Ordering::Relaxed);
                let _ = p.reply.send(Ok(resp.outputs));
                Ok(())
            }
            WireMessage::Error(e) => {
                let mut slot = self.pending.lock();
                match slot.take() {
                    Some(p) if p.request_id == e.request_id => {
                        self.suspect.store(false, Ordering::Relaxed);
                        let _ = p.reply.send(Err(Error::Container(e.message)));
                        Ok(())
                    }
                    other => {
                        *slot = other;
                        tracing::warn!(replica = %self.id, request = e.request_id, message = %e.message, "container error");
                        Ok(())
                    }
                }
            }
            other => Err(format!("unexpected {:?} from container", other.kind())),
        }
    }
}

async fn reader(mut rd: OwnedReadHalf, conn: Arc<ReplicaConnection>) {
    loop {
        tokio::select! {
            m = read_message(&mut rd) => match m {
                Ok(msg) => {
                    if let Err(e) = conn.on_message(msg) {
                        tracing::warn!(replica = %conn.id, error = %e, "protocol violation");
                        conn.close("protocol violation");
                        return;
                    }
                }
                Err(WireError::ConnectionClosed) => {
                    conn.close("peer closed");
                    return;
                }
                Err(e) => {
                    tracing::warn!(replica = %conn.id, error = %e, "read failed");
                    conn.close("read failed");
                    return;
                }
            },
            _ = conn.closed() => return,
        }
    }
}

async fn writer(mut wr: OwnedWriteHalf, mut rx: mpsc::UnboundedReceiver<WireMessage>, conn: Arc<ReplicaConnection>) {
    loop {
        let msg = tokio::select! {
            m = rx.recv() => match m {
                Some(m) => m,
                None => break,
            },
            _ = conn.closed() => break,
        };
        let bytes = match encode_message(&msg) {
            Ok(b) => b,
            Err(e) => {
                tracing::error!(error = %e, "could not encode message");
                continue;
            }
        };
        if wr.write_all(&bytes).await.is_err() {
            conn.close("write failed");
            break;
        }
    }
    let _ = wr.shutdown().await;
}

async fn liveness(conn: Arc<ReplicaConnection>, cfg: TransportConfig) {
    let mut tick = tokio::time::interval(cfg.heartbeat_interval);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let limit = cfg.heartbeat_interval * (cfg.missed_heartbeats + 1);
    loop {
        tokio::select! {
            _ = tick.tick() => {}
            _ = conn.closed() => return,
        }
        let silent = conn.last_heard.lock().elapsed();
        if silent >= limit {
            conn.close("heartbeats unanswered");
            return;
        }
        if silent >= cfg.heartbeat_interval {
            conn.send(WireMessage::Heartbeat);
        }
    }
}
