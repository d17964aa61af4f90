//! Reference model containers speaking the wire protocol over blocking TCP.
//!
//! These dial the serving core, register with a handshake, and answer
//! prediction batches until stopped, reconnecting with exponential backoff.

use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;
use predserve_core::sim::{parse_synthetic_input, SyntheticModelSpec};
use predserve_core::wire::{
    decode_header, decode_payload, encode_message, ErrorMessage, Handshake, PredictResponse, WireError, WireMessage, HEADER_LEN,
};
use predserve_core::{InputPayload, InputType};
use rand::rngs::StdRng;
use rand::SeedableRng;

pub const BACKOFF_BASE: Duration = Duration::from_millis(100);
pub const BACKOFF_CAP: Duration = Duration::from_secs(5);

/// The batch prediction interface: one list of outputs per input.
pub trait ContainerModel: Send {
    fn pred_batch(&mut self, inputs: &[InputPayload]) -> Result<Vec<Vec<String>>, String>;
}

/// Echoes each input back as a string.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoopModel;

impl ContainerModel for NoopModel {
    fn pred_batch(&mut self, inputs: &[InputPayload]) -> Result<Vec<Vec<String>>, String> {
        Ok(inputs.iter().map(|x| vec![x.render()]).collect())
    }
}

/// `"1"` iff `w·x + b > 0`.
#[derive(Debug, Clone)]
pub struct LinearThreshold {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearThreshold {
    pub fn classify(&self, x: &[f64]) -> Result<&'static str, String> {
        if x.len() != self.weights.len() {
            return Err(format!("dimension mismatch: expected {}, got {}", self.weights.len(), x.len()));
        }
        let z: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias;
        Ok(if z > 0.0 { "1" } else { "0" })
    }
}

fn as_f64s(x: &InputPayload) -> Result<Vec<f64>, String> {
    match x {
        InputPayload::Doubles(v) => Ok(v.clone()),
        InputPayload::Floats(v) => Ok(v.iter().map(|&f| f as f64).collect()),
        InputPayload::Ints(v) => Ok(v.iter().map(|&i| i as f64).collect()),
        other => Err(format!("linear model needs numeric input, got {}", other.input_type())),
    }
}

impl ContainerModel for LinearThreshold {
    fn pred_batch(&mut self, inputs: &[InputPayload]) -> Result<Vec<Vec<String>>, String> {
        inputs.iter().map(|x| Ok(vec![self.classify(&as_f64s(x)?)?.to_string()])).collect()
    }
}

/// Sleeps per its latency profile and labels synthetic inputs per its error
/// schedule.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    spec: SyntheticModelSpec,
    rng: StdRng,
}

impl SyntheticModel {
    pub fn new(spec: SyntheticModelSpec) -> Self {
        let rng = StdRng::seed_from_u64(spec.seed ^ 0x5eed);
        SyntheticModel { spec, rng }
    }
}

impl ContainerModel for SyntheticModel {
    fn pred_batch(&mut self, inputs: &[InputPayload]) -> Result<Vec<Vec<String>>, String> {
        let out = inputs
            .iter()
            .map(|x| {
                let (q, truth) = parse_synthetic_input(x).ok_or("input is not a synthetic query")?;
                Ok(vec![self.spec.predict_label(q, truth).to_string()])
            })
            .collect::<Result<Vec<_>, String>>()?;
        std::thread::sleep(self.spec.batch_latency(inputs.len(), &mut self.rng));
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ContainerOptions {
    pub core_addr: SocketAddr,
    pub name: String,
    pub version: u32,
    pub input_type: InputType,
}

#[derive(Default)]
struct Shared {
    stop: AtomicBool,
    stream: Mutex<Option<TcpStream>>,
    connects: AtomicU64,
    batches: AtomicU64,
}

/// A container running on its own thread.
pub struct ContainerHandle {
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
}

impl ContainerHandle {
    /// Stops the container and closes its connection.
    pub fn kill(mut self) {
        self.stop();
    }

    /// Drops the current connection; the container reconnects after backoff.
    pub fn drop_connection(&self) {
        if let Some(s) = self.shared.stream.lock().as_ref() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }

    /// Successful handshakes so far.
    pub fn connects(&self) -> u64 {
        self.shared.connects.load(Ordering::Relaxed)
    }

    /// Batches answered so far.
    pub fn batches(&self) -> u64 {
        self.shared.batches.load(Ordering::Relaxed)
    }

    fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        self.drop_connection();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ContainerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn spawn_container(model: Box<dyn ContainerModel>, opts: ContainerOptions) -> ContainerHandle {
    let shared = Arc::new(Shared::default());
    let s = shared.clone();
    let thread = std::thread::Builder::new()
        .name(format!("container-{}", opts.name))
        .spawn(move || serve(model, &opts, &s))
        .expect("spawn container thread");
    ContainerHandle { shared, thread: Some(thread) }
}

/// Serves on the calling thread until the process exits.
pub fn serve_forever(model: Box<dyn ContainerModel>, opts: &ContainerOptions) {
    serve(model, opts, &Shared::default())
}

fn serve(mut model: Box<dyn ContainerModel>, opts: &ContainerOptions, shared: &Shared) {
    let mut backoff = BACKOFF_BASE;
    while !shared.stop.load(Ordering::Relaxed) {
        match TcpStream::connect_timeout(&opts.core_addr, Duration::from_secs(1)) {
            Ok(stream) => {
                backoff = BACKOFF_BASE;
                match session(&mut *model, opts, shared, stream) {
                    Ok(()) => {}
                    Err(e) => tracing::debug!(model = %opts.name, error = %e, "container session ended"),
                }
            }
            Err(e) => {
                tracing::debug!(model = %opts.name, error = %e, "connect failed");
            }
        }
        *shared.stream.lock() = None;
        if shared.stop.load(Ordering::Relaxed) {
            break;
        }
        sleep_unless_stopped(backoff, shared);
        backoff = (backoff * 2).min(BACKOFF_CAP);
    }
}

fn sleep_unless_stopped(d: Duration, shared: &Shared) {
    let step = Duration::from_millis(10);
    let mut left = d;
    while !left.is_zero() && !shared.stop.load(Ordering::Relaxed) {
        let s = left.min(step);
        std::thread::sleep(s);
        left -= s;
    }
}

fn session(model: &mut dyn ContainerModel, opts: &ContainerOptions, shared: &Shared, stream: TcpStream) -> Result<(), WireError> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(50)))?;
    *shared.stream.lock() = Some(stream.try_clone()?);
    if shared.stop.load(Ordering::Relaxed) {
        return Ok(());
    }
    let mut rd = stream.try_clone()?;
    let mut wr = stream;
    let hs = WireMessage::Handshake(Handshake { model_name: opts.name.clone(), model_version: opts.version, input_type: opts.input_type });
    wr.write_all(&encode_message(&hs)?)?;
    shared.connects.fetch_add(1, Ordering::Relaxed);
    loop {
        let msg = read_message(&mut rd, shared)?;
        let reply = match msg {
            WireMessage::Heartbeat => WireMessage::Heartbeat,
            WireMessage::PredictRequest(req) => {
                let result = req.decode_inputs(opts.input_type).map_err(|e| e.to_string()).and_then(|inputs| {
                    let out = model.pred_batch(&inputs)?;
                    if out.len() != inputs.len() {
                        return Err(format!("model returned {} outputs for {} inputs", out.len(), inputs.len()));
                    }
                    Ok(out)
                });
                shared.batches.fetch_add(1, Ordering::Relaxed);
                match result {
                    Ok(outputs) => WireMessage::PredictResponse(PredictResponse { request_id: req.request_id, outputs }),
                    Err(message) => WireMessage::Error(ErrorMessage { request_id: req.request_id, message }),
                }
            }
            other => return Err(WireError::Protocol(format!("unexpected {:?} from core", other.kind()))),
        };
        wr.write_all(&encode_message(&reply)?)?;
    }
}

fn read_message(r: &mut TcpStream, shared: &Shared) -> Result<WireMessage, WireError> {
    let mut header = [0u8; HEADER_LEN];
    read_full(r, &mut header, shared)?;
    let (kind, len) = decode_header(&header)?;
    let mut payload = vec![0u8; len];
    read_full(r, &mut payload, shared)?;
    decode_payload(kind, &payload)
}

// read_exact would lose partial reads on a timeout, so loop by hand.
fn read_full(r: &mut TcpStream, buf: &mut [u8], shared: &Shared) -> Result<(), WireError> {
    let mut got = 0;
    while got < buf.len() {
        if shared.stop.load(Ordering::Relaxed) {
            return Err(WireError::ConnectionClosed);
        }
        match r.read(&mut buf[got..]) {
            Ok(0) => return Err(WireError::ConnectionClosed),
            Ok(n) => got += n,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_threshold_examples() {
        let m = LinearThreshold { weights: vec![1.0, -1.0], bias: 0.0 };
        assert_eq!(m.classify(&[2.0, 1.0]).unwrap(), "1");
        assert_eq!(m.classify(&[1.0, 2.0]).unwrap(), "0");
        assert!(m.classify(&[1.0]).is_err());
    }

    #[test]
    fn noop_echoes() {
        let out = NoopModel.pred_batch(&[InputPayload::Bytes(b"abc".to_vec())]).unwrap();
        assert_eq!(out, vec![vec!["abc".to_string()]]);
    }

    #[test]
    fn linear_dimension_mismatch_fails_the_batch() {
        let mut m = LinearThreshold { weights: vec![1.0, 1.0], bias: 0.0 };
        assert!(m.pred_batch(&[InputPayload::Doubles(vec![1.0, 1.0]), InputPayload::Doubles(vec![1.0])]).is_err());
    }
}
