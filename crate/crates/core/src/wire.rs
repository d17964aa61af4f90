//! Binary framing between the serving core and model containers.
//!
//! Every message is an 8-byte header (`msg_type: u32`, `payload_len: u32`, both
//! little-endian) followed by `payload_len` payload bytes. All integers inside
//! payloads are little-endian `u32`; strings and inputs are `u32` length-prefixed.
//!
//! | type | message          | payload                                                      |
//! |------|------------------|--------------------------------------------------------------|
//! | 1    | Handshake        | name, version, input type tag                                |
//! | 2    | PredictRequest   | request id, batch size, per input: byte len + element bytes  |
//! | 3    | PredictResponse  | request id, batch size, per input: count + strings           |
//! | 4    | Heartbeat        | empty                                                        |
//! | 5    | Error            | request id, message string                                   |

use std::io::{self, Read};

use thiserror::Error;

use crate::error::Error as CoreError;
use crate::types::{InputPayload, InputType};

pub const HEADER_LEN: usize = 8;
/// Hard cap on payload size (64 MiB).
pub const MAX_PAYLOAD: usize = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("payload of {0} bytes exceeds the 64 MiB cap")]
    PayloadTooLarge(usize),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("connection closed")]
    ConnectionClosed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<WireError> for CoreError {
    fn from(e: WireError) -> Self {
        match e {
            WireError::ConnectionClosed => CoreError::ConnectionClosed,
            WireError::Io(e) if is_disconnect(&e) => CoreError::ConnectionClosed,
            other => CoreError::Protocol(other.to_string()),
        }
    }
}

fn is_disconnect(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::UnexpectedEof | io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted | io::ErrorKind::BrokenPipe
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum MessageKind {
    Handshake = 1,
    PredictRequest = 2,
    PredictResponse = 3,
    Heartbeat = 4,
    Error = 5,
}

impl MessageKind {
    pub fn from_u32(v: u32) -> Option<Self> {
        Some(match v {
            1 => MessageKind::Handshake,
            2 => MessageKind::PredictRequest,
            3 => MessageKind::PredictResponse,
            4 => MessageKind::Heartbeat,
            5 => MessageKind::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handshake {
    pub model_name: String,
    pub model_version: u32,
    pub input_type: InputType,
}

/// Inputs are kept as raw element bytes; interpret them with the handshake's
/// input type via [`PredictRequest::decode_inputs`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictRequest {
    pub request_id: u32,
    pub inputs: Vec<Vec<u8>>,
}

impl PredictRequest {
    pub fn from_inputs<'a>(request_id: u32, inputs: impl IntoIterator<Item = &'a InputPayload>) -> Self {
        PredictRequest { request_id, inputs: inputs.into_iter().map(InputPayload::to_le_bytes).collect() }
    }

    pub fn decode_inputs(&self, ty: InputType) -> Result<Vec<InputPayload>, CoreError> {
        self.inputs.iter().map(|b| InputPayload::from_le_bytes(ty, b)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictResponse {
    pub request_id: u32,
    pub outputs: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorMessage {
    pub request_id: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Handshake(Handshake),
    PredictRequest(PredictRequest),
    PredictResponse(PredictResponse),
    Heartbeat,
    Error(ErrorMessage),
}

impl WireMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            WireMessage::Handshake(_) => MessageKind::Handshake,
            WireMessage::PredictRequest(_) => MessageKind::PredictRequest,
            WireMessage::PredictResponse(_) => MessageKind::PredictResponse,
            WireMessage::Heartbeat => MessageKind::Heartbeat,
            WireMessage::Error(_) => MessageKind::Error,
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) -> Result<(), WireError> {
        let len = u32::try_from(b.len()).map_err(|_| WireError::PayloadTooLarge(b.len()))?;
        self.u32(len);
        self.0.extend_from_slice(b);
        Ok(())
    }

    fn count(&mut self, n: usize) -> Result<(), WireError> {
        let n = u32::try_from(n).map_err(|_| WireError::PayloadTooLarge(n))?;
        self.u32(n);
        Ok(())
    }
}

fn encode_payload(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    let mut w = Writer(Vec::new());
    match msg {
        WireMessage::Handshake(h) => {
            w.bytes(h.model_name.as_bytes())?;
            w.u32(h.model_version);
            w.u32(h.input_type.tag());
        }
        WireMessage::PredictRequest(r) => {
            w.u32(r.request_id);
            w.count(r.inputs.len())?;
            for input in &r.inputs {
                w.bytes(input)?;
            }
        }
        WireMessage::PredictResponse(r) => {
            w.u32(r.request_id);
            w.count(r.outputs.len())?;
            for outs in &r.outputs {
                w.count(outs.len())?;
                for o in outs {
                    w.bytes(o.as_bytes())?;
                }
            }
        }
        WireMessage::Heartbeat => {}
        WireMessage::Error(e) => {
            w.u32(e.request_id);
            w.bytes(e.message.as_bytes())?;
        }
    }
    Ok(w.0)
}

/// Encodes header and payload into one buffer.
pub fn encode_message(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    let payload = encode_payload(msg)?;
    if payload.len() > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(msg.kind() as u32).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses and validates a header, returning the message kind and payload length.
pub fn decode_header(header: &[u8; HEADER_LEN]) -> Result<(MessageKind, usize), WireError> {
    let raw_kind = u32::from_le_bytes(header[0..4].try_into().unwrap());
    let len = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let kind = MessageKind::from_u32(raw_kind).ok_or_else(|| WireError::Protocol(format!("unknown message type {raw_kind}")))?;
    if len > MAX_PAYLOAD {
        return Err(WireError::Protocol(format!("payload length {len} exceeds cap")));
    }
    Ok((kind, len))
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Protocol("payload truncated".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String, WireError> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| WireError::Protocol("invalid UTF-8 string".into()))
    }

    /// A count of items each at least `min_item` bytes long; bounded by what
    /// the remaining payload could hold so hostile counts cannot over-allocate.
    fn count(&mut self, min_item: usize) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item) > self.buf.len() {
            return Err(WireError::Protocol(format!("count {n} exceeds remaining payload")));
        }
        Ok(n)
    }

    fn finish(self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::Protocol(format!("{} trailing payload bytes", self.buf.len())))
        }
    }
}

/// Decodes a payload of a known message kind.
pub fn decode_payload(kind: MessageKind, payload: &[u8]) -> Result<WireMessage, WireError> {
    let mut r = Reader { buf: payload };
    let msg = match kind {
        MessageKind::Handshake => {
            let model_name = r.string()?;
            if model_name.is_empty() {
                return Err(WireError::Protocol("handshake with empty model name".into()));
            }
            let model_version = r.u32()?;
            let tag = r.u32()?;
            let input_type = InputType::from_tag(tag).ok_or_else(|| WireError::Protocol(format!("unknown input type tag {tag}")))?;
            WireMessage::Handshake(Handshake { model_name, model_version, input_type })
        }
        MessageKind::PredictRequest => {
            let request_id = r.u32()?;
            let n = r.count(4)?;
            if n == 0 {
                return Err(WireError::Protocol("empty batch".into()));
            }
            let inputs = (0..n).map(|_| r.bytes().map(<[u8]>::to_vec)).collect::<Result<_, _>>()?;
            WireMessage::PredictRequest(PredictRequest { request_id, inputs })
        }
        MessageKind::PredictResponse => {
            let request_id = r.u32()?;
            let n = r.count(4)?;
            let mut outputs = Vec::with_capacity(n);
            for _ in 0..n {
                let m = r.count(4)?;
                outputs.push((0..m).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?);
            }
            WireMessage::PredictResponse(PredictResponse { request_id, outputs })
        }
        MessageKind::Heartbeat => WireMessage::Heartbeat,
        MessageKind::Error => {
            let request_id = r.u32()?;
            let message = r.string()?;
            WireMessage::Error(ErrorMessage { request_id, message })
        }
    };
    r.finish()?;
    Ok(msg)
}

/// Reads exactly one message (8 + payload_len bytes) from a blocking source.
pub fn decode_message<R: Read>(src: &mut R) -> Result<WireMessage, WireError> {
    let mut header = [0u8; HEADER_LEN];
    read_full(src, &mut header)?;
    let (kind, len) = decode_header(&header)?;
    let mut payload = vec![0u8; len];
    read_full(src, &mut payload)?;
    decode_payload(kind, &payload)
}

fn read_full<R: Read>(src: &mut R, buf: &mut [u8]) -> Result<(), WireError> {
    src.read_exact(buf).map_err(|e| if is_disconnect(&e) { WireError::ConnectionClosed } else { WireError::Io(e) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn heartbeat_bytes() {
        let b = encode_message(&WireMessage::Heartbeat).unwrap();
        assert_eq!(b, [4, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(decode_message(&mut &b[..]).unwrap(), WireMessage::Heartbeat);
    }

    #[test]
    fn predict_request_bytes() {
        let req = PredictRequest::from_inputs(1, [&InputPayload::Doubles(vec![1.0])]);
        let b = encode_message(&WireMessage::PredictRequest(req)).unwrap();
        let mut expected = vec![2, 0, 0, 0, 20, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 8, 0, 0, 0];
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        assert_eq!(b, expected);
    }

    #[test]
    fn unknown_type_rejected() {
        let b = [99, 0, 0, 0, 0, 0, 0, 0];
        assert!(matches!(decode_message(&mut &b[..]), Err(WireError::Protocol(_))));
    }

    #[test]
    fn oversized_payload_rejected() {
        let len = (MAX_PAYLOAD as u32 + 1).to_le_bytes();
        let b = [4, 0, 0, 0, len[0], len[1], len[2], len[3]];
        assert!(matches!(decode_message(&mut &b[..]), Err(WireError::Protocol(_))));
    }

    #[test]
    fn oversized_encode_rejected() {
        let req = PredictRequest { request_id: 0, inputs: vec![vec![0u8; MAX_PAYLOAD]] };
        assert!(matches!(encode_message(&WireMessage::PredictRequest(req)), Err(WireError::PayloadTooLarge(_))));
    }

    #[test]
    fn truncated_stream_is_connection_closed() {
        let b = encode_message(&WireMessage::Error(ErrorMessage { request_id: 3, message: "boom".into() })).unwrap();
        for cut in [0, 4, HEADER_LEN, b.len() - 1] {
            assert!(matches!(decode_message(&mut &b[..cut]), Err(WireError::ConnectionClosed)));
        }
    }

    #[test]
    fn decode_consumes_exactly_one_message() {
        let mut b = encode_message(&WireMessage::Heartbeat).unwrap();
        b.extend(encode_message(&WireMessage::Error(ErrorMessage { request_id: 1, message: "x".into() })).unwrap());
        let mut src = &b[..];
        assert_eq!(decode_message(&mut src).unwrap(), WireMessage::Heartbeat);
        assert_eq!(src.len(), b.len() - HEADER_LEN);
        assert!(matches!(decode_message(&mut src).unwrap(), WireMessage::Error(_)));
        assert!(src.is_empty());
    }

    #[test]
    fn hostile_counts_rejected() {
        // PredictResponse claiming 2^32-1 outputs in a 12-byte payload.
        let mut b = vec![3, 0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 0];
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_message(&mut &b[..]), Err(WireError::Protocol(_))));
    }

    pub(crate) fn arb_message() -> impl Strategy<Value = WireMessage> {
        let ty = prop::sample::select(InputType::ALL.to_vec());
        prop_oneof![
            ("[a-z]{1,12}", any::<u32>(), ty).prop_map(|(model_name, model_version, input_type)| {
                WireMessage::Handshake(Handshake { model_name, model_version, input_type })
            }),
            (any::<u32>(), prop::collection::vec(prop::collection::vec(any::<u8>(), 0..24), 1..6))
                .prop_map(|(request_id, inputs)| WireMessage::PredictRequest(PredictRequest { request_id, inputs })),
            (any::<u32>(), prop::collection::vec(prop::collection::vec(".{0,8}", 0..3), 0..6))
                .prop_map(|(request_id, outputs)| WireMessage::PredictResponse(PredictResponse { request_id, outputs })),
            Just(WireMessage::Heartbeat),
            (any::<u32>(), ".{0,16}").prop_map(|(request_id, message)| WireMessage::Error(ErrorMessage { request_id, message })),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(msg in arb_message()) {
            let bytes = encode_message(&msg).unwrap();
            let declared = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
            prop_assert_eq!(declared + HEADER_LEN, bytes.len());
            prop_assert_eq!(decode_message(&mut &bytes[..]).unwrap(), msg);
        }

        #[test]
        fn garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_message(&mut &bytes[..]);
        }
    }
}
