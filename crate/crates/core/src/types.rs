//! Domain value types shared by every layer of the serving stack.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::error::Error;

/// Element kind of an application's inputs. The tag is fixed per application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputType {
    Bytes,
    Ints,
    Floats,
    Doubles,
    String,
}

impl InputType {
    pub const ALL: [InputType; 5] = [InputType::Bytes, InputType::Ints, InputType::Floats, InputType::Doubles, InputType::String];

    /// Wire tag used in handshakes.
    pub fn tag(self) -> u32 {
        match self {
            InputType::Bytes => 0,
            InputType::Ints => 1,
            InputType::Floats => 2,
            InputType::Doubles => 3,
            InputType::String => 4,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.tag() == tag)
    }

    /// Size in bytes of one encoded element.
    pub fn element_width(self) -> usize {
        match self {
            InputType::Bytes | InputType::String => 1,
            InputType::Ints | InputType::Floats => 4,
            InputType::Doubles => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputType::Bytes => "bytes",
            InputType::Ints => "ints",
            InputType::Floats => "floats",
            InputType::Doubles => "doubles",
            InputType::String => "string",
        }
    }
}

impl fmt::Display for InputType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bytes" => Ok(InputType::Bytes),
            "ints" => Ok(InputType::Ints),
            "floats" => Ok(InputType::Floats),
            "doubles" => Ok(InputType::Doubles),
            "string" | "strings" => Ok(InputType::String),
            other => Err(Error::MalformedInput(format!("unknown input type `{other}`"))),
        }
    }
}

/// A typed, non-empty input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "lowercase")]
pub enum InputPayload {
    Bytes(Vec<u8>),
    Ints(Vec<i32>),
    Floats(Vec<f32>),
    Doubles(Vec<f64>),
    String(String),
}

impl InputPayload {
    pub fn input_type(&self) -> InputType {
        match self {
            InputPayload::Bytes(_) => InputType::Bytes,
            InputPayload::Ints(_) => InputType::Ints,
            InputPayload::Floats(_) => InputType::Floats,
            InputPayload::Doubles(_) => InputType::Doubles,
            InputPayload::String(_) => InputType::String,
        }
    }

    /// Number of elements (bytes for `Bytes` and `String`).
    pub fn len(&self) -> usize {
        match self {
            InputPayload::Bytes(v) => v.len(),
            InputPayload::Ints(v) => v.len(),
            InputPayload::Floats(v) => v.len(),
            InputPayload::Doubles(v) => v.len(),
            InputPayload::String(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks the payload against an application's declared input type.
    pub fn validate(&self, expected: InputType) -> Result<(), Error> {
        if self.input_type() != expected {
            return Err(Error::InputTypeMismatch { expected, actual: self.input_type() });
        }
        if self.is_empty() {
            return Err(Error::MalformedInput("input payload is empty".into()));
        }
        Ok(())
    }

    /// Raw little-endian element bytes, as carried on the wire.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            InputPayload::Bytes(v) => v.clone(),
            InputPayload::String(s) => s.as_bytes().to_vec(),
            InputPayload::Ints(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            InputPayload::Floats(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            InputPayload::Doubles(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(ty: InputType, bytes: &[u8]) -> Result<Self, Error> {
        let width = ty.element_width();
        if !bytes.len().is_multiple_of(width) {
            return Err(Error::MalformedInput(format!("{} input of {} bytes is not a multiple of element width {width}", ty, bytes.len())));
        }
        Ok(match ty {
            InputType::Bytes => InputPayload::Bytes(bytes.to_vec()),
            InputType::String => {
                InputPayload::String(String::from_utf8(bytes.to_vec()).map_err(|e| Error::MalformedInput(format!("string input: {e}")))?)
            }
            InputType::Ints => InputPayload::Ints(bytes.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
            InputType::Floats => InputPayload::Floats(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            InputType::Doubles => InputPayload::Doubles(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        })
    }

    /// Human-readable rendering; the no-op container echoes this.
    pub fn render(&self) -> String {
        fn join<T: fmt::Display>(v: &[T]) -> String {
            let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            format!("[{}]", parts.join(","))
        }
        match self {
            InputPayload::Bytes(v) => String::from_utf8_lossy(v).into_owned(),
            InputPayload::String(s) => s.clone(),
            InputPayload::Ints(v) => join(v),
            InputPayload::Floats(v) => join(v),
            InputPayload::Doubles(v) => join(v),
        }
    }
}

/// Name of a deployed model. Cheap to clone.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelName(Arc<str>);

impl ModelName {
    pub fn new(name: impl AsRef<str>) -> Self {
        ModelName(Arc::from(name.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModelName {
    fn from(s: &str) -> Self {
        ModelName::new(s)
    }
}

impl From<String> for ModelName {
    fn from(s: String) -> Self {
        ModelName(Arc::from(s))
    }
}

/// Identifies one connected container replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReplicaId(pub u64);

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "replica-{}", self.0)
    }
}

/// A model output. The serving core treats the string as opaque; a numeric
/// reading is cached when it parses as a finite decimal.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    value: String,
    parsed_scalar: Option<f64>,
}

impl Output {
    pub fn new(value: impl Into<String>) -> Self {
        let value = value.into();
        let parsed_scalar = value.trim().parse::<f64>().ok().filter(|x| x.is_finite());
        Output { value, parsed_scalar }
    }

    /// Renders a scalar with 17 significant digits, which round-trips any f64.
    pub fn from_scalar(x: f64) -> Self {
        Output { value: format_sig17(x), parsed_scalar: Some(x) }
    }

    pub fn value(&self) -> &str {
        &self.value
    }

    pub fn parsed_scalar(&self) -> Option<f64> {
        self.parsed_scalar
    }
}

impl fmt::Display for Output {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.value)
    }
}

impl From<&str> for Output {
    fn from(s: &str) -> Self {
        Output::new(s)
    }
}

/// `%.17g`-style formatting: shortest of fixed or exponent notation with
/// trailing zeros removed.
pub fn format_sig17(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One prediction request as seen by the selection layer.
#[derive(Debug, Clone)]
pub struct Query {
    pub app: String,
    pub context_id: String,
    pub input: InputPayload,
    pub recv_time: Instant,
    pub deadline: Instant,
}

impl Query {
    pub fn new(app: impl Into<String>, context_id: impl Into<String>, input: InputPayload, slo: Duration) -> Result<Self, Error> {
        if slo.is_zero() {
            return Err(Error::InvalidArgument("slo must be positive".into()));
        }
        let recv_time = Instant::now();
        Ok(Query { app: app.into(), context_id: context_id.into(), input, recv_time, deadline: recv_time + slo })
    }

    pub fn slo(&self) -> Duration {
        self.deadline - self.recv_time
    }
}

/// A ground-truth label for a previously seen input.
#[derive(Debug, Clone)]
pub struct Feedback {
    pub app: String,
    pub context_id: String,
    pub input: InputPayload,
    pub label: Output,
}

/// The answer handed back to the application.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalPrediction {
    pub output: Output,
    pub confidence: f64,
    pub models_used: u32,
    pub models_missing: u32,
    pub is_default: bool,
}

impl FinalPrediction {
    pub fn default_output(default: &Output, selected: usize) -> Self {
        FinalPrediction { output: default.clone(), confidence: 0.0, models_used: 0, models_missing: selected as u32, is_default: true }
    }
}
