//! Core of a low-latency prediction server: the container wire protocol,
//! prediction cache, adaptive batching, model selection and simulators.

pub mod batching;
pub mod cache;
pub mod config;
pub mod error;
pub mod loss;
pub mod selection;
pub mod sim;
pub mod types;
pub mod wire;

pub use error::{Error, Result};
pub use types::{Feedback, FinalPrediction, InputPayload, InputType, ModelName, Output, Query, ReplicaId};
