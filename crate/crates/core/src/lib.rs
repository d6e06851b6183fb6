//! Core library: domain model, LLM gateway, knowledge bases, agent memory,
//! durable storage and the meeting engine.

pub mod engine;
pub mod error;
pub mod ids;
pub mod knowledge;
pub mod llm;
pub mod memory;
pub mod model;
pub mod persistence;
pub mod vector;

pub use engine::{Engine, EngineSettings, EventSink, NullSink, PreparedMeeting, WarmupReport};
pub use error::{Error, Result, Violation};
pub use ids::{Clock, IdGenerator, SteppingClock, SystemClock};
pub use persistence::Store;
