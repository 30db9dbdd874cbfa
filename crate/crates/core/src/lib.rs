//! Scene-memory KV cache lifecycle for streaming block-causal generation:
//! a bounded attention window split into rolling anchors, compressed tokens,
//! and a recent FIFO, plus the transition machinery that preserves, recalls,
//! and forgets scene memory as prompts change.
//!
//! The generator behind it is a small seeded linear dynamics stand-in; every
//! number is f64 and every run is deterministic given config and script.

pub mod attention;
pub mod compression;
pub mod config;
pub mod decay;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod memory;
pub mod oracles;
pub mod recall;
pub mod rope;
pub mod routing;
pub mod script;
pub mod tensor;
pub mod trace;
pub mod verify;

pub use config::{CacheLayout, EngineConfig, LayoutConfig, LAYOUT_NAMES};
pub use engine::{CacheSnapshot, Engine};
pub use error::{Error, Result};
pub use recall::{PoolFile, SceneMemoryPool};
pub use script::{ResolvedScene, SceneScript, SceneSpec};
pub use tensor::TokenGrid;
pub use trace::{TraceRecord, TRACE_SCHEMA};
