//! Per-block trace records. One JSONL line per generated block; field order
//! is fixed by struct order, so identical runs serialize byte-identically.
//! Timing is only populated when explicitly requested, keeping default
//! traces reproducible.

use serde::{Deserialize, Serialize};

pub const TRACE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub schema: u32,
    pub block: u64,
    pub scene: usize,
    /// Absolute indices of the frames generated this block.
    pub frames: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub routing: Option<RoutingInfo>,
    pub cache: CacheInfo,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compression: Option<CompressionInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayTrace>,
    pub mass: MassInfo,
    /// Scenes held by the scene memory pool after this block.
    pub pool_scenes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_us: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutingInfo {
    /// init | smooth | hard | recall.
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_star: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    pub delta: u64,
    /// True when a prompt tag forced the mode.
    pub manual: bool,
    /// True when a scene recall frame was injected into the anchor segment.
    pub injected: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheInfo {
    pub anchor_fe: usize,
    pub compressed_fe: usize,
    pub recent_fe: usize,
    pub total_fe: usize,
    /// Evicted frames waiting for the next compression pass.
    pub candidate_fe: usize,
    /// Source frame ids resident per segment (compressed: deduplicated).
    pub anchor_frames: Vec<u64>,
    pub compressed_sources: Vec<u64>,
    pub recent_frames: Vec<u64>,
    pub max_rel_index: f64,
    pub query_pos: f64,
    /// A transition offset pushed some rotation index past window-1.
    pub rope_overflow: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionInfo {
    /// Tokens scored across heads (candidates plus re-competing store).
    pub scored: usize,
    /// Tokens retained across heads.
    pub retained: usize,
    pub score_min: f64,
    pub score_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayTrace {
    /// Decaying (old-scene) token slots still alive.
    pub active: usize,
    /// Largest step count among decaying tokens.
    pub r_max: u64,
    pub min_weight: f64,
    pub max_weight: f64,
    /// Decile histogram of weights: bin i counts w in [i/10, (i+1)/10).
    pub histogram: [usize; 10],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassInfo {
    pub anchor: f64,
    pub compressed: f64,
    pub recent: f64,
    pub old: f64,
}
