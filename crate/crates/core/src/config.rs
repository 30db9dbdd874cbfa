//! Engine configuration: model shape, cache layout, and the knobs of each
//! lifecycle stage. Loadable from TOML; every section has defaults so an
//! empty file is a valid config.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: u64,
    /// Script durations given in seconds are multiplied by this to get blocks.
    pub blocks_per_second: f64,
    pub model: ModelConfig,
    pub layout: LayoutConfig,
    pub anchors: AnchorConfig,
    pub compression: CompressionConfig,
    pub recall: RecallConfig,
    pub decay: DecayConfig,
    pub routing: RoutingConfig,
    pub dynamics: DynamicsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Attention heads.
    pub heads: usize,
    /// Spatial tokens per frame.
    pub spatial: usize,
    /// Channels per head; must be even (complex pairs).
    pub d_head: usize,
    /// Frames per generation block.
    pub block_size: usize,
    /// Attention window in frame-equivalents, current block included.
    pub window: usize,
    pub rope_base: f64,
    /// Dimension of scene prompt embeddings.
    pub embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            heads: 2,
            spatial: 4,
            d_head: 8,
            block_size: 3,
            window: 21,
            rope_base: 10_000.0,
            embedding_dim: 16,
        }
    }
}

/// How the anchor segment is maintained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Bidirectional rolling refresh from a pool of early frames.
    Rolling,
    /// First frames pinned for the life of the scene (attention sink).
    Sink,
    /// No anchor segment.
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    /// One of: echo | self_forcing | inf_rope | longlive | rolling_sink |
    /// deep_forcing | custom.
    pub name: String,
    /// Frame budgets, only read when name = "custom".
    pub anchor: usize,
    pub compressed: usize,
    pub recent: usize,
    pub anchor_mode: Option<AnchorMode>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self { name: "echo".into(), anchor: 0, compressed: 0, recent: 0, anchor_mode: None }
    }
}

/// Resolved per-segment frame budgets. `recent` always hosts the in-flight
/// block, so effective layouts keep `recent >= block_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheLayout {
    pub n_anchor: usize,
    pub n_compressed: usize,
    pub n_recent: usize,
    pub anchor_mode: AnchorMode,
}

impl CacheLayout {
    pub fn total(&self) -> usize {
        self.n_anchor + self.n_compressed + self.n_recent
    }
}

pub const LAYOUT_NAMES: [&str; 6] =
    ["echo", "self_forcing", "inf_rope", "longlive", "rolling_sink", "deep_forcing"];

/// Per-name budgets as published: (anchor, compressed, recent, mode).
pub fn named_budgets(name: &str) -> Option<(usize, usize, usize, AnchorMode)> {
    Some(match name {
        "echo" => (12, 3, 6, AnchorMode::Rolling),
        "self_forcing" | "inf_rope" => (0, 0, 21, AnchorMode::None),
        "longlive" => (3, 0, 9, AnchorMode::Sink),
        "rolling_sink" => (15, 0, 6, AnchorMode::Sink),
        "deep_forcing" => (12, 9, 0, AnchorMode::Sink),
        _ => return None,
    })
}

impl LayoutConfig {
    /// Resolves to effective budgets. A layout whose trailing segment is
    /// compressed (no recent window) lends `block_size` frame-equivalents of
    /// its compressed budget to the in-flight block.
    pub fn resolve(&self, block_size: usize) -> Result<CacheLayout> {
        let (a, mut c, mut r, mut mode) = if self.name == "custom" {
            let mode = self.anchor_mode.unwrap_or(AnchorMode::Sink);
            (self.anchor, self.compressed, self.recent, mode)
        } else {
            named_budgets(&self.name)
                .ok_or_else(|| Error::Config(format!("unknown layout {:?}", self.name)))?
        };
        if r < block_size {
            let need = block_size - r;
            if c < need {
                return Err(Error::Config(format!(
                    "layout {:?} cannot host a block of {} frames",
                    self.name, block_size
                )));
            }
            c -= need;
            r += need;
        }
        if a == 0 {
            mode = AnchorMode::None;
        }
        Ok(CacheLayout { n_anchor: a, n_compressed: c, n_recent: r, anchor_mode: mode })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    /// Rolling pool capacity; also the modulus of the traversal formula.
    pub pool_size: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self { pool_size: 18 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fuse {
    Mean,
    Max,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    /// Evicted frames buffered before a scoring pass fires.
    pub candidate_region: usize,
    /// Future offsets the score is fused over.
    pub offsets: Vec<u64>,
    pub fuse: Fuse,
    /// Drift-gate sensitivity.
    pub lambda: f64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self { candidate_region: 18, offsets: vec![1, 2, 3], fuse: Fuse::Mean, lambda: 2.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecallConfig {
    /// Candidate frames fused into one scene recall frame.
    pub candidates: usize,
}

impl Default for RecallConfig {
    fn default() -> Self {
        Self { candidates: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    pub mu_min: f64,
    pub mu_max: f64,
    /// Floor added to the min-max denominator.
    pub epsilon: f64,
    /// Tokens are dropped once their weight falls below this.
    pub prune_threshold: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self { mu_min: 0.05, mu_max: 0.7, epsilon: 1e-8, prune_threshold: 1e-3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingConfig {
    pub tau_smooth: f64,
    pub tau_rec: f64,
    /// Recall offset slope, frames per scene of distance.
    pub gamma: f64,
    /// Offset applied at hard cuts; also the recall cap.
    pub delta_hard: u64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self { tau_smooth: 0.85, tau_rec: 0.85, gamma: 10.0, delta_hard: 45 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// Seeded dense maps for features, values, and queries.
    Seeded,
    /// All maps are the identity and the prompt bias is dropped; with zero
    /// noise the next features equal the attention outputs exactly.
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub map: MapKind,
    pub feedback_gain: f64,
    pub bias_scale: f64,
    pub noise_scale: f64,
    /// Attention outputs are norm-clipped here before feeding back.
    pub clip: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            map: MapKind::Seeded,
            feedback_gain: 0.9,
            bias_scale: 0.6,
            noise_scale: 0.05,
            clip: 4.0,
        }
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            blocks_per_second: 1.0,
            model: ModelConfig::default(),
            layout: LayoutConfig::default(),
            anchors: AnchorConfig::default(),
            compression: CompressionConfig::default(),
            recall: RecallConfig::default(),
            decay: DecayConfig::default(),
            routing: RoutingConfig::default(),
            dynamics: DynamicsConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.heads == 0 || m.spatial == 0 || m.d_head == 0 || m.block_size == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if m.d_head % 2 != 0 {
            return Err(Error::Config("d_head must be even".into()));
        }
        if m.window < m.block_size {
            return Err(Error::Config("window smaller than one block".into()));
        }
        if m.rope_base <= 1.0 {
            return Err(Error::Config("rope_base must exceed 1".into()));
        }
        if m.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        if self.blocks_per_second <= 0.0 {
            return Err(Error::Config("blocks_per_second must be positive".into()));
        }
        let layout = self.layout.resolve(m.block_size)?;
        if layout.total() > m.window {
            return Err(Error::Config(format!(
                "layout budget {} exceeds window {}",
                layout.total(),
                m.window
            )));
        }
        if layout.anchor_mode == AnchorMode::Rolling {
            if self.anchors.pool_size < m.block_size {
                return Err(Error::Config("anchor pool smaller than one block".into()));
            }
            if layout.n_anchor < m.block_size {
                return Err(Error::Config("rolling anchors need capacity >= block_size".into()));
            }
        }
        let c = &self.compression;
        if c.candidate_region == 0 {
            return Err(Error::Config("candidate_region must be >= 1".into()));
        }
        if c.offsets.is_empty() {
            return Err(Error::Config("offsets must be nonempty".into()));
        }
        if c.offsets.iter().any(|&o| o == 0) {
            return Err(Error::Config("offsets must be positive".into()));
        }
        if c.lambda <= 0.0 {
            return Err(Error::Config("lambda must be positive".into()));
        }
        let d = &self.decay;
        if !(d.mu_min >= 0.0 && d.mu_min <= d.mu_max) {
            return Err(Error::Config("decay bounds need 0 <= mu_min <= mu_max".into()));
        }
        if d.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        let r = &self.routing;
        if !(-1.0..=1.0).contains(&r.tau_smooth) || !(-1.0..=1.0).contains(&r.tau_rec) {
            return Err(Error::Config("thresholds must lie in [-1, 1]".into()));
        }
        if r.gamma <= 0.0 {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if self.recall.candidates == 0 {
            return Err(Error::Config("recall candidates must be >= 1".into()));
        }
        if self.dynamics.clip <= 0.0 {
            return Err(Error::Config("clip must be positive".into()));
        }
        Ok(())
    }

    pub fn layout_resolved(&self) -> CacheLayout {
        // validate() has run; resolve cannot fail afterwards.
        self.layout.resolve(self.model.block_size).expect("validated layout")
    }

    /// Compressed-store token budget per head.
    pub fn compressed_token_budget(&self) -> usize {
        self.layout_resolved().n_compressed * self.model.spatial
    }
}
