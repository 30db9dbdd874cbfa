//! Hierarchical temporal memory: the bounded active cache (anchors,
//! compressed tokens, recent window) and the bidirectional rolling-anchor
//! pool that refreshes the anchor segment.
//!
//! Budget unit is the frame-equivalent: U spatial tokens per head. The
//! in-flight block lives inside the recent window, so a fully assembled
//! context never exceeds the training window and the newest frame sits at
//! relative index total-1.

use std::collections::VecDeque;

use crate::compression::ScoredToken;
use crate::config::CacheLayout;
use crate::error::{Error, Result};
use crate::tensor::TokenGrid;

/// One generated frame's pre-rotation keys and values.
#[derive(Debug, Clone)]
pub struct FrameKV {
    pub frame_index: u64,
    pub scene_id: usize,
    pub keys: TokenGrid,
    pub values: TokenGrid,
}

/// Decay bookkeeping for a cached frame: one rate per (head, position) slot,
/// the block the rate was armed at, and which slots are still alive.
#[derive(Debug, Clone)]
pub struct FrameDecay {
    pub mu: Vec<f64>,
    pub armed_block: u64,
    pub alive: Vec<bool>,
}

impl FrameDecay {
    pub fn new(mu: Vec<f64>, armed_block: u64) -> Self {
        let n = mu.len();
        Self { mu, armed_block, alive: vec![true; n] }
    }

    /// Blocks elapsed since arming.
    #[inline]
    pub fn steps(&self, block: u64) -> u64 {
        block.saturating_sub(self.armed_block)
    }

    #[inline]
    pub fn weight(&self, slot: usize, block: u64) -> f64 {
        (-(self.steps(block) as f64) * self.mu[slot]).exp()
    }
}

#[derive(Debug, Clone)]
pub struct CachedFrame {
    pub frame: FrameKV,
    pub decay: Option<FrameDecay>,
    /// Scene recall frames are pinned: rolling eviction skips them and they
    /// are exempt from decay during their own segment.
    pub recall: bool,
}

impl CachedFrame {
    pub fn plain(frame: FrameKV) -> Self {
        Self { frame, decay: None, recall: false }
    }
}

/// Pool indices touched by update r: start u_r = (r*S) mod pool_size, span S,
/// forward when r is odd, reversed when even. All indices wrap modularly.
pub fn anchor_insert_sequence(r: u64, s: usize, pool_size: usize) -> Vec<usize> {
    debug_assert!(s >= 1 && pool_size >= 1);
    let start = (r as usize * s) % pool_size;
    let forward: Vec<usize> = (0..s).map(|i| (start + i) % pool_size).collect();
    if r % 2 == 1 {
        forward
    } else {
        forward.into_iter().rev().collect()
    }
}

/// Rolling pool of early frames. During warmup the pool copies generated
/// frames verbatim; once full, each roll emits the next alternating slice.
#[derive(Debug, Clone)]
pub struct AnchorPool {
    frames: Vec<FrameKV>,
    pool_size: usize,
    insert_size: usize,
    r: u64,
}

impl AnchorPool {
    pub fn new(pool_size: usize, insert_size: usize) -> Self {
        Self { frames: Vec::with_capacity(pool_size), pool_size, insert_size, r: 0 }
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() >= self.pool_size
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn update_counter(&self) -> u64 {
        self.r
    }

    /// Warmup intake; frames past capacity are ignored.
    pub fn absorb(&mut self, frame: &FrameKV) {
        if !self.is_full() {
            self.frames.push(frame.clone());
        }
    }

    /// One rolling update. Returns the frames to append to active anchor
    /// memory, or None while the pool is still warming up.
    pub fn roll(&mut self) -> Option<Vec<FrameKV>> {
        if !self.is_full() {
            return None;
        }
        self.r += 1;
        let idx = anchor_insert_sequence(self.r, self.insert_size, self.pool_size);
        Some(idx.into_iter().map(|i| self.frames[i].clone()).collect())
    }

    /// Drops all pooled frames and restarts the update cycle (scene cut).
    pub fn reset(&mut self) {
        self.frames.clear();
        self.r = 0;
    }
}

/// Which cache segment a context slot came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Anchor,
    Compressed,
    Recent,
}

/// One attention context entry: an unrotated key/value with the rotation
/// index and decay weight it enters attention with.
#[derive(Debug)]
pub struct ContextSlot<'a> {
    pub key: &'a [f64],
    pub value: &'a [f64],
    pub rope_index: f64,
    pub weight: f64,
    pub segment: Segment,
    /// True when the slot belongs to decaying old-scene memory.
    pub old: bool,
    pub recall: bool,
    pub source_frame: u64,
    pub spatial_pos: usize,
    pub scene_id: usize,
}

/// Assembled attention window. Slot order per head: anchors, compressed
/// tokens, recent frames. Ordinal indices cover 0..fe-1; compressed tokens
/// keep their ordinal budget slots but rotate at the in-flight block's
/// timestamp.
#[derive(Debug)]
pub struct AssembledContext<'a> {
    pub slots: Vec<Vec<ContextSlot<'a>>>,
    pub fe: usize,
    pub anchor_fe: usize,
    pub compressed_fe: usize,
    pub recent_fe: usize,
    /// Rotation index of the block being generated (its last frame).
    pub query_pos: f64,
    /// Highest rotation index emitted, query position included.
    pub max_index: f64,
    /// Set when a transition offset pushed an index past window-1.
    pub rope_overflow: bool,
}

/// The bounded active cache of one rollout.
#[derive(Debug)]
pub struct ActiveCache {
    pub(crate) layout: CacheLayout,
    heads: usize,
    spatial: usize,
    window: usize,
    block_size: usize,
    pub(crate) anchors: Vec<CachedFrame>,
    /// Per-head compressed tokens, rank order.
    pub(crate) compressed: Vec<Vec<ScoredToken>>,
    pub(crate) recent: VecDeque<CachedFrame>,
    /// Evicted recent frames awaiting a compression pass.
    pub(crate) candidates: Vec<CachedFrame>,
}

impl ActiveCache {
    pub fn new(
        layout: CacheLayout,
        heads: usize,
        spatial: usize,
        window: usize,
        block_size: usize,
    ) -> Self {
        Self {
            layout,
            heads,
            spatial,
            window,
            block_size,
            anchors: Vec::new(),
            compressed: vec![Vec::new(); heads],
            recent: VecDeque::new(),
            candidates: Vec::new(),
        }
    }

    pub fn layout(&self) -> &CacheLayout {
        &self.layout
    }

    pub fn anchor_fe(&self) -> usize {
        self.anchors.len()
    }

    pub fn compressed_fe(&self) -> usize {
        let max = self.compressed.iter().map(Vec::len).max().unwrap_or(0);
        max.div_ceil(self.spatial)
    }

    pub fn recent_fe(&self) -> usize {
        self.recent.len()
    }

    pub fn total_fe(&self) -> usize {
        self.anchor_fe() + self.compressed_fe() + self.recent_fe()
    }

    pub fn candidate_fe(&self) -> usize {
        self.candidates.len()
    }

    /// Appends a freshly generated frame to the recent window. Frames pushed
    /// past capacity evict the oldest recent frame into the candidate buffer
    /// (when the layout has a compressed segment) or drop it.
    pub fn push_frame(&mut self, frame: FrameKV) -> Result<()> {
        if let Some(last) = self.recent.back() {
            if frame.frame_index <= last.frame.frame_index {
                return Err(Error::FrameOrdering {
                    last: last.frame.frame_index,
                    got: frame.frame_index,
                });
            }
        }
        self.recent.push_back(CachedFrame::plain(frame));
        while self.recent.len() > self.layout.n_recent {
            let evicted = self.recent.pop_front().expect("nonempty");
            if self.layout.n_compressed > 0 {
                self.candidates.push(evicted);
            }
        }
        Ok(())
    }

    /// Appends rolled or sink anchors; overflow evicts the oldest unpinned
    /// anchor (rolled copies are discarded, the pool keeps the originals).
    pub fn insert_anchors(&mut self, frames: Vec<CachedFrame>) {
        for f in frames {
            self.anchors.push(f);
        }
        while self.anchors.len() > self.layout.n_anchor {
            match self.anchors.iter().position(|a| !a.recall) {
                Some(i) => {
                    self.anchors.remove(i);
                }
                // Every anchor pinned: drop the oldest pin to stay bounded.
                None => {
                    self.anchors.remove(0);
                }
            }
        }
    }

    /// Injects a scene recall frame at the head of the anchor segment so it
    /// receives the earliest relative indices.
    pub fn inject_recall(&mut self, frame: FrameKV) {
        self.anchors.insert(0, CachedFrame { frame, decay: None, recall: true });
        while self.anchors.len() > self.layout.n_anchor {
            match self.anchors.iter().position(|a| !a.recall) {
                Some(i) => {
                    self.anchors.remove(i);
                }
                None => {
                    self.anchors.pop();
                }
            }
        }
    }

    /// Clears the recent window and pending candidates (hard cut).
    pub fn flush_recent(&mut self) {
        self.recent.clear();
        self.candidates.clear();
    }

    pub fn take_candidates(&mut self) -> Vec<CachedFrame> {
        std::mem::take(&mut self.candidates)
    }

    /// Replaces the compressed store after a scoring pass.
    pub fn set_compressed(&mut self, per_head: Vec<Vec<ScoredToken>>) {
        debug_assert_eq!(per_head.len(), self.heads);
        self.compressed = per_head;
    }

    /// Removes tokens whose decay weight fell below the threshold; frames
    /// leave their segment once every slot is dead.
    pub fn prune(&mut self, block: u64, threshold: f64) {
        let drop_dead = |frames: &mut Vec<CachedFrame>| {
            frames.retain_mut(|cf| {
                let Some(decay) = cf.decay.as_mut() else { return true };
                let steps = block.saturating_sub(decay.armed_block) as f64;
                let mut any = false;
                for (slot, alive) in decay.alive.iter_mut().enumerate() {
                    if *alive && (-steps * decay.mu[slot]).exp() < threshold {
                        *alive = false;
                    }
                    any |= *alive;
                }
                any
            });
        };
        drop_dead(&mut self.anchors);
        let mut recent: Vec<CachedFrame> = self.recent.drain(..).collect();
        drop_dead(&mut recent);
        self.recent = recent.into();
        for head in &mut self.compressed {
            head.retain(|t| match t.decay {
                Some((mu, armed)) => {
                    (-(block.saturating_sub(armed) as f64) * mu).exp() >= threshold
                }
                None => true,
            });
        }
    }

    /// Builds the attention window for the block at `block` index.
    /// `transition_delta` shifts the in-flight block's rotation indices (and
    /// the borrowed compressed timestamp) at a transition block only.
    pub fn assemble(&self, block: u64, transition_delta: u64) -> Result<AssembledContext<'_>> {
        let anchor_fe = self.anchor_fe();
        let compressed_fe = self.compressed_fe();
        let recent_fe = self.recent_fe();
        let total = anchor_fe + compressed_fe + recent_fe;
        if total > self.window {
            return Err(Error::BudgetOverflow { budget: self.window, got: total });
        }
        let delta = transition_delta as f64;
        // The in-flight block is the tail of the recent window.
        let current_first = total.saturating_sub(self.block_size) as f64;
        let current_stamp = current_first + delta;
        let query_pos = (total as f64 - 1.0).max(0.0) + delta;
        let mut max_index = query_pos;

        let mut slots: Vec<Vec<ContextSlot<'_>>> = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let mut head_slots = Vec::with_capacity(total * self.spatial);
            for (ord, cf) in self.anchors.iter().enumerate() {
                push_frame_slots(&mut head_slots, cf, h, self.spatial, ord as f64, Segment::Anchor, block);
            }
            for t in &self.compressed[h] {
                let (weight, old) = match t.decay {
                    Some((mu, armed)) => {
                        ((-(block.saturating_sub(armed) as f64) * mu).exp(), true)
                    }
                    None => (1.0, false),
                };
                head_slots.push(ContextSlot {
                    key: &t.key,
                    value: &t.value,
                    rope_index: current_stamp,
                    weight,
                    segment: Segment::Compressed,
                    old,
                    recall: false,
                    source_frame: t.source_frame,
                    spatial_pos: t.spatial_pos,
                    scene_id: t.scene_id,
                });
                max_index = max_index.max(current_stamp);
            }
            let recent_base = anchor_fe + compressed_fe;
            let current_from = recent_fe.saturating_sub(self.block_size);
            for (j, cf) in self.recent.iter().enumerate() {
                let mut idx = (recent_base + j) as f64;
                if j >= current_from {
                    idx += delta;
                }
                push_frame_slots(&mut head_slots, cf, h, self.spatial, idx, Segment::Recent, block);
                max_index = max_index.max(idx);
            }
            slots.push(head_slots);
        }
        Ok(AssembledContext {
            slots,
            fe: total,
            anchor_fe,
            compressed_fe,
            recent_fe,
            query_pos,
            max_index,
            rope_overflow: max_index > (self.window as f64 - 1.0),
        })
    }
}

fn push_frame_slots<'a>(
    out: &mut Vec<ContextSlot<'a>>,
    cf: &'a CachedFrame,
    head: usize,
    spatial: usize,
    rope_index: f64,
    segment: Segment,
    block: u64,
) {
    for u in 0..spatial {
        let slot = head * spatial + u;
        let (weight, old) = match &cf.decay {
            Some(d) => {
                if !d.alive[slot] {
                    continue;
                }
                (d.weight(slot, block), true)
            }
            None => (1.0, false),
        };
        out.push(ContextSlot {
            key: cf.frame.keys.slot(head, u),
            value: cf.frame.values.slot(head, u),
            rope_index,
            weight,
            segment,
            old,
            recall: cf.recall,
            source_frame: cf.frame.frame_index,
            spatial_pos: u,
            scene_id: cf.frame.scene_id,
        });
    }
}
