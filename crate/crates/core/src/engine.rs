//! The streaming rollout engine. Each step generates one block, pushes it
//! through the cache lifecycle (anchor rolling, compression of evicted
//! frames, decay of old-scene memory), attends over the assembled window,
//! and feeds the outputs back into the synthetic dynamics.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::attention::attend;
use crate::compression::{
    compress, drift_gate, score_candidates, CalibrationStats, CandidateToken, ScoredToken,
};
use crate::config::{AnchorMode, CacheLayout, EngineConfig};
use crate::decay;
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::memory::{ActiveCache, AnchorPool, CachedFrame, FrameDecay, FrameKV};
use crate::recall::{fuse, select_candidates, SceneCenters, SceneMemoryPool};
use crate::rope::{frequencies, RopeConfig};
use crate::routing::{manual_recall_target, route, rope_offset, Mode};
use crate::script::ResolvedScene;
use crate::tensor::{cosine, TokenGrid};
use crate::trace::{
    CacheInfo, CompressionInfo, DecayTrace, MassInfo, RoutingInfo, TraceRecord, TRACE_SCHEMA,
};

/// Normalization environment of the most recent transition, kept so frames
/// that roll in later (old pool content) decay on the same scale and clock.
#[derive(Debug)]
struct DecayEnv {
    armed_block: u64,
    reference: TokenGrid,
    min_d: f64,
    max_d: f64,
}

/// Serializable view of the cache for the dump-cache command.
#[derive(Debug, Serialize, Deserialize)]
pub struct CacheSnapshot {
    pub block: u64,
    pub total_fe: usize,
    pub frames: Vec<SnapshotFrame>,
    pub compressed: Vec<SnapshotToken>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SnapshotFrame {
    pub segment: String,
    pub ordinal: usize,
    pub frame_index: u64,
    pub scene_id: usize,
    pub recall: bool,
    pub decaying: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SnapshotToken {
    pub head: usize,
    pub source_frame: u64,
    pub spatial_pos: usize,
    pub scene_id: usize,
    pub score: f64,
    pub weight: f64,
}

pub struct Engine {
    cfg: EngineConfig,
    layout: CacheLayout,
    freqs: Vec<f64>,
    scenes: Vec<ResolvedScene>,
    scene_starts: Vec<u64>,
    total_blocks: u64,
    block: u64,
    frames_generated: u64,
    cache: ActiveCache,
    anchor_pool: AnchorPool,
    scene_pool: SceneMemoryPool,
    calib: CalibrationStats,
    recent_queries: VecDeque<TokenGrid>,
    dynamics: Dynamics,
    prev_outputs: TokenGrid,
    current_scene: usize,
    scene_frames: Vec<FrameKV>,
    scene_centers: SceneCenters,
    scene_key_sums: TokenGrid,
    scene_key_count: u64,
    /// Per finished scene: mean key grid, for recall fidelity accounting.
    scene_key_means: BTreeMap<usize, TokenGrid>,
    decay_env: Option<DecayEnv>,
    arm_decay_pending: bool,
}

impl Engine {
    pub fn new(cfg: EngineConfig, scenes: Vec<ResolvedScene>) -> Result<Self> {
        cfg.validate()?;
        if scenes.is_empty() {
            return Err(Error::Script("script has no scenes".into()));
        }
        let m = &cfg.model;
        let layout = cfg.layout_resolved();
        let rope = RopeConfig::from_model(m);
        let freqs = frequencies(&rope);
        let mut scene_starts = Vec::with_capacity(scenes.len());
        let mut acc = 0u64;
        for s in &scenes {
            scene_starts.push(acc);
            acc += s.blocks;
        }
        let cache = ActiveCache::new(layout, m.heads, m.spatial, m.window, m.block_size);
        let dynamics = Dynamics::new(m, &cfg.dynamics, cfg.seed);
        let query_window = layout.n_recent.div_ceil(m.block_size).max(1);
        Ok(Self {
            layout,
            freqs,
            scene_starts,
            total_blocks: acc,
            block: 0,
            frames_generated: 0,
            cache,
            anchor_pool: AnchorPool::new(cfg.anchors.pool_size, m.block_size),
            scene_pool: SceneMemoryPool::new(),
            calib: CalibrationStats::new(m.heads, m.d_head),
            recent_queries: VecDeque::with_capacity(query_window + 1),
            dynamics,
            prev_outputs: TokenGrid::zeros(m.heads, m.spatial, m.d_head),
            current_scene: 0,
            scene_frames: Vec::new(),
            scene_centers: SceneCenters::new(m.heads, m.spatial, m.d_head),
            scene_key_sums: TokenGrid::zeros(m.heads, m.spatial, m.d_head),
            scene_key_count: 0,
            scene_key_means: BTreeMap::new(),
            decay_env: None,
            arm_decay_pending: false,
            scenes,
            cfg,
        })
    }

    /// Preloads the scene memory pool (rollout resume).
    pub fn preload_pool(&mut self, pool: SceneMemoryPool) {
        self.scene_pool = pool;
    }

    pub fn total_blocks(&self) -> u64 {
        self.total_blocks
    }

    pub fn finished(&self) -> bool {
        self.block >= self.total_blocks
    }

    pub fn scene_pool(&self) -> &SceneMemoryPool {
        &self.scene_pool
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    fn scene_of(&self, block: u64) -> usize {
        let mut scene = 0;
        for (i, &start) in self.scene_starts.iter().enumerate() {
            if block >= start {
                scene = i;
            } else {
                break;
            }
        }
        scene
    }

    /// Mean cosine between stored recall frames and their scene's mean keys,
    /// over scenes with both recorded. None when no recall frame exists.
    pub fn recall_fidelity(&self) -> Option<f64> {
        let m = &self.cfg.model;
        let mut total = 0.0;
        let mut scenes = 0usize;
        for sid in self.scene_pool.scene_ids() {
            let Some(mean) = self.scene_key_means.get(&sid) else { continue };
            let rec = self.scene_pool.retrieve(sid).expect("listed id");
            let mut acc = 0.0;
            for h in 0..m.heads {
                for u in 0..m.spatial {
                    acc += cosine(rec.k_rec.slot(h, u), mean.slot(h, u));
                }
            }
            total += acc / (m.heads * m.spatial) as f64;
            scenes += 1;
        }
        (scenes > 0).then(|| total / scenes as f64)
    }

    /// Runs every remaining block, handing each record to the sink.
    pub fn run(&mut self, mut sink: impl FnMut(&TraceRecord)) -> Result<()> {
        while !self.finished() {
            let rec = self.step()?;
            sink(&rec);
        }
        Ok(())
    }

    /// Generates one block and returns its trace record.
    pub fn step(&mut self) -> Result<TraceRecord> {
        if self.finished() {
            return Err(Error::Script("rollout already finished".into()));
        }
        let b = self.block;
        let scene = self.scene_of(b);
        let scene_start = self.scene_starts[scene] == b;
        let mut routing_info = None;
        let mut delta = 0u64;

        if scene_start {
            if scene != self.current_scene {
                self.begin_scene(scene);
            }
            routing_info = Some(self.route_scene(scene, b, &mut delta)?);
        }

        // Generate the block and absorb its queries into the running stats.
        let emb = self.scenes[scene].embedding.clone();
        let tensors = if b == 0 {
            self.dynamics.init_block(&emb)
        } else {
            self.dynamics.step(&self.prev_outputs, &emb)
        };
        let block_size = self.cfg.model.block_size;
        let window = self.cfg.model.window;
        if !self.calib.is_frozen() {
            self.calib.calibrate(&tensors.queries)?;
            if self.frames_generated + block_size as u64 >= window as u64 {
                self.calib.freeze();
            }
        }
        self.recent_queries.push_back(tensors.queries.clone());
        let query_window = self.layout.n_recent.div_ceil(block_size).max(1);
        while self.recent_queries.len() > query_window {
            self.recent_queries.pop_front();
        }
        self.scene_centers.absorb(&tensors.queries)?;

        let mut frame_ids = Vec::with_capacity(block_size);
        let mut new_frames = Vec::with_capacity(block_size);
        for (i, (k, v)) in tensors.keys.iter().zip(&tensors.values).enumerate() {
            let frame = FrameKV {
                frame_index: self.frames_generated + i as u64,
                scene_id: scene,
                keys: k.clone(),
                values: v.clone(),
            };
            frame_ids.push(frame.frame_index);
            self.absorb_scene_keys(&frame);
            self.scene_frames.push(frame.clone());
            self.cache.push_frame(frame.clone())?;
            new_frames.push(frame);
        }
        self.frames_generated += block_size as u64;

        if self.arm_decay_pending {
            self.arm_decay(b, &new_frames);
            self.arm_decay_pending = false;
        }

        self.maintain_anchors(scene, b, &new_frames);

        let compression_info = if self.layout.n_compressed > 0
            && self.cache.candidate_fe() >= self.cfg.compression.candidate_region
        {
            Some(self.compression_pass()?)
        } else {
            None
        };

        self.cache.prune(b, self.cfg.decay.prune_threshold);

        let anchor_frames: Vec<u64> =
            self.cache.anchors.iter().map(|cf| cf.frame.frame_index).collect();
        let compressed_sources: Vec<u64> = {
            let set: std::collections::BTreeSet<u64> = self
                .cache
                .compressed
                .iter()
                .flatten()
                .map(|t| t.source_frame)
                .collect();
            set.into_iter().collect()
        };
        let recent_frames: Vec<u64> =
            self.cache.recent.iter().map(|cf| cf.frame.frame_index).collect();

        let (outputs, stats, cache_info) = {
            let ctx = self.cache.assemble(b, delta)?;
            let (outputs, stats) = attend(&tensors.queries, &ctx, &self.freqs)?;
            let cache_info = CacheInfo {
                anchor_fe: ctx.anchor_fe,
                compressed_fe: ctx.compressed_fe,
                recent_fe: ctx.recent_fe,
                total_fe: ctx.fe,
                candidate_fe: self.cache.candidate_fe(),
                anchor_frames,
                compressed_sources,
                recent_frames,
                max_rel_index: ctx.max_index,
                query_pos: ctx.query_pos,
                rope_overflow: ctx.rope_overflow,
            };
            (outputs, stats, cache_info)
        };
        self.prev_outputs = outputs;

        let decay_info = self.decay_trace(b);

        // Scene bookkeeping: build the recall frame once the scene ends.
        let scene_end = b + 1 == self.scene_starts.get(scene + 1).copied().unwrap_or(self.total_blocks);
        if scene_end {
            self.finalize_scene(scene)?;
        }

        let record = TraceRecord {
            schema: TRACE_SCHEMA,
            block: b,
            scene,
            frames: frame_ids,
            routing: routing_info,
            cache: cache_info,
            compression: compression_info,
            decay: decay_info,
            mass: MassInfo {
                anchor: stats.mass_anchor,
                compressed: stats.mass_compressed,
                recent: stats.mass_recent,
                old: stats.mass_old,
            },
            pool_scenes: self.scene_pool.len(),
            timing_us: None,
        };
        self.block += 1;
        Ok(record)
    }

    fn begin_scene(&mut self, scene: usize) {
        let m = &self.cfg.model;
        self.current_scene = scene;
        self.scene_frames.clear();
        self.scene_centers = SceneCenters::new(m.heads, m.spatial, m.d_head);
        self.scene_key_sums = TokenGrid::zeros(m.heads, m.spatial, m.d_head);
        self.scene_key_count = 0;
    }

    fn absorb_scene_keys(&mut self, frame: &FrameKV) {
        for h in 0..frame.keys.heads() {
            for u in 0..frame.keys.slots() {
                let src = frame.keys.slot(h, u);
                let dst = self.scene_key_sums.slot_mut(h, u);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        self.scene_key_count += 1;
    }

    fn finalize_scene(&mut self, scene: usize) -> Result<()> {
        if self.scene_frames.is_empty() {
            return Ok(());
        }
        let cands = select_candidates(&self.scene_frames, self.cfg.recall.candidates);
        if !cands.is_empty() {
            let rec = fuse(&cands, &self.scene_centers, scene)?;
            self.scene_pool.store(rec);
        }
        let m = &self.cfg.model;
        let mut mean = TokenGrid::zeros(m.heads, m.spatial, m.d_head);
        let n = self.scene_key_count as f64;
        for h in 0..m.heads {
            for u in 0..m.spatial {
                let src = self.scene_key_sums.slot(h, u);
                let dst = mean.slot_mut(h, u);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s / n;
                }
            }
        }
        self.scene_key_means.insert(scene, mean);
        Ok(())
    }

    /// Routes the transition into scene `scene` starting at block `b` and
    /// applies its side effects. Returns the trace entry.
    fn route_scene(&mut self, scene: usize, b: u64, delta_out: &mut u64) -> Result<RoutingInfo> {
        let tag = self.scenes[scene].tag;
        if scene == 0 {
            // Initial context: nothing cached, nothing to transition from.
            if tag == Some(Mode::Recall) {
                return Err(Error::RecallUnavailable { block: b as usize });
            }
            return Ok(RoutingInfo {
                mode: match tag {
                    Some(Mode::Smooth) => "smooth".into(),
                    Some(Mode::Hard) => "hard".into(),
                    _ => "init".into(),
                },
                i_star: None,
                s_max: None,
                delta: 0,
                manual: tag.is_some(),
                injected: false,
            });
        }

        let history: Vec<Vec<f64>> =
            self.scenes[..scene].iter().map(|s| s.embedding.clone()).collect();
        let p_t = &self.scenes[scene].embedding;
        let (mode, i_star, s_max, delta) = match tag {
            Some(Mode::Smooth) => (Mode::Smooth, None, None, 0),
            Some(Mode::Hard) => (Mode::Hard, None, None, self.cfg.routing.delta_hard),
            Some(Mode::Recall) => {
                let (i, s) = manual_recall_target(p_t, &history, b as usize)?;
                let d = rope_offset(Mode::Recall, scene, i, &self.cfg.routing);
                (Mode::Recall, Some(i), Some(s), d)
            }
            None => {
                let d = route(p_t, &history, &self.cfg.routing)?;
                (d.mode, d.i_star, Some(d.s_max), d.delta)
            }
        };

        let mut injected = false;
        match mode {
            Mode::Smooth => {}
            Mode::Hard => {
                self.cache.flush_recent();
                self.anchor_pool.reset();
            }
            Mode::Recall => {
                self.cache.flush_recent();
                self.anchor_pool.reset();
                let target = i_star.expect("recall has a target");
                if self.layout.n_anchor > 0 && self.scene_pool.contains(target) {
                    let rec = self.scene_pool.retrieve(target)?;
                    let frame = FrameKV {
                        frame_index: rec.source_frames.first().copied().unwrap_or(0),
                        scene_id: target,
                        keys: rec.k_rec.clone(),
                        values: rec.v_rec.clone(),
                    };
                    self.cache.inject_recall(frame);
                    injected = true;
                }
            }
        }
        self.arm_decay_pending = true;
        *delta_out = delta;
        Ok(RoutingInfo {
            mode: match mode {
                Mode::Smooth => "smooth",
                Mode::Hard => "hard",
                Mode::Recall => "recall",
            }
            .into(),
            i_star,
            s_max,
            delta,
            manual: tag.is_some(),
            injected,
        })
    }

    /// Assigns decay rates to every unarmed old-scene token, normalizing the
    /// discrepancies over this arming batch. The first clean block of the new
    /// scene is the reference.
    fn arm_decay(&mut self, b: u64, clean_block: &[FrameKV]) {
        let m = &self.cfg.model;
        let mut reference = TokenGrid::zeros(m.heads, m.spatial, m.d_head);
        let n = clean_block.len() as f64;
        for h in 0..m.heads {
            for u in 0..m.spatial {
                let dst = reference.slot_mut(h, u);
                for f in clean_block {
                    for (d, s) in dst.iter_mut().zip(f.keys.slot(h, u)) {
                        *d += s / n;
                    }
                }
            }
        }
        let scene = self.current_scene;
        let spatial = m.spatial;

        // Pass one: collect discrepancies of every token to arm.
        let mut ds: Vec<f64> = Vec::new();
        let needs_arming = |cf: &CachedFrame| {
            cf.frame.scene_id != scene && cf.decay.is_none() && !cf.recall
        };
        for cf in self.cache.anchors.iter().chain(self.cache.recent.iter()) {
            if needs_arming(cf) {
                for h in 0..m.heads {
                    for u in 0..spatial {
                        ds.push(decay::discrepancy(cf.frame.keys.slot(h, u), reference.slot(h, u)));
                    }
                }
            }
        }
        for cf in &self.cache.candidates {
            if needs_arming(cf) {
                for h in 0..m.heads {
                    for u in 0..spatial {
                        ds.push(decay::discrepancy(cf.frame.keys.slot(h, u), reference.slot(h, u)));
                    }
                }
            }
        }
        for (h, head) in self.cache.compressed.iter().enumerate() {
            for t in head {
                if t.scene_id != scene && t.decay.is_none() {
                    ds.push(decay::discrepancy(&t.key, reference.slot(h, t.spatial_pos % spatial)));
                }
            }
        }
        if ds.is_empty() {
            self.decay_env = Some(DecayEnv {
                armed_block: b,
                reference,
                min_d: 0.0,
                max_d: 0.0,
            });
            return;
        }
        let min_d = ds.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_d = ds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let deltas = decay::normalize(&ds, self.cfg.decay.epsilon);
        let mus = decay::rates(&deltas, self.cfg.decay.mu_min, self.cfg.decay.mu_max)
            .expect("bounds validated");

        // Pass two: write rates back in the same traversal order.
        let mut it = mus.into_iter();
        let heads = m.heads;
        let arm_frame = |cf: &mut CachedFrame, it: &mut std::vec::IntoIter<f64>| {
            let mu: Vec<f64> = (0..heads * spatial).map(|_| it.next().expect("aligned")).collect();
            cf.decay = Some(FrameDecay::new(mu, b));
        };
        for cf in self.cache.anchors.iter_mut() {
            if needs_arming(cf) {
                arm_frame(cf, &mut it);
            }
        }
        let mut recent: Vec<CachedFrame> = self.cache.recent.drain(..).collect();
        for cf in recent.iter_mut() {
            if needs_arming(cf) {
                arm_frame(cf, &mut it);
            }
        }
        self.cache.recent = recent.into();
        for cf in self.cache.candidates.iter_mut() {
            if needs_arming(cf) {
                arm_frame(cf, &mut it);
            }
        }
        for head in self.cache.compressed.iter_mut() {
            for t in head.iter_mut() {
                if t.scene_id != scene && t.decay.is_none() {
                    t.decay = Some((it.next().expect("aligned"), b));
                }
            }
        }
        debug_assert!(it.next().is_none());
        self.decay_env = Some(DecayEnv { armed_block: b, reference, min_d, max_d });
    }

    /// Late arming for frames entering the cache after the transition (rolled
    /// pool content from the previous scene): same normalization, same clock.
    fn late_arm(&self, cf: &mut CachedFrame) {
        let Some(env) = &self.decay_env else { return };
        if cf.frame.scene_id == self.current_scene || cf.decay.is_some() || cf.recall {
            return;
        }
        let m = &self.cfg.model;
        let denom = env.max_d - env.min_d + self.cfg.decay.epsilon;
        let mut mu = Vec::with_capacity(m.heads * m.spatial);
        for h in 0..m.heads {
            for u in 0..m.spatial {
                let d = decay::discrepancy(cf.frame.keys.slot(h, u), env.reference.slot(h, u));
                let delta = ((d - env.min_d) / denom).clamp(0.0, 1.0);
                mu.push(self.cfg.decay.mu_min + (self.cfg.decay.mu_max - self.cfg.decay.mu_min) * delta);
            }
        }
        cf.decay = Some(FrameDecay::new(mu, env.armed_block));
    }

    fn maintain_anchors(&mut self, scene: usize, _b: u64, new_frames: &[FrameKV]) {
        match self.layout.anchor_mode {
            AnchorMode::Rolling => {
                for f in new_frames {
                    self.anchor_pool.absorb(f);
                }
                if let Some(rolled) = self.anchor_pool.roll() {
                    let cached: Vec<CachedFrame> = rolled
                        .into_iter()
                        .map(|f| {
                            let mut cf = CachedFrame::plain(f);
                            if cf.frame.scene_id != scene {
                                self.late_arm(&mut cf);
                            }
                            cf
                        })
                        .collect();
                    self.cache.insert_anchors(cached);
                }
            }
            AnchorMode::Sink => {
                for f in new_frames {
                    if self.cache.anchor_fe() < self.layout.n_anchor {
                        self.cache.insert_anchors(vec![CachedFrame::plain(f.clone())]);
                    }
                }
            }
            AnchorMode::None => {}
        }
    }

    /// Drains the candidate buffer, scores everything (existing compressed
    /// tokens re-compete), and keeps the per-head top K.
    fn compression_pass(&mut self) -> Result<CompressionInfo> {
        let m = &self.cfg.model;
        let k = self.cfg.compressed_token_budget();
        let cand_frames = self.cache.take_candidates();
        let previous = std::mem::take(&mut self.cache.compressed);
        let next_frame = self.frames_generated;

        let mut scored_total = 0usize;
        let mut retained_total = 0usize;
        let mut score_min = f64::INFINITY;
        let mut score_max = f64::NEG_INFINITY;
        let mut per_head: Vec<Vec<ScoredToken>> = Vec::with_capacity(m.heads);

        for h in 0..m.heads {
            let q_bar = self.calib.q_bar(h)?;
            let a_bar = self.calib.a_bar(h)?;
            let q_bar_flat = self.calib.q_bar_flat(h)?;
            let q_recent = self.recent_query_center(h);
            let gate = drift_gate(&q_recent, &q_bar_flat, self.cfg.compression.lambda)?;

            let mut cands: Vec<CandidateToken> = Vec::new();
            for cf in &cand_frames {
                for u in 0..m.spatial {
                    let slot = h * m.spatial + u;
                    if let Some(d) = &cf.decay {
                        if !d.alive[slot] {
                            continue;
                        }
                    }
                    cands.push(CandidateToken {
                        source_frame: cf.frame.frame_index,
                        head: h,
                        spatial_pos: u,
                        scene_id: cf.frame.scene_id,
                        key: cf.frame.keys.slot(h, u).to_vec(),
                        value: cf.frame.values.slot(h, u).to_vec(),
                        decay: cf.decay.as_ref().map(|d| (d.mu[slot], d.armed_block)),
                    });
                }
            }
            for t in &previous[h] {
                cands.push(CandidateToken {
                    source_frame: t.source_frame,
                    head: h,
                    spatial_pos: t.spatial_pos,
                    scene_id: t.scene_id,
                    key: t.key.clone(),
                    value: t.value.clone(),
                    decay: t.decay,
                });
            }

            let scored = score_candidates(
                cands,
                &q_bar,
                &a_bar,
                gate,
                next_frame,
                &self.freqs,
                &self.cfg.compression,
            )?;
            scored_total += scored.len();
            for t in &scored {
                score_min = score_min.min(t.score);
                score_max = score_max.max(t.score);
            }
            let kept = compress(scored, k);
            retained_total += kept.len();
            per_head.push(kept);
        }
        self.cache.set_compressed(per_head);
        if scored_total == 0 {
            score_min = 0.0;
            score_max = 0.0;
        }
        Ok(CompressionInfo {
            scored: scored_total,
            retained: retained_total,
            score_min,
            score_max,
        })
    }

    /// Mean pre-rotation query of the recent window for one head.
    fn recent_query_center(&self, head: usize) -> Vec<f64> {
        let m = &self.cfg.model;
        let mut acc = vec![0.0; m.d_head];
        let mut n = 0u64;
        for grid in &self.recent_queries {
            for u in 0..m.spatial {
                for (a, v) in acc.iter_mut().zip(grid.slot(head, u)) {
                    *a += v;
                }
            }
            n += m.spatial as u64;
        }
        if n > 0 {
            for a in acc.iter_mut() {
                *a /= n as f64;
            }
        }
        acc
    }

    fn decay_trace(&self, b: u64) -> Option<DecayTrace> {
        let mut weights: Vec<f64> = Vec::new();
        let mut r_max = 0u64;
        for cf in self.cache.anchors.iter().chain(self.cache.recent.iter()) {
            if let Some(d) = &cf.decay {
                r_max = r_max.max(d.steps(b));
                for (slot, alive) in d.alive.iter().enumerate() {
                    if *alive {
                        weights.push(d.weight(slot, b));
                    }
                }
            }
        }
        for head in &self.cache.compressed {
            for t in head {
                if let Some((mu, armed)) = t.decay {
                    let r = b.saturating_sub(armed);
                    r_max = r_max.max(r);
                    weights.push(decay::weight(mu, r));
                }
            }
        }
        if weights.is_empty() {
            return None;
        }
        let mut histogram = [0usize; 10];
        let mut min_w = f64::INFINITY;
        let mut max_w = f64::NEG_INFINITY;
        for &w in &weights {
            min_w = min_w.min(w);
            max_w = max_w.max(w);
            let bin = ((w * 10.0).floor() as usize).min(9);
            histogram[bin] += 1;
        }
        Some(DecayTrace { active: weights.len(), r_max, min_weight: min_w, max_weight: max_w, histogram })
    }

    /// Current cache contents, for dump-cache.
    pub fn snapshot(&self) -> CacheSnapshot {
        let mut frames = Vec::new();
        let b = self.block.saturating_sub(1);
        let mut ordinal = 0usize;
        for cf in &self.cache.anchors {
            frames.push(snapshot_frame(cf, "anchor", ordinal, b));
            ordinal += 1;
        }
        ordinal += self.cache.compressed_fe();
        for cf in &self.cache.recent {
            frames.push(snapshot_frame(cf, "recent", ordinal, b));
            ordinal += 1;
        }
        let mut compressed = Vec::new();
        for (h, head) in self.cache.compressed.iter().enumerate() {
            for t in head {
                compressed.push(SnapshotToken {
                    head: h,
                    source_frame: t.source_frame,
                    spatial_pos: t.spatial_pos,
                    scene_id: t.scene_id,
                    score: t.score,
                    weight: t
                        .decay
                        .map(|(mu, armed)| decay::weight(mu, b.saturating_sub(armed)))
                        .unwrap_or(1.0),
                });
            }
        }
        CacheSnapshot { block: b, total_fe: self.cache.total_fe(), frames, compressed }
    }
}

fn snapshot_frame(cf: &CachedFrame, segment: &str, ordinal: usize, b: u64) -> SnapshotFrame {
    SnapshotFrame {
        segment: segment.to_string(),
        ordinal,
        frame_index: cf.frame.frame_index,
        scene_id: cf.frame.scene_id,
        recall: cf.recall,
        decaying: cf.decay.is_some(),
        weights: cf.decay.as_ref().map(|d| {
            (0..d.mu.len())
                .map(|slot| if d.alive[slot] { d.weight(slot, b) } else { 0.0 })
                .collect()
        }),
    }
}
