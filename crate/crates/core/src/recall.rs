//! Scene recall frames: candidate selection from the stable part of a scene,
//! per-spatial-position softmax fusion of candidate KV, and the scene memory
//! pool the fused frames live in.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::FrameKV;
use crate::tensor::{cosine, TokenGrid};

/// Fused per-position KV memory of one finished scene.
#[derive(Debug, Clone)]
pub struct SceneRecallFrame {
    pub scene_id: usize,
    pub k_rec: TokenGrid,
    pub v_rec: TokenGrid,
    pub source_frames: Vec<u64>,
}

/// Per-scene, per-(head, position) running mean of pre-rotation queries,
/// used as the fusion reference.
#[derive(Debug, Clone)]
pub struct SceneCenters {
    sums: TokenGrid,
    count: u64,
}

impl SceneCenters {
    pub fn new(heads: usize, spatial: usize, d_head: usize) -> Self {
        Self { sums: TokenGrid::zeros(heads, spatial, d_head), count: 0 }
    }

    pub fn absorb(&mut self, queries: &TokenGrid) -> Result<()> {
        if queries.dim() != self.sums.dim()
            || queries.heads() != self.sums.heads()
            || queries.slots() != self.sums.slots()
        {
            return Err(Error::Dimension { expected: self.sums.dim(), got: queries.dim() });
        }
        for h in 0..self.sums.heads() {
            for u in 0..self.sums.slots() {
                let src = queries.slot(h, u);
                let dst = self.sums.slot_mut(h, u);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn center(&self, head: usize, pos: usize) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::NotCalibrated);
        }
        let n = self.count as f64;
        Ok(self.sums.slot(head, pos).iter().map(|v| v / n).collect())
    }
}

/// Picks `m` candidate frames from the middle 60% of the scene (the first and
/// last 20% are transition-adjacent and skipped), at uniform stride, earliest
/// frame on ties. Scenes shorter than `m` contribute every frame; scenes
/// whose stable region is too small stride over the whole scene instead.
pub fn select_candidates(frames: &[FrameKV], m: usize) -> Vec<&FrameKV> {
    let n = frames.len();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    if n <= m {
        return frames.iter().collect();
    }
    let margin = n / 5;
    let region = n - 2 * margin;
    let (start, span) = if region < m { (0, n) } else { (margin, region) };
    let stride = (span / m).max(1);
    (0..m).map(|i| &frames[start + i * stride]).collect()
}

/// Per-(head, position) weights: softmax over candidates of
/// cosine(center, candidate key). Zero-norm keys contribute similarity 0.
pub fn fusion_weights(
    candidates: &[&FrameKV],
    centers: &SceneCenters,
    head: usize,
    pos: usize,
) -> Result<Vec<f64>> {
    let center = centers.center(head, pos)?;
    let sims: Vec<f64> =
        candidates.iter().map(|c| cosine(&center, c.keys.slot(head, pos))).collect();
    let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Fuses candidate frames into one scene recall frame. Keys and values share
/// the same weights per (head, position).
pub fn fuse(
    candidates: &[&FrameKV],
    centers: &SceneCenters,
    scene_id: usize,
) -> Result<SceneRecallFrame> {
    let first = candidates.first().ok_or(Error::EmptyContext)?;
    let (heads, spatial, dim) = (first.keys.heads(), first.keys.slots(), first.keys.dim());
    let mut k_rec = TokenGrid::zeros(heads, spatial, dim);
    let mut v_rec = TokenGrid::zeros(heads, spatial, dim);
    for h in 0..heads {
        for u in 0..spatial {
            let alpha = fusion_weights(candidates, centers, h, u)?;
            let ks = k_rec.slot_mut(h, u);
            for (c, &a) in candidates.iter().zip(&alpha) {
                for (dst, src) in ks.iter_mut().zip(c.keys.slot(h, u)) {
                    *dst += a * src;
                }
            }
            let vs = v_rec.slot_mut(h, u);
            for (c, &a) in candidates.iter().zip(&alpha) {
                for (dst, src) in vs.iter_mut().zip(c.values.slot(h, u)) {
                    *dst += a * src;
                }
            }
        }
    }
    Ok(SceneRecallFrame {
        scene_id,
        k_rec,
        v_rec,
        source_frames: candidates.iter().map(|c| c.frame_index).collect(),
    })
}

/// Serialized form of the pool sidecar file.
#[derive(Debug, Serialize, Deserialize)]
pub struct PoolFile {
    pub version: u32,
    pub scenes: Vec<PoolEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PoolEntry {
    pub scene_id: usize,
    pub heads: usize,
    pub spatial: usize,
    pub d_head: usize,
    pub source_frames: Vec<u64>,
    pub k_rec: Vec<f64>,
    pub v_rec: Vec<f64>,
}

/// Scene memory pool: one recall frame per finished scene.
#[derive(Debug, Default)]
pub struct SceneMemoryPool {
    entries: BTreeMap<usize, SceneRecallFrame>,
}

impl SceneMemoryPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn store(&mut self, frame: SceneRecallFrame) {
        self.entries.insert(frame.scene_id, frame);
    }

    pub fn retrieve(&self, scene_id: usize) -> Result<&SceneRecallFrame> {
        self.entries.get(&scene_id).ok_or(Error::MissingScene(scene_id))
    }

    pub fn contains(&self, scene_id: usize) -> bool {
        self.entries.contains_key(&scene_id)
    }

    pub fn scene_ids(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    /// Values stored by the pool, for the compression-ratio accounting.
    pub fn stored_values(&self) -> usize {
        self.entries
            .values()
            .map(|e| 2 * e.k_rec.heads() * e.k_rec.slots() * e.k_rec.dim())
            .sum()
    }

    pub fn to_file(&self) -> PoolFile {
        PoolFile {
            version: 1,
            scenes: self
                .entries
                .values()
                .map(|e| PoolEntry {
                    scene_id: e.scene_id,
                    heads: e.k_rec.heads(),
                    spatial: e.k_rec.slots(),
                    d_head: e.k_rec.dim(),
                    source_frames: e.source_frames.clone(),
                    k_rec: e.k_rec.as_slice().to_vec(),
                    v_rec: e.v_rec.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: PoolFile) -> Result<Self> {
        if file.version != 1 {
            return Err(Error::Script(format!("unsupported pool version {}", file.version)));
        }
        let mut pool = Self::new();
        for e in file.scenes {
            let k_rec = TokenGrid::from_vec(e.heads, e.spatial, e.d_head, e.k_rec)?;
            let v_rec = TokenGrid::from_vec(e.heads, e.spatial, e.d_head, e.v_rec)?;
            pool.store(SceneRecallFrame {
                scene_id: e.scene_id,
                k_rec,
                v_rec,
                source_frames: e.source_frames,
            });
        }
        Ok(pool)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(i: u64, fill: f64) -> FrameKV {
        let mut keys = TokenGrid::zeros(1, 2, 4);
        let mut values = TokenGrid::zeros(1, 2, 4);
        for u in 0..2 {
            keys.slot_mut(0, u)[0] = fill;
            keys.slot_mut(0, u)[1] = 1.0;
            values.slot_mut(0, u)[0] = fill * 10.0;
        }
        FrameKV { frame_index: i, scene_id: 0, keys, values }
    }

    fn centers() -> SceneCenters {
        let mut c = SceneCenters::new(1, 2, 4);
        let mut q = TokenGrid::zeros(1, 2, 4);
        for u in 0..2 {
            q.slot_mut(0, u).copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        }
        c.absorb(&q).unwrap();
        c
    }

    #[test]
    fn stride_selection_from_stable_region() {
        let frames: Vec<FrameKV> = (0..50).map(|i| frame(i, 0.0)).collect();
        let picked = select_candidates(&frames, 5);
        let ids: Vec<u64> = picked.iter().map(|f| f.frame_index).collect();
        assert_eq!(ids, vec![10, 16, 22, 28, 34]);
    }

    #[test]
    fn short_scenes_fall_back_to_all_frames() {
        let frames: Vec<FrameKV> = (0..5).map(|i| frame(i, 0.0)).collect();
        assert_eq!(select_candidates(&frames, 5).len(), 5);
        let frames: Vec<FrameKV> = (0..3).map(|i| frame(i, 0.0)).collect();
        assert_eq!(select_candidates(&frames, 5).len(), 3);
    }

    #[test]
    fn tiny_stable_region_strides_whole_scene() {
        let frames: Vec<FrameKV> = (0..6).map(|i| frame(i, 0.0)).collect();
        let ids: Vec<u64> = select_candidates(&frames, 5).iter().map(|f| f.frame_index).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn singleton_fusion_is_identity() {
        let f = frame(3, 2.5);
        let cands = vec![&f];
        let rec = fuse(&cands, &centers(), 0).unwrap();
        assert_eq!(rec.k_rec, f.keys);
        assert_eq!(rec.v_rec, f.values);
        assert_eq!(rec.source_frames, vec![3]);
    }

    #[test]
    fn equal_similarity_means_elementwise_mean() {
        let a = frame(0, 1.0);
        let b = frame(1, 1.0);
        let mut b2 = b.clone();
        // Same key direction (equal similarity), different values.
        for u in 0..2 {
            b2.values.slot_mut(0, u)[0] = 30.0;
        }
        let cands = vec![&a, &b2];
        let rec = fuse(&cands, &centers(), 0).unwrap();
        for u in 0..2 {
            let w = fusion_weights(&cands, &centers(), 0, u).unwrap();
            assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
            assert!((rec.v_rec.slot(0, u)[0] - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_round_trip_and_missing_scene() {
        let f = frame(2, 1.0);
        let rec = fuse(&[&f], &centers(), 4).unwrap();
        let mut pool = SceneMemoryPool::new();
        pool.store(rec);
        let got = pool.retrieve(4).unwrap();
        assert_eq!(got.k_rec, f.keys);
        assert!(matches!(pool.retrieve(9), Err(Error::MissingScene(9))));
    }

    #[test]
    fn pool_file_round_trip() {
        let f = frame(2, 1.5);
        let mut pool = SceneMemoryPool::new();
        pool.store(fuse(&[&f], &centers(), 1).unwrap());
        let json = serde_json::to_string(&pool.to_file()).unwrap();
        let back = SceneMemoryPool::from_file(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.retrieve(1).unwrap().k_rec, f.keys);
        assert_eq!(back.stored_values(), 2 * 2 * 4);
    }
}
