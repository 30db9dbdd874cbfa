//! Drift-gated phase compression.
//!
//! Queries are calibrated online into a per-head phase reference (mean
//! complex query direction plus mean per-channel magnitude). Evicted keys are
//! then scored *before* rotation: the phase-coherent term predicts the
//! rotated inner product a future query will see at temporal distance delta,
//! the AMP term credits key energy on channels where query magnitude exceeds
//! the mean direction, and a drift gate shrinks AMP when recent queries have
//! wandered from the calibration center. Top-K scored tokens per head are
//! retained as compressed memory.

use std::collections::BinaryHeap;

use crate::config::{CompressionConfig, Fuse};
use crate::error::{Error, Result};
use crate::tensor::TokenGrid;

/// Running per-head query statistics. Means are kept as sums so absorption
/// order cannot change the result beyond rounding.
#[derive(Debug, Clone)]
pub struct CalibrationStats {
    heads: usize,
    half: usize,
    sum_re: Vec<f64>,
    sum_im: Vec<f64>,
    sum_mag: Vec<f64>,
    count: u64,
    frozen: bool,
}

impl CalibrationStats {
    pub fn new(heads: usize, d_head: usize) -> Self {
        let half = d_head / 2;
        Self {
            heads,
            half,
            sum_re: vec![0.0; heads * half],
            sum_im: vec![0.0; heads * half],
            sum_mag: vec![0.0; heads * half],
            count: 0,
            frozen: false,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Absorbs one pre-rotation query batch (all heads, all positions).
    pub fn calibrate(&mut self, queries: &TokenGrid) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenStats);
        }
        if queries.heads() != self.heads || queries.dim() != self.half * 2 {
            return Err(Error::Dimension { expected: self.half * 2, got: queries.dim() });
        }
        for h in 0..self.heads {
            for u in 0..queries.slots() {
                let q = queries.slot(h, u);
                for f in 0..self.half {
                    let re = q[2 * f];
                    let im = q[2 * f + 1];
                    let idx = h * self.half + f;
                    self.sum_re[idx] += re;
                    self.sum_im[idx] += im;
                    self.sum_mag[idx] += re.hypot(im);
                }
            }
        }
        // Tokens per head, not per batch: every head saw `slots` queries.
        self.count += queries.slots() as u64;
        Ok(())
    }

    /// Mean complex query direction for one head.
    pub fn q_bar(&self, head: usize) -> Result<Vec<(f64, f64)>> {
        if self.count == 0 {
            return Err(Error::NotCalibrated);
        }
        let n = self.count as f64;
        Ok((0..self.half)
            .map(|f| {
                let idx = head * self.half + f;
                (self.sum_re[idx] / n, self.sum_im[idx] / n)
            })
            .collect())
    }

    /// Mean per-channel query magnitude for one head.
    pub fn a_bar(&self, head: usize) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::NotCalibrated);
        }
        let n = self.count as f64;
        Ok((0..self.half).map(|f| self.sum_mag[head * self.half + f] / n).collect())
    }

    /// q_bar flattened back to d_head reals, for cosine against live queries.
    pub fn q_bar_flat(&self, head: usize) -> Result<Vec<f64>> {
        let pairs = self.q_bar(head)?;
        let mut out = Vec::with_capacity(pairs.len() * 2);
        for (re, im) in pairs {
            out.push(re);
            out.push(im);
        }
        Ok(out)
    }
}

/// Channel view of a flat vector without allocation hoops: (re, im) pairs.
#[inline]
pub fn channels(v: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
    v.chunks_exact(2).map(|c| (c[0], c[1]))
}

/// Phase-coherent score at temporal distance `delta`:
/// sum_f |q_f||k_f| cos(phi_f + omega_f delta) with phi_f = arg(q_f conj(k_f)),
/// computed as Re(q_f conj(k_f) e^{i omega_f delta}) channel by channel.
pub fn phase_score(
    q_bar: &[(f64, f64)],
    key: &[f64],
    delta: f64,
    freqs: &[f64],
) -> Result<f64> {
    if key.len() != q_bar.len() * 2 || freqs.len() != q_bar.len() {
        return Err(Error::Dimension { expected: q_bar.len() * 2, got: key.len() });
    }
    let mut score = 0.0;
    for (f, ((qr, qi), (kr, ki))) in q_bar.iter().copied().zip(channels(key)).enumerate() {
        // z = q conj(k); Re(z e^{i theta}) = Re(z) cos - Im(z) sin.
        let x = qr * kr + qi * ki;
        let y = qi * kr - qr * ki;
        let theta = freqs[f] * delta;
        let (sin, cos) = theta.sin_cos();
        score += x * cos - y * sin;
    }
    Ok(score)
}

/// Magnitude compensation: sum_f (a_bar_f - |q_bar_f|) |k_f|.
pub fn amp_term(q_bar: &[(f64, f64)], a_bar: &[f64], key: &[f64]) -> Result<f64> {
    if key.len() != q_bar.len() * 2 || a_bar.len() != q_bar.len() {
        return Err(Error::Dimension { expected: q_bar.len() * 2, got: key.len() });
    }
    let mut amp = 0.0;
    for (f, (kr, ki)) in channels(key).enumerate() {
        let (qr, qi) = q_bar[f];
        amp += (a_bar[f] - qr.hypot(qi)) * kr.hypot(ki);
    }
    Ok(amp)
}

/// Drift gate g = exp(-lambda (1 - cos(q_recent, q_bar))), in (0, 1].
/// Both arguments are flat d_head vectors.
pub fn drift_gate(q_recent: &[f64], q_bar: &[f64], lambda: f64) -> Result<f64> {
    let nr = crate::tensor::norm(q_recent);
    let nb = crate::tensor::norm(q_bar);
    if nr == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedDirection);
    }
    let cos = (crate::tensor::dot(q_recent, q_bar) / (nr * nb)).clamp(-1.0, 1.0);
    Ok((-lambda * (1.0 - cos)).exp())
}

/// A scored candidate token of one head. `decay` carries (rate, armed block)
/// through a compression pass so surviving old-scene tokens keep fading on
/// their original clock.
#[derive(Debug, Clone)]
pub struct ScoredToken {
    pub source_frame: u64,
    pub head: usize,
    pub spatial_pos: usize,
    pub scene_id: usize,
    pub score: f64,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub decay: Option<(f64, u64)>,
}

/// Unscored input to a compression pass.
#[derive(Debug, Clone)]
pub struct CandidateToken {
    pub source_frame: u64,
    pub head: usize,
    pub spatial_pos: usize,
    pub scene_id: usize,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub decay: Option<(f64, u64)>,
}

/// Scores one head's candidates against that head's calibration stats.
/// `next_frame` is the absolute index the upcoming block starts at; the
/// temporal distance for offset o is next_frame - source_frame + o.
pub fn score_candidates(
    candidates: Vec<CandidateToken>,
    q_bar: &[(f64, f64)],
    a_bar: &[f64],
    gate: f64,
    next_frame: u64,
    freqs: &[f64],
    cfg: &CompressionConfig,
) -> Result<Vec<ScoredToken>> {
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        let amp = amp_term(q_bar, a_bar, &c.key)?;
        let mut fused = match cfg.fuse {
            Fuse::Mean => 0.0,
            Fuse::Max => f64::NEG_INFINITY,
        };
        for &o in &cfg.offsets {
            let delta = (next_frame - c.source_frame) as f64 + o as f64;
            let s = phase_score(q_bar, &c.key, delta, freqs)? + gate * amp;
            fused = match cfg.fuse {
                Fuse::Mean => fused + s,
                Fuse::Max => fused.max(s),
            };
        }
        if cfg.fuse == Fuse::Mean {
            fused /= cfg.offsets.len() as f64;
        }
        debug_assert!(fused.is_finite());
        out.push(ScoredToken {
            source_frame: c.source_frame,
            head: c.head,
            spatial_pos: c.spatial_pos,
            scene_id: c.scene_id,
            score: fused,
            key: c.key,
            value: c.value,
            decay: c.decay,
        });
    }
    Ok(out)
}

/// Retention order: higher score first, ties to smaller (frame, position).
#[inline]
pub fn rank_before(a: &ScoredToken, b: &ScoredToken) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.source_frame.cmp(&b.source_frame))
        .then_with(|| a.spatial_pos.cmp(&b.spatial_pos))
}

struct Worst(ScoredToken);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        rank_before(&self.0, &other.0) == std::cmp::Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    // Max-heap surfaces the token that should be evicted first: greater
    // means worse-ranked, so pop() drops the current loser.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        rank_before(&self.0, &other.0)
    }
}

/// Keeps the k best-ranked tokens via a bounded heap (the full-sort oracle
/// lives in `oracles` and shares no code with this). Output sorted by rank.
pub fn compress(scored: Vec<ScoredToken>, k: usize) -> Vec<ScoredToken> {
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
    for t in scored {
        heap.push(Worst(t));
        if heap.len() > k {
            heap.pop();
        }
    }
    let mut kept: Vec<ScoredToken> = heap.into_iter().map(|w| w.0).collect();
    kept.sort_by(rank_before);
    kept
}
