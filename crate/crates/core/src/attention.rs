//! Block-wise causal attention over an assembled context. Keys rotate at
//! their context-assigned indices, queries at the in-flight block's position.
//! Decaying tokens are suppressed twice: their logit is scaled by the decay
//! weight, and their value contribution is scaled by it again.

use serde::Serialize;

use crate::decay::decayed_logit;
use crate::error::{Error, Result};
use crate::memory::{AssembledContext, Segment};
use crate::rope::rotate_into;
use crate::tensor::{dot, TokenGrid};

/// Where the softmax mass went, averaged over all queries of the block.
/// Classes are disjoint: a decaying token counts as `old`, not as its
/// segment. The four masses sum to 1.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct AttentionStats {
    pub mass_anchor: f64,
    pub mass_compressed: f64,
    pub mass_recent: f64,
    pub mass_old: f64,
}

impl AttentionStats {
    pub fn total(&self) -> f64 {
        self.mass_anchor + self.mass_compressed + self.mass_recent + self.mass_old
    }
}

/// Runs one block of queries against the context. Returns per-(head, position)
/// outputs and the segment mass accounting.
pub fn attend(
    queries: &TokenGrid,
    ctx: &AssembledContext<'_>,
    freqs: &[f64],
) -> Result<(TokenGrid, AttentionStats)> {
    let heads = queries.heads();
    let spatial = queries.slots();
    let d_head = queries.dim();
    if ctx.slots.len() != heads {
        return Err(Error::Dimension { expected: heads, got: ctx.slots.len() });
    }
    if ctx.slots.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyContext);
    }
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut out = TokenGrid::zeros(heads, spatial, d_head);
    let mut stats = AttentionStats::default();
    let mut rotated_q = vec![0.0; d_head];
    let mut logits: Vec<f64> = Vec::new();

    for h in 0..heads {
        let slots = &ctx.slots[h];
        if slots.is_empty() {
            return Err(Error::EmptyContext);
        }
        // Keys rotate once per head; every query of the block reuses them.
        let mut rotated_keys = vec![0.0; slots.len() * d_head];
        for (i, s) in slots.iter().enumerate() {
            if s.key.len() != d_head {
                return Err(Error::Dimension { expected: d_head, got: s.key.len() });
            }
            rotate_into(s.key, s.rope_index, freqs, &mut rotated_keys[i * d_head..(i + 1) * d_head]);
        }
        for u in 0..spatial {
            rotate_into(queries.slot(h, u), ctx.query_pos, freqs, &mut rotated_q);
            logits.clear();
            let mut max = f64::NEG_INFINITY;
            for (i, s) in slots.iter().enumerate() {
                let raw = dot(&rotated_q, &rotated_keys[i * d_head..(i + 1) * d_head]) * scale;
                let l = decayed_logit(raw, s.weight);
                logits.push(l);
                max = max.max(l);
            }
            let mut denom = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                denom += *l;
            }
            let o = out.slot_mut(h, u);
            for (s, &e) in slots.iter().zip(logits.iter()) {
                let alpha = e / denom;
                let scaled = alpha * s.weight;
                for (dst, v) in o.iter_mut().zip(s.value) {
                    *dst += scaled * v;
                }
                if s.old {
                    stats.mass_old += alpha;
                } else {
                    match s.segment {
                        Segment::Anchor => stats.mass_anchor += alpha,
                        Segment::Compressed => stats.mass_compressed += alpha,
                        Segment::Recent => stats.mass_recent += alpha,
                    }
                }
            }
        }
    }
    let n = (heads * spatial) as f64;
    stats.mass_anchor /= n;
    stats.mass_compressed /= n;
    stats.mass_recent /= n;
    stats.mass_old /= n;
    Ok((out, stats))
}
