//! Rotary position math: frequency schedule, rotation, the complex channel
//! view, and relative re-indexing of cached frames.
//!
//! Positions are in frame units; all spatial tokens of a frame share one
//! index. Keys are stored unrotated and rotated here at attention time, which
//! is what lets cached frames be re-stamped with local indices.

use crate::config::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RopeConfig {
    pub d_head: usize,
    pub base: f64,
    /// Training horizon in frames; relative indices must stay below it.
    pub window: usize,
}

impl RopeConfig {
    pub fn new(d_head: usize, base: f64, window: usize) -> Result<Self> {
        if d_head == 0 || d_head % 2 != 0 {
            return Err(Error::Config("d_head must be positive and even".into()));
        }
        if base <= 1.0 {
            return Err(Error::Config("rope base must exceed 1".into()));
        }
        if window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        Ok(Self { d_head, base, window })
    }

    pub fn from_model(m: &ModelConfig) -> Self {
        // EngineConfig::validate has already vetted these fields.
        Self { d_head: m.d_head, base: m.rope_base, window: m.window }
    }
}

/// Angular frequencies omega_f = base^(-2f / d_head), f = 0 .. d_head/2 - 1.
/// Strictly decreasing, omega_0 = 1.
pub fn frequencies(cfg: &RopeConfig) -> Vec<f64> {
    let half = cfg.d_head / 2;
    (0..half).map(|f| cfg.base.powf(-2.0 * f as f64 / cfg.d_head as f64)).collect()
}

/// A d_head vector viewed as d_head/2 complex channels: channel f is
/// (v[2f], v[2f+1]).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexChannels {
    pub pairs: Vec<(f64, f64)>,
}

impl ComplexChannels {
    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() % 2 != 0 {
            return Err(Error::Dimension { expected: v.len() + 1, got: v.len() });
        }
        Ok(Self { pairs: v.chunks_exact(2).map(|c| (c[0], c[1])).collect() })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.pairs.len() * 2);
        for &(re, im) in &self.pairs {
            out.push(re);
            out.push(im);
        }
        out
    }
}

/// Rotates channel f of `v` by angle freqs[f] * position, writing into `out`.
pub fn rotate_into(v: &[f64], position: f64, freqs: &[f64], out: &mut [f64]) {
    debug_assert_eq!(v.len(), freqs.len() * 2);
    debug_assert_eq!(out.len(), v.len());
    for (f, &w) in freqs.iter().enumerate() {
        let theta = w * position;
        let (sin, cos) = theta.sin_cos();
        let x = v[2 * f];
        let y = v[2 * f + 1];
        out[2 * f] = x * cos - y * sin;
        out[2 * f + 1] = x * sin + y * cos;
    }
}

pub fn apply_rotation(v: &[f64], position: f64, cfg: &RopeConfig) -> Result<Vec<f64>> {
    if v.len() != cfg.d_head {
        return Err(Error::Dimension { expected: cfg.d_head, got: v.len() });
    }
    let freqs = frequencies(cfg);
    let mut out = vec![0.0; v.len()];
    rotate_into(v, position, &freqs, &mut out);
    Ok(out)
}

/// Maps cached absolute frame indices to local indices 0..n-1. The mapping is
/// purely positional; callers choose the ordering of the input sequence.
pub fn relative_reindex(cached: &[u64], cfg: &RopeConfig) -> Result<Vec<usize>> {
    if cached.len() > cfg.window {
        return Err(Error::BudgetOverflow { budget: cfg.window, got: cached.len() });
    }
    Ok((0..cached.len()).collect())
}
