//! Minimal dense storage for per-frame token grids.
//!
//! A frame carries `heads * slots` tokens of `dim` channels each, laid out
//! head-major in one flat buffer. Nothing here knows about positions or
//! rotation; that lives in [`crate::rope`].

use crate::error::{Error, Result};

/// One frame worth of vectors: `heads * slots * dim` values, head-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    heads: usize,
    slots: usize,
    dim: usize,
    data: Vec<f64>,
}

impl TokenGrid {
    pub fn zeros(heads: usize, slots: usize, dim: usize) -> Self {
        Self { heads, slots, dim, data: vec![0.0; heads * slots * dim] }
    }

    /// Wraps an existing buffer. Length must be exactly `heads * slots * dim`.
    pub fn from_vec(heads: usize, slots: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let want = heads * slots * dim;
        if data.len() != want {
            return Err(Error::Dimension { expected: want, got: data.len() });
        }
        Ok(Self { heads, slots, dim, data })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn offset(&self, head: usize, slot: usize) -> usize {
        debug_assert!(head < self.heads && slot < self.slots);
        (head * self.slots + slot) * self.dim
    }

    #[inline]
    pub fn slot(&self, head: usize, slot: usize) -> &[f64] {
        let o = self.offset(head, slot);
        &self.data[o..o + self.dim]
    }

    #[inline]
    pub fn slot_mut(&mut self, head: usize, slot: usize) -> &mut [f64] {
        let o = self.offset(head, slot);
        &mut self.data[o..o + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Dot product over equal-length slices. Callers guarantee the lengths match;
/// mismatches are a programming error, not an input error.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity with the zero-vector convention: if either side has no
/// direction the similarity is 0, never NaN. Result is clamped to [-1, 1] so
/// downstream acos/exp stay in range despite rounding.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout_is_head_major() {
        let mut g = TokenGrid::zeros(2, 3, 4);
        g.slot_mut(1, 2)[3] = 7.0;
        assert_eq!(g.as_slice()[(1 * 3 + 2) * 4 + 3], 7.0);
        assert_eq!(g.slot(1, 2)[3], 7.0);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(TokenGrid::from_vec(2, 2, 4, vec![0.0; 15]).is_err());
        assert!(TokenGrid::from_vec(2, 2, 4, vec![0.0; 16]).is_ok());
    }

    #[test]
    fn cosine_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn cosine_clamps_rounding() {
        let v = [0.1 + 0.2, 0.3];
        let c = cosine(&v, &v);
        assert!(c <= 1.0 && c > 0.999_999);
    }
}
