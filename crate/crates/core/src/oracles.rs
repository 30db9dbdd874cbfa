//! Independent reference implementations used by the verification harness.
//! Nothing here shares code with the production paths: rotations are done
//! by materializing both vectors, selection by full sort, attention by the
//! textbook softmax. Slow on purpose.

use crate::compression::ScoredToken;

/// Rotates `v` channel-wise by angle position*theta_f and returns the full
/// vector. Local implementation, no shared helpers.
pub fn oracle_rotate(v: &[f64], position: f64, d_head: usize, base: f64) -> Vec<f64> {
    let half = d_head / 2;
    let mut out = vec![0.0; d_head];
    for f in 0..half {
        let theta = base.powf(-2.0 * f as f64 / d_head as f64);
        let angle = position * theta;
        let (s, c) = (angle.sin(), angle.cos());
        let re = v[2 * f];
        let im = v[2 * f + 1];
        out[2 * f] = re * c - im * s;
        out[2 * f + 1] = re * s + im * c;
    }
    out
}

/// Phase alignment via explicit rotation: rotate the query to position p,
/// the key to p - delta, and take the plain dot product.
pub fn oracle_rotation_score(
    q_bar: &[f64],
    key: &[f64],
    delta: f64,
    position: f64,
    d_head: usize,
    base: f64,
) -> f64 {
    let q_rot = oracle_rotate(q_bar, position, d_head, base);
    let k_rot = oracle_rotate(key, position - delta, d_head, base);
    q_rot.iter().zip(&k_rot).map(|(a, b)| a * b).sum()
}

/// Top-k by full sort: descending score, ties to the smaller
/// (source_frame, spatial_pos).
pub fn oracle_topk(mut tokens: Vec<ScoredToken>, k: usize) -> Vec<ScoredToken> {
    tokens.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.source_frame.cmp(&b.source_frame))
            .then(a.spatial_pos.cmp(&b.spatial_pos))
    });
    tokens.truncate(k);
    tokens
}

/// One attention row the long way: exp without max subtraction, explicit
/// normalization. Usable only on small, well-scaled inputs.
pub fn oracle_dense_attention(
    query: &[f64],
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    weights: &[f64],
    scale: f64,
) -> Vec<f64> {
    let mut exps = Vec::with_capacity(keys.len());
    let mut z = 0.0;
    for (k, &w) in keys.iter().zip(weights) {
        let dot: f64 = query.iter().zip(k).map(|(a, b)| a * b).sum();
        let e = (w * dot * scale).exp();
        exps.push(e);
        z += e;
    }
    let dim = values.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for ((e, v), &w) in exps.iter().zip(values).zip(weights) {
        let alpha = e / z;
        for (o, x) in out.iter_mut().zip(v) {
            *o += alpha * w * x;
        }
    }
    out
}

/// Routing by exhaustive scan with a local cosine.
pub fn oracle_route(
    p_t: &[f64],
    history: &[Vec<f64>],
    tau_smooth: f64,
    tau_rec: f64,
) -> (usize, f64, &'static str) {
    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
    let mut best = 0usize;
    let mut s_max = f64::NEG_INFINITY;
    for (i, p) in history.iter().enumerate() {
        let s = cos(p_t, p);
        if s >= s_max {
            s_max = s;
            best = i;
        }
    }
    let t_minus_1 = history.len() - 1;
    let mode = if best == t_minus_1 && s_max >= tau_smooth {
        "smooth"
    } else if best != t_minus_1 && s_max >= tau_rec {
        "recall"
    } else {
        "hard"
    };
    (best, s_max, mode)
}
