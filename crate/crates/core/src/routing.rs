//! Scene transition routing: explicit prompt tags, similarity-based mode
//! inference over prompt embeddings, and the temporal offset each mode
//! assigns to the first new-scene frames.

use serde::{Deserialize, Serialize};

use crate::config::RoutingConfig;
use crate::error::{Error, Result};
use crate::tensor::cosine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Smooth,
    Hard,
    Recall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingDecision {
    pub mode: Mode,
    /// Recall target; set whenever history was scanned.
    pub i_star: Option<usize>,
    pub s_max: f64,
    /// Temporal offset in frames for the first new-scene frames.
    pub delta: u64,
}

/// Parses a leading control tag: "[Ns]" smooth, "[Ns#]" hard, "[Ns@]" recall,
/// N a positive duration in seconds. Returns None when the text does not
/// start with a tag; a text that opens a bracket but breaks the syntax is an
/// error, reported with the byte position of the offense.
pub fn parse_tag(text: &str, block: usize) -> Result<Option<(Mode, f64)>> {
    let rest = text.trim_start();
    if !rest.starts_with('[') {
        return Ok(None);
    }
    let bad = |tag: &str| Error::TagParse { tag: tag.to_string(), block };
    let close = rest.find(']').ok_or_else(|| bad(rest))?;
    let inner = &rest[1..close];
    let tag = &rest[..=close];
    let (body, mode) = match inner.chars().last() {
        Some('#') => (&inner[..inner.len() - 1], Mode::Hard),
        Some('@') => (&inner[..inner.len() - 1], Mode::Recall),
        _ => (inner, Mode::Smooth),
    };
    let secs = body.strip_suffix('s').ok_or_else(|| bad(tag))?;
    let n: f64 = secs.parse().map_err(|_| bad(tag))?;
    if !(n > 0.0) || !n.is_finite() {
        return Err(bad(tag));
    }
    Ok(Some((mode, n)))
}

/// Similarity scan over all prior scene embeddings. `history` holds
/// p_0 .. p_{t-1} for the scene starting at index t = history.len().
/// Ties in the argmax resolve toward the most recent scene.
pub fn route(p_t: &[f64], history: &[Vec<f64>], cfg: &RoutingConfig) -> Result<RoutingDecision> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let t = history.len();
    let mut i_star = 0usize;
    let mut s_max = f64::NEG_INFINITY;
    for (i, p) in history.iter().enumerate() {
        let s = cosine(p_t, p);
        if s >= s_max {
            i_star = i;
            s_max = s;
        }
    }
    let mode = if i_star == t - 1 && s_max >= cfg.tau_smooth {
        Mode::Smooth
    } else if i_star != t - 1 && s_max >= cfg.tau_rec {
        Mode::Recall
    } else {
        Mode::Hard
    };
    let delta = rope_offset(mode, t, i_star, cfg);
    Ok(RoutingDecision { mode, i_star: Some(i_star), s_max, delta })
}

/// Smooth continues consecutively, a hard cut jumps by delta_hard, recall
/// jumps proportionally to how far back the recalled scene lies, capped.
pub fn rope_offset(mode: Mode, t: usize, i_star: usize, cfg: &RoutingConfig) -> u64 {
    match mode {
        Mode::Smooth => 0,
        Mode::Hard => cfg.delta_hard,
        Mode::Recall => {
            let jump = (cfg.gamma * (t.saturating_sub(i_star)) as f64).floor() as u64;
            jump.min(cfg.delta_hard)
        }
    }
}

/// Recall target for a manually tagged transition: the most similar scene in
/// history excluding the immediate predecessor. Needs at least two scenes.
pub fn manual_recall_target(
    p_t: &[f64],
    history: &[Vec<f64>],
    block: usize,
) -> Result<(usize, f64)> {
    if history.len() < 2 {
        return Err(Error::RecallUnavailable { block });
    }
    let t = history.len();
    let mut best = 0usize;
    let mut s_max = f64::NEG_INFINITY;
    for (i, p) in history.iter().enumerate().take(t - 1) {
        let s = cosine(p_t, p);
        if s >= s_max {
            best = i;
            s_max = s;
        }
    }
    Ok((best, s_max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RoutingConfig {
        RoutingConfig::default()
    }

    fn axis(i: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn tag_syntax() {
        assert_eq!(parse_tag("[10s#] a beach at night", 0).unwrap(), Some((Mode::Hard, 10.0)));
        assert_eq!(parse_tag("[10s@] return to the kitchen", 0).unwrap(), Some((Mode::Recall, 10.0)));
        assert_eq!(parse_tag("[2.5s] drifting clouds", 0).unwrap(), Some((Mode::Smooth, 2.5)));
        assert_eq!(parse_tag("no tag here", 0).unwrap(), None);
        assert_eq!(parse_tag("", 0).unwrap(), None);
    }

    #[test]
    fn malformed_tags_error_with_block() {
        for bad in ["[10x] oops", "[s]", "[10s%]", "[10", "[-3s]"] {
            match parse_tag(bad, 7) {
                Err(Error::TagParse { block: 7, .. }) => {}
                other => panic!("{bad:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn smooth_when_predecessor_wins_above_threshold() {
        let hist = vec![axis(0, 4), axis(1, 4)];
        let mut p = axis(1, 4);
        p[0] = 0.2;
        let d = route(&p, &hist, &cfg()).unwrap();
        assert_eq!(d.mode, Mode::Smooth);
        assert_eq!(d.i_star, Some(1));
        assert_eq!(d.delta, 0);
    }

    #[test]
    fn recall_when_distant_scene_wins() {
        // t = 3, best match is scene 0 at 0.90.
        let hist = vec![axis(0, 4), axis(1, 4), axis(2, 4)];
        let mut p = axis(0, 4);
        p[3] = (1.0 - 0.9f64 * 0.9).sqrt() / 0.9;
        let p: Vec<f64> = {
            let n = crate::tensor::norm(&p);
            p.iter().map(|v| v / n).collect()
        };
        let d = route(&p, &hist, &cfg()).unwrap();
        assert_eq!(d.mode, Mode::Recall);
        assert_eq!(d.i_star, Some(0));
        assert!(d.s_max >= 0.85);
        assert_eq!(d.delta, 30);
    }

    #[test]
    fn hard_when_nothing_clears_threshold() {
        let hist = vec![axis(0, 4)];
        let d = route(&axis(1, 4), &hist, &cfg()).unwrap();
        assert_eq!(d.mode, Mode::Hard);
        assert_eq!(d.delta, 45);
    }

    #[test]
    fn argmax_ties_break_recent() {
        let hist = vec![axis(0, 4), axis(0, 4)];
        let d = route(&axis(0, 4), &hist, &cfg()).unwrap();
        assert_eq!(d.i_star, Some(1));
        assert_eq!(d.mode, Mode::Smooth);
    }

    #[test]
    fn empty_history_errors() {
        assert!(matches!(route(&axis(0, 4), &[], &cfg()), Err(Error::EmptyHistory)));
    }

    #[test]
    fn offsets_match_closed_forms() {
        let c = cfg();
        assert_eq!(rope_offset(Mode::Smooth, 5, 4, &c), 0);
        assert_eq!(rope_offset(Mode::Hard, 5, 4, &c), 45);
        assert_eq!(rope_offset(Mode::Recall, 4, 1, &c), 30);
        assert_eq!(rope_offset(Mode::Recall, 9, 1, &c), 45);
    }

    #[test]
    fn manual_recall_excludes_predecessor() {
        let hist = vec![axis(0, 4), axis(1, 4), axis(1, 4)];
        // Most similar overall is the predecessor; it must be skipped.
        let (i, _) = manual_recall_target(&axis(1, 4), &hist, 3).unwrap();
        assert_eq!(i, 1);
        assert!(matches!(
            manual_recall_target(&axis(0, 4), &hist[..1], 3),
            Err(Error::RecallUnavailable { block: 3 })
        ));
    }

    #[test]
    fn routing_is_scale_invariant() {
        let hist = vec![axis(0, 4), axis(1, 4), axis(2, 4)];
        let mut p = axis(0, 4);
        p[3] = 0.3;
        let scaled: Vec<f64> = p.iter().map(|v| v * 417.0).collect();
        let a = route(&p, &hist, &cfg()).unwrap();
        let b = route(&scaled, &hist, &cfg()).unwrap();
        assert_eq!(a.mode, b.mode);
        assert_eq!(a.i_star, b.i_star);
        assert!((a.s_max - b.s_max).abs() < 1e-12);
    }
}
