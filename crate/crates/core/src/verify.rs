//! Self-verification suite. Every check compares a production code path
//! against an independent reference in `oracles` (different algorithm, no
//! shared helpers) or against a closed-form construction, and reports one
//! pass/fail line. The CLI `verify` subcommand runs all of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::compression::{self, CalibrationStats, ScoredToken};
use crate::config::EngineConfig;
use crate::decay;
use crate::engine::Engine;
use crate::error::Result;
use crate::memory::{AssembledContext, ContextSlot, FrameKV, Segment};
use crate::memory::anchor_insert_sequence;
use crate::oracles;
use crate::recall::{fuse, fusion_weights, SceneCenters};
use crate::rope::{frequencies, relative_reindex, RopeConfig};
use crate::routing::{route, Mode};
use crate::script::{SceneScript, SceneSpec};
use crate::tensor::TokenGrid;
use crate::trace::TraceRecord;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub pass: bool,
    pub cases: usize,
    pub max_err: f64,
    pub detail: String,
}

impl CheckReport {
    fn pass(name: &'static str, cases: usize, max_err: f64) -> Self {
        Self { name, pass: true, cases, max_err, detail: String::new() }
    }

    fn fail(name: &'static str, cases: usize, max_err: f64, detail: String) -> Self {
        Self { name, pass: false, cases, max_err, detail }
    }
}

fn randn(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Pre-rotation phase scoring must equal the score obtained by actually
/// rotating both vectors, at any absolute position (covariance: only the
/// index difference matters).
pub fn check_phase_alignment(cfg: &EngineConfig) -> CheckReport {
    check_phase_alignment_with(cfg, compression::phase_score)
}

/// Same check with a pluggable scorer, so tests can prove the check has
/// teeth by feeding it a corrupted implementation.
pub fn check_phase_alignment_with(
    cfg: &EngineConfig,
    scorer: impl Fn(&[(f64, f64)], &[f64], f64, &[f64]) -> Result<f64>,
) -> CheckReport {
    const NAME: &str = "phase-alignment";
    let d_head = cfg.model.d_head;
    let base = cfg.model.rope_base;
    let rope = RopeConfig { d_head, base, window: cfg.model.window };
    let freqs = frequencies(&rope);
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let mut max_err = 0.0f64;
    let trials = 10_000;
    for i in 0..trials {
        let q_flat = randn(&mut rng, d_head);
        let q_bar: Vec<(f64, f64)> =
            q_flat.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        let key = randn(&mut rng, d_head);
        let delta = rng.random_range(0.0..64.0);
        let p1 = delta + rng.random_range(0.0..40.0);
        let p2 = delta + rng.random_range(0.0..40.0);
        let got = match scorer(&q_bar, &key, delta, &freqs) {
            Ok(s) => s,
            Err(e) => return CheckReport::fail(NAME, i, f64::MAX, format!("scorer error: {e}")),
        };
        let want1 = oracles::oracle_rotation_score(&q_flat, &key, delta, p1, d_head, base);
        let want2 = oracles::oracle_rotation_score(&q_flat, &key, delta, p2, d_head, base);
        for want in [want1, want2] {
            let err = (got - want).abs() / got.abs().max(want.abs()).max(1.0);
            max_err = max_err.max(err);
            if err > 1e-6 {
                return CheckReport::fail(
                    NAME,
                    i,
                    max_err,
                    format!("score {got} vs rotated {want} at delta {delta}"),
                );
            }
        }
    }
    CheckReport::pass(NAME, trials, max_err)
}

/// Relative re-indexing is purely ordinal and refuses over-window inputs.
pub fn check_relative_reindex(cfg: &EngineConfig) -> CheckReport {
    const NAME: &str = "relative-reindex";
    let rope = RopeConfig::from_model(&cfg.model);
    let mut rng = ChaCha20Rng::seed_from_u64(103);
    let trials = 500;
    for i in 0..trials {
        let n = rng.random_range(0..=cfg.model.window);
        let cached: Vec<u64> = (0..n).map(|_| rng.random_range(0..1_000_000)).collect();
        match relative_reindex(&cached, &rope) {
            Ok(idx) => {
                let want: Vec<usize> = (0..n).collect();
                if idx != want {
                    return CheckReport::fail(NAME, i, 1.0, format!("indices {idx:?}"));
                }
            }
            Err(e) => return CheckReport::fail(NAME, i, 1.0, format!("unexpected error: {e}")),
        }
    }
    let over: Vec<u64> = (0..=cfg.model.window as u64).collect();
    if relative_reindex(&over, &rope).is_ok() {
        return CheckReport::fail(NAME, trials, 1.0, "over-window input accepted".into());
    }
    CheckReport::pass(NAME, trials + 1, 0.0)
}

/// Bounded-heap retention must agree with full-sort selection, ties included.
pub fn check_topk_selection(_cfg: &EngineConfig) -> CheckReport {
    const NAME: &str = "topk-selection";
    let mut rng = ChaCha20Rng::seed_from_u64(107);
    let trials = 1_000;
    for i in 0..trials {
        let n = rng.random_range(1..=256usize);
        let k = rng.random_range(0..=n);
        let tokens: Vec<ScoredToken> = (0..n)
            .map(|_| ScoredToken {
                source_frame: rng.random_range(0..32),
                head: 0,
                spatial_pos: rng.random_range(0..4),
                scene_id: 0,
                // Coarse score grid forces plenty of ties.
                score: rng.random_range(0..8) as f64 * 0.5,
                key: Vec::new(),
                value: Vec::new(),
                decay: None,
            })
            .collect();
        let got = compression::compress(tokens.clone(), k);
        let want = oracles::oracle_topk(tokens, k);
        let gk: Vec<(u64, usize, f64)> =
            got.iter().map(|t| (t.source_frame, t.spatial_pos, t.score)).collect();
        let wk: Vec<(u64, usize, f64)> =
            want.iter().map(|t| (t.source_frame, t.spatial_pos, t.score)).collect();
        if gk != wk {
            return CheckReport::fail(NAME, i, 1.0, format!("n={n} k={k}: {gk:?} vs {wk:?}"));
        }
    }
    CheckReport::pass(NAME, trials, 0.0)
}

/// The closed-form anchor update positions must match an incremental cursor
/// walk, wrap correctly, and visit the whole pool.
pub fn check_anchor_walk(_cfg: &EngineConfig) -> CheckReport {
    const NAME: &str = "anchor-walk";
    let mut cases = 0;
    for (s, pool) in [(3usize, 12usize), (3, 18), (4, 10), (1, 7)] {
        let mut cursor = 0usize;
        let mut seen = vec![false; pool];
        for r in 1..=1_000u64 {
            cursor = (cursor + s) % pool;
            let forward: Vec<usize> = (0..s).map(|i| (cursor + i) % pool).collect();
            let want: Vec<usize> = if r % 2 == 1 {
                forward
            } else {
                forward.into_iter().rev().collect()
            };
            let got = anchor_insert_sequence(r, s, pool);
            if got != want {
                return CheckReport::fail(
                    NAME,
                    cases,
                    1.0,
                    format!("r={r} s={s} pool={pool}: {got:?} vs {want:?}"),
                );
            }
            for &i in &got {
                if i >= pool {
                    return CheckReport::fail(NAME, cases, 1.0, format!("index {i} out of pool"));
                }
                seen[i] = true;
            }
            cases += 1;
        }
        if seen.iter().any(|s| !s) {
            return CheckReport::fail(NAME, cases, 1.0, format!("pool {pool} never fully visited"));
        }
    }
    CheckReport::pass(NAME, cases, 0.0)
}

/// Calibration means must not depend on absorption order.
pub fn check_calibration_order(cfg: &EngineConfig) -> CheckReport {
    const NAME: &str = "calibration-order";
    let m = &cfg.model;
    let mut rng = ChaCha20Rng::seed_from_u64(109);
    let grids: Vec<TokenGrid> = (0..50)
        .map(|_| {
            TokenGrid::from_vec(
                m.heads,
                m.spatial,
                m.d_head,
                randn(&mut rng, m.heads * m.spatial * m.d_head),
            )
            .expect("sized")
        })
        .collect();
    let mut fwd = CalibrationStats::new(m.heads, m.d_head);
    for g in &grids {
        fwd.calibrate(g).expect("unfrozen");
    }
    let mut rev = CalibrationStats::new(m.heads, m.d_head);
    for g in grids.iter().rev() {
        rev.calibrate(g).expect("unfrozen");
    }
    let mut max_err = 0.0f64;
    for h in 0..m.heads {
        let (qa, qb) = (fwd.q_bar(h).unwrap(), rev.q_bar(h).unwrap());
        for (a, b) in qa.iter().zip(&qb) {
            max_err = max_err.max((a.0 - b.0).abs()).max((a.1 - b.1).abs());
        }
        let (aa, ab) = (fwd.a_bar(h).unwrap(), rev.a_bar(h).unwrap());
        for (a, b) in aa.iter().zip(&ab) {
            max_err = max_err.max((a - b).abs());
        }
    }
    if max_err > 1e-9 {
        return CheckReport::fail(NAME, grids.len(), max_err, "order-dependent means".into());
    }
    CheckReport::pass(NAME, grids.len(), max_err)
}

/// Fusion weights must be a proper convex combination and the fused frame
/// must stay inside the candidates' coordinate hull.
pub fn check_recall_fusion(cfg: &EngineConfig) -> CheckReport {
    const NAME: &str = "recall-fusion";
    let m = &cfg.model;
    let mut rng = ChaCha20Rng::seed_from_u64(113);
    let trials = 100;
    let mut max_err = 0.0f64;
    for trial in 0..trials {
        let frames: Vec<FrameKV> = (0..5)
            .map(|i| FrameKV {
                frame_index: i,
                scene_id: 0,
                keys: TokenGrid::from_vec(
                    m.heads,
                    m.spatial,
                    m.d_head,
                    randn(&mut rng, m.heads * m.spatial * m.d_head),
                )
                .expect("sized"),
                values: TokenGrid::from_vec(
                    m.heads,
                    m.spatial,
                    m.d_head,
                    randn(&mut rng, m.heads * m.spatial * m.d_head),
                )
                .expect("sized"),
            })
            .collect();
        let mut centers = SceneCenters::new(m.heads, m.spatial, m.d_head);
        for _ in 0..3 {
            let g = TokenGrid::from_vec(
                m.heads,
                m.spatial,
                m.d_head,
                randn(&mut rng, m.heads * m.spatial * m.d_head),
            )
            .expect("sized");
            centers.absorb(&g).expect("shaped");
        }
        let cands: Vec<&FrameKV> = frames.iter().collect();
        let rec = match fuse(&cands, &centers, 0) {
            Ok(r) => r,
            Err(e) => return CheckReport::fail(NAME, trial, 1.0, format!("fusion error: {e}")),
        };
        for h in 0..m.heads {
            for u in 0..m.spatial {
                let w = fusion_weights(&cands, &centers, h, u).expect("weights");
                let sum: f64 = w.iter().sum();
                max_err = max_err.max((sum - 1.0).abs());
                if (sum - 1.0).abs() > 1e-9 || w.iter().any(|&x| !(0.0..=1.0 + 1e-12).contains(&x)) {
                    return CheckReport::fail(NAME, trial, max_err, format!("weights {w:?}"));
                }
                for d in 0..m.d_head {
                    let coords: Vec<f64> = cands.iter().map(|c| c.keys.slot(h, u)[d]).collect();
                    let lo = coords.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let x = rec.k_rec.slot(h, u)[d];
                    if x < lo - 1e-9 || x > hi + 1e-9 {
                        return CheckReport::fail(
                            NAME,
                            trial,
                            max_err,
                            format!("fused coord {x} outside [{lo}, {hi}]"),
                        );
                    }
                }
            }
        }
    }
    CheckReport::pass(NAME, trials, max_err)
}

/// Decayed logits are the exact product of weight and raw logit, weights
/// drain old attention mass monotonically, and a 7-step fast-decay pass
/// pushes a strong old segment under 5% of the mass.
pub fn check_decay_suppression(cfg: &EngineConfig) -> CheckReport {
    const NAME: &str = "decay-suppression";
    let mut rng = ChaCha20Rng::seed_from_u64(127);
    let mut max_err = 0.0f64;
    let mut cases = 0;
    for _ in 0..1_000 {
        let raw: f64 = rng.sample::<f64, _>(StandardNormal) * 8.0;
        let w = rng.random_range(0.0..=1.0);
        let got = decay::decayed_logit(raw, w);
        if got != w * raw {
            return CheckReport::fail(NAME, cases, f64::MAX, "logit not exact product".into());
        }
        let s = rng.random_range(0.1..10.0);
        let hom = (decay::decayed_logit(s * raw, w) - s * got).abs();
        max_err = max_err.max(hom / (s * got).abs().max(1.0));
        cases += 1;
    }
    // Normalization endpoints drive the rate bounds exactly.
    let deltas = decay::normalize(&[2.0, 0.5], 0.0);
    let mus = decay::rates(&deltas, cfg.decay.mu_min, cfg.decay.mu_max).expect("bounds");
    if (mus[0] - cfg.decay.mu_max).abs() > 1e-12 || (mus[1] - cfg.decay.mu_min).abs() > 1e-12 {
        return CheckReport::fail(NAME, cases, 1.0, format!("rate endpoints {mus:?}"));
    }
    // 32 strong old tokens (raw logit 8) against 32 fresh tokens (logit 4):
    // after 7 blocks at mu_max the old mass must fall below 5%, and it must
    // fall monotonically along the way.
    let mut prev = f64::INFINITY;
    let mut final_mass = f64::NAN;
    for r in 0..=7u64 {
        let w = decay::weight(cfg.decay.mu_max, r);
        let old = 32.0 * decay::decayed_logit(8.0, w).exp();
        let new = 32.0 * 4.0f64.exp();
        let mass = old / (old + new);
        if mass >= prev {
            return CheckReport::fail(NAME, cases, 1.0, format!("mass rose at r={r}"));
        }
        prev = mass;
        final_mass = mass;
        cases += 1;
    }
    if !(final_mass < 0.05) {
        return CheckReport::fail(
            NAME,
            cases,
            final_mass,
            format!("old mass {final_mass:.4} after 7 blocks"),
        );
    }
    CheckReport::pass(NAME, cases, max_err)
}

/// Gate closed forms: aligned 1, orthogonal e^-lambda, opposed e^-2 lambda.
pub fn check_drift_gate(cfg: &EngineConfig) -> CheckReport {
    const NAME: &str = "drift-gate";
    let l = cfg.compression.lambda;
    let cases = [
        (vec![2.0, 0.0], 1.0),
        (vec![0.0, 3.0], (-l).exp()),
        (vec![-1.0, 0.0], (-2.0 * l).exp()),
    ];
    let mut max_err = 0.0f64;
    for (q, want) in &cases {
        let got = match compression::drift_gate(q, &[1.0, 0.0], l) {
            Ok(g) => g,
            Err(e) => return CheckReport::fail(NAME, 0, 1.0, format!("gate error: {e}")),
        };
        max_err = max_err.max((got - want).abs());
    }
    if max_err > 1e-9 {
        return CheckReport::fail(NAME, cases.len(), max_err, "gate closed form".into());
    }
    CheckReport::pass(NAME, cases.len(), max_err)
}

/// Similarity routing agrees with an exhaustive-scan oracle away from the
/// decision thresholds.
pub fn check_routing_modes(cfg: &EngineConfig) -> CheckReport {
    const NAME: &str = "routing-modes";
    let mut rng = ChaCha20Rng::seed_from_u64(131);
    let dim = cfg.model.embedding_dim;
    let r = &cfg.routing;
    let trials = 500;
    let mut max_err = 0.0f64;
    for trial in 0..trials {
        let t = rng.random_range(1..=6usize);
        let history: Vec<Vec<f64>> = (0..t).map(|_| randn(&mut rng, dim)).collect();
        // Bias half the draws toward a history entry so every mode shows up.
        let p_t: Vec<f64> = if rng.random_range(0..2) == 0 {
            let i = rng.random_range(0..t);
            let noise = randn(&mut rng, dim);
            history[i].iter().zip(&noise).map(|(h, n)| h + 0.1 * n).collect()
        } else {
            randn(&mut rng, dim)
        };
        let got = match route(&p_t, &history, r) {
            Ok(d) => d,
            Err(e) => return CheckReport::fail(NAME, trial, 1.0, format!("route error: {e}")),
        };
        let (oi, os, om) = oracles::oracle_route(&p_t, &history, r.tau_smooth, r.tau_rec);
        max_err = max_err.max((got.s_max - os).abs());
        if got.i_star != Some(oi) || (got.s_max - os).abs() > 1e-12 {
            return CheckReport::fail(
                NAME,
                trial,
                max_err,
                format!("target {:?} vs {oi}", got.i_star),
            );
        }
        let near =
            (got.s_max - r.tau_smooth).abs() < 1e-9 || (got.s_max - r.tau_rec).abs() < 1e-9;
        if !near {
            let gm = match got.mode {
                Mode::Smooth => "smooth",
                Mode::Hard => "hard",
                Mode::Recall => "recall",
            };
            if gm != om {
                return CheckReport::fail(NAME, trial, max_err, format!("mode {gm} vs {om}"));
            }
        }
    }
    CheckReport::pass(NAME, trials, max_err)
}

/// Streaming attention with max-subtracted softmax and two-level suppression
/// must match the textbook dense computation on materialized rotated keys.
pub fn check_attention_dense(cfg: &EngineConfig) -> CheckReport {
    const NAME: &str = "attention-dense";
    let m = &cfg.model;
    let rope = RopeConfig::from_model(m);
    let freqs = frequencies(&rope);
    let scale = 1.0 / (m.d_head as f64).sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(137);
    let trials = 50;
    let mut max_err = 0.0f64;
    for trial in 0..trials {
        let n = rng.random_range(1..=64usize);
        let query_pos = n as f64 - 1.0;
        let mut keys = Vec::with_capacity(m.heads);
        let mut vals = Vec::with_capacity(m.heads);
        let mut meta = Vec::with_capacity(m.heads);
        for _ in 0..m.heads {
            let mut hk = Vec::with_capacity(n);
            let mut hv = Vec::with_capacity(n);
            let mut hm = Vec::with_capacity(n);
            for j in 0..n {
                hk.push(randn(&mut rng, m.d_head).iter().map(|v| v * 0.5).collect::<Vec<f64>>());
                hv.push(randn(&mut rng, m.d_head));
                let old = rng.random_range(0..4) == 0;
                let w = if old { rng.random_range(0.05..1.0) } else { 1.0 };
                let seg = match rng.random_range(0..3) {
                    0 => Segment::Anchor,
                    1 => Segment::Compressed,
                    _ => Segment::Recent,
                };
                hm.push((j as f64, w, seg, old));
            }
            keys.push(hk);
            vals.push(hv);
            meta.push(hm);
        }
        let queries = TokenGrid::from_vec(
            m.heads,
            m.spatial,
            m.d_head,
            randn(&mut rng, m.heads * m.spatial * m.d_head)
                .iter()
                .map(|v| v * 0.5)
                .collect(),
        )
        .expect("sized");

        let slots: Vec<Vec<ContextSlot<'_>>> = (0..m.heads)
            .map(|h| {
                (0..n)
                    .map(|j| {
                        let (idx, w, seg, old) = meta[h][j];
                        ContextSlot {
                            key: &keys[h][j],
                            value: &vals[h][j],
                            rope_index: idx,
                            weight: w,
                            segment: seg,
                            old,
                            recall: false,
                            source_frame: j as u64,
                            spatial_pos: 0,
                            scene_id: 0,
                        }
                    })
                    .collect()
            })
            .collect();
        let ctx = AssembledContext {
            slots,
            fe: n,
            anchor_fe: 0,
            compressed_fe: 0,
            recent_fe: n,
            query_pos,
            max_index: query_pos,
            rope_overflow: false,
        };
        let (out, stats) = match crate::attention::attend(&queries, &ctx, &freqs) {
            Ok(r) => r,
            Err(e) => return CheckReport::fail(NAME, trial, 1.0, format!("attend error: {e}")),
        };
        let total = stats.total();
        max_err = max_err.max((total - 1.0).abs());
        if (total - 1.0).abs() > 1e-9 {
            return CheckReport::fail(NAME, trial, max_err, format!("mass total {total}"));
        }
        for h in 0..m.heads {
            let rot_keys: Vec<Vec<f64>> = (0..n)
                .map(|j| oracles::oracle_rotate(&keys[h][j], meta[h][j].0, m.d_head, m.rope_base))
                .collect();
            let weights: Vec<f64> = meta[h].iter().map(|t| t.1).collect();
            for u in 0..m.spatial {
                let q_rot =
                    oracles::oracle_rotate(queries.slot(h, u), query_pos, m.d_head, m.rope_base);
                let want =
                    oracles::oracle_dense_attention(&q_rot, &rot_keys, &vals[h], &weights, scale);
                for (a, b) in out.slot(h, u).iter().zip(&want) {
                    let err = (a - b).abs();
                    max_err = max_err.max(err);
                    if err > 1e-9 {
                        return CheckReport::fail(
                            NAME,
                            trial,
                            max_err,
                            format!("output {a} vs dense {b}"),
                        );
                    }
                }
            }
        }
    }
    CheckReport::pass(NAME, trials, max_err)
}

/// A long single-scene rollout must keep the context at or under the window
/// budget at every block and settle at the full layout in steady state.
pub fn check_budget_rollout(cfg: &EngineConfig) -> CheckReport {
    const NAME: &str = "budget-rollout";
    let blocks = 2_000u64;
    let script = SceneScript {
        scenes: vec![SceneSpec {
            prompt: Some("slow pan across one landscape".into()),
            duration_blocks: Some(blocks),
            ..Default::default()
        }],
        seed: None,
        layout: None,
        blocks_per_second: None,
    };
    let scenes = match script.resolve(cfg) {
        Ok(s) => s,
        Err(e) => return CheckReport::fail(NAME, 0, 1.0, format!("script: {e}")),
    };
    let mut engine = match Engine::new(cfg.clone(), scenes) {
        Ok(e) => e,
        Err(e) => return CheckReport::fail(NAME, 0, 1.0, format!("engine: {e}")),
    };
    let layout = cfg.layout_resolved();
    let window = cfg.model.window;
    let mut records: Vec<TraceRecord> = Vec::with_capacity(blocks as usize);
    if let Err(e) = engine.run(|r| records.push(r.clone())) {
        return CheckReport::fail(NAME, records.len(), 1.0, format!("rollout: {e}"));
    }
    for r in &records {
        if r.cache.total_fe > window {
            return CheckReport::fail(
                NAME,
                records.len(),
                r.cache.total_fe as f64,
                format!("block {}: {} frame-equivalents", r.block, r.cache.total_fe),
            );
        }
        if r.cache.rope_overflow {
            return CheckReport::fail(
                NAME,
                records.len(),
                r.cache.max_rel_index,
                format!("block {}: index overflow without transition", r.block),
            );
        }
    }
    // Steady state: full layout, newest index at window-1.
    for r in records.iter().skip(30) {
        let want = layout.total();
        if r.cache.total_fe != want
            || (r.cache.max_rel_index - (want as f64 - 1.0)).abs() > 1e-12
            || (r.cache.query_pos - (want as f64 - 1.0)).abs() > 1e-12
        {
            return CheckReport::fail(
                NAME,
                records.len(),
                r.cache.total_fe as f64,
                format!(
                    "block {}: fe {} max_idx {} (want {})",
                    r.block, r.cache.total_fe, r.cache.max_rel_index, want
                ),
            );
        }
    }
    CheckReport::pass(NAME, records.len(), 0.0)
}

/// Two rollouts of the same script and seed must serialize byte-identically.
pub fn check_determinism(cfg: &EngineConfig) -> CheckReport {
    const NAME: &str = "determinism";
    let script = SceneScript {
        scenes: vec![
            SceneSpec {
                prompt: Some("harbor at dawn".into()),
                duration_blocks: Some(8),
                ..Default::default()
            },
            SceneSpec {
                prompt: Some("machine hall".into()),
                duration_blocks: Some(8),
                ..Default::default()
            },
            SceneSpec {
                prompt: Some("harbor again".into()),
                align_to: Some(0),
                cosine: Some(0.95),
                duration_blocks: Some(8),
                ..Default::default()
            },
        ],
        seed: None,
        layout: None,
        blocks_per_second: None,
    };
    let run = |cfg: &EngineConfig| -> Result<Vec<String>> {
        let scenes = script.resolve(cfg)?;
        let mut engine = Engine::new(cfg.clone(), scenes)?;
        let mut lines = Vec::new();
        while !engine.finished() {
            let rec = engine.step()?;
            lines.push(serde_json::to_string(&rec)?);
        }
        Ok(lines)
    };
    let a = match run(cfg) {
        Ok(v) => v,
        Err(e) => return CheckReport::fail(NAME, 0, 1.0, format!("first run: {e}")),
    };
    let b = match run(cfg) {
        Ok(v) => v,
        Err(e) => return CheckReport::fail(NAME, 0, 1.0, format!("second run: {e}")),
    };
    if a != b {
        let at = a.iter().zip(&b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
        return CheckReport::fail(NAME, a.len(), 1.0, format!("runs diverge at line {at}"));
    }
    CheckReport::pass(NAME, a.len(), 0.0)
}

/// Runs the whole suite in a stable order.
pub fn run_all(cfg: &EngineConfig) -> Vec<CheckReport> {
    vec![
        check_phase_alignment(cfg),
        check_relative_reindex(cfg),
        check_topk_selection(cfg),
        check_anchor_walk(cfg),
        check_calibration_order(cfg),
        check_recall_fusion(cfg),
        check_decay_suppression(cfg),
        check_drift_gate(cfg),
        check_routing_modes(cfg),
        check_attention_dense(cfg),
        check_budget_rollout(cfg),
        check_determinism(cfg),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::phase_score;

    #[test]
    fn phase_check_passes_and_catches_corruption() {
        let cfg = EngineConfig::default();
        assert!(check_phase_alignment(&cfg).pass);
        // A sign flip on the imaginary part must be caught.
        let corrupted = |q: &[(f64, f64)], k: &[f64], d: f64, f: &[f64]| {
            let flipped: Vec<(f64, f64)> = q.iter().map(|&(re, im)| (re, -im)).collect();
            phase_score(&flipped, k, d, f)
        };
        let report = check_phase_alignment_with(&cfg, corrupted);
        assert!(!report.pass, "corrupted scorer slipped through");
    }

    #[test]
    fn cheap_checks_pass() {
        let cfg = EngineConfig::default();
        for report in [
            check_relative_reindex(&cfg),
            check_anchor_walk(&cfg),
            check_calibration_order(&cfg),
            check_drift_gate(&cfg),
            check_decay_suppression(&cfg),
        ] {
            assert!(report.pass, "{}: {}", report.name, report.detail);
        }
    }
}
