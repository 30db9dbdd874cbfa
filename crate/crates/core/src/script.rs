//! Scene scripts: the JSON input describing a rollout as a list of scenes
//! with prompts, durations, and optional transition tags.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::routing::{parse_tag, Mode};
use crate::tensor::norm;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneScript {
    pub scenes: Vec<SceneSpec>,
    /// Overrides the config seed when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks_per_second: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// Free text; a leading duration tag like "[3s#]" is honored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Explicit embedding; wins over seeded generation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Construct the embedding at a chosen cosine to an earlier scene's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align_to: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_blocks: Option<u64>,
    /// Explicit transition tag, e.g. "[2s]", "[4s#]", "[3s@]".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ResolvedScene {
    pub text: String,
    pub embedding: Vec<f64>,
    pub blocks: u64,
    pub tag: Option<Mode>,
}

impl SceneScript {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let script: SceneScript =
            serde_json::from_str(text).map_err(|e| Error::Script(e.to_string()))?;
        if script.scenes.is_empty() {
            return Err(Error::Script("script has no scenes".into()));
        }
        Ok(script)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Expands every scene into an embedding, a block count, and a parsed
    /// transition mode. Later scenes may reference earlier ones, so this
    /// resolves front to back.
    pub fn resolve(&self, cfg: &EngineConfig) -> Result<Vec<ResolvedScene>> {
        let bps = self.blocks_per_second.unwrap_or(cfg.blocks_per_second);
        if !(bps.is_finite() && bps > 0.0) {
            return Err(Error::Script("blocks_per_second must be positive".into()));
        }
        let base_seed = self.seed.unwrap_or(cfg.seed);
        let dim = cfg.model.embedding_dim;
        let mut resolved: Vec<ResolvedScene> = Vec::with_capacity(self.scenes.len());

        for (i, entry) in self.scenes.iter().enumerate() {
            let text = entry.prompt.clone().unwrap_or_default();

            // Tag: explicit field wins, else a leading tag in the prompt.
            let tagged = match &entry.tag {
                Some(t) => {
                    let parsed = parse_tag(t, i)?;
                    if parsed.is_none() {
                        return Err(Error::TagParse { tag: t.clone(), block: i });
                    }
                    parsed
                }
                None => parse_tag(&text, i)?,
            };
            let (tag_mode, tag_seconds) = match tagged {
                Some((m, s)) => (Some(m), Some(s)),
                None => (None, None),
            };

            // Duration precedence: explicit blocks, then the tag's seconds,
            // then duration_s. Default one second.
            let blocks = if let Some(bl) = entry.duration_blocks {
                if bl == 0 {
                    return Err(Error::Script(format!("scene {i}: zero duration")));
                }
                bl
            } else {
                let seconds = tag_seconds.or(entry.duration_s).unwrap_or(1.0);
                if !(seconds.is_finite() && seconds > 0.0) {
                    return Err(Error::Script(format!("scene {i}: bad duration {seconds}")));
                }
                ((seconds * bps).round() as u64).max(1)
            };

            let embedding = self.scene_embedding(i, entry, dim, base_seed, &resolved)?;
            resolved.push(ResolvedScene { text, embedding, blocks, tag: tag_mode });
        }
        Ok(resolved)
    }

    fn scene_embedding(
        &self,
        i: usize,
        entry: &SceneSpec,
        dim: usize,
        base_seed: u64,
        resolved: &[ResolvedScene],
    ) -> Result<Vec<f64>> {
        if let Some(e) = &entry.embedding {
            if e.len() != dim {
                return Err(Error::Dimension { expected: dim, got: e.len() });
            }
            if norm(e) == 0.0 {
                return Err(Error::Script(format!("scene {i}: zero embedding")));
            }
            return Ok(e.clone());
        }
        if let Some(target) = entry.align_to {
            let c = entry.cosine.ok_or_else(|| {
                Error::Script(format!("scene {i}: align_to without cosine"))
            })?;
            if !(c.is_finite() && (-1.0..=1.0).contains(&c)) {
                return Err(Error::Script(format!("scene {i}: cosine {c} out of range")));
            }
            let p_ref = resolved
                .get(target)
                .ok_or_else(|| Error::Script(format!("scene {i}: align_to {target} not yet resolved")))?
                .embedding
                .clone();
            let seed = entry.seed.unwrap_or(base_seed.wrapping_add(i as u64));
            let raw = seeded_unit(dim, seed);
            // Orthogonalize against the reference, then mix at the cosine.
            let r_hat: Vec<f64> = {
                let n = norm(&p_ref);
                p_ref.iter().map(|v| v / n).collect()
            };
            let proj: f64 = raw.iter().zip(&r_hat).map(|(a, b)| a * b).sum();
            let mut perp: Vec<f64> = raw.iter().zip(&r_hat).map(|(a, b)| a - proj * b).collect();
            let pn = norm(&perp);
            if pn < 1e-12 {
                return Err(Error::Script(format!("scene {i}: degenerate alignment draw")));
            }
            for v in perp.iter_mut() {
                *v /= pn;
            }
            let s = (1.0 - c * c).max(0.0).sqrt();
            return Ok(r_hat.iter().zip(&perp).map(|(r, p)| c * r + s * p).collect());
        }
        let seed = entry.seed.unwrap_or(base_seed.wrapping_add(i as u64));
        Ok(seeded_unit(dim, seed))
    }
}

/// Deterministic unit vector from a seed.
fn seeded_unit(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    let n = norm(&v);
    if n == 0.0 {
        v[0] = 1.0;
        return v;
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    v
}
