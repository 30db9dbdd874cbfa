//! Difference-aware memory decay: old/new key discrepancy, min-max
//! normalization, the affine rate map, and exponential weights. The engine
//! applies the resulting weight twice per token (attention logit and value),
//! so conflicting old memory fades from both matching and output.

use crate::error::{Error, Result};
use crate::tensor::cosine;

/// d = 1 - cos(old, new) in [0, 2]. Zero-norm keys are neutral (d = 1).
pub fn discrepancy(old: &[f64], new: &[f64]) -> f64 {
    if old.iter().all(|&v| v == 0.0) || new.iter().all(|&v| v == 0.0) {
        return 1.0;
    }
    1.0 - cosine(old, new)
}

/// Min-max normalization over one arming batch: (d - min) / (max - min + eps).
/// A uniform batch maps to all zeros.
pub fn normalize(ds: &[f64], epsilon: f64) -> Vec<f64> {
    if ds.is_empty() {
        return Vec::new();
    }
    let min = ds.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom = max - min + epsilon;
    ds.iter().map(|d| ((d - min) / denom).clamp(0.0, 1.0)).collect()
}

/// mu = mu_min + (mu_max - mu_min) * delta, elementwise.
pub fn rates(deltas: &[f64], mu_min: f64, mu_max: f64) -> Result<Vec<f64>> {
    if mu_min > mu_max {
        return Err(Error::Config(format!("mu_min {mu_min} exceeds mu_max {mu_max}")));
    }
    Ok(deltas.iter().map(|d| mu_min + (mu_max - mu_min) * d).collect())
}

/// w = exp(-r * mu).
#[inline]
pub fn weight(mu: f64, r: u64) -> f64 {
    (-(r as f64) * mu).exp()
}

/// The decayed logit is the plain logit scaled by w, computed exactly as that
/// product so the homogeneity law holds to the last bit.
#[inline]
pub fn decayed_logit(raw_logit: f64, w: f64) -> f64 {
    w * raw_logit
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrepancy_endpoints() {
        let k = [1.0, 2.0, -1.0];
        assert_eq!(discrepancy(&k, &k), 0.0);
        let neg: Vec<f64> = k.iter().map(|v| -v).collect();
        assert_eq!(discrepancy(&k, &neg), 2.0);
        assert_eq!(discrepancy(&[0.0, 0.0, 0.0], &k), 1.0);
    }

    #[test]
    fn normalization_spreads_to_unit_range() {
        let deltas = normalize(&[0.0, 1.0, 2.0], 1e-6);
        assert!(deltas[0].abs() < 1e-6);
        assert!((deltas[1] - 0.5).abs() < 1e-6);
        assert!((deltas[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_batch_normalizes_to_zero() {
        assert_eq!(normalize(&[0.3, 0.3, 0.3], 1e-8), vec![0.0, 0.0, 0.0]);
        assert!(normalize(&[], 1e-8).is_empty());
    }

    #[test]
    fn rate_map_endpoints_and_midpoint() {
        let mu = rates(&[0.0, 0.5, 1.0], 0.05, 0.7).unwrap();
        assert_eq!(mu[0], 0.05);
        assert!((mu[1] - 0.375).abs() < 1e-15);
        assert_eq!(mu[2], 0.7);
        assert!(rates(&[0.0], 0.8, 0.7).is_err());
    }

    #[test]
    fn weight_closed_forms() {
        assert_eq!(weight(0.5, 0), 1.0);
        assert!((weight(0.1, 10) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn logit_scaling_is_exact_multiplication() {
        // q.k = 2, d_head = 4, w = 0.5: decayed logit is 0.5 exactly.
        let raw = 2.0 / 4.0f64.sqrt();
        assert_eq!(decayed_logit(raw, 0.5), 0.5);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn deltas_stay_in_unit_interval(
            ds in proptest::collection::vec(0.0f64..2.0, 1..64),
        ) {
            for d in normalize(&ds, 1e-8) {
                prop_assert!((0.0..=1.0).contains(&d));
            }
        }

        #[test]
        fn rates_stay_in_bounds(
            ds in proptest::collection::vec(0.0f64..=1.0, 1..64),
        ) {
            for mu in rates(&ds, 0.05, 0.7).unwrap() {
                prop_assert!((0.05..=0.7).contains(&mu));
            }
        }

        #[test]
        fn equal_rates_preserve_logit_order(
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
            r in 0u64..40,
        ) {
            // With a shared mu, scaling by w preserves relative ranking.
            let w = weight(0.3, r);
            prop_assert_eq!(a >= b, decayed_logit(a, w) >= decayed_logit(b, w));
        }

        #[test]
        fn high_delta_tokens_die_first(r in 1u64..60) {
            let w_fast = weight(0.7, r);
            let w_slow = weight(0.05, r);
            prop_assert!(w_fast < w_slow);
        }
    }
}
