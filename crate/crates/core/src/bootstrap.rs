//! Symmetric nonparametric bootstrap confidence intervals.
//!
//! The interval is `[theta - h, theta + h]` where `theta` is the statistic on
//! the original data and `h` is the `k`-th smallest absolute deviation of the
//! bootstrap re-estimates from `theta`, with `k = ceil((1 - alpha) B)`.
//!
//! Replicate `b` draws from its own ChaCha stream (`seed`, stream `b`), so the
//! result depends only on the seed, never on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_REPLICATES: usize = 2000;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub center: f64,
    pub halfwidth: f64,
    /// `k / B`, the bootstrap mass actually inside the interval.
    pub achieved_mass: f64,
    pub replicates: usize,
    pub alpha: f64,
}

impl CiResult {
    pub fn lower(&self) -> f64 {
        self.center - self.halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.center + self.halfwidth
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower() <= x && x <= self.upper()
    }
}

/// Order-statistic index (1-based) used for the half-width.
pub fn order_index(replicates: usize, alpha: f64) -> usize {
    // guard against 0.95 * 2000 landing a hair above 1900
    let k = ((1.0 - alpha) * replicates as f64 - 1e-9).ceil() as usize;
    k.clamp(1, replicates)
}

pub fn arithmetic_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Bootstrap CI of `statistic` over `scores`.
pub fn bootstrap_ci<F>(
    scores: &[f64],
    statistic: F,
    replicates: usize,
    alpha: f64,
    seed: u64,
) -> Result<CiResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if scores.is_empty() {
        return Err(Error::InvalidArgument("bootstrap of an empty sample".into()));
    }
    if replicates == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one replicate".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0,1), got {alpha}")));
    }
    let n = scores.len();
    let center = statistic(scores);
    let mut deviations: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |buf, b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                buf.clear();
                buf.extend((0..n).map(|_| scores[rng.gen_range(0..n)]));
                (statistic(buf) - center).abs()
            },
        )
        .collect();
    deviations.sort_by(f64::total_cmp);
    let k = order_index(replicates, alpha);
    Ok(CiResult {
        center,
        halfwidth: deviations[k - 1],
        achieved_mass: k as f64 / replicates as f64,
        replicates,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn order_index_defaults() {
        assert_eq!(order_index(2000, 0.05), 1900);
        assert_eq!(order_index(1, 0.05), 1);
        assert_eq!(order_index(10, 0.95), 1);
        assert_eq!(order_index(3, 0.5), 2);
    }

    #[test]
    fn constant_scores_have_zero_width() {
        for (b, alpha) in [(1, 0.5), (100, 0.05), (500, 0.2)] {
            let ci = bootstrap_ci(&[0.3; 17], arithmetic_mean, b, alpha, 9).unwrap();
            assert_eq!(ci.halfwidth, 0.0);
            assert!((ci.center - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn single_observation_has_zero_width() {
        let ci = bootstrap_ci(&[0.42], arithmetic_mean, 200, 0.05, 1).unwrap();
        assert_eq!(ci.halfwidth, 0.0);
    }

    #[test]
    fn argument_errors() {
        assert!(bootstrap_ci(&[], arithmetic_mean, 10, 0.05, 0).is_err());
        assert!(bootstrap_ci(&[1.0], arithmetic_mean, 0, 0.05, 0).is_err());
        assert!(bootstrap_ci(&[1.0], arithmetic_mean, 10, 0.0, 0).is_err());
        assert!(bootstrap_ci(&[1.0], arithmetic_mean, 10, 1.0, 0).is_err());
    }

    #[test]
    fn achieved_mass_reaches_target() {
        let data: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let ci = bootstrap_ci(&data, arithmetic_mean, 333, 0.1, 4).unwrap();
        assert!(ci.achieved_mass >= 0.9);
        assert_eq!(ci.replicates, 333);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let data: Vec<f64> = (0..80).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| bootstrap_ci(&data, arithmetic_mean, 500, 0.05, 11).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.halfwidth.to_bits(), b.halfwidth.to_bits());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn reproducible_and_monotone_in_alpha(
            data in prop::collection::vec(0.0f64..1.0, 1..40),
            seed in any::<u64>(),
            a1 in 0.01f64..0.99,
            a2 in 0.01f64..0.99,
        ) {
            let x = bootstrap_ci(&data, arithmetic_mean, 200, a1, seed).unwrap();
            let y = bootstrap_ci(&data, arithmetic_mean, 200, a1, seed).unwrap();
            prop_assert_eq!(x.halfwidth.to_bits(), y.halfwidth.to_bits());
            prop_assert_eq!(x.center.to_bits(), y.center.to_bits());
            prop_assert!(x.contains(x.center));
            prop_assert!(x.halfwidth >= 0.0);
            prop_assert!(x.achieved_mass >= 1.0 - a1 - 1e-12);
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let wide = bootstrap_ci(&data, arithmetic_mean, 200, lo, seed).unwrap();
            let narrow = bootstrap_ci(&data, arithmetic_mean, 200, hi, seed).unwrap();
            prop_assert!(narrow.halfwidth <= wide.halfwidth);
        }
    }
}
