//! Brier score and binned expected calibration error.
//!
//! The headline Brier score is event-weighted: every event counts once no
//! matter how many markets it holds. That is the same as pooling all markets
//! with weight `1/m_i` (see [`brier_pooled_weighted`]).

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::ScoredForecast;
use crate::model::Outcome;

pub const DEFAULT_BINS: usize = 10;

/// Neumaier-compensated sum.
pub(crate) fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    stable_sum(values.iter().copied()) / values.len() as f64
}

/// A market's forecast and outcome with its event weight `1/m_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub p: f64,
    pub o: Outcome,
    pub weight: f64,
    pub event_id: String,
}

/// Squared error averaged over one event's markets.
pub fn brier_event(pairs: &[(f64, Outcome)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("brier score of an empty event".into()));
    }
    let sq = pairs.iter().map(|&(p, o)| (p - o.as_f64()).powi(2));
    Ok(stable_sum(sq) / pairs.len() as f64)
}

/// Mean of per-event scores.
pub fn brier_overall(event_scores: &[f64]) -> Result<f64> {
    if event_scores.is_empty() {
        return Err(Error::InvalidArgument("no events to average".into()));
    }
    Ok(mean(event_scores))
}

/// Attaches weight `1/m_i` to each pair, where `m_i` counts the pairs in the
/// same event.
pub fn weight_pairs(pairs: &[(String, f64, Outcome)]) -> Vec<ScoredPair> {
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for (e, _, _) in pairs {
        *sizes.entry(e.as_str()).or_default() += 1;
    }
    pairs
        .iter()
        .map(|(e, p, o)| ScoredPair {
            p: *p,
            o: *o,
            weight: 1.0 / sizes[e.as_str()] as f64,
            event_id: e.clone(),
        })
        .collect()
}

/// `sum w (p - o)^2 / sum w` over all pooled pairs.
pub fn brier_pooled_weighted(pairs: &[ScoredPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no scored pairs".into()));
    }
    let num = stable_sum(pairs.iter().map(|s| s.weight * (s.p - s.o.as_f64()).powi(2)));
    let den = stable_sum(pairs.iter().map(|s| s.weight));
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventBrier {
    pub event_id: String,
    pub n_pairs: usize,
    pub score: f64,
}

/// Per-event Brier scores in event-id order. Every scored (market, time)
/// pair of an event counts once toward that event's mean.
pub fn brier_by_event(scored: &[ScoredForecast]) -> Vec<EventBrier> {
    let mut groups: BTreeMap<&str, Vec<(f64, Outcome)>> = BTreeMap::new();
    for s in scored {
        groups.entry(&s.event_id).or_default().push((s.p, s.outcome));
    }
    groups
        .into_iter()
        .map(|(event_id, pairs)| EventBrier {
            event_id: event_id.to_owned(),
            n_pairs: pairs.len(),
            score: brier_event(&pairs).expect("groups are non-empty"),
        })
        .collect()
}

/// One bin of a reliability diagram. Means are absent for empty bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStats {
    pub bin_index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_p: Option<f64>,
    pub mean_o: Option<f64>,
}

/// Bins are `[k/B, (k+1)/B)` with the last bin closed at 1.
pub fn bin_index(p: f64, bins: usize) -> usize {
    ((p * bins as f64).floor() as usize).min(bins - 1)
}

fn check_calibration_args(pairs: &[(f64, Outcome)], bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bin count must be at least 1".into()));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("calibration of an empty forecast set".into()));
    }
    Ok(())
}

pub fn reliability_diagram(pairs: &[(f64, Outcome)], bins: usize) -> Result<Vec<BinStats>> {
    check_calibration_args(pairs, bins)?;
    let mut p_sums = vec![Vec::new(); bins];
    let mut o_sums = vec![Vec::new(); bins];
    for &(p, o) in pairs {
        let b = bin_index(p, bins);
        p_sums[b].push(p);
        o_sums[b].push(o.as_f64());
    }
    Ok((0..bins)
        .map(|b| {
            let count = p_sums[b].len();
            let (mean_p, mean_o) = if count == 0 {
                (None, None)
            } else {
                (Some(mean(&p_sums[b])), Some(mean(&o_sums[b])))
            };
            BinStats {
                bin_index: b,
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                count,
                mean_p,
                mean_o,
            }
        })
        .collect())
}

/// `(1/m) sum_b m_b |mean_o_b - mean_p_b|` over equal-width bins.
pub fn ece(pairs: &[(f64, Outcome)], bins: usize) -> Result<f64> {
    let diagram = reliability_diagram(pairs, bins)?;
    Ok(ece_from_bins(&diagram))
}

pub fn ece_from_bins(diagram: &[BinStats]) -> f64 {
    let total: usize = diagram.iter().map(|b| b.count).sum();
    let weighted = diagram.iter().filter_map(|b| match (b.mean_p, b.mean_o) {
        (Some(p), Some(o)) => Some(b.count as f64 * (o - p).abs()),
        _ => None,
    });
    stable_sum(weighted) / total as f64
}

/// Writes `bin_index,lower,upper,count,mean_p,mean_o`; empty means are blank.
pub fn write_reliability_csv<W: Write>(diagram: &[BinStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_index", "lower", "upper", "count", "mean_p", "mean_o"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for b in diagram {
        w.write_record([
            b.bin_index.to_string(),
            b.lower.to_string(),
            b.upper.to_string(),
            b.count.to_string(),
            opt(b.mean_p),
            opt(b.mean_o),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Outcome::{No, Yes};

    /// Expectation of `brier_event([(p, o)])` with `o ~ Bernoulli(p_true)`.
    fn expected_single(p: f64, p_true: f64) -> f64 {
        p_true * brier_event(&[(p, Yes)]).unwrap() + (1.0 - p_true) * brier_event(&[(p, No)]).unwrap()
    }

    #[test]
    fn caveat_examples() {
        assert!((expected_single(1.0, 0.6) - 0.4).abs() < 1e-15);
        assert!((expected_single(0.6, 0.6) - 0.24).abs() < 1e-15);
        assert_eq!(brier_event(&[(1.0, Yes), (0.0, No)]).unwrap(), 0.0);
        assert!(brier_event(&[]).is_err());
    }

    #[test]
    fn overall_is_mean_of_events() {
        assert!((brier_overall(&[0.2, 0.3]).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(brier_overall(&[0.17]).unwrap(), 0.17);
        assert!(brier_overall(&[]).is_err());
    }

    #[test]
    fn event_size_does_not_matter_when_errors_are_equal() {
        // every (p - o)^2 = 0.25
        let pairs: Vec<(String, f64, Outcome)> = vec![
            ("A".into(), 0.5, Yes),
            ("B".into(), 0.5, No),
            ("B".into(), 0.5, Yes),
            ("B".into(), 0.5, No),
        ];
        let weighted = weight_pairs(&pairs);
        assert_eq!(weighted[0].weight, 1.0);
        assert!((weighted[1].weight - 1.0 / 3.0).abs() < 1e-15);
        assert!((brier_pooled_weighted(&weighted).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ece_alice_and_bob() {
        // Alice says 1 and 0 where the truth is 0.9 and 0.1: ten draws per
        // market at exactly the true frequencies.
        let mut alice = Vec::new();
        alice.extend(std::iter::repeat_n((1.0, Yes), 9));
        alice.push((1.0, No));
        alice.push((0.0, Yes));
        alice.extend(std::iter::repeat_n((0.0, No), 9));
        assert!((ece(&alice, 10).unwrap() - 0.1).abs() < 1e-12);

        let bob = [(0.5, Yes), (0.5, No)];
        assert_eq!(ece(&bob, 10).unwrap(), 0.0);
    }

    #[test]
    fn ece_zero_when_predictions_are_outcomes() {
        assert_eq!(ece(&[(0.0, No), (1.0, Yes), (1.0, Yes)], 10).unwrap(), 0.0);
    }

    #[test]
    fn ece_rejects_bad_args() {
        assert!(ece(&[], 10).is_err());
        assert!(ece(&[(0.5, Yes)], 0).is_err());
    }

    #[test]
    fn diagram_bins() {
        let d = reliability_diagram(&[(0.31, Yes), (0.33, No), (0.35, Yes)], 10).unwrap();
        assert_eq!(d.iter().filter(|b| b.count > 0).count(), 1);
        assert_eq!(d[3].count, 3);
        assert_eq!(d[0].mean_p, None);
        assert_eq!(d[0].mean_o, None);

        // edge value goes to the upper bin, 1.0 goes to the last bin
        let d = reliability_diagram(&[(0.1, Yes), (0.099_999, No), (1.0, Yes)], 10).unwrap();
        assert_eq!(d[0].count, 1);
        assert_eq!(d[1].count, 1);
        assert_eq!(d[9].count, 1);
    }

    #[test]
    fn csv_layout() {
        let d = reliability_diagram(&[(0.25, Yes)], 2).unwrap();
        let mut buf = Vec::new();
        write_reliability_csv(&d, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "bin_index,lower,upper,count,mean_p,mean_o\n0,0,0.5,1,0.25,1\n1,0.5,1,0,,\n"
        );
    }

    #[test]
    fn compensated_sum_is_exact_on_cancellation() {
        assert_eq!(stable_sum([1e16, 1.0, -1e16]), 1.0);
    }

    fn outcomes() -> impl Strategy<Value = Vec<(f64, Outcome)>> {
        prop::collection::vec((0.0f64..=1.0, any::<bool>().prop_map(Outcome::from_bool)), 1..60)
    }

    proptest! {
        #[test]
        fn properness_closed_form(p in 0.0f64..=1.0, p_true in 0.0f64..=1.0) {
            let analytic = (p - p_true).powi(2) + p_true * (1.0 - p_true);
            prop_assert!((expected_single(p, p_true) - analytic).abs() < 1e-12);
            prop_assert!(expected_single(p, p_true) >= expected_single(p_true, p_true) - 1e-15);
        }

        #[test]
        fn scores_are_bounded(pairs in outcomes(), bins in 1usize..20) {
            let b = brier_event(&pairs).unwrap();
            let e = ece(&pairs, bins).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&e));
        }

        #[test]
        fn ece_matches_diagram_and_is_permutation_invariant(mut pairs in outcomes(), bins in 1usize..20) {
            let e = ece(&pairs, bins).unwrap();
            let d = reliability_diagram(&pairs, bins).unwrap();
            let m: usize = d.iter().map(|b| b.count).sum();
            prop_assert_eq!(m, pairs.len());
            let naive: f64 = d.iter()
                .filter(|b| b.count > 0)
                .map(|b| b.count as f64 * (b.mean_o.unwrap() - b.mean_p.unwrap()).abs())
                .sum::<f64>() / m as f64;
            prop_assert!((e - naive).abs() < 1e-12);
            pairs.reverse();
            let third = pairs.len() / 3;
            pairs.rotate_left(third);
            prop_assert!((ece(&pairs, bins).unwrap() - e).abs() < 1e-12);
        }

        #[test]
        fn single_bin_ece_is_gap_of_means(pairs in outcomes()) {
            let mp = pairs.iter().map(|x| x.0).sum::<f64>() / pairs.len() as f64;
            let mo = pairs.iter().map(|x| x.1.as_f64()).sum::<f64>() / pairs.len() as f64;
            prop_assert!((ece(&pairs, 1).unwrap() - (mo - mp).abs()).abs() < 1e-12);
        }
    }
}
