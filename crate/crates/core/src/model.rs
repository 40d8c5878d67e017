//! Domain types shared by the whole engine, price normalization, and the
//! market-baseline forecaster.
//!
//! Implied probabilities come from the two ask prices, not `last_price`: the
//! betting strategy buys at ask, so the ask pair is what a bettor actually
//! faces. `last_price` is carried along for diagnostics only.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to implied probabilities so that edges and allocations never
/// divide by zero.
pub const PRICE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: String,
    pub title: String,
    pub category: String,
    pub resolution_time: DateTime<Utc>,
    /// Filled from the markets file on load; not part of the events record.
    #[serde(default, skip_serializing)]
    pub market_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Market {
    pub market_id: String,
    pub event_id: String,
    pub proposition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSnapshot {
    pub market_id: String,
    pub time: DateTime<Utc>,
    pub last_price: f64,
    pub yes_ask: f64,
    pub no_ask: f64,
}

impl MarketSnapshot {
    /// Problems with this snapshot's price fields, if any.
    pub fn price_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("last_price", self.last_price),
            ("yes_ask", self.yes_ask),
            ("no_ask", self.no_ask),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!(
                    "snapshot for market {} at {}: {name}={v} outside [0,1]",
                    self.market_id, self.time
                ));
            }
        }
        if out.is_empty() && self.yes_ask + self.no_ask <= 0.0 {
            out.push(format!(
                "snapshot for market {} at {}: yes_ask + no_ask = 0",
                self.market_id, self.time
            ));
        }
        out
    }
}

/// Coherent implied probabilities with `q_yes + q_no = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPrices {
    pub q_yes: f64,
    pub q_no: f64,
}

impl NormalizedPrices {
    /// Builds prices from a Yes probability, clamped to `[PRICE_EPS, 1 - PRICE_EPS]`.
    pub fn from_yes(q_yes: f64) -> Self {
        let q_yes = q_yes.clamp(PRICE_EPS, 1.0 - PRICE_EPS);
        NormalizedPrices {
            q_yes,
            q_no: 1.0 - q_yes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub forecaster_id: String,
    pub market_id: String,
    pub time: DateTime<Utc>,
    pub p_yes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Outcome {
    No,
    Yes,
}

impl Outcome {
    pub fn as_f64(self) -> f64 {
        match self {
            Outcome::No => 0.0,
            Outcome::Yes => 1.0,
        }
    }

    pub fn from_bool(yes: bool) -> Self {
        if yes {
            Outcome::Yes
        } else {
            Outcome::No
        }
    }
}

impl TryFrom<u8> for Outcome {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Outcome::No),
            1 => Ok(Outcome::Yes),
            other => Err(format!("outcome must be 0 or 1, got {other}")),
        }
    }
}

impl From<Outcome> for u8 {
    fn from(o: Outcome) -> u8 {
        match o {
            Outcome::No => 0,
            Outcome::Yes => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub market_id: String,
    pub outcome: Outcome,
}

/// Likelihood ratios between a forecast and the implied probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edges {
    pub yes_edge: f64,
    pub no_edge: f64,
}

/// Proportionally rescales the two asks so they sum to one.
pub fn normalize_snapshot(s: &MarketSnapshot) -> Result<NormalizedPrices> {
    let total = s.yes_ask + s.no_ask;
    if !(total > 0.0) {
        return Err(Error::Validation(vec![format!(
            "degenerate snapshot for market {}: yes_ask + no_ask = {total}",
            s.market_id
        )]));
    }
    Ok(NormalizedPrices::from_yes(s.yes_ask / total))
}

/// The synthetic forecaster that always predicts the implied Yes probability.
pub fn market_baseline(s: &MarketSnapshot) -> Result<f64> {
    normalize_snapshot(s).map(|q| q.q_yes)
}

pub fn edges(p: f64, q: NormalizedPrices) -> Edges {
    Edges {
        yes_edge: p / q.q_yes,
        no_edge: (1.0 - p) / q.q_no,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn snap(yes_ask: f64, no_ask: f64) -> MarketSnapshot {
        MarketSnapshot {
            market_id: "m".into(),
            time: DateTime::UNIX_EPOCH,
            last_price: yes_ask,
            yes_ask,
            no_ask,
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_snapshot(&snap(0.8, 0.2)).unwrap().q_yes, 0.8);
        assert_eq!(normalize_snapshot(&snap(0.5, 0.5)).unwrap().q_yes, 0.5);
        let q = normalize_snapshot(&snap(0.82, 0.22)).unwrap();
        assert!((q.q_yes - 0.788_461_538_461_538_5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_snapshot_names_market() {
        let mut s = snap(0.0, 0.0);
        s.market_id = "KX-1".into();
        let err = normalize_snapshot(&s).unwrap_err().to_string();
        assert!(err.contains("KX-1"), "{err}");
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(market_baseline(&snap(0.8, 0.2)).unwrap(), 0.8);
        assert_eq!(market_baseline(&snap(1.0, 0.0)).unwrap(), 1.0 - 1e-6);
        assert!((market_baseline(&snap(0.6, 0.5)).unwrap() - 0.6 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn edge_examples() {
        let half = NormalizedPrices::from_yes(0.5);
        assert_eq!(edges(0.5, half), Edges { yes_edge: 1.0, no_edge: 1.0 });
        let e = edges(0.9, half);
        assert!((e.yes_edge - 1.8).abs() < 1e-15 && (e.no_edge - 0.2).abs() < 1e-15);
        assert_eq!(edges(0.0, half), Edges { yes_edge: 0.0, no_edge: 2.0 });
    }

    #[test]
    fn outcome_rejects_non_binary() {
        assert!(serde_json::from_str::<OutcomeRecord>(r#"{"market_id":"m","outcome":2}"#).is_err());
        let o: OutcomeRecord = serde_json::from_str(r#"{"market_id":"m","outcome":1}"#).unwrap();
        assert_eq!(o.outcome, Outcome::Yes);
    }

    proptest! {
        #[test]
        fn normalization_is_scale_invariant(y in 0.0f64..1.0, n in 0.0f64..1.0, c in 0.01f64..100.0) {
            prop_assume!(y + n > 1e-9);
            let a = normalize_snapshot(&snap(y, n)).unwrap();
            let b = normalize_snapshot(&snap(y * c, n * c)).unwrap();
            prop_assert!((a.q_yes - b.q_yes).abs() < 1e-12);
            prop_assert_eq!(a.q_yes + a.q_no, 1.0);
            prop_assert!(a.q_yes > 0.0 && a.q_yes < 1.0);
            prop_assert_eq!(market_baseline(&snap(y, n)).unwrap(), a.q_yes);
        }
    }
}
