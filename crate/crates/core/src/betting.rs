//! Utility-optimal betting on binary markets and the return metrics built on it.
//!
//! A unit budget is split between Yes contracts (price `q_yes`) and No
//! contracts (price `q_no = 1 - q_yes`). Under CRRA utility with risk aversion
//! `gamma` the expected-utility maximizer has a closed form; `gamma = 0` is the
//! all-in rule that buys whichever side has the larger edge.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{pair_forecasts, Dataset, ScoredForecast};
use crate::model::{NormalizedPrices, Outcome};
use crate::scoring::{mean, stable_sum};

/// Return from keeping the budget unbet.
pub const ABSTAIN_RETURN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Yes,
    No,
    Split,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Yes => "yes",
            Side::No => "no",
            Side::Split => "split",
        })
    }
}

/// Which side a risk-neutral bettor takes when both edges are equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// Buy Yes when `p/q_yes >= (1-p)/q_no`.
    #[default]
    Yes,
    /// Buy Yes only when `p > q`, the `gamma -> 0` limit of the closed form.
    No,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskProfile {
    gamma: f64,
    pub tie_rule: TieRule,
}

impl RiskProfile {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma must be in [0,1], got {gamma}")));
        }
        Ok(RiskProfile {
            gamma,
            tie_rule: TieRule::default(),
        })
    }

    pub fn risk_neutral() -> Self {
        RiskProfile {
            gamma: 0.0,
            tie_rule: TieRule::default(),
        }
    }

    pub fn with_tie_rule(mut self, tie_rule: TieRule) -> Self {
        self.tie_rule = tie_rule;
        self
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Fractions of the unit budget spent on each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Allocation {
    pub a_yes: f64,
    pub a_no: f64,
}

impl Allocation {
    pub fn yes_fraction(a_yes: f64) -> Self {
        Allocation {
            a_yes,
            a_no: 1.0 - a_yes,
        }
    }

    pub fn side(&self) -> Side {
        if self.a_no == 0.0 {
            Side::Yes
        } else if self.a_yes == 0.0 {
            Side::No
        } else {
            Side::Split
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetResult {
    pub side: Side,
    /// Payout per unit budget once the market resolves.
    pub payoff: f64,
    /// `o - q_yes`
    pub return_yes: f64,
    /// `q_yes - o`
    pub return_no: f64,
}

/// CRRA utility. `ln 0` is negative infinity.
pub fn crra_utility(w: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        w.ln()
    } else {
        w.powf(1.0 - gamma) / (1.0 - gamma)
    }
}

/// Expected utility of putting `a_yes` on Yes and the rest on No, under
/// belief `p`. Zero-probability branches contribute nothing.
pub fn expected_utility(a_yes: f64, p: f64, q: NormalizedPrices, gamma: f64) -> f64 {
    let mut eu = 0.0;
    if p > 0.0 {
        eu += p * crra_utility(a_yes / q.q_yes, gamma);
    }
    if p < 1.0 {
        eu += (1.0 - p) * crra_utility((1.0 - a_yes) / q.q_no, gamma);
    }
    eu
}

pub fn risk_neutral_decision(p: f64, q: NormalizedPrices, tie_rule: TieRule) -> Side {
    let yes_edge = p / q.q_yes;
    let no_edge = (1.0 - p) / q.q_no;
    let take_yes = match tie_rule {
        TieRule::Yes => yes_edge >= no_edge,
        TieRule::No => yes_edge > no_edge,
    };
    if take_yes {
        Side::Yes
    } else {
        Side::No
    }
}

/// Expected-utility-maximizing split of a unit budget.
///
/// For `0 < gamma < 1` the Yes share is
/// `q^(1-1/g) p^(1/g) / (q^(1-1/g) p^(1/g) + (1-q)^(1-1/g) (1-p)^(1/g))`,
/// evaluated in log space. `gamma = 1` bets `p` on Yes, `gamma = 0` goes
/// all-in on the side with the larger edge.
pub fn optimal_allocation(p: f64, q: NormalizedPrices, risk: &RiskProfile) -> Allocation {
    let gamma = risk.gamma;
    if gamma == 0.0 {
        return match risk_neutral_decision(p, q, risk.tie_rule) {
            Side::Yes => Allocation::yes_fraction(1.0),
            _ => Allocation::yes_fraction(0.0),
        };
    }
    if gamma == 1.0 {
        return Allocation::yes_fraction(p);
    }
    let inv = 1.0 / gamma;
    let log_yes = (1.0 - inv) * q.q_yes.ln() + inv * p.ln();
    let log_no = (1.0 - inv) * q.q_no.ln() + inv * (1.0 - p).ln();
    // logistic form: a = 1 / (1 + exp(log_no - log_yes))
    let a_yes = 1.0 / (1.0 + (log_no - log_yes).exp());
    Allocation::yes_fraction(a_yes)
}

pub fn settle_bet(alloc: Allocation, q: NormalizedPrices, o: Outcome) -> BetResult {
    let o = o.as_f64();
    BetResult {
        side: alloc.side(),
        payoff: alloc.a_yes / q.q_yes * o + alloc.a_no / q.q_no * (1.0 - o),
        return_yes: o - q.q_yes,
        return_no: q.q_yes - o,
    }
}

/// Settlement of one forecast at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketPayoff {
    pub forecaster_id: String,
    pub event_id: String,
    pub market_id: String,
    pub time: DateTime<Utc>,
    pub p: f64,
    pub q_yes: f64,
    pub side: Side,
    pub a_yes: f64,
    pub outcome: u8,
    pub payoff: f64,
}

pub fn settle_scored(s: &ScoredForecast, risk: &RiskProfile) -> MarketPayoff {
    let alloc = optimal_allocation(s.p, s.prices, risk);
    let bet = settle_bet(alloc, s.prices, s.outcome);
    MarketPayoff {
        forecaster_id: s.forecaster_id.clone(),
        event_id: s.event_id.clone(),
        market_id: s.market_id.clone(),
        time: s.time,
        p: s.p,
        q_yes: s.prices.q_yes,
        side: bet.side,
        a_yes: alloc.a_yes,
        outcome: s.outcome.into(),
        payoff: bet.payoff,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSummary {
    /// Mean payoff per unit budget; 1.0 breaks even.
    pub average: f64,
    pub payoffs: Vec<MarketPayoff>,
}

pub fn summarize_returns(scored: &[ScoredForecast], risk: &RiskProfile) -> Result<ReturnSummary> {
    if scored.is_empty() {
        return Err(Error::InvalidArgument("no scored forecasts to bet on".into()));
    }
    let payoffs: Vec<MarketPayoff> = scored.iter().map(|s| settle_scored(s, risk)).collect();
    let average = stable_sum(payoffs.iter().map(|p| p.payoff)) / payoffs.len() as f64;
    Ok(ReturnSummary { average, payoffs })
}

/// Average payoff over every (market, forecast time) pair of one forecaster.
pub fn average_return(d: &Dataset, forecaster_id: &str, risk: &RiskProfile) -> Result<ReturnSummary> {
    let pairing = pair_forecasts(d, Some(forecaster_id))?;
    summarize_returns(&pairing.scored, risk)
}

/// Unit over which Sharpe ratio payoffs are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Market,
    Event,
}

/// Payoff series at the requested granularity; event payoffs are the mean
/// over the event's bets, in event-id order.
pub fn payoff_series(payoffs: &[MarketPayoff], granularity: Granularity) -> Vec<f64> {
    match granularity {
        Granularity::Market => payoffs.iter().map(|p| p.payoff).collect(),
        Granularity::Event => {
            let mut by_event: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for p in payoffs {
                by_event.entry(&p.event_id).or_default().push(p.payoff);
            }
            by_event.values().map(|v| mean(v)).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharpeUndefined {
    TooFewPayoffs(usize),
    ZeroVariance,
}

impl fmt::Display for SharpeUndefined {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SharpeUndefined::TooFewPayoffs(n) => {
                write!(f, "sharpe ratio needs at least 2 payoffs, got {n}")
            }
            SharpeUndefined::ZeroVariance => {
                f.write_str("sharpe ratio undefined: payoffs have zero variance")
            }
        }
    }
}

impl std::error::Error for SharpeUndefined {}

/// Mean excess payoff over `r_b` divided by its sample (n-1) standard deviation.
pub fn sharpe_ratio(payoffs: &[f64], r_b: f64) -> std::result::Result<f64, SharpeUndefined> {
    let n = payoffs.len();
    if n < 2 {
        return Err(SharpeUndefined::TooFewPayoffs(n));
    }
    let excess: Vec<f64> = payoffs.iter().map(|x| x - r_b).collect();
    let m = mean(&excess);
    let var = stable_sum(excess.iter().map(|x| (x - m).powi(2))) / (n - 1) as f64;
    if var == 0.0 {
        return Err(SharpeUndefined::ZeroVariance);
    }
    Ok(m / var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(x: f64) -> NormalizedPrices {
        NormalizedPrices::from_yes(x)
    }

    fn risk(g: f64) -> RiskProfile {
        RiskProfile::new(g).unwrap()
    }

    #[test]
    fn utility_examples() {
        assert_eq!(crra_utility(2.0, 0.0), 2.0);
        assert_eq!(crra_utility(1.0, 1.0), 0.0);
        assert_eq!(crra_utility(4.0, 0.5), 4.0);
        assert_eq!(crra_utility(0.0, 1.0), f64::NEG_INFINITY);
        assert_eq!(crra_utility(0.0, 0.3), 0.0);
    }

    #[test]
    fn gamma_is_validated() {
        assert!(RiskProfile::new(-0.1).is_err());
        assert!(RiskProfile::new(1.1).is_err());
        assert!(RiskProfile::new(f64::NAN).is_err());
    }

    #[test]
    fn allocation_special_cases() {
        assert_eq!(optimal_allocation(0.7, q(0.3), &risk(1.0)).a_yes, 0.7);
        assert_eq!(optimal_allocation(0.7, q(0.9), &risk(1.0)).a_yes, 0.7);
        assert_eq!(optimal_allocation(0.9, q(0.5), &risk(0.0)).a_yes, 1.0);
        assert_eq!(optimal_allocation(0.4, q(0.5), &risk(0.0)).a_yes, 0.0);
        let a = optimal_allocation(0.6, q(0.5), &risk(0.5));
        assert_eq!(a.a_yes + a.a_no, 1.0);
        assert_eq!(optimal_allocation(0.0, q(0.5), &risk(0.5)).a_yes, 0.0);
        assert_eq!(optimal_allocation(1.0, q(0.5), &risk(0.5)).a_yes, 1.0);
    }

    #[test]
    fn gamma_half_against_golden_section() {
        // independent oracle: golden-section search on expected utility
        let f = |a: f64| expected_utility(a, 0.6, q(0.5), 0.5);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        while hi - lo > 1e-12 {
            let x1 = hi - r * (hi - lo);
            let x2 = lo + r * (hi - lo);
            if f(x1) < f(x2) {
                lo = x1;
            } else {
                hi = x2;
            }
        }
        let oracle = (lo + hi) / 2.0;
        // closed form: p^2 / (p^2 + (1-p)^2) at q = 1/2
        let frozen = 0.36 / (0.36 + 0.16);
        assert!((oracle - frozen).abs() < 1e-6);
        assert!((optimal_allocation(0.6, q(0.5), &risk(0.5)).a_yes - frozen).abs() < 1e-12);
    }

    #[test]
    fn decision_examples() {
        assert_eq!(risk_neutral_decision(0.45, q(0.5), TieRule::Yes), Side::No);
        assert_eq!(risk_neutral_decision(0.9, q(0.5), TieRule::Yes), Side::Yes);
        assert_eq!(risk_neutral_decision(0.5, q(0.5), TieRule::Yes), Side::Yes);
        assert_eq!(risk_neutral_decision(0.5, q(0.5), TieRule::No), Side::No);
        let r = RiskProfile::risk_neutral().with_tie_rule(TieRule::No);
        assert_eq!(optimal_allocation(0.5, q(0.5), &r).a_yes, 0.0);
    }

    #[test]
    fn settlement_examples() {
        let all_yes = Allocation::yes_fraction(1.0);
        let win = settle_bet(all_yes, q(0.5), Outcome::Yes);
        assert_eq!(win.payoff, 2.0);
        assert_eq!(win.side, Side::Yes);
        assert_eq!(settle_bet(all_yes, q(0.5), Outcome::No).payoff, 0.0);
        assert_eq!(settle_bet(Allocation::yes_fraction(0.5), q(0.5), Outcome::No).side, Side::Split);
    }

    #[test]
    fn brier_and_return_can_disagree() {
        // truth 0.6, price 0.5: A says 0.45 (better Brier), B says 0.9 (better return)
        let truth = 0.6;
        let expected = |side: Side, field: fn(&BetResult) -> f64| {
            let alloc = match side {
                Side::Yes => Allocation::yes_fraction(1.0),
                _ => Allocation::yes_fraction(0.0),
            };
            truth * field(&settle_bet(alloc, q(0.5), Outcome::Yes))
                + (1.0 - truth) * field(&settle_bet(alloc, q(0.5), Outcome::No))
        };
        let side_a = risk_neutral_decision(0.45, q(0.5), TieRule::Yes);
        let side_b = risk_neutral_decision(0.9, q(0.5), TieRule::Yes);
        let ret_a = expected(side_a, |b| b.return_no);
        let ret_b = expected(side_b, |b| b.return_yes);
        assert!((ret_a - -0.1).abs() < 1e-15);
        assert!((ret_b - 0.1).abs() < 1e-15);
        let brier = |p: f64| truth * (p - 1.0f64).powi(2) + (1.0 - truth) * p * p;
        assert!(brier(0.45) < brier(0.9));
        assert!(ret_a < ret_b);
    }

    #[test]
    fn sharpe_examples() {
        assert_eq!(sharpe_ratio(&[1.0, 1.0, 1.0], 1.0), Err(SharpeUndefined::ZeroVariance));
        assert_eq!(sharpe_ratio(&[0.0, 2.0], 1.0), Ok(0.0));
        assert_eq!(sharpe_ratio(&[0.0, 0.0, 3.0], 1.0), Ok(0.0));
        assert_eq!(sharpe_ratio(&[2.0], 1.0), Err(SharpeUndefined::TooFewPayoffs(1)));
        // excess {1, 2}: mean 1.5, sd sqrt(0.5)
        let s = sharpe_ratio(&[2.0, 3.0], 1.0).unwrap();
        assert!((s - 1.5 / 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn continuity_towards_risk_neutral_limit() {
        let grid: Vec<f64> = (0..10).map(|i| 0.05 + 0.1 * i as f64).collect();
        for &p in &grid {
            for &qq in &grid {
                if (p - qq).abs() < 1e-9 {
                    continue;
                }
                let a = optimal_allocation(p, q(qq), &risk(1e-3)).a_yes;
                let limit = if p > qq { 1.0 } else { 0.0 };
                assert!((a - limit).abs() < 1e-6, "p={p} q={qq} a={a}");
            }
        }
    }

    proptest! {
        #[test]
        fn allocation_monotone_in_belief(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, qq in 0.01f64..0.99, g in 0.0f64..=1.0) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let r = risk(g);
            prop_assert!(optimal_allocation(lo, q(qq), &r).a_yes <= optimal_allocation(hi, q(qq), &r).a_yes);
        }

        #[test]
        fn allocation_is_a_split(p in 0.0f64..=1.0, qq in 0.0f64..=1.0, g in 0.0f64..=1.0) {
            let a = optimal_allocation(p, q(qq), &risk(g));
            prop_assert!((0.0..=1.0).contains(&a.a_yes));
            prop_assert!((a.a_yes + a.a_no - 1.0).abs() < 1e-15);
        }

        #[test]
        fn payoff_matches_definition(a in 0.0f64..=1.0, qq in 0.01f64..0.99, yes in any::<bool>()) {
            let prices = q(qq);
            let o = Outcome::from_bool(yes);
            let r = settle_bet(Allocation::yes_fraction(a), prices, o);
            let expect = if yes { a / prices.q_yes } else { (1.0 - a) / prices.q_no };
            prop_assert!((r.payoff - expect).abs() < 1e-12);
            prop_assert_eq!(r.return_yes, -r.return_no);
        }
    }
}
