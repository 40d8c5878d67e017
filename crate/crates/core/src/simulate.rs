//! Synthetic markets and brute-force oracles.
//!
//! The generator draws a forecast `p ~ U(0.05, 0.95)`, a disagreement `d`
//! from a symmetric triangular law on `[-s, s]`, sets the price to
//! `q = clamp(p - d, 0.01, 0.99)` and draws the outcome from `p` alone. The
//! forecaster is therefore calibrated, and the outcome is independent of the
//! price given the forecast. The overconfident and conservative kinds shift
//! `d` by `+s/2` and `-s/2`, breaking the symmetry on purpose.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Triangular};
use serde::Serialize;

use crate::betting::{expected_utility, Allocation};
use crate::error::{Error, Result};
use crate::ingest::{pair_forecasts, Dataset, RawRecords};
use crate::model::{Event, ForecastRecord, Market, MarketSnapshot, NormalizedPrices, Outcome, OutcomeRecord};

const P_RANGE: (f64, f64) = (0.05, 0.95);
const Q_RANGE: (f64, f64) = (0.01, 0.99);
/// Lead time at and beyond which horizon prices are untouched.
const HORIZON_REFERENCE_HOURS: f64 = 48.0;
const DEFAULT_LEAD_HOURS: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ForecasterKind {
    Calibrated,
    Overconfident,
    Conservative,
    Baseline,
}

impl ForecasterKind {
    pub fn name(self) -> &'static str {
        match self {
            ForecasterKind::Calibrated => "calibrated",
            ForecasterKind::Overconfident => "overconfident",
            ForecasterKind::Conservative => "conservative",
            ForecasterKind::Baseline => "baseline",
        }
    }
}

impl fmt::Display for ForecasterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ForecasterKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "calibrated" => Ok(ForecasterKind::Calibrated),
            "overconfident" => Ok(ForecasterKind::Overconfident),
            "conservative" => Ok(ForecasterKind::Conservative),
            "baseline" => Ok(ForecasterKind::Baseline),
            other => Err(format!(
                "unknown forecaster kind {other:?} (calibrated, overconfident, conservative, baseline)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_markets: usize,
    pub seed: u64,
    /// Half-width `s` of the disagreement distribution.
    pub disagreement_scale: f64,
    pub forecaster_kind: ForecasterKind,
    pub markets_per_event: usize,
    /// Forecast lead times in hours. When set, each market gets one snapshot
    /// and forecast per lead, and prices drift toward the outcome as the lead
    /// shrinks below 48h. When empty, one forecast 24h out.
    pub lead_hours: Vec<f64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_markets: 1000,
            seed: 0,
            disagreement_scale: 0.2,
            forecaster_kind: ForecasterKind::Calibrated,
            markets_per_event: 1,
            lead_hours: Vec::new(),
        }
    }
}

fn sim_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap()
}

pub fn generate(config: &GeneratorConfig) -> Result<Dataset> {
    let s = config.disagreement_scale;
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("disagreement scale must be positive, got {s}")));
    }
    if config.markets_per_event == 0 {
        return Err(Error::InvalidArgument("markets per event must be at least 1".into()));
    }
    if config.lead_hours.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::InvalidArgument("lead times must be positive".into()));
    }
    let tri = Triangular::new(-s, s, 0.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let shift = match config.forecaster_kind {
        ForecasterKind::Overconfident => s / 2.0,
        ForecasterKind::Conservative => -s / 2.0,
        _ => 0.0,
    };
    let leads: Vec<f64> = if config.lead_hours.is_empty() {
        vec![DEFAULT_LEAD_HOURS]
    } else {
        config.lead_hours.clone()
    };
    let horizon_mode = !config.lead_hours.is_empty();
    let resolution = sim_epoch() + Duration::days(60);
    let forecaster = config.forecaster_kind.name();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut raw = RawRecords::default();
    for j in 0..config.n_markets {
        let event_id = format!("SIM-E{:07}", j / config.markets_per_event);
        if j % config.markets_per_event == 0 {
            raw.events.push(Event {
                event_id: event_id.clone(),
                title: format!("Synthetic event {event_id}"),
                category: "synthetic".into(),
                resolution_time: resolution,
                market_ids: Vec::new(),
            });
        }
        let market_id = format!("SIM-M{j:07}");
        let p = rng.gen_range(P_RANGE.0..P_RANGE.1);
        let d = match config.forecaster_kind {
            ForecasterKind::Baseline => 0.0,
            _ => tri.sample(&mut rng) + shift,
        };
        let q = (p - d).clamp(Q_RANGE.0, Q_RANGE.1);
        let yes = rng.gen::<f64>() < p;
        let o = if yes { 1.0 } else { 0.0 };

        raw.markets.push(Market {
            market_id: market_id.clone(),
            event_id,
            proposition: format!("Synthetic proposition {j}"),
        });
        raw.outcomes.push(OutcomeRecord {
            market_id: market_id.clone(),
            outcome: Outcome::from_bool(yes),
        });
        for &lead in &leads {
            let q_t = if horizon_mode {
                let w = (lead / HORIZON_REFERENCE_HOURS).min(1.0);
                (o + (q - o) * w).clamp(Q_RANGE.0, Q_RANGE.1)
            } else {
                q
            };
            let time = resolution - Duration::seconds((lead * 3600.0).round() as i64);
            raw.snapshots.push(MarketSnapshot {
                market_id: market_id.clone(),
                time,
                last_price: q_t,
                yes_ask: q_t,
                no_ask: 1.0 - q_t,
            });
            raw.forecasts.push(ForecastRecord {
                forecaster_id: forecaster.into(),
                market_id: market_id.clone(),
                time,
                p_yes: p,
            });
        }
    }
    Dataset::from_records(raw)
}

/// Conditional returns by betting side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalReturns {
    /// Mean of `o - q` over forecasts with `p > q`.
    pub mean_yes: f64,
    /// Mean of `q - o` over forecasts with `p < q`.
    pub mean_no: f64,
    pub n_yes: usize,
    pub n_no: usize,
    pub difference: f64,
    /// `sqrt(var_yes / n_yes + var_no / n_no)` with sample variances.
    pub standard_error: f64,
}

impl ConditionalReturns {
    pub fn within(&self, standard_errors: f64) -> bool {
        self.difference.abs() <= standard_errors * self.standard_error
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Compares side-conditional returns. `None` when either side has no bets.
pub fn verify_side_balanced_returns(d: &Dataset, forecaster_id: Option<&str>) -> Result<Option<ConditionalReturns>> {
    let pairing = pair_forecasts(d, forecaster_id)?;
    let mut yes = Vec::new();
    let mut no = Vec::new();
    for s in &pairing.scored {
        let q = s.prices.q_yes;
        let o = s.outcome.as_f64();
        if s.p > q {
            yes.push(o - q);
        } else if s.p < q {
            no.push(q - o);
        }
    }
    if yes.is_empty() || no.is_empty() {
        return Ok(None);
    }
    let (mean_yes, var_yes) = mean_var(&yes);
    let (mean_no, var_no) = mean_var(&no);
    Ok(Some(ConditionalReturns {
        mean_yes,
        mean_no,
        n_yes: yes.len(),
        n_no: no.len(),
        difference: mean_yes - mean_no,
        standard_error: (var_yes / yes.len() as f64 + var_no / no.len() as f64).sqrt(),
    }))
}

/// Grid search over the Yes share followed by golden-section refinement.
pub fn oracle_allocation(p: f64, q: NormalizedPrices, gamma: f64, grid_step: f64) -> Result<Allocation> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step must be in (0,1], got {grid_step}")));
    }
    let eu = |a: f64| expected_utility(a, p, q, gamma);
    let steps = (1.0 / grid_step).round() as usize;
    let mut best_a = 0.0;
    let mut best = eu(0.0);
    for i in 1..=steps {
        let a = (i as f64 * grid_step).min(1.0);
        let v = eu(a);
        if v > best {
            best = v;
            best_a = a;
        }
    }
    let (mut lo, mut hi) = ((best_a - grid_step).max(0.0), (best_a + grid_step).min(1.0));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-10 {
        let x1 = hi - ratio * (hi - lo);
        let x2 = lo + ratio * (hi - lo);
        if eu(x1) < eu(x2) {
            lo = x1;
        } else {
            hi = x2;
        }
    }
    let refined = (lo + hi) / 2.0;
    let a = [refined, lo, hi, best_a]
        .into_iter()
        .fold((best_a, best), |acc, a| {
            let v = eu(a);
            if v > acc.1 {
                (a, v)
            } else {
                acc
            }
        })
        .0;
    Ok(Allocation::yes_fraction(a))
}

/// Expected Brier score of forecast `p_forecast` when the truth is `p_true`.
pub fn expected_brier(p_forecast: f64, p_true: f64) -> f64 {
    p_true * (p_forecast - 1.0).powi(2) + (1.0 - p_true) * p_forecast.powi(2)
}
