//! Coherence checks on annotated events: implication chains should carry
//! nondecreasing probabilities, and mutually exclusive exhaustive sets should
//! sum to one.
//!
//! A forecaster's probability for a market is its latest forecast on that
//! market.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::{ChainAnnotation, Dataset, ExclusiveSetAnnotation};

pub const DEFAULT_EPSILON: f64 = 0.01;

fn lookup(probs: &HashMap<String, f64>, market_id: &str) -> Result<f64> {
    probs.get(market_id).copied().ok_or_else(|| {
        Error::InvalidArgument(format!("no probability for market {market_id}"))
    })
}

/// Fraction of adjacent chain links with `p(S_j) <= p(S_j+1)`.
pub fn chain_score(chain: &ChainAnnotation, probs: &HashMap<String, f64>) -> Result<f64> {
    let ids = &chain.ordered_market_ids;
    if ids.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "chain in event {} needs at least 2 markets",
            chain.event_id
        )));
    }
    let ps = ids.iter().map(|m| lookup(probs, m)).collect::<Result<Vec<_>>>()?;
    let ok = ps.windows(2).filter(|w| w[0] <= w[1]).count();
    Ok(ok as f64 / (ps.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExclusiveScore {
    pub event_id: String,
    pub prob_sum: f64,
    pub pass: bool,
}

pub fn mutually_exclusive_score(
    set: &ExclusiveSetAnnotation,
    probs: &HashMap<String, f64>,
    epsilon: f64,
) -> Result<ExclusiveScore> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let mut sum = 0.0;
    for m in &set.market_ids {
        sum += lookup(probs, m)?;
    }
    Ok(ExclusiveScore {
        event_id: set.event_id.clone(),
        prob_sum: sum,
        pass: (sum - 1.0).abs() <= epsilon,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainScore {
    pub event_id: String,
    pub per_chain: Vec<f64>,
    pub event_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventConsistency {
    pub event_id: String,
    pub chain: Option<ChainScore>,
    /// Mean pass rate over the event's exclusive sets.
    pub exclusive: Option<f64>,
    pub exclusive_sets: Vec<ExclusiveScore>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ConsistencySummary {
    pub forecaster_id: String,
    pub per_event: Vec<EventConsistency>,
    /// Mean over events with at least one chain; absent when there are none.
    pub chain: Option<f64>,
    /// Mean pass rate over events with at least one exclusive set.
    pub exclusive: Option<f64>,
}

/// Latest forecast per market for one forecaster.
pub fn latest_probabilities(d: &Dataset, forecaster_id: &str) -> HashMap<String, f64> {
    let mut latest: HashMap<String, (chrono::DateTime<chrono::Utc>, f64)> = HashMap::new();
    for f in d.forecasts.iter().filter(|f| f.forecaster_id == forecaster_id) {
        match latest.get(&f.market_id) {
            Some((t, _)) if *t > f.time => {}
            _ => {
                latest.insert(f.market_id.clone(), (f.time, f.p_yes));
            }
        }
    }
    latest.into_iter().map(|(k, (_, p))| (k, p)).collect()
}

pub fn aggregate_consistency(d: &Dataset, forecaster_id: &str, epsilon: f64) -> Result<ConsistencySummary> {
    let probs = latest_probabilities(d, forecaster_id);
    let mut chains: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for c in &d.chains {
        chains.entry(&c.event_id).or_default().push(chain_score(c, &probs)?);
    }
    let mut sets: BTreeMap<&str, Vec<ExclusiveScore>> = BTreeMap::new();
    for s in &d.exclusive_sets {
        sets.entry(&s.event_id)
            .or_default()
            .push(mutually_exclusive_score(s, &probs, epsilon)?);
    }

    let mut ids: Vec<&str> = chains.keys().chain(sets.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();

    let per_event: Vec<EventConsistency> = ids
        .into_iter()
        .map(|id| {
            let chain = chains.get(id).map(|per_chain| ChainScore {
                event_id: id.to_owned(),
                event_score: per_chain.iter().sum::<f64>() / per_chain.len() as f64,
                per_chain: per_chain.clone(),
            });
            let exclusive_sets = sets.get(id).cloned().unwrap_or_default();
            let exclusive = (!exclusive_sets.is_empty()).then(|| {
                exclusive_sets.iter().filter(|s| s.pass).count() as f64 / exclusive_sets.len() as f64
            });
            EventConsistency {
                event_id: id.to_owned(),
                chain,
                exclusive,
                exclusive_sets,
            }
        })
        .collect();

    let mean_of = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let chain = mean_of(per_event.iter().filter_map(|e| e.chain.as_ref().map(|c| c.event_score)).collect());
    let exclusive = mean_of(per_event.iter().filter_map(|e| e.exclusive).collect());
    Ok(ConsistencySummary {
        forecaster_id: forecaster_id.to_owned(),
        per_event,
        chain,
        exclusive,
    })
}
