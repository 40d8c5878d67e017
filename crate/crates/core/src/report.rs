//! Metric orchestration: pairs forecasts with prices and outcomes, computes
//! every metric per forecaster, ranks them, and renders CSV/JSON/text.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use chrono::Duration;
use rayon::prelude::*;
use serde::Serialize;

use crate::betting::{payoff_series, sharpe_ratio, summarize_returns, Granularity, MarketPayoff, RiskProfile, ABSTAIN_RETURN};
use crate::bootstrap::{bootstrap_ci, CiResult, DEFAULT_ALPHA, DEFAULT_REPLICATES};
use crate::consistency::{aggregate_consistency, ConsistencySummary, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::ingest::{filter_near_resolution, pair_forecasts, Dataset, ScoredForecast, SnapshotIndex, DEFAULT_CUTOFF_HOURS};
use crate::model::{market_baseline, ForecastRecord};
use crate::scoring::{brier_by_event, brier_overall, ece, reliability_diagram, weight_pairs, BinStats, DEFAULT_BINS};

pub const MARKET_BASELINE_ID: &str = "market-baseline";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: DEFAULT_REPLICATES,
            alpha: DEFAULT_ALPHA,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub cutoff: Duration,
    pub bins: usize,
    pub risk: RiskProfile,
    pub risk_free: f64,
    pub sharpe_granularity: Granularity,
    /// `None` disables confidence intervals.
    pub bootstrap: Option<BootstrapConfig>,
    pub brier_resample: Granularity,
    pub return_resample: Granularity,
    pub epsilon: f64,
    pub include_baseline: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cutoff: Duration::hours(DEFAULT_CUTOFF_HOURS),
            bins: DEFAULT_BINS,
            risk: RiskProfile::risk_neutral(),
            risk_free: ABSTAIN_RETURN,
            sharpe_granularity: Granularity::Market,
            bootstrap: Some(BootstrapConfig::default()),
            brier_resample: Granularity::Event,
            return_resample: Granularity::Market,
            epsilon: DEFAULT_EPSILON,
            include_baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub forecaster_id: String,
    pub n_events: usize,
    pub n_markets: usize,
    pub n_forecasts: usize,
    pub brier: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub brier_ci: Option<CiResult>,
    pub ece: f64,
    pub avg_return: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_return_ci: Option<CiResult>,
    pub sharpe: Option<f64>,
    pub chain_consistency: Option<f64>,
    pub me_consistency: Option<f64>,
}

/// Dense per-metric ranks; 1 is best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Ranks {
    pub brier: usize,
    pub ece: usize,
    pub avg_return: usize,
    pub sharpe: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardRow {
    #[serde(flatten)]
    pub report: MetricReport,
    pub ranks: Ranks,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Evaluation {
    pub rows: Vec<LeaderboardRow>,
    #[serde(skip)]
    pub payoffs: BTreeMap<String, Vec<MarketPayoff>>,
    pub warnings: Vec<String>,
}

impl Evaluation {
    pub fn bootstrap_enabled(&self) -> bool {
        self.rows.iter().any(|r| r.report.brier_ci.is_some())
    }
}

/// Adds the market-baseline forecaster at every (market, time) where any
/// forecaster made a forecast. Points with no prior snapshot are skipped;
/// pairing reports them for the real forecaster.
pub fn with_market_baseline(d: &Dataset) -> Result<Dataset> {
    if d.forecasts.iter().any(|f| f.forecaster_id == MARKET_BASELINE_ID) {
        return Ok(d.clone());
    }
    let points: BTreeSet<_> = d.forecasts.iter().map(|f| (f.market_id.as_str(), f.time)).collect();
    let index = SnapshotIndex::new(&d.snapshots);
    let mut baseline = Vec::new();
    for (market_id, time) in points {
        let Ok(snap) = index.latest_at(market_id, time) else {
            continue;
        };
        baseline.push(ForecastRecord {
            forecaster_id: MARKET_BASELINE_ID.into(),
            market_id: market_id.to_owned(),
            time,
            p_yes: market_baseline(snap)?,
        });
    }
    let mut out = d.clone();
    out.forecasts.extend(baseline);
    Ok(out)
}

/// Applies the near-resolution cutoff and optional baseline, then pairs
/// every remaining forecast, grouped by forecaster.
pub fn prepare(
    d: &Dataset,
    cutoff: Duration,
    include_baseline: bool,
) -> Result<(Dataset, BTreeMap<String, Vec<ScoredForecast>>, Vec<String>)> {
    let mut filtered = filter_near_resolution(d, cutoff)?;
    if include_baseline {
        filtered = with_market_baseline(&filtered)?;
    }
    let pairing = pair_forecasts(&filtered, None)?;
    let mut warnings = Vec::new();
    if pairing.unresolved > 0 {
        warnings.push(format!(
            "skipped {} forecast(s) on markets without an outcome",
            pairing.unresolved
        ));
    }
    let mut groups: BTreeMap<String, Vec<ScoredForecast>> = BTreeMap::new();
    for s in pairing.scored {
        groups.entry(s.forecaster_id.clone()).or_default().push(s);
    }
    for id in filtered.forecaster_ids() {
        if !groups.contains_key(&id) {
            warnings.push(format!("forecaster {id} has no resolved forecasts; omitted"));
        }
    }
    Ok((filtered, groups, warnings))
}

/// Bootstrap over units `(numerator, denominator)` with statistic
/// `sum numerators / sum denominators` of the resampled units.
fn ratio_ci(units: &[(f64, f64)], cfg: &BootstrapConfig) -> Result<CiResult> {
    let idx: Vec<f64> = (0..units.len()).map(|i| i as f64).collect();
    bootstrap_ci(
        &idx,
        |sample| {
            let (num, den) = sample.iter().fold((0.0, 0.0), |(n, d), &i| {
                let u = units[i as usize];
                (n + u.0, d + u.1)
            });
            num / den
        },
        cfg.replicates,
        cfg.alpha,
        cfg.seed,
    )
}

fn brier_units(scored: &[ScoredForecast], level: Granularity) -> Vec<(f64, f64)> {
    match level {
        Granularity::Event => brier_by_event(scored).into_iter().map(|e| (e.score, 1.0)).collect(),
        Granularity::Market => {
            let triples: Vec<_> = scored.iter().map(|s| (s.event_id.clone(), s.p, s.outcome)).collect();
            weight_pairs(&triples)
                .into_iter()
                .map(|w| (w.weight * (w.p - w.o.as_f64()).powi(2), w.weight))
                .collect()
        }
    }
}

fn return_units(payoffs: &[MarketPayoff], level: Granularity) -> Vec<(f64, f64)> {
    match level {
        Granularity::Market => payoffs.iter().map(|p| (p.payoff, 1.0)).collect(),
        Granularity::Event => {
            let mut by_event: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
            for p in payoffs {
                let e = by_event.entry(&p.event_id).or_default();
                e.0 += p.payoff;
                e.1 += 1.0;
            }
            by_event.into_values().collect()
        }
    }
}

fn score_forecaster(
    id: &str,
    scored: &[ScoredForecast],
    filtered: &Dataset,
    cfg: &EvalConfig,
) -> Result<(MetricReport, Vec<MarketPayoff>, Vec<String>)> {
    let mut warnings = Vec::new();
    let events = brier_by_event(scored);
    let event_scores: Vec<f64> = events.iter().map(|e| e.score).collect();
    let brier = brier_overall(&event_scores)?;
    let pairs: Vec<_> = scored.iter().map(|s| (s.p, s.outcome)).collect();
    let ece = ece(&pairs, cfg.bins)?;
    let returns = summarize_returns(scored, &cfg.risk)?;
    let sharpe = match sharpe_ratio(&payoff_series(&returns.payoffs, cfg.sharpe_granularity), cfg.risk_free) {
        Ok(s) => Some(s),
        Err(e) => {
            warnings.push(format!("{id}: {e}"));
            None
        }
    };
    let (brier_ci, avg_return_ci) = match &cfg.bootstrap {
        Some(b) => (
            Some(ratio_ci(&brier_units(scored, cfg.brier_resample), b)?),
            Some(ratio_ci(&return_units(&returns.payoffs, cfg.return_resample), b)?),
        ),
        None => (None, None),
    };
    let (chain_consistency, me_consistency) =
        if filtered.chains.is_empty() && filtered.exclusive_sets.is_empty() {
            (None, None)
        } else {
            match aggregate_consistency(filtered, id, cfg.epsilon) {
                Ok(c) => (c.chain, c.exclusive),
                Err(e) => {
                    warnings.push(format!("{id}: consistency skipped: {e}"));
                    (None, None)
                }
            }
        };
    let n_markets = scored.iter().map(|s| s.market_id.as_str()).collect::<BTreeSet<_>>().len();
    let report = MetricReport {
        forecaster_id: id.to_owned(),
        n_events: events.len(),
        n_markets,
        n_forecasts: scored.len(),
        brier,
        brier_ci,
        ece,
        avg_return: returns.average,
        avg_return_ci,
        sharpe,
        chain_consistency,
        me_consistency,
    };
    Ok((report, returns.payoffs, warnings))
}

/// Dense ranks (ties share a rank, next distinct value gets rank + 1).
pub fn dense_ranks(values: &[Option<f64>], higher_is_better: bool) -> Vec<Option<usize>> {
    let mut distinct: Vec<f64> = values.iter().flatten().copied().collect();
    distinct.sort_by(|a, b| if higher_is_better { b.total_cmp(a) } else { a.total_cmp(b) });
    distinct.dedup();
    values
        .iter()
        .map(|v| v.map(|x| distinct.iter().position(|&d| d == x).unwrap() + 1))
        .collect()
}

pub fn evaluate(d: &Dataset, cfg: &EvalConfig) -> Result<Evaluation> {
    let (filtered, groups, mut warnings) = prepare(d, cfg.cutoff, cfg.include_baseline)?;
    if groups.is_empty() {
        return Err(Error::Validation(vec!["no resolved forecasts to evaluate".into()]));
    }
    let scored: Vec<_> = groups
        .par_iter()
        .map(|(id, s)| score_forecaster(id, s, &filtered, cfg))
        .collect::<Result<_>>()?;

    let mut reports = Vec::new();
    let mut payoffs = BTreeMap::new();
    for (report, p, w) in scored {
        warnings.extend(w);
        payoffs.insert(report.forecaster_id.clone(), p);
        reports.push(report);
    }
    let brier = dense_ranks(&reports.iter().map(|r| Some(r.brier)).collect::<Vec<_>>(), false);
    let ece = dense_ranks(&reports.iter().map(|r| Some(r.ece)).collect::<Vec<_>>(), false);
    let ret = dense_ranks(&reports.iter().map(|r| Some(r.avg_return)).collect::<Vec<_>>(), true);
    let sharpe = dense_ranks(&reports.iter().map(|r| r.sharpe).collect::<Vec<_>>(), true);
    let mut rows: Vec<LeaderboardRow> = reports
        .into_iter()
        .enumerate()
        .map(|(i, report)| LeaderboardRow {
            report,
            ranks: Ranks {
                brier: brier[i].unwrap(),
                ece: ece[i].unwrap(),
                avg_return: ret[i].unwrap(),
                sharpe: sharpe[i],
            },
        })
        .collect();
    rows.sort_by(|a, b| {
        a.ranks
            .brier
            .cmp(&b.ranks.brier)
            .then_with(|| a.report.forecaster_id.cmp(&b.report.forecaster_id))
    });
    Ok(Evaluation {
        rows,
        payoffs,
        warnings,
    })
}

/// Reliability diagrams per forecaster.
pub fn calibration(d: &Dataset, cfg: &EvalConfig) -> Result<BTreeMap<String, Vec<BinStats>>> {
    let (_, groups, _) = prepare(d, cfg.cutoff, cfg.include_baseline)?;
    groups
        .into_iter()
        .map(|(id, scored)| {
            let pairs: Vec<_> = scored.iter().map(|s| (s.p, s.outcome)).collect();
            Ok((id, reliability_diagram(&pairs, cfg.bins)?))
        })
        .collect()
}

pub fn consistency(d: &Dataset, cfg: &EvalConfig) -> Result<Vec<ConsistencySummary>> {
    let mut filtered = filter_near_resolution(d, cfg.cutoff)?;
    if cfg.include_baseline {
        filtered = with_market_baseline(&filtered)?;
    }
    filtered
        .forecaster_ids()
        .iter()
        .map(|id| aggregate_consistency(&filtered, id, cfg.epsilon))
        .collect()
}

/// Lead-time bin `[lower, upper)` in hours; the last bin is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonRow {
    pub forecaster_id: String,
    pub bin: String,
    pub lower_hours: f64,
    pub upper_hours: Option<f64>,
    pub count: usize,
    pub brier: Option<f64>,
}

pub const DEFAULT_HORIZON_EDGES_HOURS: [f64; 4] = [0.0, 3.0, 12.0, 48.0];

fn fmt_hours(h: f64) -> String {
    format!("{h}")
}

/// Event-weighted Brier score per forecaster and lead-time bin.
pub fn horizon_bins(d: &Dataset, cfg: &EvalConfig, edges_hours: &[f64]) -> Result<Vec<HorizonRow>> {
    if edges_hours.is_empty() || edges_hours.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "lead-time bin edges must be non-empty and strictly increasing".into(),
        ));
    }
    let (_, groups, _) = prepare(d, cfg.cutoff, cfg.include_baseline)?;
    let mut rows = Vec::new();
    for (id, scored) in groups {
        let mut buckets: Vec<Vec<ScoredForecast>> = vec![Vec::new(); edges_hours.len()];
        for s in scored {
            let lead_h = s.lead.num_milliseconds() as f64 / 3_600_000.0;
            // the bin whose lower edge is the largest edge <= lead
            let k = edges_hours.partition_point(|&e| e <= lead_h);
            if k > 0 {
                buckets[k - 1].push(s);
            }
        }
        for (k, bucket) in buckets.into_iter().enumerate() {
            let lower = edges_hours[k];
            let upper = edges_hours.get(k + 1).copied();
            let bin = match upper {
                Some(u) => format!("{}-{}h", fmt_hours(lower), fmt_hours(u)),
                None => format!("{}h+", fmt_hours(lower)),
            };
            let brier = if bucket.is_empty() {
                None
            } else {
                let scores: Vec<f64> = brier_by_event(&bucket).into_iter().map(|e| e.score).collect();
                Some(brier_overall(&scores)?)
            };
            rows.push(HorizonRow {
                forecaster_id: id.clone(),
                bin,
                lower_hours: lower,
                upper_hours: upper,
                count: bucket.len(),
                brier,
            });
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn flush_csv<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Leaderboard CSV. The CI columns appear only when bootstrap was enabled.
pub fn write_leaderboard_csv<W: Write>(eval: &Evaluation, out: W) -> Result<()> {
    let with_ci = eval.bootstrap_enabled();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["forecaster_id", "n_events", "n_markets", "n_forecasts", "brier"];
    if with_ci {
        header.push("brier_ci_halfwidth");
    }
    header.extend(["brier_rank", "ece", "ece_rank", "avg_return"]);
    if with_ci {
        header.push("avg_return_ci_halfwidth");
    }
    header.extend(["avg_return_rank", "sharpe", "sharpe_rank", "chain_consistency", "me_consistency"]);
    w.write_record(&header)?;
    for row in &eval.rows {
        let r = &row.report;
        let mut rec = vec![
            r.forecaster_id.clone(),
            r.n_events.to_string(),
            r.n_markets.to_string(),
            r.n_forecasts.to_string(),
            r.brier.to_string(),
        ];
        if with_ci {
            rec.push(opt(r.brier_ci.map(|c| c.halfwidth)));
        }
        rec.extend([row.ranks.brier.to_string(), r.ece.to_string(), row.ranks.ece.to_string(), r.avg_return.to_string()]);
        if with_ci {
            rec.push(opt(r.avg_return_ci.map(|c| c.halfwidth)));
        }
        rec.extend([
            row.ranks.avg_return.to_string(),
            opt(r.sharpe),
            row.ranks.sharpe.map(|s| s.to_string()).unwrap_or_default(),
            opt(r.chain_consistency),
            opt(r.me_consistency),
        ]);
        w.write_record(&rec)?;
    }
    flush_csv(w)
}

pub fn write_leaderboard_json<W: Write>(eval: &Evaluation, out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, eval)?;
    Ok(())
}

/// Human-readable leaderboard.
pub fn format_table(eval: &Evaluation) -> String {
    let with_ci = eval.bootstrap_enabled();
    let ci = |c: Option<CiResult>| c.map(|c| format!(" (±{:.3})", c.halfwidth)).unwrap_or_default();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>20} {:>4} {:>7} {:>4} {:>20} {:>4} {:>8} {:>4}",
        "forecaster",
        if with_ci { "brier (95% CI)" } else { "brier" },
        "rank",
        "ece",
        "rank",
        if with_ci { "avg return (95% CI)" } else { "avg return" },
        "rank",
        "sharpe",
        "rank"
    );
    for row in &eval.rows {
        let r = &row.report;
        let _ = writeln!(
            out,
            "{:<24} {:>20} {:>4} {:>7.3} {:>4} {:>20} {:>4} {:>8} {:>4}",
            r.forecaster_id,
            format!("{:.3}{}", r.brier, ci(r.brier_ci)),
            row.ranks.brier,
            r.ece,
            row.ranks.ece,
            format!("{:.3}{}", r.avg_return, ci(r.avg_return_ci)),
            row.ranks.avg_return,
            r.sharpe.map(|s| format!("{s:.3}")).unwrap_or_else(|| "n/a".into()),
            row.ranks.sharpe.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
        );
    }
    out
}

pub fn write_payoffs_csv<'a, W: Write>(payoffs: impl IntoIterator<Item = &'a MarketPayoff>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in payoffs {
        w.serialize(p)?;
    }
    flush_csv(w)
}

pub fn write_horizon_csv<W: Write>(rows: &[HorizonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["forecaster_id", "bin", "lower_hours", "upper_hours", "count", "brier"])?;
    for r in rows {
        w.write_record([
            r.forecaster_id.clone(),
            r.bin.clone(),
            r.lower_hours.to_string(),
            opt(r.upper_hours),
            r.count.to_string(),
            opt(r.brier),
        ])?;
    }
    flush_csv(w)
}

/// Per-event rows followed by one `ALL` row per forecaster holding the aggregates.
pub fn write_consistency_csv<W: Write>(summaries: &[ConsistencySummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["forecaster_id", "event_id", "chain_score", "n_chains", "me_prob_sum", "me_score"])?;
    for s in summaries {
        for e in &s.per_event {
            let prob_sum = match e.exclusive_sets.as_slice() {
                [one] => one.prob_sum.to_string(),
                _ => String::new(),
            };
            w.write_record([
                s.forecaster_id.clone(),
                e.event_id.clone(),
                opt(e.chain.as_ref().map(|c| c.event_score)),
                e.chain.as_ref().map_or(0, |c| c.per_chain.len()).to_string(),
                prob_sum,
                opt(e.exclusive),
            ])?;
        }
        w.write_record([
            s.forecaster_id.clone(),
            "ALL".into(),
            opt(s.chain),
            String::new(),
            String::new(),
            opt(s.exclusive),
        ])?;
    }
    flush_csv(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_ranking() {
        let v = [Some(0.2), Some(0.1), Some(0.2), None, Some(0.3)];
        assert_eq!(dense_ranks(&v, false), vec![Some(2), Some(1), Some(2), None, Some(3)]);
        assert_eq!(dense_ranks(&v, true), vec![Some(2), Some(3), Some(2), None, Some(1)]);
    }

    #[test]
    fn ratio_ci_center_is_ratio_of_sums() {
        let units = [(1.0, 1.0), (3.0, 2.0), (0.0, 1.0)];
        let ci = ratio_ci(&units, &BootstrapConfig { replicates: 50, alpha: 0.1, seed: 2 }).unwrap();
        assert_eq!(ci.center, 1.0);
    }
}
