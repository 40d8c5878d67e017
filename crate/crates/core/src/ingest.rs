//! Loading, validating, and filtering the line-delimited dataset files.
//!
//! Each input file holds one JSON object per line. Blank lines are skipped.
//! Validation collects every offending record before failing so a single run
//! reports the whole problem set.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    normalize_snapshot, Event, ForecastRecord, Market, MarketSnapshot, NormalizedPrices, Outcome,
    OutcomeRecord,
};

/// Forecasts made closer than this to resolution are dropped by default.
pub const DEFAULT_CUTOFF_HOURS: i64 = 3;

/// Markets along a chain, ordered so that each one implies the next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainAnnotation {
    pub event_id: String,
    pub ordered_market_ids: Vec<String>,
}

/// Markets of which exactly one resolves Yes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusiveSetAnnotation {
    pub event_id: String,
    pub market_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub events: BTreeMap<String, Event>,
    pub markets: BTreeMap<String, Market>,
    pub snapshots: Vec<MarketSnapshot>,
    pub forecasts: Vec<ForecastRecord>,
    pub outcomes: BTreeMap<String, OutcomeRecord>,
    pub chains: Vec<ChainAnnotation>,
    pub exclusive_sets: Vec<ExclusiveSetAnnotation>,
}

/// Raw records before cross-referencing.
#[derive(Debug, Clone, Default)]
pub struct RawRecords {
    pub events: Vec<Event>,
    pub markets: Vec<Market>,
    pub snapshots: Vec<MarketSnapshot>,
    pub forecasts: Vec<ForecastRecord>,
    pub outcomes: Vec<OutcomeRecord>,
    pub chains: Vec<ChainAnnotation>,
    pub exclusive_sets: Vec<ExclusiveSetAnnotation>,
}

#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub events: PathBuf,
    pub markets: PathBuf,
    pub snapshots: PathBuf,
    pub forecasts: PathBuf,
    pub outcomes: PathBuf,
    pub chains: Option<PathBuf>,
    pub exclusive_sets: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard file names inside one directory. Annotation files are picked
    /// up only when present.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let optional = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        DatasetPaths {
            events: dir.join("events.jsonl"),
            markets: dir.join("markets.jsonl"),
            snapshots: dir.join("snapshots.jsonl"),
            forecasts: dir.join("forecasts.jsonl"),
            outcomes: dir.join("outcomes.jsonl"),
            chains: optional("chains.jsonl"),
            exclusive_sets: optional("exclusive_sets.jsonl"),
        }
    }
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: name.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn write_records<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let raw = RawRecords {
        events: read_records(&paths.events)?,
        markets: read_records(&paths.markets)?,
        snapshots: read_records(&paths.snapshots)?,
        forecasts: read_records(&paths.forecasts)?,
        outcomes: read_records(&paths.outcomes)?,
        chains: match &paths.chains {
            Some(p) => read_records(p)?,
            None => Vec::new(),
        },
        exclusive_sets: match &paths.exclusive_sets {
            Some(p) => read_records(p)?,
            None => Vec::new(),
        },
    };
    Dataset::from_records(raw)
}

/// Writes the standard files into `dir`. Annotation files are written only
/// when non-empty.
pub fn write_dataset(d: &Dataset, dir: impl AsRef<Path>) -> Result<DatasetPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = DatasetPaths::in_dir(dir);
    write_records(&paths.events, d.events.values())?;
    write_records(&paths.markets, d.markets.values())?;
    write_records(&paths.snapshots, &d.snapshots)?;
    write_records(&paths.forecasts, &d.forecasts)?;
    write_records(&paths.outcomes, d.outcomes.values())?;
    paths.chains = None;
    paths.exclusive_sets = None;
    if !d.chains.is_empty() {
        let p = dir.join("chains.jsonl");
        write_records(&p, &d.chains)?;
        paths.chains = Some(p);
    }
    if !d.exclusive_sets.is_empty() {
        let p = dir.join("exclusive_sets.jsonl");
        write_records(&p, &d.exclusive_sets)?;
        paths.exclusive_sets = Some(p);
    }
    Ok(paths)
}

impl Dataset {
    /// Cross-references raw records, failing with every invariant violation found.
    pub fn from_records(raw: RawRecords) -> Result<Dataset> {
        let mut problems = Vec::new();

        let mut events = BTreeMap::new();
        for mut e in raw.events {
            e.market_ids.clear();
            if events.contains_key(&e.event_id) {
                problems.push(format!("duplicate event {}", e.event_id));
            } else {
                events.insert(e.event_id.clone(), e);
            }
        }

        let mut markets = BTreeMap::new();
        for m in raw.markets {
            if markets.contains_key(&m.market_id) {
                problems.push(format!("duplicate market {}", m.market_id));
                continue;
            }
            match events.get_mut(&m.event_id) {
                Some(e) => e.market_ids.push(m.market_id.clone()),
                None => problems.push(format!(
                    "market {} references unknown event {}",
                    m.market_id, m.event_id
                )),
            }
            markets.insert(m.market_id.clone(), m);
        }
        for e in events.values() {
            if e.market_ids.is_empty() {
                problems.push(format!("event {} has no markets", e.event_id));
            }
        }

        for s in &raw.snapshots {
            if !markets.contains_key(&s.market_id) {
                problems.push(format!("snapshot references unknown market {}", s.market_id));
            }
            problems.extend(s.price_problems());
        }

        for f in &raw.forecasts {
            let Some(m) = markets.get(&f.market_id) else {
                problems.push(format!(
                    "forecast by {} references unknown market {}",
                    f.forecaster_id, f.market_id
                ));
                continue;
            };
            if !(0.0..=1.0).contains(&f.p_yes) {
                problems.push(format!(
                    "forecast by {} on market {}: p_yes={} outside [0,1]",
                    f.forecaster_id, f.market_id, f.p_yes
                ));
            }
            if let Some(e) = events.get(&m.event_id) {
                if f.time >= e.resolution_time {
                    problems.push(format!(
                        "forecast by {} on market {} at {} is not before resolution {}",
                        f.forecaster_id, f.market_id, f.time, e.resolution_time
                    ));
                }
            }
        }

        let mut outcomes = BTreeMap::new();
        let mut duplicated = BTreeSet::new();
        for o in raw.outcomes {
            if !markets.contains_key(&o.market_id) {
                problems.push(format!("outcome references unknown market {}", o.market_id));
            }
            if outcomes.contains_key(&o.market_id) {
                duplicated.insert(o.market_id.clone());
            } else {
                outcomes.insert(o.market_id.clone(), o);
            }
        }
        for m in duplicated {
            problems.push(format!("duplicate outcome for market {m}"));
        }

        for c in &raw.chains {
            if c.ordered_market_ids.len() < 2 {
                problems.push(format!("chain in event {} has fewer than 2 markets", c.event_id));
            }
            check_membership(&markets, &events, &c.event_id, &c.ordered_market_ids, "chain", &mut problems);
        }
        for s in &raw.exclusive_sets {
            let unique: HashSet<_> = s.market_ids.iter().collect();
            if unique.len() != s.market_ids.len() {
                problems.push(format!("exclusive set in event {} repeats a market", s.event_id));
            }
            if unique.len() < 2 {
                problems.push(format!(
                    "exclusive set in event {} has fewer than 2 markets",
                    s.event_id
                ));
            }
            check_membership(&markets, &events, &s.event_id, &s.market_ids, "exclusive set", &mut problems);
        }

        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Dataset {
            events,
            markets,
            snapshots: raw.snapshots,
            forecasts: raw.forecasts,
            outcomes,
            chains: raw.chains,
            exclusive_sets: raw.exclusive_sets,
        })
    }

    pub fn event_of_market(&self, market_id: &str) -> Option<&Event> {
        self.markets
            .get(market_id)
            .and_then(|m| self.events.get(&m.event_id))
    }

    /// Distinct forecaster ids in sorted order.
    pub fn forecaster_ids(&self) -> Vec<String> {
        let ids: BTreeSet<&str> = self.forecasts.iter().map(|f| f.forecaster_id.as_str()).collect();
        ids.into_iter().map(str::to_owned).collect()
    }
}

fn check_membership(
    markets: &BTreeMap<String, Market>,
    events: &BTreeMap<String, Event>,
    event_id: &str,
    ids: &[String],
    what: &str,
    problems: &mut Vec<String>,
) {
    if !events.contains_key(event_id) {
        problems.push(format!("{what} references unknown event {event_id}"));
        return;
    }
    for id in ids {
        match markets.get(id) {
            None => problems.push(format!("{what} in event {event_id} references unknown market {id}")),
            Some(m) if m.event_id != event_id => problems.push(format!(
                "{what} in event {event_id} includes market {id} from event {}",
                m.event_id
            )),
            Some(_) => {}
        }
    }
}

/// Drops every forecast made less than `cutoff` before its event resolves.
/// A forecast exactly `cutoff` before resolution is kept.
pub fn filter_near_resolution(d: &Dataset, cutoff: Duration) -> Result<Dataset> {
    if cutoff < Duration::zero() {
        return Err(Error::InvalidArgument(format!("cutoff must be >= 0, got {cutoff}")));
    }
    let mut out = d.clone();
    out.forecasts.retain(|f| match d.event_of_market(&f.market_id) {
        Some(e) => e.resolution_time - f.time >= cutoff,
        None => true,
    });
    Ok(out)
}

/// Per-market snapshot lookup. Among snapshots sharing a timestamp the one
/// that appears last in input order wins.
#[derive(Debug)]
pub struct SnapshotIndex<'a> {
    by_market: HashMap<&'a str, Vec<&'a MarketSnapshot>>,
}

impl<'a> SnapshotIndex<'a> {
    pub fn new(snapshots: &'a [MarketSnapshot]) -> Self {
        let mut by_market: HashMap<&str, Vec<&MarketSnapshot>> = HashMap::new();
        for s in snapshots {
            by_market.entry(s.market_id.as_str()).or_default().push(s);
        }
        for v in by_market.values_mut() {
            // stable: equal times keep input order
            v.sort_by_key(|s| s.time);
        }
        SnapshotIndex { by_market }
    }

    pub fn latest_at(&self, market_id: &str, t: DateTime<Utc>) -> Result<&'a MarketSnapshot> {
        let missing = || Error::Pairing {
            market_id: market_id.to_owned(),
            time: t,
        };
        let v = self.by_market.get(market_id).ok_or_else(missing)?;
        let n = v.partition_point(|s| s.time <= t);
        if n == 0 {
            return Err(missing());
        }
        Ok(v[n - 1])
    }
}

pub fn latest_snapshot_at<'a>(
    d: &'a Dataset,
    market_id: &str,
    t: DateTime<Utc>,
) -> Result<&'a MarketSnapshot> {
    let mut best: Option<&MarketSnapshot> = None;
    for s in d.snapshots.iter().filter(|s| s.market_id == market_id && s.time <= t) {
        if best.is_none_or(|b| s.time >= b.time) {
            best = Some(s);
        }
    }
    best.ok_or_else(|| Error::Pairing {
        market_id: market_id.to_owned(),
        time: t,
    })
}

/// A forecast joined with its event, implied prices at forecast time, and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredForecast {
    pub forecaster_id: String,
    pub event_id: String,
    pub market_id: String,
    pub time: DateTime<Utc>,
    pub p: f64,
    pub prices: NormalizedPrices,
    pub outcome: Outcome,
    /// Time remaining until the event resolves.
    pub lead: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct Pairing {
    pub scored: Vec<ScoredForecast>,
    /// Forecasts skipped because their market has no outcome yet.
    pub unresolved: usize,
}

/// Joins forecasts (optionally of one forecaster) with snapshots and outcomes.
///
/// Forecasts on markets without an outcome are skipped and counted. A forecast
/// with no snapshot at or before its time is an error; all such forecasts are
/// listed together.
pub fn pair_forecasts(d: &Dataset, forecaster_id: Option<&str>) -> Result<Pairing> {
    let index = SnapshotIndex::new(&d.snapshots);
    let mut pairing = Pairing::default();
    let mut problems = Vec::new();
    for f in &d.forecasts {
        if forecaster_id.is_some_and(|id| id != f.forecaster_id) {
            continue;
        }
        let Some(outcome) = d.outcomes.get(&f.market_id) else {
            pairing.unresolved += 1;
            continue;
        };
        let Some(event) = d.event_of_market(&f.market_id) else {
            problems.push(format!("forecast on market {} has no event", f.market_id));
            continue;
        };
        let snap = match index.latest_at(&f.market_id, f.time) {
            Ok(s) => s,
            Err(e) => {
                problems.push(format!("forecast by {}: {e}", f.forecaster_id));
                continue;
            }
        };
        let prices = match normalize_snapshot(snap) {
            Ok(q) => q,
            Err(e) => {
                problems.push(e.to_string());
                continue;
            }
        };
        pairing.scored.push(ScoredForecast {
            forecaster_id: f.forecaster_id.clone(),
            event_id: event.event_id.clone(),
            market_id: f.market_id.clone(),
            time: f.time,
            p: f.p_yes,
            prices,
            outcome: outcome.outcome,
            lead: event.resolution_time - f.time,
        });
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    Ok(pairing)
}
