//! Geometric forecast-time schedule: each forecast sits halfway between the
//! previous one and the event's close.

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_DELTA_MIN_HOURS: i64 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub event_id: String,
    pub times: Vec<DateTime<Utc>>,
}

/// One line of `schedule` output.
#[derive(Debug, Serialize)]
pub struct ScheduleEntry<'a> {
    pub event_id: &'a str,
    pub k: usize,
    pub time: DateTime<Utc>,
}

impl Schedule {
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = ScheduleEntry<'_>> {
        self.times.iter().enumerate().map(|(k, &time)| ScheduleEntry {
            event_id: &self.event_id,
            k,
            time,
        })
    }
}

/// `times[k] = tau - 2^-k (tau - t0)`, rounded to whole seconds, for every k
/// whose gap to `tau` is at least `delta_min`. An empty schedule is returned
/// (not an error) when even the first gap is below `delta_min`.
pub fn schedule_horizons(
    event_id: &str,
    t0: DateTime<Utc>,
    tau: DateTime<Utc>,
    delta_min: Duration,
) -> Result<Schedule> {
    if t0 >= tau {
        return Err(Error::InvalidArgument(format!(
            "first forecast time {t0} must precede resolution {tau}"
        )));
    }
    if delta_min <= Duration::zero() {
        return Err(Error::InvalidArgument(format!(
            "minimum gap must be positive, got {delta_min}"
        )));
    }
    let gap0 = (tau - t0).num_milliseconds() as f64 / 1000.0;
    let min_gap = delta_min.num_milliseconds() as f64 / 1000.0;
    let tau_secs = tau.timestamp();
    let mut times: Vec<DateTime<Utc>> = Vec::new();
    let mut gap = gap0;
    while gap >= min_gap {
        let secs = tau_secs - gap.round() as i64;
        let t = DateTime::from_timestamp(secs, 0)
            .ok_or_else(|| Error::InvalidArgument(format!("timestamp out of range: {secs}")))?;
        if times.last().is_some_and(|&last| t <= last) || t >= tau {
            break;
        }
        times.push(t);
        gap /= 2.0;
    }
    Ok(Schedule {
        event_id: event_id.to_owned(),
        times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn tau() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 0).unwrap()
    }

    fn gaps(s: &Schedule) -> Vec<Duration> {
        s.times.iter().map(|&t| tau() - t).collect()
    }

    #[test]
    fn eight_hours_halves_down_to_one() {
        let s = schedule_horizons("E", tau() - Duration::hours(8), tau(), Duration::hours(1)).unwrap();
        assert_eq!(
            gaps(&s),
            vec![Duration::hours(8), Duration::hours(4), Duration::hours(2), Duration::hours(1)]
        );
    }

    #[test]
    fn too_short_is_empty() {
        let s = schedule_horizons("E", tau() - Duration::minutes(30), tau(), Duration::hours(1)).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn delta_min_is_inclusive() {
        let d = Duration::hours(3);
        let s = schedule_horizons("E", tau() - d * 2, tau(), d).unwrap();
        assert_eq!(gaps(&s), vec![d * 2, d]);
    }

    #[test]
    fn bad_arguments() {
        assert!(schedule_horizons("E", tau(), tau(), Duration::hours(1)).is_err());
        assert!(schedule_horizons("E", tau() + Duration::hours(1), tau(), Duration::hours(1)).is_err());
        assert!(schedule_horizons("E", tau() - Duration::hours(1), tau(), Duration::zero()).is_err());
    }

    proptest! {
        #[test]
        fn gaps_halve_and_respect_minimum(gap0 in 60i64..10_000_000, min in 1i64..100_000) {
            let s = schedule_horizons("E", tau() - Duration::seconds(gap0), tau(), Duration::seconds(min)).unwrap();
            let g: Vec<i64> = gaps(&s).iter().map(|d| d.num_seconds()).collect();
            for w in g.windows(2) {
                prop_assert!(w[1] < w[0]);
                prop_assert!((2 * w[1] - w[0]).abs() <= 1, "{:?}", w);
            }
            for &x in &g {
                prop_assert!(x >= min);
            }
            if let Some(&last) = g.last() {
                prop_assert!((last as f64) / 2.0 < min as f64 + 0.5);
            }
        }
    }
}
