//! Regional index series (SCI, HRU, HR-SCI) and their baseline normalization.

pub mod grid;

use std::fmt;
use std::io::{self, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::ContactCounts;
use crate::query_risk::HighRiskSet;
use crate::timeline::{Timeline, SECONDS_PER_HOUR};
use crate::util::format_utc;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("no observed population at interval {interval}")]
    NoPopulation { interval: u32 },
    #[error("baseline has {weekdays} weekdays with data; at least {required} required")]
    InsufficientBaseline { weekdays: usize, required: usize },
    #[error("baseline peak is not positive ({0})")]
    NonPositivePeak(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Sci,
    Hru,
    HrSci,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Sci, Metric::Hru, Metric::HrSci];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Sci => "SCI",
            Metric::Hru => "HRU",
            Metric::HrSci => "HRSCI",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().replace('-', "").as_str() {
            "SCI" => Some(Metric::Sci),
            "HRU" => Some(Metric::Hru),
            "HRSCI" => Some(Metric::HrSci),
            _ => None,
        }
    }

    pub(crate) fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Region,
    Cell(grid::CellId),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Region => f.write_str("region"),
            Scope::Cell(c) => write!(f, "cell:{c}"),
        }
    }
}

/// A metric sampled on a regular step. `values` holds `(step index, value)`
/// with strictly increasing indices; steps without data are absent.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexSeries {
    pub metric: Metric,
    pub step_secs: i64,
    pub start: i64,
    pub scope: Scope,
    pub values: Vec<(u32, f64)>,
}

impl IndexSeries {
    pub fn timestamp(&self, step: u32) -> i64 {
        self.start + step as i64 * self.step_secs
    }

    pub fn get(&self, step: u32) -> Option<f64> {
        self.values
            .binary_search_by_key(&step, |v| v.0)
            .ok()
            .map(|i| self.values[i].1)
    }
}

/// Users with a home observed on each day of the timeline.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Population {
    pub per_day: Vec<u64>,
}

impl Population {
    pub fn at_day(&self, day: u32) -> u64 {
        self.per_day.get(day as usize).copied().unwrap_or(0)
    }
}

/// Integer sums feeding the regional series at one interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntervalTotals {
    pub interval: u32,
    pub population: u64,
    pub contacts: u64,
    pub high_risk_contacts: u64,
}

impl IntervalTotals {
    pub fn from_counts(counts: &ContactCounts, high_risk: &HighRiskSet, population: u64, timeline: &Timeline) -> Self {
        let hour = timeline.hour_of_interval(counts.interval);
        IntervalTotals {
            interval: counts.interval,
            population,
            contacts: counts.total(),
            high_risk_contacts: hrsci_sum(counts, high_risk, hour),
        }
    }

    pub fn sci_raw(&self) -> Result<f64, IndexError> {
        ratio(self.contacts, self.population, self.interval)
    }

    pub fn hrsci_raw(&self) -> Result<f64, IndexError> {
        ratio(self.high_risk_contacts, self.population, self.interval)
    }
}

fn ratio(sum: u64, n: u64, interval: u32) -> Result<f64, IndexError> {
    if n == 0 {
        return Err(IndexError::NoPopulation { interval });
    }
    Ok(sum as f64 / n as f64)
}

/// Σ c over out users divided by the observed population.
pub fn sci_raw(counts: &ContactCounts, population: u64) -> Result<f64, IndexError> {
    ratio(counts.total(), population, counts.interval)
}

/// Σ c over out users who are high-risk during `hour`.
pub fn hrsci_sum(counts: &ContactCounts, high_risk: &HighRiskSet, hour: u32) -> u64 {
    counts
        .entries
        .iter()
        .filter(|e| high_risk.contains(e.user, hour))
        .map(|e| e.count as u64)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct BaselinePeak(f64);

impl BaselinePeak {
    pub fn new(value: f64) -> Result<Self, IndexError> {
        if value > 0.0 && value.is_finite() {
            Ok(BaselinePeak(value))
        } else {
            Err(IndexError::NonPositivePeak(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub const MIN_BASELINE_WEEKDAYS: usize = 5;

/// Per-slot mean of raw SCI over baseline weekdays.
pub fn baseline_profile(
    raw: &[(u32, f64)],
    timeline: &Timeline,
    baseline: (NaiveDate, NaiveDate),
) -> (Vec<Option<f64>>, usize) {
    let per_day = timeline.intervals_per_day() as usize;
    let mut sums = vec![0.0; per_day];
    let mut counts = vec![0usize; per_day];
    let mut days = std::collections::BTreeSet::new();
    for &(interval, v) in raw {
        let day = timeline.day_of_interval(interval);
        let date = timeline.date_of_day(day);
        if date < baseline.0 || date > baseline.1 || !timeline.is_weekday(day) {
            continue;
        }
        days.insert(day);
        let slot = timeline.slot_of_interval(interval) as usize;
        sums[slot] += v;
        counts[slot] += 1;
    }
    let profile = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    (profile, days.len())
}

/// Maximum over the time of day of the mean weekday raw SCI in the baseline.
pub fn baseline_peak(
    raw: &[(u32, f64)],
    timeline: &Timeline,
    baseline: (NaiveDate, NaiveDate),
) -> Result<BaselinePeak, IndexError> {
    let (profile, weekdays) = baseline_profile(raw, timeline, baseline);
    if weekdays < MIN_BASELINE_WEEKDAYS {
        return Err(IndexError::InsufficientBaseline {
            weekdays,
            required: MIN_BASELINE_WEEKDAYS,
        });
    }
    let peak = profile.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    BaselinePeak::new(peak)
}

fn interval_series(metric: Metric, timeline: &Timeline, values: Vec<(u32, f64)>) -> IndexSeries {
    IndexSeries {
        metric,
        step_secs: timeline.interval_secs() as i64,
        start: timeline.start(),
        scope: Scope::Region,
        values,
    }
}

/// Raw SCI divided by the baseline peak.
pub fn sci_series(raw: &[(u32, f64)], peak: BaselinePeak, timeline: &Timeline) -> IndexSeries {
    interval_series(
        Metric::Sci,
        timeline,
        raw.iter().map(|&(t, v)| (t, v / peak.value())).collect(),
    )
}

/// Raw HR-SCI divided by the same peak as SCI, so both share one scale.
pub fn hrsci_series(raw: &[(u32, f64)], peak: BaselinePeak, timeline: &Timeline) -> IndexSeries {
    interval_series(
        Metric::HrSci,
        timeline,
        raw.iter().map(|&(t, v)| (t, v / peak.value())).collect(),
    )
}

/// Hourly number of high-risk users.
pub fn hru_series(high_risk: &HighRiskSet, timeline: &Timeline) -> IndexSeries {
    IndexSeries {
        metric: Metric::Hru,
        step_secs: SECONDS_PER_HOUR,
        start: timeline.start(),
        scope: Scope::Region,
        values: high_risk
            .counts()
            .iter()
            .enumerate()
            .map(|(h, &c)| (h as u32, c as f64))
            .collect(),
    }
}

/// Raw regional series from interval totals, skipping intervals without an
/// observed population.
/// `(interval, value)` pairs in interval order.
pub type RawSeries = Vec<(u32, f64)>;

pub fn raw_series(totals: &[IntervalTotals]) -> (RawSeries, RawSeries) {
    let mut sci = Vec::new();
    let mut hrsci = Vec::new();
    for t in totals {
        if let (Ok(s), Ok(h)) = (t.sci_raw(), t.hrsci_raw()) {
            sci.push((t.interval, s));
            hrsci.push((t.interval, h));
        }
    }
    (sci, hrsci)
}

pub const INDEXES_HEADER: &str = "interval_start,metric,scope,value";

pub fn write_indexes_csv<W: Write>(series: &[IndexSeries], mut w: W) -> io::Result<()> {
    writeln!(w, "{INDEXES_HEADER}")?;
    for s in series {
        for &(step, v) in &s.values {
            writeln!(w, "{},{},{},{}", format_utc(s.timestamp(step)), s.metric, s.scope, v)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::ContactEntry;
    use crate::geo::PlanarPoint;
    use crate::UserIdx;
    use proptest::prelude::*;

    fn d(m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, m, day).unwrap()
    }

    fn counts(interval: u32, cs: &[u32]) -> ContactCounts {
        ContactCounts {
            interval,
            entries: cs
                .iter()
                .enumerate()
                .map(|(i, &count)| ContactEntry {
                    user: UserIdx(i as u32),
                    point: PlanarPoint::new(0.0, 0.0),
                    count,
                })
                .collect(),
        }
    }

    /// Two baseline weeks starting Monday 2020-02-03, UTC.
    fn timeline() -> Timeline {
        Timeline::new(d(2, 3), d(2, 16), 1800, 0)
    }

    #[test]
    fn sci_raw_formula() {
        assert_eq!(sci_raw(&counts(0, &[2, 2, 0]), 10), Ok(0.4));
        assert_eq!(sci_raw(&counts(0, &[]), 10), Ok(0.0));
        assert_eq!(
            sci_raw(&counts(4, &[1]), 0),
            Err(IndexError::NoPopulation { interval: 4 })
        );
    }

    #[test]
    fn constant_baseline() {
        let tl = timeline();
        let raw: Vec<(u32, f64)> = (0..tl.interval_count()).map(|t| (t, 0.5)).collect();
        assert_eq!(baseline_peak(&raw, &tl, (d(2, 3), d(2, 16))).unwrap().value(), 0.5);
    }

    #[test]
    fn weekday_peak_ignores_weekends() {
        let tl = timeline();
        let raw: Vec<(u32, f64)> = (0..tl.interval_count())
            .map(|t| {
                let day = tl.day_of_interval(t);
                let slot = tl.slot_of_interval(t);
                let v = if !tl.is_weekday(day) {
                    3.0
                } else if slot == 18 {
                    0.75
                } else {
                    0.1
                };
                (t, v)
            })
            .collect();
        let peak = baseline_peak(&raw, &tl, (d(2, 3), d(2, 16))).unwrap();
        assert_eq!(peak.value(), 0.75);
        let sci = sci_series(&raw, peak, &tl);
        assert_eq!(sci.get(18), Some(1.0));
        assert_eq!(sci.get(19), Some(0.1 / 0.75));
    }

    #[test]
    fn too_few_weekdays() {
        let tl = timeline();
        let raw = vec![(5, 4.0)];
        assert_eq!(
            baseline_peak(&raw, &tl, (d(2, 3), d(2, 16))),
            Err(IndexError::InsufficientBaseline {
                weekdays: 1,
                required: 5
            })
        );
        assert!(baseline_peak(&[], &tl, (d(2, 3), d(2, 16))).is_err());
        assert!(BaselinePeak::new(0.0).is_err());
    }

    #[test]
    fn normalization_is_linear() {
        let tl = timeline();
        let peak = BaselinePeak::new(0.25).unwrap();
        let s = sci_series(&[(0, 0.25), (1, 0.0), (2, 0.5)], peak, &tl);
        assert_eq!(s.values, vec![(0, 1.0), (1, 0.0), (2, 2.0)]);
    }

    #[test]
    fn hru_counts_hours() {
        let tl = timeline();
        let empty = HighRiskSet::empty(3, tl.hour_count());
        assert!(hru_series(&empty, &tl).values.iter().all(|v| v.1 == 0.0));
        let one = HighRiskSet::from_memberships(
            3,
            tl.hour_count(),
            vec![(UserIdx(1), 4), (UserIdx(1), 5), (UserIdx(1), 6)],
        );
        let s = hru_series(&one, &tl);
        let ones: Vec<u32> = s.values.iter().filter(|v| v.1 == 1.0).map(|v| v.0).collect();
        assert_eq!(ones, [4, 5, 6]);
        assert_eq!(s.timestamp(4), tl.start() + 4 * 3600);
    }

    #[test]
    fn hrsci_subsets() {
        let tl = timeline();
        let c = counts(3, &[4, 1, 3, 0]);
        let none = HighRiskSet::empty(4, tl.hour_count());
        let all = HighRiskSet::all(4, tl.hour_count());
        assert_eq!(hrsci_sum(&c, &none, 1), 0);
        assert_eq!(hrsci_sum(&c, &all, 1), c.total());
        // Users 1 and 2 hold half of the 8 contacts.
        let half = HighRiskSet::from_memberships(4, tl.hour_count(), vec![(UserIdx(1), 1), (UserIdx(2), 1)]);
        let t = IntervalTotals::from_counts(&c, &half, 10, &tl);
        assert_eq!(t.high_risk_contacts * 2, t.contacts);
        assert_eq!(t.hrsci_raw().unwrap() * 2.0, t.sci_raw().unwrap());
    }

    #[test]
    fn csv_rows() {
        let tl = timeline();
        let s = sci_series(&[(0, 0.5), (3, 1.0)], BaselinePeak::new(0.5).unwrap(), &tl);
        let mut buf = Vec::new();
        write_indexes_csv(&[s], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "interval_start,metric,scope,value\n2020-02-03T00:00:00Z,SCI,region,1\n2020-02-03T01:30:00Z,SCI,region,2\n"
        );
    }

    proptest! {
        #[test]
        fn sci_matches_hand_sum(cs in proptest::collection::vec(0u32..50, 0..200), n in 1u64..10_000) {
            let c = counts(0, &cs);
            let mut hand = 0.0f64;
            for &x in &cs { hand += x as f64; }
            let got = sci_raw(&c, n).unwrap();
            prop_assert!((got - hand / n as f64).abs() <= 1e-12 * got.max(1.0));
        }

        #[test]
        fn hrsci_never_exceeds_sci(cs in proptest::collection::vec(0u32..50, 1..100), members in proptest::collection::vec(any::<bool>(), 100)) {
            let tl = timeline();
            let c = counts(0, &cs);
            let pairs = members.iter().enumerate().filter(|m| *m.1).map(|(i, _)| (UserIdx(i as u32), 0)).collect();
            let hr = HighRiskSet::from_memberships(100, tl.hour_count(), pairs);
            prop_assert!(hrsci_sum(&c, &hr, 0) <= c.total());
        }

        #[test]
        fn scaling_keeps_order(raw in proptest::collection::vec(0.0f64..10.0, 2..50), peak in 0.01f64..10.0) {
            let tl = timeline();
            let series: Vec<(u32, f64)> = raw.iter().enumerate().map(|(i, v)| (i as u32, *v)).collect();
            let s = sci_series(&series, BaselinePeak::new(peak).unwrap(), &tl);
            for (a, b) in series.iter().zip(&s.values) {
                for (c, d) in series.iter().zip(&s.values) {
                    prop_assert_eq!(a.1 < c.1, b.1 < d.1);
                }
            }
        }
    }
}
