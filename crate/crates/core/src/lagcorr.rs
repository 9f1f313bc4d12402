//! Time-lagged Pearson correlation between daily metric series and daily
//! case counts.

use std::io::{self, Write};
use std::ops::RangeInclusive;

use chrono::{Days, NaiveDate};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::indexes::IndexSeries;
use crate::ingest::CaseSeries;
use crate::timeline::Timeline;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagError {
    #[error("lag {lag}: {overlap} overlapping days, at least {required} required")]
    InsufficientOverlap { lag: i32, overlap: usize, required: usize },
    #[error("lag {lag}: a series has zero variance on the overlap")]
    ZeroVariance { lag: i32 },
    #[error("empty lag range")]
    EmptyRange,
    #[error("segment {label} is empty")]
    EmptySegment { label: String },
    #[error("boundary {0} lies outside the series")]
    BoundaryOutside(NaiveDate),
}

/// One value per calendar day; `None` where nothing was observed.
#[derive(Clone, Debug, PartialEq)]
pub struct DailySeries {
    pub start: NaiveDate,
    pub values: Vec<Option<f64>>,
    /// Days averaged over fewer samples than a full day holds.
    pub incomplete: Vec<bool>,
}

impl DailySeries {
    pub fn new(start: NaiveDate, values: Vec<Option<f64>>) -> Self {
        let incomplete = vec![false; values.len()];
        DailySeries {
            start,
            values,
            incomplete,
        }
    }

    pub fn from_values(start: NaiveDate, values: &[f64]) -> Self {
        Self::new(start, values.iter().map(|v| Some(*v)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> NaiveDate {
        self.start + Days::new(self.values.len().saturating_sub(1) as u64)
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        let offset = (date - self.start).num_days();
        if offset < 0 {
            return None;
        }
        self.values.get(offset as usize).copied().flatten()
    }

    /// The days in `[first, last]`, clipped to the series.
    pub fn restrict(&self, first: NaiveDate, last: NaiveDate) -> DailySeries {
        let lo = (first - self.start).num_days().clamp(0, self.len() as i64) as usize;
        let hi = ((last - self.start).num_days() + 1).clamp(lo as i64, self.len() as i64) as usize;
        DailySeries {
            start: self.start + Days::new(lo as u64),
            values: self.values[lo..hi].to_vec(),
            incomplete: self.incomplete[lo..hi].to_vec(),
        }
    }

    /// Centered 7-day mean; days without a full window become `None`.
    pub fn moving_average7(&self) -> DailySeries {
        let n = self.len();
        let values = (0..n)
            .map(|i| {
                if i < 3 || i + 3 >= n {
                    return None;
                }
                let w: Option<Vec<f64>> = self.values[i - 3..=i + 3].iter().copied().collect();
                w.map(|w| w.iter().sum::<f64>() / 7.0)
            })
            .collect();
        DailySeries::new(self.start, values)
    }
}

/// Daily mean of a series' samples on each local day of the timeline.
pub fn resample_daily(series: &IndexSeries, timeline: &Timeline) -> DailySeries {
    let days = timeline.days() as usize;
    let per_day = (crate::timeline::SECONDS_PER_DAY / series.step_secs) as usize;
    let mut sums = vec![0.0; days];
    let mut counts = vec![0usize; days];
    for &(step, v) in &series.values {
        if let Some(day) = timeline.day_of(series.timestamp(step)) {
            sums[day as usize] += v;
            counts[day as usize] += 1;
        }
    }
    DailySeries {
        start: timeline.first_date(),
        values: sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| (n > 0).then(|| s / n as f64))
            .collect(),
        incomplete: counts.iter().map(|&n| n > 0 && n < per_day).collect(),
    }
}

pub fn from_cases(cases: &CaseSeries) -> DailySeries {
    DailySeries::new(cases.start, cases.counts.iter().map(|&c| Some(c as f64)).collect())
}

/// Two-pass Pearson correlation. `lag` only labels errors.
pub fn pearson(pairs: &[(f64, f64)], lag: i32) -> Result<f64, LagError> {
    let constant = |f: fn(&(f64, f64)) -> f64| {
        let lo = pairs.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = pairs.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        lo == hi
    };
    if pairs.is_empty() || constant(|p| p.0) || constant(|p| p.1) {
        return Err(LagError::ZeroVariance { lag });
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pairs `x(u - lag)` with `y(u)` over every day `u` of `y` where both exist.
/// A positive lag means the metric leads.
pub fn lag_pairs(x: &DailySeries, y: &DailySeries, lag: i32) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (i, yv) in y.values.iter().enumerate() {
        let Some(yv) = yv else { continue };
        let u = y.start + Days::new(i as u64);
        let src = if lag >= 0 {
            u.checked_sub_days(Days::new(lag as u64))
        } else {
            u.checked_add_days(Days::new(lag.unsigned_abs() as u64))
        };
        if let Some(xv) = src.and_then(|d| x.get(d)) {
            out.push((xv, *yv));
        }
    }
    out
}

pub fn lagged_pearson(x: &DailySeries, y: &DailySeries, lag: i32, min_overlap: usize) -> Result<f64, LagError> {
    let pairs = lag_pairs(x, y, lag);
    if pairs.len() < min_overlap {
        return Err(LagError::InsufficientOverlap {
            lag,
            overlap: pairs.len(),
            required: min_overlap,
        });
    }
    pearson(&pairs, lag)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LagResult {
    pub wave: String,
    pub lag: i32,
    pub r: f64,
    pub profile: Vec<(i32, f64)>,
}

/// The lag with the largest r; ties go to the smallest lag.
pub fn best_lag(
    x: &DailySeries,
    y: &DailySeries,
    lags: RangeInclusive<i32>,
    min_overlap: usize,
    exec: Execution,
) -> Result<LagResult, LagError> {
    let lag_list: Vec<i32> = lags.collect();
    if lag_list.is_empty() {
        return Err(LagError::EmptyRange);
    }
    let rs = exec::map_slice(exec, &lag_list, |&d| lagged_pearson(x, y, d, min_overlap));
    let mut profile = Vec::with_capacity(rs.len());
    for (d, r) in lag_list.iter().zip(rs) {
        profile.push((*d, r?));
    }
    let mut best = profile[0];
    for &p in &profile[1..] {
        if p.1 > best.1 {
            best = p;
        }
    }
    Ok(LagResult {
        wave: "all".into(),
        lag: best.0,
        r: best.1,
        profile,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Wave {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// Splits `[first, last]` at the boundary dates; each boundary starts a new
/// segment. Segments are labeled `wave1`, `wave2`, ...
pub fn wave_split(first: NaiveDate, last: NaiveDate, boundaries: &[NaiveDate]) -> Result<Vec<Wave>, LagError> {
    let mut starts = vec![first];
    for &b in boundaries {
        if b < first || b > last {
            return Err(LagError::BoundaryOutside(b));
        }
        starts.push(b);
    }
    let mut waves = Vec::with_capacity(starts.len());
    for (i, &s) in starts.iter().enumerate() {
        let label = format!("wave{}", i + 1);
        let end = match starts.get(i + 1) {
            Some(&next) => match next.pred_opt() {
                Some(e) if e >= s => e,
                _ => return Err(LagError::EmptySegment { label }),
            },
            None => last,
        };
        if end < s {
            return Err(LagError::EmptySegment { label });
        }
        waves.push(Wave { label, start: s, end });
    }
    Ok(waves)
}

/// Best lag per wave; the metric series is used unrestricted so early
/// wave days can pair with metric values from before the wave.
pub fn best_lag_by_wave(
    x: &DailySeries,
    cases: &DailySeries,
    waves: &[Wave],
    lags: RangeInclusive<i32>,
    min_overlap: usize,
    exec: Execution,
) -> Result<Vec<LagResult>, LagError> {
    waves
        .iter()
        .map(|w| {
            let y = cases.restrict(w.start, w.end);
            best_lag(x, &y, lags.clone(), min_overlap, exec).map(|r| LagResult {
                wave: w.label.clone(),
                ..r
            })
        })
        .collect()
}

pub const LAG_HEADER: &str = "wave,metric,lag_days,pearson_r";

pub fn write_lag_results_csv<W: Write>(results: &[(String, LagResult)], mut w: W) -> io::Result<()> {
    writeln!(w, "{LAG_HEADER}")?;
    for (metric, r) in results {
        writeln!(w, "{},{},{},{}", r.wave, metric, r.lag, r.r)?;
    }
    Ok(())
}

pub fn write_lag_profile_csv<W: Write>(results: &[(String, LagResult)], mut w: W) -> io::Result<()> {
    writeln!(w, "{LAG_HEADER}")?;
    for (metric, r) in results {
        for (lag, v) in &r.profile {
            writeln!(w, "{},{},{},{}", r.wave, metric, lag, v)?;
        }
    }
    Ok(())
}
