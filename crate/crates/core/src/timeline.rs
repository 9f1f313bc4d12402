//! Mapping between UTC epoch seconds and the analysis calendar.
//!
//! Timestamps are stored as UTC seconds. A single fixed UTC offset (no DST)
//! maps them onto local calendar days; intervals and hours are counted from
//! local midnight of the first analysis day.

use std::ops::Range;

use chrono::{Datelike, NaiveDate, Weekday};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SECONDS_PER_HOUR: i64 = 3_600;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timeline {
    first_date: NaiveDate,
    days: u32,
    interval_secs: u32,
    utc_offset_secs: i32,
}

impl Timeline {
    /// `last_date` is inclusive. Panics if the span is empty or the interval
    /// does not divide a day; configuration validation rules those out.
    pub fn new(first_date: NaiveDate, last_date: NaiveDate, interval_secs: u32, utc_offset_secs: i32) -> Self {
        assert!(last_date >= first_date, "timeline must cover at least one day");
        assert!(
            interval_secs > 0 && SECONDS_PER_DAY % interval_secs as i64 == 0,
            "interval must divide a day"
        );
        let days = (last_date - first_date).num_days() as u32 + 1;
        Timeline {
            first_date,
            days,
            interval_secs,
            utc_offset_secs,
        }
    }

    pub fn first_date(&self) -> NaiveDate {
        self.first_date
    }

    pub fn last_date(&self) -> NaiveDate {
        self.date_of_day(self.days - 1)
    }

    pub fn days(&self) -> u32 {
        self.days
    }

    pub fn interval_secs(&self) -> u32 {
        self.interval_secs
    }

    pub fn utc_offset_secs(&self) -> i32 {
        self.utc_offset_secs
    }

    /// UTC epoch of local midnight on the first day.
    pub fn start(&self) -> i64 {
        let midnight = self
            .first_date
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
            .and_utc()
            .timestamp();
        midnight - self.utc_offset_secs as i64
    }

    /// Exclusive end.
    pub fn end(&self) -> i64 {
        self.start() + self.days as i64 * SECONDS_PER_DAY
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.start() && ts < self.end()
    }

    pub fn intervals_per_day(&self) -> u32 {
        (SECONDS_PER_DAY / self.interval_secs as i64) as u32
    }

    pub fn interval_count(&self) -> u32 {
        self.days * self.intervals_per_day()
    }

    pub fn interval_of(&self, ts: i64) -> Option<u32> {
        self.contains(ts)
            .then(|| ((ts - self.start()) / self.interval_secs as i64) as u32)
    }

    pub fn interval_start(&self, interval: u32) -> i64 {
        self.start() + interval as i64 * self.interval_secs as i64
    }

    pub fn day_of(&self, ts: i64) -> Option<u32> {
        self.contains(ts)
            .then(|| ((ts - self.start()) / SECONDS_PER_DAY) as u32)
    }

    pub fn day_of_interval(&self, interval: u32) -> u32 {
        interval / self.intervals_per_day()
    }

    /// Position of the interval within its local day.
    pub fn slot_of_interval(&self, interval: u32) -> u32 {
        interval % self.intervals_per_day()
    }

    pub fn intervals_of_day(&self, day: u32) -> Range<u32> {
        let per = self.intervals_per_day();
        day * per..(day + 1) * per
    }

    pub fn date_of_day(&self, day: u32) -> NaiveDate {
        self.first_date + chrono::Days::new(day as u64)
    }

    pub fn day_of_date(&self, date: NaiveDate) -> Option<u32> {
        let d = (date - self.first_date).num_days();
        (d >= 0 && d < self.days as i64).then_some(d as u32)
    }

    pub fn day_start(&self, day: u32) -> i64 {
        self.start() + day as i64 * SECONDS_PER_DAY
    }

    pub fn is_weekday(&self, day: u32) -> bool {
        !matches!(self.date_of_day(day).weekday(), Weekday::Sat | Weekday::Sun)
    }

    pub fn hour_count(&self) -> u32 {
        self.days * 24
    }

    pub fn hour_start(&self, hour: u32) -> i64 {
        self.start() + hour as i64 * SECONDS_PER_HOUR
    }

    /// The hour whose start is the latest at or before the interval start.
    pub fn hour_of_interval(&self, interval: u32) -> u32 {
        ((interval as i64 * self.interval_secs as i64) / SECONDS_PER_HOUR) as u32
    }

    /// Seconds since local midnight for any timestamp (not only in range).
    pub fn local_second_of_day(&self, ts: i64) -> i64 {
        (ts + self.utc_offset_secs as i64).rem_euclid(SECONDS_PER_DAY)
    }

    /// Local calendar date of any timestamp.
    pub fn local_date(&self, ts: i64) -> NaiveDate {
        let local = ts + self.utc_offset_secs as i64;
        let days = local.div_euclid(SECONDS_PER_DAY);
        NaiveDate::from_num_days_from_ce_opt(719_163 + days as i32).expect("date in range")
    }
}
