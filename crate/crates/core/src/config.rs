//! Study configuration: a flat TOML key–value file plus `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indexes::grid::StudyArea;
use crate::timeline::{Timeline, SECONDS_PER_DAY};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn serde_default<T: Default>() -> T {
    T::default()
}

/// Every tunable of the analysis. Field names are the config-file keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub trajectories: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub cases: Option<PathBuf>,
    pub patterns: Option<PathBuf>,

    pub study_start: NaiveDate,
    pub study_end: NaiveDate,
    pub baseline_start: NaiveDate,
    pub baseline_end: NaiveDate,
    /// Fixed local-time offset; Japan Standard Time by default.
    pub utc_offset_minutes: i32,
    pub interval_secs: u32,

    pub home_radius_m: f64,
    pub contact_radius_m: f64,
    pub stay_radius_m: f64,
    pub stay_min_duration_secs: u32,
    pub meanshift_bandwidth_m: f64,
    pub night_start_hour: u32,
    pub night_end_hour: u32,
    /// Count users without a detectable home in the daily population.
    pub include_homeless_in_population: bool,

    pub session_gap_secs: u32,
    pub risk_threshold_k: u32,
    pub risk_window_days: u32,
    /// Treat every user as high-risk at every hour.
    pub force_all_high_risk: bool,

    pub coarse_cell_m: f64,
    pub fine_cell_m: f64,
    pub refine_top_n: usize,
    pub grid_origin_lat: Option<f64>,
    pub grid_origin_lon: Option<f64>,
    pub grid_cols: Option<u32>,
    pub grid_rows: Option<u32>,
    pub rank_start: Option<NaiveDate>,
    pub rank_end: Option<NaiveDate>,

    pub lag_min_days: i32,
    pub lag_max_days: i32,
    pub allow_negative_lags: bool,
    pub min_overlap_days: usize,
    pub smooth_cases: bool,
    #[serde(default = "serde_default")]
    pub wave_boundaries: Vec<NaiveDate>,

    pub max_malformed_fraction: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
        StudyConfig {
            trajectories: None,
            queries: None,
            cases: None,
            patterns: None,
            study_start: d(2020, 2, 1),
            study_end: d(2020, 9, 5),
            baseline_start: d(2020, 2, 1),
            baseline_end: d(2020, 2, 14),
            utc_offset_minutes: 540,
            interval_secs: 1800,
            home_radius_m: 125.0,
            contact_radius_m: 125.0,
            stay_radius_m: 100.0,
            stay_min_duration_secs: 900,
            meanshift_bandwidth_m: 100.0,
            night_start_hour: 0,
            night_end_hour: 6,
            include_homeless_in_population: false,
            session_gap_secs: 1800,
            risk_threshold_k: 3,
            risk_window_days: 7,
            force_all_high_risk: false,
            coarse_cell_m: 1000.0,
            fine_cell_m: 125.0,
            refine_top_n: 50,
            grid_origin_lat: None,
            grid_origin_lon: None,
            grid_cols: None,
            grid_rows: None,
            rank_start: None,
            rank_end: None,
            lag_min_days: 0,
            lag_max_days: 40,
            allow_negative_lags: false,
            min_overlap_days: 30,
            smooth_cases: false,
            wave_boundaries: Vec::new(),
            max_malformed_fraction: 0.01,
        }
    }
}

impl StudyConfig {
    /// Loads a config file, applies `key=value` overrides on top and resolves
    /// relative input paths against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse()?;
        for raw in overrides {
            let (key, value) = raw.split_once('=').ok_or_else(|| ConfigError::Override(raw.clone()))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Override(raw.clone()));
            }
            table.insert(key.to_string(), parse_override_value(value.trim()));
        }
        let mut value = toml::Value::Table(table);
        crate::util::toml_dates_to_strings(&mut value);
        let cfg: StudyConfig = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        for slot in [
            &mut self.trajectories,
            &mut self.queries,
            &mut self.cases,
            &mut self.patterns,
        ] {
            if let Some(p) = slot.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.study_end < self.study_start {
            return bad("study_end precedes study_start".into());
        }
        if self.baseline_end < self.baseline_start {
            return bad("baseline_end precedes baseline_start".into());
        }
        if self.baseline_start > self.study_start || self.baseline_end > self.study_end {
            return bad("baseline window must precede the study window or lie at its start".into());
        }
        if self.interval_secs == 0 || SECONDS_PER_DAY % self.interval_secs as i64 != 0 {
            return bad(format!("interval_secs={} must divide 86400", self.interval_secs));
        }
        for (name, v) in [
            ("home_radius_m", self.home_radius_m),
            ("contact_radius_m", self.contact_radius_m),
            ("stay_radius_m", self.stay_radius_m),
            ("meanshift_bandwidth_m", self.meanshift_bandwidth_m),
            ("coarse_cell_m", self.coarse_cell_m),
            ("fine_cell_m", self.fine_cell_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0"));
            }
        }
        let ratio = self.coarse_cell_m / self.fine_cell_m;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return bad("fine_cell_m must divide coarse_cell_m".into());
        }
        if self.session_gap_secs == 0 || self.stay_min_duration_secs == 0 {
            return bad("session_gap_secs and stay_min_duration_secs must be > 0".into());
        }
        if self.risk_window_days == 0 {
            return bad("risk_window_days must be > 0".into());
        }
        if self.night_start_hour >= self.night_end_hour || self.night_end_hour > 24 {
            return bad("night window must satisfy night_start_hour < night_end_hour <= 24".into());
        }
        if self.refine_top_n == 0 {
            return bad("refine_top_n must be > 0".into());
        }
        if self.lag_min_days > self.lag_max_days {
            return bad("lag_min_days exceeds lag_max_days".into());
        }
        if self.lag_min_days < 0 && !self.allow_negative_lags {
            return bad("negative lags require allow_negative_lags = true".into());
        }
        if self.min_overlap_days == 0 {
            return bad("min_overlap_days must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.max_malformed_fraction) {
            return bad("max_malformed_fraction must lie in [0, 1]".into());
        }
        let grid_fields = [
            self.grid_origin_lat.is_some(),
            self.grid_origin_lon.is_some(),
            self.grid_cols.is_some(),
            self.grid_rows.is_some(),
        ];
        if grid_fields.iter().any(|s| *s) && !grid_fields.iter().all(|s| *s) {
            return bad("grid_origin_lat, grid_origin_lon, grid_cols and grid_rows go together".into());
        }
        if let (Some(cols), Some(rows)) = (self.grid_cols, self.grid_rows) {
            if cols == 0 || rows == 0 {
                return bad("grid_cols and grid_rows must be > 0".into());
            }
        }
        let (rs, re) = self.rank_period();
        if re < rs || rs < self.study_start || re > self.study_end {
            return bad("rank period must lie within the study window".into());
        }
        let mut prev = None;
        for b in &self.wave_boundaries {
            if prev.is_some_and(|p| p >= *b) {
                return bad("wave_boundaries must be strictly increasing".into());
            }
            prev = Some(*b);
        }
        Ok(())
    }

    /// Calendar covering the baseline and the study window.
    pub fn timeline(&self) -> Timeline {
        Timeline::new(
            self.baseline_start.min(self.study_start),
            self.study_end,
            self.interval_secs,
            self.utc_offset_minutes * 60,
        )
    }

    pub fn rank_period(&self) -> (NaiveDate, NaiveDate) {
        (
            self.rank_start.unwrap_or(self.study_start),
            self.rank_end.unwrap_or(self.study_end),
        )
    }

    /// Grid explicitly configured, if any.
    pub fn configured_area(&self) -> Option<StudyArea> {
        Some(StudyArea {
            origin_lat: self.grid_origin_lat?,
            origin_lon: self.grid_origin_lon?,
            cols: self.grid_cols?,
            rows: self.grid_rows?,
            coarse_edge_m: self.coarse_cell_m,
            fine_edge_m: self.fine_cell_m,
        })
    }

    pub fn risk_window_secs(&self) -> i64 {
        self.risk_window_days as i64 * SECONDS_PER_DAY
    }
}

/// Interprets an override value as a TOML value, falling back to a string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
