//! Synthetic city generator with planted outbreaks.
//!
//! Every user draws from private ChaCha8 streams keyed by `(seed, user,
//! purpose)`, so a user's track and queries can be regenerated on demand and
//! the output does not depend on thread count or generation order.

mod city;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use city::{Agent, Site, SiteKind};

use crate::config::StudyConfig;
use crate::exec::{self, Execution};
use crate::geo::Projection;
use crate::indexes::grid::{CellId, StudyArea};
use crate::ingest::{
    write_case_counts, write_query_records, CaseSeries, Fix, QueryLog, QueryRecord, Trajectories, TrajectoryWriter,
    UserTrack,
};
use crate::query_risk::QueryPatternSet;
use crate::timeline::Timeline;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Invalid(String),
    #[error("cannot parse synth config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutbreakSpec {
    /// Fine cell id; alternatively give `col` and `row` on the fine grid.
    pub cell: Option<u32>,
    pub col: Option<u32>,
    pub row: Option<u32>,
    pub search_start: NaiveDate,
    pub multiplier: f64,
    pub lead_days: u32,
    /// Extra expected daily cases at the height of the case surge.
    pub case_magnitude: f64,
}

impl Default for OutbreakSpec {
    fn default() -> Self {
        OutbreakSpec {
            cell: None,
            col: None,
            row: None,
            search_start: NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(),
            multiplier: 30.0,
            lead_days: 14,
            case_magnitude: 40.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub users: usize,
    /// Side of the square study area.
    pub extent_km: u32,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub start_date: NaiveDate,
    pub days: u32,
    pub utc_offset_minutes: i32,
    pub commuter_fraction: f64,
    /// Symptom search sessions per user per day outside a surge.
    pub baseline_symptom_rate: f64,
    /// Unrelated search sessions per user per day.
    pub filler_rate: f64,
    /// Mean observations per user per day.
    pub sampling_rate: f64,
    /// How long a search surge lasts.
    pub surge_days: u32,
    /// Expected daily cases without any outbreak.
    pub base_cases: f64,
    pub outbreaks: Vec<OutbreakSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            users: 1000,
            extent_km: 12,
            origin_lat: 35.6,
            origin_lon: 139.6,
            start_date: NaiveDate::from_ymd_opt(2020, 6, 1).unwrap(),
            days: 90,
            utc_offset_minutes: 540,
            commuter_fraction: 0.6,
            baseline_symptom_rate: 0.05,
            filler_rate: 0.3,
            sampling_rate: 50.0,
            surge_days: 28,
            base_cases: 5.0,
            outbreaks: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let mut value = toml::Value::Table(text.parse::<toml::Table>()?);
        crate::util::toml_dates_to_strings(&mut value);
        let cfg: SynthConfig = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("synth config serializes")
    }

    pub fn area(&self) -> StudyArea {
        StudyArea {
            origin_lat: self.origin_lat,
            origin_lon: self.origin_lon,
            cols: self.extent_km,
            rows: self.extent_km,
            coarse_edge_m: 1000.0,
            fine_edge_m: 125.0,
        }
    }

    pub fn end_date(&self) -> NaiveDate {
        self.start_date + Days::new(self.days as u64 - 1)
    }

    pub fn timeline(&self) -> Timeline {
        Timeline::new(self.start_date, self.end_date(), 1800, self.utc_offset_minutes * 60)
    }

    /// Fine cell of an outbreak.
    pub fn outbreak_cell(&self, o: &OutbreakSpec) -> Result<CellId, SynthError> {
        let fine_cols = self.extent_km * 8;
        let id = match (o.cell, o.col, o.row) {
            (Some(c), None, None) => c,
            (None, Some(c), Some(r)) if c < fine_cols && r < fine_cols => r * fine_cols + c,
            (None, Some(_), Some(_)) => return Err(SynthError::Invalid("outbreak col/row outside extent".into())),
            _ => return Err(SynthError::Invalid("outbreak needs either cell or col and row".into())),
        };
        if id >= fine_cols * fine_cols {
            return Err(SynthError::Invalid(format!("outbreak cell {id} outside extent")));
        }
        Ok(CellId(id))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if self.users == 0 {
            return bad("users must be positive");
        }
        if self.extent_km == 0 {
            return bad("extent_km must be positive");
        }
        if self.days < 14 {
            return bad("days must cover at least the 14-day baseline");
        }
        if !(0.0..=1.0).contains(&self.commuter_fraction) {
            return bad("commuter_fraction must lie in [0, 1]");
        }
        if self.baseline_symptom_rate < 0.0 || self.filler_rate < 0.0 || self.base_cases < 0.0 {
            return bad("rates must be non-negative");
        }
        if self.sampling_rate <= 0.0 {
            return bad("sampling_rate must be positive");
        }
        if !(-14 * 60..=14 * 60).contains(&self.utc_offset_minutes) {
            return bad("utc_offset_minutes out of range");
        }
        for o in &self.outbreaks {
            if o.lead_days == 0 {
                return bad("lead_days must be positive");
            }
            if o.multiplier <= 1.0 {
                return bad("multiplier must exceed 1");
            }
            if o.case_magnitude < 0.0 {
                return bad("case_magnitude must be non-negative");
            }
            self.outbreak_cell(o)?;
        }
        Ok(())
    }

    /// Pipeline config matching the generated world. Input paths are left
    /// relative so the file works when placed next to the emitted logs.
    pub fn study_config(&self) -> StudyConfig {
        let area = self.area();
        StudyConfig {
            trajectories: Some(PathBuf::from("trajectories.csv")),
            queries: Some(PathBuf::from("queries.ndjson")),
            cases: Some(PathBuf::from("cases.csv")),
            patterns: Some(PathBuf::from("patterns.txt")),
            study_start: self.start_date,
            study_end: self.end_date(),
            baseline_start: self.start_date,
            baseline_end: self.start_date + Days::new(13),
            utc_offset_minutes: self.utc_offset_minutes,
            grid_origin_lat: Some(area.origin_lat),
            grid_origin_lon: Some(area.origin_lon),
            grid_cols: Some(area.cols),
            grid_rows: Some(area.rows),
            ..StudyConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlantedOutbreak {
    pub id: usize,
    pub cell: CellId,
    pub search_start: NaiveDate,
    pub case_start: NaiveDate,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub outbreaks: Vec<PlantedOutbreak>,
}

impl GroundTruth {
    pub fn from_config(cfg: &SynthConfig) -> Result<Self, SynthError> {
        let outbreaks = cfg
            .outbreaks
            .iter()
            .enumerate()
            .map(|(id, o)| {
                Ok(PlantedOutbreak {
                    id,
                    cell: cfg.outbreak_cell(o)?,
                    search_start: o.search_start,
                    case_start: o.search_start + Days::new(o.lead_days as u64),
                })
            })
            .collect::<Result<_, SynthError>>()?;
        Ok(GroundTruth { outbreaks })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "outbreak_id,cell_id,search_start,case_start")?;
        for o in &self.outbreaks {
            writeln!(w, "{},{},{},{}", o.id, o.cell, o.search_start, o.case_start)?;
        }
        Ok(())
    }
}

/// A generated city. Tracks and queries are produced per user on request.
#[derive(Clone, Debug)]
pub struct World {
    config: SynthConfig,
    area: StudyArea,
    projection: Projection,
    timeline: Timeline,
    sites: Vec<Site>,
    agents: Vec<Agent>,
    user_ids: Vec<String>,
    patterns: QueryPatternSet,
    truth: GroundTruth,
}

pub fn generate_world(config: &SynthConfig) -> Result<World, SynthError> {
    config.validate()?;
    let area = config.area();
    let truth = GroundTruth::from_config(config)?;
    let (sites, agents) = city::build(config, &area, &truth);
    let width = config.users.to_string().len().max(5);
    Ok(World {
        config: config.clone(),
        area,
        projection: area.projection(),
        timeline: config.timeline(),
        sites,
        agents,
        user_ids: (0..config.users).map(|u| format!("u{u:0width$}")).collect(),
        patterns: QueryPatternSet::synthetic(),
        truth,
    })
}

impl World {
    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn area(&self) -> &StudyArea {
        &self.area
    }

    pub fn timeline(&self) -> &Timeline {
        &self.timeline
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn user_count(&self) -> usize {
        self.agents.len()
    }

    /// Ids sort in user index order.
    pub fn user_id(&self, user: usize) -> &str {
        &self.user_ids[user]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn track(&self, user: usize) -> Vec<Fix> {
        city::track(&self.config, &self.projection, &self.timeline, &self.agents[user], user)
    }

    pub fn queries(&self, user: usize) -> Vec<QueryRecord> {
        city::queries(&self.config, &self.timeline, &self.agents[user], &self.patterns, user)
            .into_iter()
            .map(|(timestamp, query_text)| QueryRecord {
                user_id: self.user_ids[user].clone(),
                timestamp,
                query_text,
            })
            .collect()
    }

    pub fn cases(&self) -> CaseSeries {
        city::cases(&self.config, &self.truth)
    }

    /// Whole trajectory set in memory; only sensible for small worlds.
    pub fn trajectories(&self, exec: Execution) -> Trajectories {
        let users = exec::map_range(exec, self.user_count(), |u| UserTrack {
            user_id: self.user_ids[u].clone(),
            fixes: self.track(u),
        });
        Trajectories {
            users,
            report: Default::default(),
        }
    }

    pub fn query_log(&self, exec: Execution) -> QueryLog {
        QueryLog::from_records(exec::map_range(exec, self.user_count(), |u| self.queries(u)).concat())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EmitSummary {
    pub trajectory_rows: usize,
    pub query_rows: usize,
    pub files: Vec<PathBuf>,
}

/// Writes the ingest inputs plus `ground_truth.csv`, `patterns.txt`,
/// `synth.toml` and a matching `study.toml` into `dir`.
pub fn emit_logs(world: &World, dir: &Path, exec: Execution) -> io::Result<EmitSummary> {
    std::fs::create_dir_all(dir)?;
    let mut summary = EmitSummary::default();
    const BATCH: usize = 256;

    let mut files = Vec::new();
    let mut atomic = |name: &str, f: &mut dyn FnMut(&mut BufWriter<File>) -> io::Result<()>| -> io::Result<()> {
        let path = dir.join(name);
        let tmp = dir.join(format!("{name}.tmp"));
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, &path)?;
        files.push(path);
        Ok(())
    };

    atomic("trajectories.csv", &mut |w| {
        let mut tw = TrajectoryWriter::new(w)?;
        for lo in (0..world.user_count()).step_by(BATCH) {
            let hi = (lo + BATCH).min(world.user_count());
            let tracks = exec::map_range(exec, hi - lo, |k| world.track(lo + k));
            for (k, t) in tracks.iter().enumerate() {
                tw.write_track(world.user_id(lo + k), t)?;
                summary.trajectory_rows += t.len();
            }
        }
        tw.finish()
    })?;
    atomic("queries.ndjson", &mut |w| {
        for lo in (0..world.user_count()).step_by(BATCH) {
            let hi = (lo + BATCH).min(world.user_count());
            for qs in exec::map_range(exec, hi - lo, |k| world.queries(lo + k)) {
                write_query_records(&qs, &mut *w)?;
                summary.query_rows += qs.len();
            }
        }
        Ok(())
    })?;
    atomic("cases.csv", &mut |w| write_case_counts(&world.cases(), w))?;
    atomic("ground_truth.csv", &mut |w| world.truth.write_csv(w))?;
    atomic("patterns.txt", &mut |w| {
        w.write_all(QueryPatternSet::synthetic_source().as_bytes())
    })?;
    atomic("synth.toml", &mut |w| {
        w.write_all(world.config.to_toml_string().as_bytes())
    })?;
    atomic("study.toml", &mut |w| {
        w.write_all(world.config.study_config().to_toml_string().as_bytes())
    })?;
    summary.files = files;
    Ok(summary)
}
