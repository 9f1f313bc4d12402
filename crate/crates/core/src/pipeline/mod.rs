//! File-based stages with a manifest recording what each stage consumed and
//! produced. Every stage reads its inputs from disk, so any stage can be
//! rerun on its own once its upstream outputs exist.

mod files;
pub mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde_json::json;
use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::config::{ConfigError, StudyConfig};
use crate::exec::Execution;
use crate::indexes::grid::{self, GridLevel, GridScores, StudyArea};
use crate::indexes::{self, IndexError, Metric};
use crate::ingest::{self, IngestError, Trajectories};
use crate::lagcorr::{self, LagError};
use crate::mobility::MobilityParams;
use crate::query_risk::{self, PatternError, QueryPatternSet, RiskParams};
use crate::util::{sha256_file, write_atomic};
use crate::Roster;
use manifest::{fingerprint, PipelineManifest, StageEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Risk,
    Homes,
    Contacts,
    Indexes,
    Grid,
    Rank,
    Lag,
}

impl Stage {
    /// Dependency order.
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Risk,
        Stage::Homes,
        Stage::Contacts,
        Stage::Indexes,
        Stage::Grid,
        Stage::Rank,
        Stage::Lag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Risk => "risk",
            Stage::Homes => "homes",
            Stage::Contacts => "contacts",
            Stage::Indexes => "indexes",
            Stage::Grid => "grid",
            Stage::Rank => "rank",
            Stage::Lag => "lag",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Internal,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage} needs the outputs of stage {missing}; run `{missing}` first")]
    MissingUpstream { stage: Stage, missing: Stage },
    #[error("stage {stage}: input {path} is stale ({reason}); rerun stage {upstream}")]
    StaleInput {
        stage: Stage,
        upstream: Stage,
        path: String,
        reason: String,
    },
    #[error("no {0} file configured")]
    MissingInput(&'static str),
    #[error("no trajectory points inside the study window")]
    NoTrajectories,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Patterns(#[from] PatternError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Lag(#[from] LagError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: u64, message: String },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
}

impl From<AnalysisError> for PipelineError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Index(e) => PipelineError::Index(e),
            AnalysisError::Lag(e) => PipelineError::Lag(e),
        }
    }
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            PipelineError::Config(_) | PipelineError::MissingInput(_) => ErrorKind::Usage,
            PipelineError::Write { .. } => ErrorKind::Internal,
            _ => ErrorKind::Data,
        }
    }
}

/// Output-shaping options that are not part of the study config.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub exec: Execution,
    /// Metrics written by the grid stage.
    pub metrics: Vec<Metric>,
    /// Grid levels written by the grid stage; `None` writes both.
    pub level: Option<GridLevel>,
    /// Grid aggregation period; defaults to the study window.
    pub period: Option<(NaiveDate, NaiveDate)>,
    /// Intervals for which `contacts_<interval>.csv` debug files are written.
    pub debug_intervals: Vec<u32>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            exec: Execution::default(),
            metrics: Metric::ALL.to_vec(),
            level: None,
            period: None,
            debug_intervals: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageReport {
    pub stage: Stage,
    pub reused: bool,
    pub outputs: Vec<String>,
}

enum Input {
    External(PathBuf),
    Upstream(Stage, &'static str),
}

impl Input {
    fn key(&self) -> String {
        match self {
            Input::External(p) => p.display().to_string(),
            Input::Upstream(s, f) => format!("{}/{}", s.name(), f),
        }
    }
}

const TRAJ: &str = "trajectories.csv";
const QUERIES: &str = "queries.ndjson";
const CASES: &str = "cases.csv";
const USERS: &str = "users.csv";
const AREA: &str = "area.json";
const REPORT: &str = "report.json";
const SESSIONS: &str = "sessions.csv";
const HIGH_RISK: &str = "high_risk_users.csv";
const HOMES: &str = "homes.csv";
const POPULATION: &str = "population.csv";
const CONTACTS: &str = "contacts.csv";
const INDEXES: &str = "indexes.csv";
const BASELINE: &str = "baseline.csv";
const GRID_SCORES: &str = "grid_scores.csv";
const GRID_GEOJSON: &str = "grid_scores.geojson";
const REFINED: &str = "refined_cells.csv";
const WEEKLY: &str = "weekly_ranks.csv";
const LAG_RESULTS: &str = "lag_results.csv";
const LAG_PROFILE: &str = "lag_profile.csv";

pub struct Pipeline {
    cfg: StudyConfig,
    out: PathBuf,
    opts: RunOptions,
}

impl Pipeline {
    pub fn new(cfg: StudyConfig, out: impl Into<PathBuf>, opts: RunOptions) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Pipeline {
            cfg,
            out: out.into(),
            opts,
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn path(&self, stage: Stage, file: &str) -> PathBuf {
        self.out.join(stage.name()).join(file)
    }

    fn inputs(&self, stage: Stage) -> Result<Vec<Input>, PipelineError> {
        use Input::{External, Upstream};
        let ext = |what: &'static str, p: &Option<PathBuf>| -> Result<Input, PipelineError> {
            p.clone().map(External).ok_or(PipelineError::MissingInput(what))
        };
        Ok(match stage {
            Stage::Ingest => {
                let mut v = vec![
                    ext("trajectories", &self.cfg.trajectories)?,
                    ext("queries", &self.cfg.queries)?,
                ];
                if let Some(c) = &self.cfg.cases {
                    v.push(External(c.clone()));
                }
                v
            }
            Stage::Risk => {
                let mut v = vec![Upstream(Stage::Ingest, QUERIES), Upstream(Stage::Ingest, USERS)];
                if let Some(p) = &self.cfg.patterns {
                    v.push(External(p.clone()));
                }
                v
            }
            Stage::Homes => vec![
                Upstream(Stage::Ingest, TRAJ),
                Upstream(Stage::Ingest, USERS),
                Upstream(Stage::Ingest, AREA),
            ],
            Stage::Contacts => vec![
                Upstream(Stage::Ingest, TRAJ),
                Upstream(Stage::Ingest, USERS),
                Upstream(Stage::Ingest, AREA),
                Upstream(Stage::Homes, HOMES),
            ],
            Stage::Indexes => vec![
                Upstream(Stage::Ingest, USERS),
                Upstream(Stage::Contacts, CONTACTS),
                Upstream(Stage::Homes, POPULATION),
                Upstream(Stage::Risk, HIGH_RISK),
            ],
            Stage::Grid => vec![
                Upstream(Stage::Ingest, USERS),
                Upstream(Stage::Ingest, AREA),
                Upstream(Stage::Contacts, CONTACTS),
                Upstream(Stage::Risk, HIGH_RISK),
            ],
            Stage::Rank => vec![
                Upstream(Stage::Ingest, USERS),
                Upstream(Stage::Ingest, AREA),
                Upstream(Stage::Contacts, CONTACTS),
                Upstream(Stage::Risk, HIGH_RISK),
                Upstream(Stage::Grid, REFINED),
            ],
            Stage::Lag => vec![Upstream(Stage::Indexes, INDEXES), Upstream(Stage::Ingest, CASES)],
        })
    }

    /// Config values a stage's output depends on.
    fn params(&self, stage: Stage) -> serde_json::Value {
        let c = &self.cfg;
        let timeline = json!({
            "study_start": c.study_start.to_string(),
            "study_end": c.study_end.to_string(),
            "baseline_start": c.baseline_start.to_string(),
            "utc_offset_minutes": c.utc_offset_minutes,
            "interval_secs": c.interval_secs,
        });
        let mut p = match stage {
            Stage::Ingest => json!({
                "max_malformed_fraction": c.max_malformed_fraction,
                "grid_origin_lat": c.grid_origin_lat,
                "grid_origin_lon": c.grid_origin_lon,
                "grid_cols": c.grid_cols,
                "grid_rows": c.grid_rows,
                "coarse_cell_m": c.coarse_cell_m,
                "fine_cell_m": c.fine_cell_m,
            }),
            Stage::Risk => json!({
                "session_gap_secs": c.session_gap_secs,
                "risk_threshold_k": c.risk_threshold_k,
                "risk_window_days": c.risk_window_days,
                "force_all_high_risk": c.force_all_high_risk,
                "builtin_patterns": c.patterns.is_none(),
            }),
            Stage::Homes => json!({
                "stay_radius_m": c.stay_radius_m,
                "stay_min_duration_secs": c.stay_min_duration_secs,
                "meanshift_bandwidth_m": c.meanshift_bandwidth_m,
                "night_start_hour": c.night_start_hour,
                "night_end_hour": c.night_end_hour,
                "include_homeless_in_population": c.include_homeless_in_population,
            }),
            Stage::Contacts => json!({
                "home_radius_m": c.home_radius_m,
                "contact_radius_m": c.contact_radius_m,
            }),
            Stage::Indexes => json!({ "baseline_end": c.baseline_end.to_string() }),
            Stage::Grid => json!({ "refine_top_n": c.refine_top_n }),
            Stage::Rank => {
                let (a, b) = c.rank_period();
                json!({ "rank_start": a.to_string(), "rank_end": b.to_string() })
            }
            Stage::Lag => json!({
                "lag_min_days": c.lag_min_days,
                "lag_max_days": c.lag_max_days,
                "allow_negative_lags": c.allow_negative_lags,
                "min_overlap_days": c.min_overlap_days,
                "smooth_cases": c.smooth_cases,
                "wave_boundaries": c.wave_boundaries.iter().map(|d| d.to_string()).collect::<Vec<_>>(),
            }),
        };
        p["timeline"] = timeline;
        p
    }

    /// Command-line options a stage's output depends on. They are recorded
    /// next to the params but left out of the fingerprint, so downstream
    /// stages do not see an upstream as stale when only its options vary.
    fn options(&self, stage: Stage) -> serde_json::Value {
        match stage {
            Stage::Contacts => json!({ "debug_intervals": self.opts.debug_intervals }),
            Stage::Grid => {
                let (a, b) = self.grid_period();
                json!({
                    "metrics": self.opts.metrics.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
                    "level": self.opts.level.map(|l| l.as_str()),
                    "period": [a.to_string(), b.to_string()],
                })
            }
            _ => serde_json::Value::Null,
        }
    }

    fn recorded_params(&self, stage: Stage) -> serde_json::Value {
        json!({ "config": self.params(stage), "options": self.options(stage) })
    }

    fn grid_period(&self) -> (NaiveDate, NaiveDate) {
        self.opts.period.unwrap_or((self.cfg.study_start, self.cfg.study_end))
    }

    fn digest(path: &Path) -> Result<String, PipelineError> {
        sha256_file(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    fn load_manifest(&self) -> Result<PipelineManifest, PipelineError> {
        let m = PipelineManifest::load(&self.out).map_err(|source| PipelineError::Io {
            path: self.out.join(manifest::MANIFEST_FILE),
            source,
        })?;
        Ok(m.unwrap_or_else(|| PipelineManifest::new(self.cfg.to_toml_string())))
    }

    /// Checks upstream outputs against the manifest and returns the input
    /// digests.
    fn check_inputs(&self, stage: Stage, m: &PipelineManifest) -> Result<BTreeMap<String, String>, PipelineError> {
        let mut digests = BTreeMap::new();
        for input in self.inputs(stage)? {
            let key = input.key();
            let digest = match &input {
                Input::External(p) => Self::digest(p)?,
                Input::Upstream(up, file) => {
                    let entry = m
                        .stages
                        .get(up.name())
                        .ok_or(PipelineError::MissingUpstream { stage, missing: *up })?;
                    let recorded = entry
                        .outputs
                        .get(&key)
                        .ok_or(PipelineError::MissingUpstream { stage, missing: *up })?;
                    let path = self.path(*up, file);
                    let stale = |reason: &str| PipelineError::StaleInput {
                        stage,
                        upstream: *up,
                        path: key.clone(),
                        reason: reason.into(),
                    };
                    let actual = sha256_file(&path).map_err(|_| stale("file is missing"))?;
                    if &actual != recorded {
                        return Err(stale("file changed since it was written"));
                    }
                    if entry.fingerprint != fingerprint(up.name(), &self.params(*up), &entry.inputs) {
                        return Err(stale("configuration changed since it was written"));
                    }
                    actual
                }
            };
            digests.insert(key, digest);
        }
        Ok(digests)
    }

    fn outputs_intact(&self, entry: &StageEntry) -> bool {
        entry
            .outputs
            .iter()
            .all(|(rel, digest)| sha256_file(&self.out.join(rel)).is_ok_and(|d| &d == digest))
    }

    /// Runs one stage unconditionally.
    pub fn run(&self, stage: Stage) -> Result<StageReport, PipelineError> {
        let mut m = self.load_manifest()?;
        let report = self.run_with(stage, &mut m, false)?;
        self.save_manifest(&mut m)?;
        Ok(report)
    }

    /// Runs every stage in dependency order, reusing stages whose inputs,
    /// parameters and outputs are unchanged. The lag stage is skipped when
    /// no case file is configured.
    pub fn run_all(&self) -> Result<Vec<StageReport>, PipelineError> {
        let mut m = self.load_manifest()?;
        let mut reports = Vec::new();
        for stage in Stage::ALL {
            if stage == Stage::Lag && self.cfg.cases.is_none() {
                log::info!("no case file configured; skipping lag");
                continue;
            }
            reports.push(self.run_with(stage, &mut m, true)?);
            self.save_manifest(&mut m)?;
        }
        Ok(reports)
    }

    fn save_manifest(&self, m: &mut PipelineManifest) -> Result<(), PipelineError> {
        m.tool_version = env!("CARGO_PKG_VERSION").to_string();
        m.config = self.cfg.to_toml_string();
        m.save(&self.out).map_err(|source| PipelineError::Write {
            path: self.out.join(manifest::MANIFEST_FILE),
            source,
        })
    }

    fn run_with(&self, stage: Stage, m: &mut PipelineManifest, reuse: bool) -> Result<StageReport, PipelineError> {
        let inputs = self.check_inputs(stage, m)?;
        let fp = fingerprint(stage.name(), &self.params(stage), &inputs);
        let params = self.recorded_params(stage);
        if reuse {
            if let Some(entry) = m.stages.get(stage.name()) {
                if entry.fingerprint == fp && entry.params == params && self.outputs_intact(entry) {
                    log::info!("{stage}: up to date");
                    return Ok(StageReport {
                        stage,
                        reused: true,
                        outputs: entry.outputs.keys().cloned().collect(),
                    });
                }
            }
        }
        log::info!("{stage}: running");
        let written = self.execute(stage)?;
        let mut outputs = BTreeMap::new();
        for file in &written {
            let rel = format!("{}/{}", stage.name(), file);
            outputs.insert(rel.clone(), Self::digest(&self.out.join(&rel))?);
        }
        let entry = StageEntry {
            fingerprint: fp,
            params,
            inputs,
            outputs,
        };
        let report = StageReport {
            stage,
            reused: false,
            outputs: entry.outputs.keys().cloned().collect(),
        };
        m.stages.insert(stage.name().to_string(), entry);
        Ok(report)
    }

    fn write(&self, stage: Stage, file: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.path(stage, file);
        write_atomic(&path, bytes).map_err(|source| PipelineError::Write { path, source })
    }

    fn read_area(&self) -> Result<StudyArea, PipelineError> {
        let path = self.path(Stage::Ingest, AREA);
        let bytes = std::fs::read(&path).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Format {
            path,
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    fn read_trajectories(&self) -> Result<Trajectories, PipelineError> {
        Ok(ingest::parse_trajectories(
            files::open(&self.path(Stage::Ingest, TRAJ))?,
            &self.cfg,
        )?)
    }

    fn tracks_for<'a>(roster: &Roster, traj: &'a Trajectories) -> Vec<&'a [ingest::Fix]> {
        let mut out: Vec<&[ingest::Fix]> = vec![&[]; roster.len()];
        for u in &traj.users {
            if let Some(i) = roster.index_of(&u.user_id) {
                out[i.index()] = &u.fixes;
            }
        }
        out
    }

    fn contributions(&self, roster: &Roster) -> Result<Vec<grid::Contribution>, PipelineError> {
        let timeline = self.cfg.timeline();
        let counts = files::read_contacts(&self.path(Stage::Contacts, CONTACTS), roster, &timeline)?;
        let hr = files::read_high_risk(&self.path(Stage::Risk, HIGH_RISK), roster, &timeline)?;
        Ok(analysis::contributions(&counts, &hr, &timeline))
    }

    fn execute(&self, stage: Stage) -> Result<Vec<String>, PipelineError> {
        let cfg = &self.cfg;
        let exec = self.opts.exec;
        let timeline = cfg.timeline();
        let users = || files::read_users(&self.path(Stage::Ingest, USERS));
        let mut written: Vec<String> = Vec::new();
        let mut put = |file: &str, bytes: &[u8]| -> Result<(), PipelineError> {
            self.write(stage, file, bytes)?;
            written.push(file.to_string());
            Ok(())
        };
        match stage {
            Stage::Ingest => {
                let traj_path = cfg
                    .trajectories
                    .as_ref()
                    .ok_or(PipelineError::MissingInput("trajectories"))?;
                let q_path = cfg.queries.as_ref().ok_or(PipelineError::MissingInput("queries"))?;
                let traj = ingest::parse_trajectories(files::open(traj_path)?, cfg)?;
                let log = ingest::parse_queries_with_tolerance(files::open(q_path)?, cfg.max_malformed_fraction)?;
                let area = match cfg.configured_area() {
                    Some(a) => a,
                    None => StudyArea::from_bounds(
                        traj.bounds().ok_or(PipelineError::NoTrajectories)?,
                        cfg.coarse_cell_m,
                        cfg.fine_cell_m,
                    ),
                };
                let roster = Roster::new(
                    traj.users
                        .iter()
                        .map(|u| u.user_id.clone())
                        .chain(log.records.iter().map(|r| r.user_id.clone())),
                );
                let mut buf = Vec::new();
                ingest::write_trajectories(&traj, &mut buf).map_err(|e| self.internal(stage, e))?;
                put(TRAJ, &buf)?;
                let mut buf = Vec::new();
                ingest::write_queries(&log, &mut buf).map_err(|e| self.internal(stage, e))?;
                put(QUERIES, &buf)?;
                let mut report = json!({
                    "trajectories": report_json(&traj.report),
                    "queries": report_json(&log.report),
                    "users": roster.len(),
                });
                if let Some(c) = &cfg.cases {
                    let cases = ingest::parse_case_counts(files::open(c)?)?;
                    let mut buf = Vec::new();
                    ingest::write_case_counts(&cases, &mut buf).map_err(|e| self.internal(stage, e))?;
                    put(CASES, &buf)?;
                    report["cases"] = json!({ "start": cases.start.to_string(), "days": cases.counts.len() });
                }
                put(USERS, files::users_csv(&roster).as_bytes())?;
                put(
                    AREA,
                    (serde_json::to_string_pretty(&area).expect("area serializes") + "\n").as_bytes(),
                )?;
                put(
                    REPORT,
                    (serde_json::to_string_pretty(&report).expect("report serializes") + "\n").as_bytes(),
                )?;
            }
            Stage::Risk => {
                let roster = users()?;
                let log = ingest::parse_queries(files::open(&self.path(Stage::Ingest, QUERIES))?)?;
                let patterns = match &cfg.patterns {
                    Some(p) => {
                        let text = std::fs::read_to_string(p).map_err(|source| PipelineError::Io {
                            path: p.clone(),
                            source,
                        })?;
                        QueryPatternSet::parse(&text)?
                    }
                    None => QueryPatternSet::synthetic(),
                };
                let risk = query_risk::assess(&log, &roster, &patterns, RiskParams::from_config(cfg), &timeline, exec);
                put(SESSIONS, files::sessions_csv(&roster, &risk.sessions).as_bytes())?;
                put(
                    HIGH_RISK,
                    files::high_risk_csv(&roster, &risk.high_risk, &timeline).as_bytes(),
                )?;
            }
            Stage::Homes => {
                let roster = users()?;
                let area = self.read_area()?;
                let traj = self.read_trajectories()?;
                let tracks = Self::tracks_for(&roster, &traj);
                let mob = analysis::mobility(
                    roster.len(),
                    |u| tracks[u].to_vec(),
                    &MobilityParams::from_config(cfg),
                    &area,
                    &timeline,
                    cfg.include_homeless_in_population,
                    exec,
                );
                put(HOMES, files::homes_csv(&roster, &mob.homes).as_bytes())?;
                put(POPULATION, files::population_csv(&mob.population, &timeline).as_bytes())?;
            }
            Stage::Contacts => {
                let roster = users()?;
                let area = self.read_area()?;
                let traj = self.read_trajectories()?;
                let homes = files::read_homes(&self.path(Stage::Homes, HOMES), &roster)?;
                let tracks = Self::tracks_for(&roster, &traj);
                let mob = analysis::mobility_with_homes(
                    &homes,
                    |u| tracks[u].to_vec(),
                    &MobilityParams::from_config(cfg),
                    &area,
                    &timeline,
                    cfg.include_homeless_in_population,
                    exec,
                );
                let by_interval = analysis::positions_by_interval(&mob.outs, &timeline);
                let counts = analysis::contacts(&by_interval, cfg.contact_radius_m, exec);
                put(CONTACTS, files::contacts_csv(&roster, &counts, &timeline).as_bytes())?;
                for &t in &self.opts.debug_intervals {
                    let empty = crate::contact::ContactCounts {
                        interval: t,
                        entries: Vec::new(),
                    };
                    let c = counts.iter().find(|c| c.interval == t).unwrap_or(&empty);
                    let mut buf = Vec::new();
                    c.write_debug_csv(&roster, &mut buf)
                        .map_err(|e| self.internal(stage, e))?;
                    put(&format!("contacts_{t}.csv"), &buf)?;
                }
            }
            Stage::Indexes => {
                let roster = users()?;
                let counts = files::read_contacts(&self.path(Stage::Contacts, CONTACTS), &roster, &timeline)?;
                let population = files::read_population(&self.path(Stage::Homes, POPULATION), &timeline)?;
                let hr = files::read_high_risk(&self.path(Stage::Risk, HIGH_RISK), &roster, &timeline)?;
                let totals = analysis::interval_totals(&counts, &hr, &population, &timeline);
                let baseline = (cfg.baseline_start, cfg.baseline_end);
                let series = analysis::regional_series(&totals, &hr, &timeline, baseline)?;
                let mut buf = Vec::new();
                indexes::write_indexes_csv(
                    &[series.sci.clone(), series.hru.clone(), series.hrsci.clone()],
                    &mut buf,
                )
                .map_err(|e| self.internal(stage, e))?;
                put(INDEXES, &buf)?;
                let (sci_raw, _) = indexes::raw_series(&totals);
                let (profile, _) = indexes::baseline_profile(&sci_raw, &timeline, baseline);
                let mut text = String::from("time_of_day,mean_raw_sci,is_peak\n");
                for (slot, v) in profile.iter().enumerate() {
                    if let Some(v) = v {
                        let secs = slot as u32 * timeline.interval_secs();
                        text.push_str(&format!(
                            "{:02}:{:02},{},{}\n",
                            secs / 3600,
                            secs % 3600 / 60,
                            v,
                            *v == series.peak.value()
                        ));
                    }
                }
                put(BASELINE, text.as_bytes())?;
            }
            Stage::Grid => {
                let roster = users()?;
                let area = self.read_area()?;
                let contribs = self.contributions(&roster)?;
                let out =
                    analysis::grid_scores(&contribs, &area, &timeline, self.grid_period(), cfg.refine_top_n, exec);
                if out.dropped > 0 {
                    log::warn!("{} contributions fell outside the grid", out.dropped);
                }
                let keep = |g: &&GridScores| {
                    self.opts.metrics.contains(&g.metric) && self.opts.level.is_none_or(|l| l == g.level)
                };
                let selected: Vec<GridScores> = out.coarse.iter().chain(&out.fine).filter(keep).cloned().collect();
                let mut buf = Vec::new();
                grid::write_grid_scores_csv(&selected, &mut buf).map_err(|e| self.internal(stage, e))?;
                put(GRID_SCORES, &buf)?;
                let gj = grid::grid_scores_geojson(&selected, &area);
                put(
                    GRID_GEOJSON,
                    (serde_json::to_string(&gj).expect("geojson serializes") + "\n").as_bytes(),
                )?;
                put(REFINED, files::refined_csv(&out.refined).as_bytes())?;
            }
            Stage::Rank => {
                let roster = users()?;
                let area = self.read_area()?;
                let contribs = self.contributions(&roster)?;
                let refined = files::read_refined(&self.path(Stage::Grid, REFINED))?;
                let weekly = analysis::weekly_scores(&contribs, &area, &refined, &timeline, cfg.rank_period(), exec);
                let mut buf = Vec::new();
                grid::write_weekly_csv(&weekly, &mut buf).map_err(|e| self.internal(stage, e))?;
                put(WEEKLY, &buf)?;
            }
            Stage::Lag => {
                let series = files::read_indexes(&self.path(Stage::Indexes, INDEXES), &timeline)?;
                let cases = ingest::parse_case_counts(files::open(&self.path(Stage::Ingest, CASES))?)?;
                let refs: Vec<&indexes::IndexSeries> = series.iter().collect();
                let results = analysis::lag_analysis(&refs, &cases, cfg, &timeline, exec)?;
                let mut buf = Vec::new();
                lagcorr::write_lag_results_csv(&results, &mut buf).map_err(|e| self.internal(stage, e))?;
                put(LAG_RESULTS, &buf)?;
                let mut buf = Vec::new();
                lagcorr::write_lag_profile_csv(&results, &mut buf).map_err(|e| self.internal(stage, e))?;
                put(LAG_PROFILE, &buf)?;
            }
        }
        Ok(written)
    }

    fn internal(&self, stage: Stage, source: std::io::Error) -> PipelineError {
        PipelineError::Write {
            path: self.out.join(stage.name()),
            source,
        }
    }
}

fn report_json(r: &ingest::IngestReport) -> serde_json::Value {
    const SHOWN: usize = 20;
    json!({
        "rows": r.rows,
        "accepted": r.accepted,
        "duplicates": r.duplicates,
        "out_of_window": r.out_of_window,
        "malformed": r.malformed(),
        "issues": r.issues.len(),
        "first_issues": r.issues.iter().take(SHOWN).collect::<Vec<_>>(),
    })
}
