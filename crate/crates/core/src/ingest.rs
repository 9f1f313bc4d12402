//! Parsing and normalization of the three input datasets.
//!
//! * `trajectories.csv` with header `user_id,timestamp,lat,lon`
//! * `queries.ndjson` with keys `user_id`, `timestamp`, `query`
//! * `cases.csv` with header `date,count`
//!
//! Trajectory and query files tolerate a small fraction of malformed rows;
//! each one is reported with its line number. Case files must be clean.

use std::io::{BufRead, BufReader, Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::StudyConfig;
use crate::util::{format_utc, parse_date, parse_timestamp};

pub const TRAJECTORY_HEADER: [&str; 4] = ["user_id", "timestamp", "lat", "lon"];
pub const CASE_HEADER: [&str; 2] = ["date", "count"];
pub const DEFAULT_MALFORMED_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("{malformed} of {rows} rows malformed (tolerance {tolerance}); first at line {}: {}", first.line, first.reason)]
    TooManyMalformed {
        malformed: usize,
        rows: usize,
        tolerance: f64,
        first: RowIssue,
    },
    #[error("case series line {line}: {reason}")]
    CaseRow { line: u64, reason: String },
    #[error("case series has no entry for {missing}")]
    CaseGap { missing: NaiveDate },
    #[error("case series line {line}: negative count {count} on {date}")]
    NegativeCount { line: u64, date: NaiveDate, count: i64 },
    #[error("case series is empty")]
    EmptyCases,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    /// Unparseable row; counts toward the whole-file tolerance.
    Malformed,
    /// Parseable row that violates a record invariant; dropped with a warning.
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: u64,
    pub kind: IssueKind,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub accepted: usize,
    pub duplicates: usize,
    pub out_of_window: usize,
    pub issues: Vec<RowIssue>,
}

impl IngestReport {
    pub fn malformed(&self) -> usize {
        self.issues.iter().filter(|i| i.kind == IssueKind::Malformed).count()
    }

    fn push(&mut self, line: u64, kind: IssueKind, reason: impl Into<String>) {
        let reason = reason.into();
        log::warn!("line {line}: {reason}");
        self.issues.push(RowIssue { line, kind, reason });
    }

    fn check_tolerance(&self, tolerance: f64) -> Result<(), IngestError> {
        let malformed = self.malformed();
        if malformed as f64 > tolerance * self.rows as f64 {
            let first = self
                .issues
                .iter()
                .find(|i| i.kind == IssueKind::Malformed)
                .cloned()
                .expect("at least one malformed row");
            return Err(IngestError::TooManyMalformed {
                malformed,
                rows: self.rows,
                tolerance,
                first,
            });
        }
        Ok(())
    }
}

/// One GPS observation of one user.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub user_id: String,
    pub timestamp: i64,
    pub latitude: f64,
    pub longitude: f64,
}

/// A GPS observation without its user, as stored inside a [`UserTrack`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fix {
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserTrack {
    pub user_id: String,
    /// Strictly increasing timestamps.
    pub fixes: Vec<Fix>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectories {
    /// Sorted by user id.
    pub users: Vec<UserTrack>,
    pub report: IngestReport,
}

impl Trajectories {
    /// Groups loose points by user, sorts by `(user, timestamp)` and drops
    /// repeated timestamps, keeping the first occurrence. Returns the number
    /// of duplicates removed alongside.
    pub fn from_points(points: Vec<TrajectoryPoint>) -> (Self, usize) {
        let mut points = points;
        // Stable sort: among equal (user, timestamp) the first input row stays first.
        points.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.timestamp.cmp(&b.timestamp)));
        let mut users: Vec<UserTrack> = Vec::new();
        let mut duplicates = 0;
        for p in points {
            match users.last_mut() {
                Some(track) if track.user_id == p.user_id => {
                    if track.fixes.last().is_some_and(|f| f.timestamp == p.timestamp) {
                        duplicates += 1;
                        continue;
                    }
                    track.fixes.push(Fix {
                        timestamp: p.timestamp,
                        lat: p.latitude,
                        lon: p.longitude,
                    });
                }
                _ => users.push(UserTrack {
                    user_id: p.user_id,
                    fixes: vec![Fix {
                        timestamp: p.timestamp,
                        lat: p.latitude,
                        lon: p.longitude,
                    }],
                }),
            }
        }
        (
            Trajectories {
                users,
                report: IngestReport::default(),
            },
            duplicates,
        )
    }

    pub fn point_count(&self) -> usize {
        self.users.iter().map(|u| u.fixes.len()).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = TrajectoryPoint> + '_ {
        self.users.iter().flat_map(|u| {
            u.fixes.iter().map(move |f| TrajectoryPoint {
                user_id: u.user_id.clone(),
                timestamp: f.timestamp,
                latitude: f.lat,
                longitude: f.lon,
            })
        })
    }

    /// Bounding box `(min_lat, min_lon, max_lat, max_lon)` of all fixes.
    pub fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let mut it = self.users.iter().flat_map(|u| u.fixes.iter());
        let first = it.next()?;
        let init = (first.lat, first.lon, first.lat, first.lon);
        Some(it.fold(init, |(a, b, c, d), f| {
            (a.min(f.lat), b.min(f.lon), c.max(f.lat), d.max(f.lon))
        }))
    }
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), IngestError> {
    let ok = found.len() == expected.len() && found.iter().zip(expected).all(|(a, b)| a == *b);
    if ok {
        Ok(())
    } else {
        Err(IngestError::Header {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        })
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader)
}

fn csv_line(err: &csv::Error, fallback: u64) -> u64 {
    err.position().map(|p| p.line()).unwrap_or(fallback)
}

fn parse_point(rec: &csv::StringRecord) -> Result<TrajectoryPoint, String> {
    let user_id = rec.get(0).unwrap_or_default().trim();
    if user_id.is_empty() {
        return Err("empty user_id".into());
    }
    let ts_raw = rec.get(1).unwrap_or_default();
    let timestamp = parse_timestamp(ts_raw).ok_or_else(|| format!("bad timestamp `{ts_raw}`"))?;
    let coord = |i: usize, name: &str, limit: f64| -> Result<f64, String> {
        let raw = rec.get(i).unwrap_or_default().trim();
        let v: f64 = raw.parse().map_err(|_| format!("bad {name} `{raw}`"))?;
        if !v.is_finite() || v.abs() > limit {
            return Err(format!("{name} {v} out of range"));
        }
        Ok(v)
    };
    Ok(TrajectoryPoint {
        user_id: user_id.to_string(),
        timestamp,
        latitude: coord(2, "lat", 90.0)?,
        longitude: coord(3, "lon", 180.0)?,
    })
}

/// Parses `trajectories.csv`, keeping points inside the configured analysis
/// window. Output is grouped by user, sorted, and de-duplicated.
pub fn parse_trajectories<R: Read>(reader: R, cfg: &StudyConfig) -> Result<Trajectories, IngestError> {
    let timeline = cfg.timeline();
    let mut rdr = csv_reader(reader);
    check_header(rdr.headers().map_err(|e| csv_to_io(&e))?, &TRAJECTORY_HEADER)?;
    let mut report = IngestReport::default();
    let mut points = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut line = 1u64;
    loop {
        line += 1;
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                report.rows += 1;
                let row_line = record.position().map(|p| p.line()).unwrap_or(line);
                match parse_point(&record) {
                    Ok(p) if timeline.contains(p.timestamp) => points.push(p),
                    Ok(_) => report.out_of_window += 1,
                    Err(reason) => report.push(row_line, IssueKind::Malformed, reason),
                }
            }
            Err(err) if err.is_io_error() => return Err(csv_to_io(&err)),
            Err(err) => {
                report.rows += 1;
                report.push(csv_line(&err, line), IssueKind::Malformed, err.to_string());
            }
        }
    }
    report.check_tolerance(cfg.max_malformed_fraction)?;
    if report.out_of_window > 0 {
        log::warn!("dropped {} points outside the analysis window", report.out_of_window);
    }
    let (mut traj, duplicates) = Trajectories::from_points(points);
    report.duplicates = duplicates;
    report.accepted = traj.point_count();
    traj.report = report;
    Ok(traj)
}

fn csv_to_io(err: &csv::Error) -> IngestError {
    IngestError::Io(std::io::Error::other(err.to_string()))
}

pub fn write_trajectories<W: Write>(traj: &Trajectories, out: W) -> std::io::Result<()> {
    let mut w = TrajectoryWriter::new(out)?;
    for u in &traj.users {
        w.write_track(&u.user_id, &u.fixes)?;
    }
    w.finish()
}

/// Writes trajectory rows one user at a time.
pub struct TrajectoryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> std::io::Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(TRAJECTORY_HEADER)?;
        Ok(TrajectoryWriter { inner })
    }

    pub fn write_track(&mut self, user_id: &str, fixes: &[Fix]) -> std::io::Result<()> {
        for f in fixes {
            self.inner.write_record([
                user_id,
                &format_utc(f.timestamp),
                &f.lat.to_string(),
                &f.lon.to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// One web search.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct QueryRecord {
    pub user_id: String,
    pub timestamp: i64,
    pub query_text: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryLog {
    /// Sorted by `(user_id, timestamp, query_text)`.
    pub records: Vec<QueryRecord>,
    pub report: IngestReport,
}

impl QueryLog {
    pub fn from_records(mut records: Vec<QueryRecord>) -> Self {
        records.sort();
        QueryLog {
            records,
            report: IngestReport::default(),
        }
    }

    /// Consecutive per-user slices, in user order.
    pub fn by_user(&self) -> impl Iterator<Item = &[QueryRecord]> {
        self.records.chunk_by(|a, b| a.user_id == b.user_id)
    }
}

#[derive(Deserialize)]
struct RawQuery {
    user_id: String,
    timestamp: serde_json::Value,
    query: String,
}

#[derive(Serialize)]
struct OutQuery<'a> {
    user_id: &'a str,
    timestamp: String,
    query: &'a str,
}

/// Parses `queries.ndjson` with the default malformed-row tolerance.
pub fn parse_queries<R: Read>(reader: R) -> Result<QueryLog, IngestError> {
    parse_queries_with_tolerance(reader, DEFAULT_MALFORMED_TOLERANCE)
}

pub fn parse_queries_with_tolerance<R: Read>(reader: R, tolerance: f64) -> Result<QueryLog, IngestError> {
    let mut report = IngestReport::default();
    let mut records = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        report.rows += 1;
        let raw: RawQuery = match serde_json::from_str(&line) {
            Ok(raw) => raw,
            Err(e) => {
                report.push(line_no, IssueKind::Malformed, e.to_string());
                continue;
            }
        };
        let timestamp = match &raw.timestamp {
            serde_json::Value::Number(n) => n.as_i64(),
            serde_json::Value::String(s) => parse_timestamp(s),
            _ => None,
        };
        let Some(timestamp) = timestamp else {
            report.push(
                line_no,
                IssueKind::Malformed,
                format!("bad timestamp {}", raw.timestamp),
            );
            continue;
        };
        if raw.user_id.trim().is_empty() {
            report.push(line_no, IssueKind::Malformed, "empty user_id");
            continue;
        }
        if raw.query.trim().is_empty() {
            report.push(line_no, IssueKind::Rejected, "empty query text");
            continue;
        }
        records.push(QueryRecord {
            user_id: raw.user_id.trim().to_string(),
            timestamp,
            query_text: raw.query,
        });
    }
    report.check_tolerance(tolerance)?;
    let mut log = QueryLog::from_records(records);
    report.accepted = log.records.len();
    log.report = report;
    Ok(log)
}

pub fn write_queries<W: Write>(log: &QueryLog, mut out: W) -> std::io::Result<()> {
    write_query_records(&log.records, &mut out)?;
    out.flush()
}

/// NDJSON lines for the given records, in the order given.
pub fn write_query_records<W: Write>(records: &[QueryRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        let line = serde_json::to_string(&OutQuery {
            user_id: &r.user_id,
            timestamp: format_utc(r.timestamp),
            query: &r.query_text,
        })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Contiguous daily counts of newly confirmed cases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaseSeries {
    pub region_id: String,
    pub start: NaiveDate,
    pub counts: Vec<u64>,
}

impl CaseSeries {
    pub fn end(&self) -> NaiveDate {
        self.start + chrono::Days::new(self.counts.len().saturating_sub(1) as u64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, c)| (self.start + chrono::Days::new(i as u64), *c))
    }
}

pub fn parse_case_counts<R: Read>(reader: R) -> Result<CaseSeries, IngestError> {
    let mut rdr = csv_reader(reader);
    check_header(rdr.headers().map_err(|e| csv_to_io(&e))?, &CASE_HEADER)?;
    let mut start = None;
    let mut prev: Option<NaiveDate> = None;
    let mut counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IngestError::CaseRow {
            line: csv_line(&e, 0),
            reason: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let date = parse_date(&rec[0]).ok_or_else(|| IngestError::CaseRow {
            line,
            reason: format!("bad date `{}`", &rec[0]),
        })?;
        let count: i64 = rec[1].trim().parse().map_err(|_| IngestError::CaseRow {
            line,
            reason: format!("bad count `{}`", &rec[1]),
        })?;
        if count < 0 {
            return Err(IngestError::NegativeCount { line, date, count });
        }
        if let Some(p) = prev {
            let expected = p.succ_opt().expect("date in range");
            if date < expected {
                return Err(IngestError::CaseRow {
                    line,
                    reason: format!("date {date} not after {p}"),
                });
            }
            if date > expected {
                return Err(IngestError::CaseGap { missing: expected });
            }
        }
        start.get_or_insert(date);
        prev = Some(date);
        counts.push(count as u64);
    }
    Ok(CaseSeries {
        region_id: "all".into(),
        start: start.ok_or(IngestError::EmptyCases)?,
        counts,
    })
}

pub fn write_case_counts<W: Write>(cases: &CaseSeries, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CASE_HEADER)?;
    for (date, count) in cases.iter() {
        w.write_record([date.format("%Y-%m-%d").to_string(), count.to_string()])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> StudyConfig {
        StudyConfig::from_toml_str(
            "study_start = 2020-02-01\nstudy_end = 2020-02-29\nbaseline_start = 2020-02-01\nbaseline_end = 2020-02-14\nutc_offset_minutes = 0\n",
            &[],
        )
        .unwrap()
    }

    #[test]
    fn single_row() {
        let csv = "user_id,timestamp,lat,lon\nu1,2020-02-01T00:00:00Z,35.68,139.76\n";
        let t = parse_trajectories(csv.as_bytes(), &cfg()).unwrap();
        assert_eq!(t.users.len(), 1);
        assert_eq!(t.users[0].user_id, "u1");
        assert_eq!(
            t.users[0].fixes,
            vec![Fix {
                timestamp: 1_580_515_200,
                lat: 35.68,
                lon: 139.76
            }]
        );
    }

    #[test]
    fn identical_rows_dedup() {
        let csv = "user_id,timestamp,lat,lon\nu1,1580515200,35.68,139.76\nu1,1580515200,35.68,139.76\n";
        let t = parse_trajectories(csv.as_bytes(), &cfg()).unwrap();
        assert_eq!(t.point_count(), 1);
        assert_eq!(t.report.duplicates, 1);
    }

    #[test]
    fn duplicate_timestamp_keeps_first_row() {
        let csv = "user_id,timestamp,lat,lon\nu1,1580515200,35.0,139.0\nu1,1580515200,36.0,140.0\n";
        let t = parse_trajectories(csv.as_bytes(), &cfg()).unwrap();
        assert_eq!(t.users[0].fixes[0].lat, 35.0);
    }

    fn fixture(good: usize, bad: usize) -> String {
        let mut s = String::from("user_id,timestamp,lat,lon\n");
        for i in 0..good + bad {
            if i % 37 == 5 && i / 37 < bad {
                s.push_str("u1,not-a-time,35.0,139.0\n");
            } else {
                s.push_str(&format!("u{},{},35.6,139.7\n", i % 7, 1_580_515_200 + i as i64 * 60));
            }
        }
        s
    }

    #[test]
    fn two_bad_rows_of_a_hundred_exceed_default_tolerance() {
        let csv = fixture(98, 2);
        let err = parse_trajectories(csv.as_bytes(), &cfg()).unwrap_err();
        assert!(matches!(
            err,
            IngestError::TooManyMalformed {
                malformed: 2,
                rows: 100,
                ..
            }
        ));
        let mut loose = cfg();
        loose.max_malformed_fraction = 0.02;
        let t = parse_trajectories(csv.as_bytes(), &loose).unwrap();
        assert_eq!(t.point_count(), 98);
        assert_eq!(t.report.issues.len(), 2);
        assert_eq!(t.report.issues[0].line, 7);
    }

    #[test]
    fn two_bad_rows_of_three_hundred_pass() {
        let csv = fixture(298, 2);
        let t = parse_trajectories(csv.as_bytes(), &cfg()).unwrap();
        assert_eq!(t.point_count(), 298);
        assert_eq!(t.report.malformed(), 2);
    }

    #[test]
    fn wrong_field_count_and_range_are_malformed() {
        let mut s = fixture(300, 0);
        s.push_str("u1,1580515200,35.0\n");
        s.push_str("u1,1580515300,95.0,139.0\n");
        let mut c = cfg();
        c.max_malformed_fraction = 0.05;
        let t = parse_trajectories(s.as_bytes(), &c).unwrap();
        assert_eq!(t.report.malformed(), 2);
        assert_eq!(t.report.issues[0].line, 302);
        assert_eq!(t.report.issues[1].line, 303);
    }

    #[test]
    fn out_of_window_dropped_and_counted() {
        let csv = "user_id,timestamp,lat,lon\nu1,2019-12-01T00:00:00Z,35.0,139.0\nu1,2020-02-02T00:00:00Z,35.0,139.0\n";
        let t = parse_trajectories(csv.as_bytes(), &cfg()).unwrap();
        assert_eq!(t.point_count(), 1);
        assert_eq!(t.report.out_of_window, 1);
    }

    #[test]
    fn header_must_match() {
        let csv = "uid,timestamp,lat,lon\n";
        assert!(matches!(
            parse_trajectories(csv.as_bytes(), &cfg()),
            Err(IngestError::Header { .. })
        ));
    }

    #[test]
    fn queries_basic() {
        let line = r#"{"user_id":"u1","timestamp":"2020-02-01T00:00:00Z","query":"corona fever"}"#;
        let log = parse_queries(line.as_bytes()).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].query_text, "corona fever");
    }

    #[test]
    fn queries_sorted() {
        let text = [
            r#"{"user_id":"u2","timestamp":100,"query":"b"}"#,
            r#"{"user_id":"u1","timestamp":200,"query":"c"}"#,
            r#"{"user_id":"u1","timestamp":100,"query":"a"}"#,
        ]
        .join("\n");
        let log = parse_queries(text.as_bytes()).unwrap();
        let keys: Vec<_> = log.records.iter().map(|r| (r.user_id.as_str(), r.timestamp)).collect();
        assert_eq!(keys, [("u1", 100), ("u1", 200), ("u2", 100)]);
        assert_eq!(log.by_user().count(), 2);
    }

    #[test]
    fn empty_query_rejected_with_warning() {
        let text = [
            r#"{"user_id":"u1","timestamp":100,"query":"   "}"#,
            r#"{"user_id":"u1","timestamp":200,"query":"fever"}"#,
        ]
        .join("\n");
        let log = parse_queries(text.as_bytes()).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.report.issues.len(), 1);
        assert_eq!(log.report.issues[0].kind, IssueKind::Rejected);
        assert_eq!(log.report.issues[0].line, 1);
    }

    #[test]
    fn malformed_json_counts_toward_tolerance() {
        let text = "{not json}\n".to_string() + r#"{"user_id":"u1","timestamp":1,"query":"x"}"#;
        assert!(matches!(
            parse_queries(text.as_bytes()),
            Err(IngestError::TooManyMalformed { .. })
        ));
    }

    #[test]
    fn cases_contiguous() {
        let c = parse_case_counts("date,count\n2020-02-01,1\n2020-02-02,0\n2020-02-03,5\n".as_bytes()).unwrap();
        assert_eq!(c.counts, vec![1, 0, 5]);
        assert_eq!(c.end(), NaiveDate::from_ymd_opt(2020, 2, 3).unwrap());
    }

    #[test]
    fn cases_gap_names_missing_day() {
        let err = parse_case_counts("date,count\n2020-02-01,1\n2020-02-03,5\n".as_bytes()).unwrap_err();
        match err {
            IngestError::CaseGap { missing } => {
                assert_eq!(missing, NaiveDate::from_ymd_opt(2020, 2, 2).unwrap());
                assert!(err.to_string().contains("2020-02-02"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cases_negative_rejected() {
        let err = parse_case_counts("date,count\n2020-02-01,-1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::NegativeCount { count: -1, .. }));
    }

    #[test]
    fn serialized_forms_reparse_identically() {
        let csv = "user_id,timestamp,lat,lon\nu2,1580600000,35.612345,139.7\nu1,1580515200,35.68,139.76\nu1,1580515100,35.1,139.1\n";
        let t = parse_trajectories(csv.as_bytes(), &cfg()).unwrap();
        let mut buf = Vec::new();
        write_trajectories(&t, &mut buf).unwrap();
        let again = parse_trajectories(buf.as_slice(), &cfg()).unwrap();
        assert_eq!(again.users, t.users);

        let q = parse_queries(r#"{"user_id":"u1","timestamp":5,"query":"a, \"quoted\" b"}"#.as_bytes()).unwrap();
        let mut qbuf = Vec::new();
        write_queries(&q, &mut qbuf).unwrap();
        assert_eq!(parse_queries(qbuf.as_slice()).unwrap().records, q.records);
    }
}
