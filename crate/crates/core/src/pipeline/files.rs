//! Readers and writers for the intermediate files passed between stages.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::ops::Range;
use std::path::Path;

use super::PipelineError;
use crate::contact::{ContactCounts, ContactEntry};
use crate::geo::PlanarPoint;
use crate::indexes::grid::CellId;
use crate::indexes::{IndexSeries, Metric, Population, Scope};
use crate::mobility::HomeLocation;
use crate::query_risk::{HighRiskSet, WebSearchSession};
use crate::timeline::{Timeline, SECONDS_PER_HOUR};
use crate::util::{format_utc, parse_date, parse_timestamp};
use crate::{Roster, UserIdx};

pub(super) fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Iterates data rows, checking the header first. Yields `(line, record)`.
fn rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>, PipelineError> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let fmt = |line: u64, message: String| PipelineError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let found = rdr.headers().map_err(|e| fmt(1, e.to_string()))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(fmt(1, format!("expected header {}", header.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        out.push((line, rec.map_err(|e| fmt(line, e.to_string()))?));
    }
    Ok(out)
}

fn bad(path: &Path, line: u64, message: impl Into<String>) -> PipelineError {
    PipelineError::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    rec: &csv::StringRecord,
    i: usize,
    what: &str,
) -> Result<T, PipelineError> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(path, line, format!("bad {what}")))
}

fn user(path: &Path, line: u64, roster: &Roster, id: &str) -> Result<UserIdx, PipelineError> {
    roster
        .index_of(id)
        .ok_or_else(|| bad(path, line, format!("unknown user {id}")))
}

fn timestamp(path: &Path, line: u64, raw: &str) -> Result<i64, PipelineError> {
    parse_timestamp(raw).ok_or_else(|| bad(path, line, format!("bad timestamp {raw}")))
}

pub(super) fn users_csv(roster: &Roster) -> String {
    let mut s = String::from("user_id\n");
    for id in roster.ids() {
        s.push_str(id);
        s.push('\n');
    }
    s
}

pub(super) fn read_users(path: &Path) -> Result<Roster, PipelineError> {
    Ok(Roster::new(
        rows(path, &["user_id"])?.into_iter().map(|(_, r)| r[0].to_string()),
    ))
}

pub(super) fn sessions_csv(roster: &Roster, sessions: &[Vec<WebSearchSession>]) -> String {
    let mut s = String::from("user_id,start,end,queries,covid_related\n");
    for (u, list) in sessions.iter().enumerate() {
        for x in list {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                roster.id(UserIdx(u as u32)),
                format_utc(x.start),
                format_utc(x.end),
                x.queries.len(),
                x.covid_related
            );
        }
    }
    s
}

pub(super) const HIGH_RISK_HEADER: [&str; 3] = ["user_id", "from", "until"];

/// One row per membership span `[from, until)`.
pub(super) fn high_risk_csv(roster: &Roster, set: &HighRiskSet, timeline: &Timeline) -> String {
    let mut s = HIGH_RISK_HEADER.join(",") + "\n";
    for (u, id) in roster.iter() {
        for span in set.spans(u) {
            let _ = writeln!(
                s,
                "{},{},{}",
                id,
                format_utc(timeline.hour_start(span.start)),
                format_utc(timeline.hour_start(span.end))
            );
        }
    }
    s
}

pub(super) fn read_high_risk(path: &Path, roster: &Roster, timeline: &Timeline) -> Result<HighRiskSet, PipelineError> {
    let mut spans: Vec<Vec<Range<u32>>> = vec![Vec::new(); roster.len()];
    let hour = |line, raw: &str| -> Result<u32, PipelineError> {
        let offset = timestamp(path, line, raw)? - timeline.start();
        if offset < 0 || offset % SECONDS_PER_HOUR != 0 || offset / SECONDS_PER_HOUR > timeline.hour_count() as i64 {
            return Err(bad(path, line, format!("{raw} is not an hour of the study timeline")));
        }
        Ok((offset / SECONDS_PER_HOUR) as u32)
    };
    for (line, r) in rows(path, &HIGH_RISK_HEADER)? {
        let u = user(path, line, roster, &r[0])?;
        spans[u.index()].push(hour(line, &r[1])?..hour(line, &r[2])?);
    }
    Ok(HighRiskSet::from_spans(timeline.hour_count(), spans))
}

pub(super) const HOMES_HEADER: [&str; 6] = ["user_id", "lat", "lon", "x_m", "y_m", "support"];

pub(super) fn homes_csv(roster: &Roster, homes: &[Option<HomeLocation>]) -> String {
    let mut s = HOMES_HEADER.join(",") + "\n";
    for (u, id) in roster.iter() {
        if let Some(h) = &homes[u.index()] {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                id, h.lat, h.lon, h.planar.x, h.planar.y, h.support
            );
        }
    }
    s
}

pub(super) fn read_homes(path: &Path, roster: &Roster) -> Result<Vec<Option<HomeLocation>>, PipelineError> {
    let mut homes = vec![None; roster.len()];
    for (line, r) in rows(path, &HOMES_HEADER)? {
        let u = user(path, line, roster, &r[0])?;
        homes[u.index()] = Some(HomeLocation {
            lat: field(path, line, &r, 1, "lat")?,
            lon: field(path, line, &r, 2, "lon")?,
            planar: PlanarPoint::new(field(path, line, &r, 3, "x_m")?, field(path, line, &r, 4, "y_m")?),
            support: field(path, line, &r, 5, "support")?,
        });
    }
    Ok(homes)
}

pub(super) fn population_csv(population: &Population, timeline: &Timeline) -> String {
    let mut s = String::from("date,n_users\n");
    for (d, n) in population.per_day.iter().enumerate() {
        let _ = writeln!(s, "{},{}", timeline.date_of_day(d as u32), n);
    }
    s
}

pub(super) fn read_population(path: &Path, timeline: &Timeline) -> Result<Population, PipelineError> {
    let mut per_day = vec![0u64; timeline.days() as usize];
    for (line, r) in rows(path, &["date", "n_users"])? {
        let date = parse_date(&r[0]).ok_or_else(|| bad(path, line, "bad date"))?;
        let day = timeline
            .day_of_date(date)
            .ok_or_else(|| bad(path, line, format!("{date} outside the study timeline")))?;
        per_day[day as usize] = field(path, line, &r, 1, "n_users")?;
    }
    Ok(Population { per_day })
}

pub(super) const CONTACTS_HEADER: [&str; 5] = ["interval_start", "user_id", "x_m", "y_m", "count"];

pub(super) fn contacts_csv(roster: &Roster, counts: &[ContactCounts], timeline: &Timeline) -> String {
    let rows: usize = counts.iter().map(|c| c.len()).sum();
    let mut s = String::with_capacity(64 * rows + 64);
    s.push_str(&CONTACTS_HEADER.join(","));
    s.push('\n');
    for c in counts {
        let t = format_utc(timeline.interval_start(c.interval));
        for e in &c.entries {
            let _ = writeln!(s, "{},{},{},{},{}", t, roster.id(e.user), e.point.x, e.point.y, e.count);
        }
    }
    s
}

pub(super) fn read_contacts(
    path: &Path,
    roster: &Roster,
    timeline: &Timeline,
) -> Result<Vec<ContactCounts>, PipelineError> {
    let mut out: Vec<ContactCounts> = Vec::new();
    for (line, r) in rows(path, &CONTACTS_HEADER)? {
        let ts = timestamp(path, line, &r[0])?;
        let interval = timeline
            .interval_of(ts)
            .filter(|&t| timeline.interval_start(t) == ts)
            .ok_or_else(|| bad(path, line, format!("{} is not an interval start", &r[0])))?;
        let entry = ContactEntry {
            user: user(path, line, roster, &r[1])?,
            point: PlanarPoint::new(field(path, line, &r, 2, "x_m")?, field(path, line, &r, 3, "y_m")?),
            count: field(path, line, &r, 4, "count")?,
        };
        match out.last_mut() {
            Some(c) if c.interval == interval => c.entries.push(entry),
            Some(c) if c.interval > interval => return Err(bad(path, line, "intervals out of order")),
            _ => out.push(ContactCounts {
                interval,
                entries: vec![entry],
            }),
        }
    }
    for c in &mut out {
        c.entries.sort_by_key(|e| e.user);
    }
    Ok(out)
}

pub(super) fn read_indexes(path: &Path, timeline: &Timeline) -> Result<Vec<IndexSeries>, PipelineError> {
    let mut series: Vec<IndexSeries> = Vec::new();
    for (line, r) in rows(path, &["interval_start", "metric", "scope", "value"])? {
        let metric = Metric::parse(&r[1]).ok_or_else(|| bad(path, line, format!("unknown metric {}", &r[1])))?;
        if &r[2] != "region" {
            continue;
        }
        let ts = timestamp(path, line, &r[0])?;
        let step_secs = match metric {
            Metric::Hru => SECONDS_PER_HOUR,
            _ => timeline.interval_secs() as i64,
        };
        let offset = ts - timeline.start();
        if offset < 0 || offset % step_secs != 0 {
            return Err(bad(path, line, "timestamp off the series grid"));
        }
        let value: f64 = field(path, line, &r, 3, "value")?;
        let idx = match series.iter().position(|s| s.metric == metric) {
            Some(i) => i,
            None => {
                series.push(IndexSeries {
                    metric,
                    step_secs,
                    start: timeline.start(),
                    scope: Scope::Region,
                    values: Vec::new(),
                });
                series.len() - 1
            }
        };
        series[idx].values.push(((offset / step_secs) as u32, value));
    }
    Ok(series)
}

pub(super) fn refined_csv(cells: &BTreeSet<CellId>) -> String {
    let mut s = String::from("cell_id\n");
    for c in cells {
        let _ = writeln!(s, "{c}");
    }
    s
}

pub(super) fn read_refined(path: &Path) -> Result<BTreeSet<CellId>, PipelineError> {
    rows(path, &["cell_id"])?
        .into_iter()
        .map(|(line, r)| field::<u32>(path, line, &r, 0, "cell_id").map(CellId))
        .collect()
}
