//! Coarse and fine square grids over the study area, per-cell aggregation of
//! the three metrics, top-cell refinement and weekly ranking.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{self, Write};

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::Metric;
use crate::exec::{self, Execution};
use crate::geo::{PlanarPoint, Projection, METERS_PER_DEGREE};
use crate::timeline::Timeline;

/// Rectangular study area anchored at its south-west corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyArea {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cols: u32,
    pub rows: u32,
    pub coarse_edge_m: f64,
    pub fine_edge_m: f64,
}

impl StudyArea {
    /// Reference latitude for the projection: the area's middle row.
    pub fn ref_lat(&self) -> f64 {
        self.origin_lat + self.rows as f64 * self.coarse_edge_m / 2.0 / METERS_PER_DEGREE
    }

    pub fn projection(&self) -> Projection {
        Projection::new(self.origin_lat, self.origin_lon, self.ref_lat())
    }

    /// Smallest area of whole coarse cells covering the bounding box
    /// `(min_lat, min_lon, max_lat, max_lon)`.
    pub fn from_bounds(bounds: (f64, f64, f64, f64), coarse_edge_m: f64, fine_edge_m: f64) -> Self {
        let (min_lat, min_lon, max_lat, max_lon) = bounds;
        let height = (max_lat - min_lat) * METERS_PER_DEGREE;
        let rows = (height / coarse_edge_m).floor() as u32 + 1;
        let ref_lat = min_lat + rows as f64 * coarse_edge_m / 2.0 / METERS_PER_DEGREE;
        let width = (max_lon - min_lon) * METERS_PER_DEGREE * ref_lat.to_radians().cos();
        StudyArea {
            origin_lat: min_lat,
            origin_lon: min_lon,
            cols: (width / coarse_edge_m).floor() as u32 + 1,
            rows,
            coarse_edge_m,
            fine_edge_m,
        }
    }

    pub fn factor(&self) -> u32 {
        (self.coarse_edge_m / self.fine_edge_m).round() as u32
    }

    pub fn grid(&self, level: GridLevel) -> GridSpec {
        let factor = self.factor();
        let (edge, cols, rows) = match level {
            GridLevel::Coarse => (self.coarse_edge_m, self.cols, self.rows),
            GridLevel::Fine => (self.fine_edge_m, self.cols * factor, self.rows * factor),
        };
        GridSpec {
            level,
            origin_lat: self.origin_lat,
            origin_lon: self.origin_lon,
            edge_m: edge,
            cols,
            rows,
            fine_edge_m: self.fine_edge_m,
            factor: match level {
                GridLevel::Coarse => factor,
                GridLevel::Fine => 1,
            },
            projection: self.projection(),
        }
    }

    pub fn coarse_grid(&self) -> GridSpec {
        self.grid(GridLevel::Coarse)
    }

    pub fn fine_grid(&self) -> GridSpec {
        self.grid(GridLevel::Fine)
    }

    /// Fine cell id to the id of its coarse parent.
    pub fn coarse_parent(&self, fine: CellId) -> CellId {
        let f = self.factor();
        let fine_cols = self.cols * f;
        let (c, r) = (fine.0 % fine_cols, fine.0 / fine_cols);
        CellId((r / f) * self.cols + c / f)
    }

    /// The `factor²` fine cells inside a coarse cell, in id order.
    pub fn fine_children(&self, coarse: CellId) -> Vec<CellId> {
        let f = self.factor();
        let fine_cols = self.cols * f;
        let (c, r) = (coarse.0 % self.cols, coarse.0 / self.cols);
        let mut out = Vec::with_capacity((f * f) as usize);
        for rr in r * f..(r + 1) * f {
            for cc in c * f..(c + 1) * f {
                out.push(CellId(rr * fine_cols + cc));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GridLevel {
    Coarse,
    Fine,
}

impl GridLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            GridLevel::Coarse => "coarse",
            GridLevel::Fine => "fine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "coarse" => Some(GridLevel::Coarse),
            "fine" => Some(GridLevel::Fine),
            _ => None,
        }
    }
}

/// Row-major cell index within one grid level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId(pub u32);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub level: GridLevel,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub edge_m: f64,
    pub cols: u32,
    pub rows: u32,
    fine_edge_m: f64,
    /// Fine cells per side of one cell at this level.
    factor: u32,
    projection: Projection,
}

impl GridSpec {
    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn cell_count(&self) -> u32 {
        self.cols * self.rows
    }

    /// Cell containing a projected position. The fine index is computed
    /// first and coarse cells are unions of fine cells, so the two levels
    /// nest exactly.
    #[inline]
    pub fn cell_of(&self, p: PlanarPoint) -> Option<CellId> {
        if !(p.x >= 0.0 && p.y >= 0.0) {
            return None;
        }
        let fc = (p.x / self.fine_edge_m).floor();
        let fr = (p.y / self.fine_edge_m).floor();
        let (c, r) = ((fc as u64 / self.factor as u64), (fr as u64 / self.factor as u64));
        if c >= self.cols as u64 || r >= self.rows as u64 {
            return None;
        }
        Some(CellId(r as u32 * self.cols + c as u32))
    }

    pub fn col_row(&self, cell: CellId) -> (u32, u32) {
        (cell.0 % self.cols, cell.0 / self.cols)
    }

    /// Closed ring of `[lon, lat]` corners.
    pub fn polygon(&self, cell: CellId) -> Vec<[f64; 2]> {
        let (c, r) = self.col_row(cell);
        let (x0, y0) = (c as f64 * self.edge_m, r as f64 * self.edge_m);
        let (x1, y1) = (x0 + self.edge_m, y0 + self.edge_m);
        [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
            .iter()
            .map(|&(x, y)| {
                let (lat, lon) = self.projection.unproject(PlanarPoint::new(x, y));
                [lon, lat]
            })
            .collect()
    }

    pub fn center(&self, cell: CellId) -> PlanarPoint {
        let (c, r) = self.col_row(cell);
        PlanarPoint::new((c as f64 + 0.5) * self.edge_m, (r as f64 + 0.5) * self.edge_m)
    }
}

/// One out user's contribution at one interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub interval: u32,
    pub point: PlanarPoint,
    pub count: u32,
    pub high_risk: bool,
}

impl Contribution {
    #[inline]
    pub fn value(&self, metric: Metric) -> u64 {
        match metric {
            Metric::Sci => self.count as u64,
            Metric::Hru => self.high_risk as u64,
            Metric::HrSci => {
                if self.high_risk {
                    self.count as u64
                } else {
                    0
                }
            }
        }
    }
}

/// Integer sums of all three metrics per cell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellTotals {
    pub cells: BTreeMap<CellId, [u64; 3]>,
    /// Contributions whose position fell outside the grid.
    pub dropped: u64,
}

impl CellTotals {
    pub fn raw(&self, metric: Metric) -> Vec<(CellId, u64)> {
        self.cells.iter().map(|(c, v)| (*c, v[metric.slot()])).collect()
    }

    fn merge(mut self, other: CellTotals) -> CellTotals {
        for (c, v) in other.cells {
            let e = self.cells.entry(c).or_default();
            for k in 0..3 {
                e[k] += v[k];
            }
        }
        self.dropped += other.dropped;
        self
    }
}

/// Sums contributions with `interval` in `intervals` into cells of `grid`.
/// When `within` is given, only cells whose coarse parent is in it are kept;
/// the rest are skipped without counting as dropped.
pub fn grid_aggregate(
    contributions: &[Contribution],
    grid: &GridSpec,
    intervals: std::ops::Range<u32>,
    within: Option<(&StudyArea, &BTreeSet<CellId>)>,
    exec: Execution,
) -> CellTotals {
    const CHUNK: usize = 1 << 16;
    let parts = exec::map_chunks(exec, contributions.len(), CHUNK, |range| {
        let mut local: HashMap<CellId, [u64; 3]> = HashMap::new();
        let mut dropped = 0u64;
        for c in &contributions[range] {
            if !intervals.contains(&c.interval) {
                continue;
            }
            let Some(cell) = grid.cell_of(c.point) else {
                dropped += 1;
                continue;
            };
            if let Some((area, keep)) = within {
                if !keep.contains(&area.coarse_parent(cell)) {
                    continue;
                }
            }
            let e = local.entry(cell).or_default();
            e[0] += c.count as u64;
            if c.high_risk {
                e[1] += 1;
                e[2] += c.count as u64;
            }
        }
        CellTotals {
            cells: local.into_iter().collect(),
            dropped,
        }
    });
    parts.into_iter().fold(CellTotals::default(), CellTotals::merge)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellScore {
    pub cell: CellId,
    pub raw: u64,
    pub normalized: f64,
    pub rank: u32,
}

/// Scores of one metric over one period, ordered by rank.
#[derive(Clone, Debug, PartialEq)]
pub struct GridScores {
    pub level: GridLevel,
    pub metric: Metric,
    pub period_start: NaiveDate,
    pub period_end: NaiveDate,
    pub scores: Vec<CellScore>,
}

impl GridScores {
    /// Ranks cells by descending raw score, ties by ascending cell id. Ranks
    /// are 1-based and form a permutation.
    pub fn rank(
        level: GridLevel,
        metric: Metric,
        period: (NaiveDate, NaiveDate),
        raw: impl IntoIterator<Item = (CellId, u64)>,
    ) -> Self {
        let mut cells: Vec<(CellId, u64)> = raw.into_iter().collect();
        cells.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let lo = cells.iter().map(|c| c.1).min().unwrap_or(0);
        let hi = cells.iter().map(|c| c.1).max().unwrap_or(0);
        let scores = cells
            .iter()
            .enumerate()
            .map(|(i, &(cell, raw))| CellScore {
                cell,
                raw,
                normalized: if hi > lo {
                    (raw - lo) as f64 / (hi - lo) as f64
                } else {
                    0.0
                },
                rank: i as u32 + 1,
            })
            .collect();
        GridScores {
            level,
            metric,
            period_start: period.0,
            period_end: period.1,
            scores,
        }
    }

    pub fn top(&self, n: usize) -> impl Iterator<Item = &CellScore> {
        self.scores.iter().take(n)
    }

    pub fn rank_of(&self, cell: CellId) -> Option<u32> {
        self.scores.iter().find(|s| s.cell == cell).map(|s| s.rank)
    }

    pub fn raw_of(&self, cell: CellId) -> Option<u64> {
        self.scores.iter().find(|s| s.cell == cell).map(|s| s.raw)
    }

    pub fn total(&self) -> u64 {
        self.scores.iter().map(|s| s.raw).sum()
    }
}

/// Scores for all three metrics from one set of cell totals.
pub fn score_all(totals: &CellTotals, level: GridLevel, period: (NaiveDate, NaiveDate)) -> Vec<GridScores> {
    Metric::ALL
        .iter()
        .map(|&m| GridScores::rank(level, m, period, totals.raw(m)))
        .collect()
}

/// Union of the top `top_n` cells of every given ranking.
pub fn refinement_set(coarse: &[GridScores], top_n: usize) -> BTreeSet<CellId> {
    coarse.iter().flat_map(|g| g.top(top_n).map(|s| s.cell)).collect()
}

/// Fine-grid scores inside the union of each metric's top coarse cells.
/// Every fine cell of a selected coarse cell is scored, including zeros.
pub fn refine_top_cells(
    coarse: &[GridScores],
    top_n: usize,
    area: &StudyArea,
    contributions: &[Contribution],
    intervals: std::ops::Range<u32>,
    exec: Execution,
) -> (BTreeSet<CellId>, Vec<GridScores>) {
    let selected = refinement_set(coarse, top_n);
    let totals = fine_totals(area, &selected, contributions, intervals, exec);
    let period = coarse
        .first()
        .map(|g| (g.period_start, g.period_end))
        .unwrap_or((NaiveDate::MIN, NaiveDate::MIN));
    (selected, score_all(&totals, GridLevel::Fine, period))
}

/// Fine totals restricted to `selected` coarse cells, zero-filled.
pub fn fine_totals(
    area: &StudyArea,
    selected: &BTreeSet<CellId>,
    contributions: &[Contribution],
    intervals: std::ops::Range<u32>,
    exec: Execution,
) -> CellTotals {
    let fine = area.fine_grid();
    let mut totals = grid_aggregate(contributions, &fine, intervals, Some((area, selected)), exec);
    for &c in selected {
        for child in area.fine_children(c) {
            totals.cells.entry(child).or_default();
        }
    }
    totals
}

/// Monday-aligned whole weeks inside `[first, last]`, clipped to the
/// timeline, as `(monday, interval range)`.
pub fn weekly_periods(
    timeline: &Timeline,
    first: NaiveDate,
    last: NaiveDate,
) -> Vec<(NaiveDate, std::ops::Range<u32>)> {
    let first = first.max(timeline.first_date());
    let last = last.min(timeline.last_date());
    let mut monday = first + Days::new(((7 - first.weekday().num_days_from_monday()) % 7) as u64);
    let mut out = Vec::new();
    while monday + Days::new(6) <= last {
        let d0 = timeline.day_of_date(monday).expect("inside timeline");
        let lo = timeline.intervals_of_day(d0).start;
        let hi = timeline.intervals_of_day(d0 + 6).end;
        out.push((monday, lo..hi));
        monday = monday + Days::new(7);
    }
    out
}

/// Rank of every cell in every week, for trajectory plots.
#[derive(Clone, Debug, PartialEq)]
pub struct WeeklyRanks {
    pub metric: Metric,
    pub weeks: Vec<NaiveDate>,
    pub ranks: BTreeMap<CellId, Vec<Option<u32>>>,
}

impl WeeklyRanks {
    pub fn trajectory(&self, cell: CellId) -> Option<&[Option<u32>]> {
        self.ranks.get(&cell).map(|v| v.as_slice())
    }
}

/// Collects per-week rankings of one metric into per-cell trajectories.
pub fn rank_weekly(weekly: &[GridScores]) -> WeeklyRanks {
    let metric = weekly.first().map(|g| g.metric).unwrap_or(Metric::HrSci);
    let mut ranks: BTreeMap<CellId, Vec<Option<u32>>> = BTreeMap::new();
    for (w, g) in weekly.iter().enumerate() {
        for s in &g.scores {
            ranks.entry(s.cell).or_insert_with(|| vec![None; weekly.len()])[w] = Some(s.rank);
        }
    }
    WeeklyRanks {
        metric,
        weeks: weekly.iter().map(|g| g.period_start).collect(),
        ranks,
    }
}

pub const GRID_SCORES_HEADER: &str = "period_start,period_end,grid_level,cell_id,metric,raw,normalized,rank";

pub fn write_grid_scores_csv<W: Write>(scores: &[GridScores], mut w: W) -> io::Result<()> {
    writeln!(w, "{GRID_SCORES_HEADER}")?;
    for g in scores {
        for s in &g.scores {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                g.period_start,
                g.period_end,
                g.level.as_str(),
                s.cell,
                g.metric.as_str(),
                s.raw,
                s.normalized,
                s.rank
            )?;
        }
    }
    Ok(())
}

pub fn grid_scores_geojson(scores: &[GridScores], area: &StudyArea) -> serde_json::Value {
    let features: Vec<serde_json::Value> = scores
        .iter()
        .flat_map(|g| {
            let spec = area.grid(g.level);
            g.scores.iter().map(move |s| {
                json!({
                    "type": "Feature",
                    "geometry": { "type": "Polygon", "coordinates": [spec.polygon(s.cell)] },
                    "properties": {
                        "period_start": g.period_start.to_string(),
                        "period_end": g.period_end.to_string(),
                        "grid_level": g.level.as_str(),
                        "cell_id": s.cell.0,
                        "metric": g.metric.as_str(),
                        "raw": s.raw,
                        "normalized": s.normalized,
                        "rank": s.rank,
                    }
                })
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

pub const WEEKLY_RANKS_HEADER: &str = "week_start,metric,cell_id,raw,rank";

pub fn write_weekly_csv<W: Write>(weekly: &[GridScores], mut w: W) -> io::Result<()> {
    writeln!(w, "{WEEKLY_RANKS_HEADER}")?;
    for g in weekly {
        for s in &g.scores {
            writeln!(
                w,
                "{},{},{},{},{}",
                g.period_start,
                g.metric.as_str(),
                s.cell,
                s.raw,
                s.rank
            )?;
        }
    }
    Ok(())
}
