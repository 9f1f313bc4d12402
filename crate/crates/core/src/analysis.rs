//! The study computations stage by stage, on in-memory data. The file-based
//! pipeline and the synthetic end-to-end checks both go through here.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use thiserror::Error;

use crate::config::StudyConfig;
use crate::contact::{self, ContactCounts, OutPosition};
use crate::exec::{self, Execution};
use crate::geo::PlanarPoint;
use crate::indexes::grid::{self, CellId, Contribution, GridLevel, GridScores, StudyArea};
use crate::indexes::{self, BaselinePeak, IndexError, IndexSeries, IntervalTotals, Metric, Population};
use crate::ingest::{CaseSeries, Fix, QueryLog};
use crate::lagcorr::{self, LagError, LagResult};
use crate::mobility::{HomeLocation, MobilityParams, UserMobility};
use crate::query_risk::{self, HighRiskSet, QueryPatternSet, RiskAssessment, RiskParams};
use crate::timeline::Timeline;
use crate::{Roster, UserIdx};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Lag(#[from] LagError),
}

/// Homes, daily population and per-user out positions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MobilityOutput {
    pub homes: Vec<Option<HomeLocation>>,
    pub population: Population,
    /// Per user, `(interval, position)` while staying out.
    pub outs: Vec<Vec<(u32, PlanarPoint)>>,
}

/// Runs home detection for `n_users` users whose tracks come from `track`.
/// Tracks are requested once each and dropped after use.
pub fn mobility<F>(
    n_users: usize,
    track: F,
    params: &MobilityParams,
    area: &StudyArea,
    timeline: &Timeline,
    include_homeless: bool,
    exec: Execution,
) -> MobilityOutput
where
    F: Fn(usize) -> Vec<Fix> + Sync,
{
    let proj = area.projection();
    let per_user: Vec<UserMobility> = exec::map_range(exec, n_users, |u| {
        UserMobility::build(&track(u), params, &proj, timeline)
    });
    collect_mobility(per_user, timeline, include_homeless)
}

/// Same as [`mobility`] with homes already known.
pub fn mobility_with_homes<F>(
    homes: &[Option<HomeLocation>],
    track: F,
    params: &MobilityParams,
    area: &StudyArea,
    timeline: &Timeline,
    include_homeless: bool,
    exec: Execution,
) -> MobilityOutput
where
    F: Fn(usize) -> Vec<Fix> + Sync,
{
    let proj = area.projection();
    let per_user: Vec<UserMobility> = exec::map_range(exec, homes.len(), |u| {
        UserMobility::with_home(&track(u), homes[u], params, &proj, timeline)
    });
    collect_mobility(per_user, timeline, include_homeless)
}

fn collect_mobility(per_user: Vec<UserMobility>, timeline: &Timeline, include_homeless: bool) -> MobilityOutput {
    let mut per_day = vec![0u64; timeline.days() as usize];
    let mut homes = Vec::with_capacity(per_user.len());
    let mut outs = Vec::with_capacity(per_user.len());
    for m in per_user {
        if m.home.is_some() || include_homeless {
            for &d in &m.observed_days {
                per_day[d as usize] += 1;
            }
        }
        homes.push(m.home);
        outs.push(m.outs);
    }
    MobilityOutput {
        homes,
        population: Population { per_day },
        outs,
    }
}

/// Regroups per-user out positions by interval, users ascending within
/// each interval. Intervals without out users are omitted.
pub fn positions_by_interval(outs: &[Vec<(u32, PlanarPoint)>], timeline: &Timeline) -> Vec<(u32, Vec<OutPosition>)> {
    let n = timeline.interval_count() as usize;
    let mut sizes = vec![0usize; n];
    for user in outs {
        for &(t, _) in user {
            sizes[t as usize] += 1;
        }
    }
    let mut buckets: Vec<Vec<OutPosition>> = sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    for (u, user) in outs.iter().enumerate() {
        for &(t, point) in user {
            buckets[t as usize].push(OutPosition {
                user: UserIdx(u as u32),
                point,
            });
        }
    }
    buckets
        .into_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(t, b)| (t as u32, b))
        .collect()
}

pub fn contacts(by_interval: &[(u32, Vec<OutPosition>)], radius: f64, exec: Execution) -> Vec<ContactCounts> {
    contact::count_all(by_interval, radius, exec)
}

/// Totals for every interval on a day with observed population; intervals
/// missing from `counts` had nobody out.
pub fn interval_totals(
    counts: &[ContactCounts],
    high_risk: &HighRiskSet,
    population: &Population,
    timeline: &Timeline,
) -> Vec<IntervalTotals> {
    let mut by_interval: Vec<Option<&ContactCounts>> = vec![None; timeline.interval_count() as usize];
    for c in counts {
        by_interval[c.interval as usize] = Some(c);
    }
    (0..timeline.interval_count())
        .filter_map(|t| {
            let n = population.at_day(timeline.day_of_interval(t));
            if n == 0 {
                return None;
            }
            Some(match by_interval[t as usize] {
                Some(c) => IntervalTotals::from_counts(c, high_risk, n, timeline),
                None => IntervalTotals {
                    interval: t,
                    population: n,
                    ..Default::default()
                },
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionalSeries {
    pub peak: BaselinePeak,
    pub sci: IndexSeries,
    pub hru: IndexSeries,
    pub hrsci: IndexSeries,
}

impl RegionalSeries {
    pub fn all(&self) -> [&IndexSeries; 3] {
        [&self.sci, &self.hru, &self.hrsci]
    }
}

pub fn regional_series(
    totals: &[IntervalTotals],
    high_risk: &HighRiskSet,
    timeline: &Timeline,
    baseline: (NaiveDate, NaiveDate),
) -> Result<RegionalSeries, IndexError> {
    let (sci_raw, hrsci_raw) = indexes::raw_series(totals);
    let peak = indexes::baseline_peak(&sci_raw, timeline, baseline)?;
    Ok(RegionalSeries {
        peak,
        sci: indexes::sci_series(&sci_raw, peak, timeline),
        hru: indexes::hru_series(high_risk, timeline),
        hrsci: indexes::hrsci_series(&hrsci_raw, peak, timeline),
    })
}

/// One grid contribution per out user per interval.
pub fn contributions(counts: &[ContactCounts], high_risk: &HighRiskSet, timeline: &Timeline) -> Vec<Contribution> {
    let mut out = Vec::with_capacity(counts.iter().map(|c| c.len()).sum());
    for c in counts {
        let hour = timeline.hour_of_interval(c.interval);
        out.extend(c.entries.iter().map(|e| Contribution {
            interval: c.interval,
            point: e.point,
            count: e.count,
            high_risk: high_risk.contains(e.user, hour),
        }));
    }
    out
}

/// Interval range covering whole local days `[first, last]`.
pub fn period_intervals(timeline: &Timeline, first: NaiveDate, last: NaiveDate) -> std::ops::Range<u32> {
    let first = first.max(timeline.first_date());
    let last = last.min(timeline.last_date());
    if last < first {
        return 0..0;
    }
    let lo = timeline
        .intervals_of_day(timeline.day_of_date(first).expect("clipped"))
        .start;
    let hi = timeline
        .intervals_of_day(timeline.day_of_date(last).expect("clipped"))
        .end;
    lo..hi
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOutput {
    pub coarse: Vec<GridScores>,
    pub refined: BTreeSet<CellId>,
    pub fine: Vec<GridScores>,
    pub dropped: u64,
}

impl GridOutput {
    pub fn scores(&self, level: GridLevel, metric: Metric) -> Option<&GridScores> {
        let set = match level {
            GridLevel::Coarse => &self.coarse,
            GridLevel::Fine => &self.fine,
        };
        set.iter().find(|g| g.metric == metric)
    }
}

pub fn grid_scores(
    contribs: &[Contribution],
    area: &StudyArea,
    timeline: &Timeline,
    period: (NaiveDate, NaiveDate),
    top_n: usize,
    exec: Execution,
) -> GridOutput {
    let intervals = period_intervals(timeline, period.0, period.1);
    let totals = grid::grid_aggregate(contribs, &area.coarse_grid(), intervals.clone(), None, exec);
    let coarse = grid::score_all(&totals, GridLevel::Coarse, period);
    let (refined, fine) = grid::refine_top_cells(&coarse, top_n, area, contribs, intervals, exec);
    GridOutput {
        coarse,
        refined,
        fine,
        dropped: totals.dropped,
    }
}

/// Fine-cell scores of every metric for each Monday-aligned week, inside
/// the refined coarse cells. Week-major, metrics in [`Metric::ALL`] order.
pub fn weekly_scores(
    contribs: &[Contribution],
    area: &StudyArea,
    refined: &BTreeSet<CellId>,
    timeline: &Timeline,
    period: (NaiveDate, NaiveDate),
    exec: Execution,
) -> Vec<GridScores> {
    let weeks = grid::weekly_periods(timeline, period.0, period.1);
    let per_week = exec::map_slice(exec, &weeks, |(monday, intervals)| {
        let totals = grid::fine_totals(area, refined, contribs, intervals.clone(), Execution::Sequential);
        grid::score_all(&totals, GridLevel::Fine, (*monday, *monday + chrono::Days::new(6)))
    });
    per_week.into_iter().flatten().collect()
}

/// Best lag of each metric against cases in each wave. The result pairs the
/// metric name with its lag result, waves within metrics.
pub fn lag_analysis(
    series: &[&IndexSeries],
    cases: &CaseSeries,
    cfg: &StudyConfig,
    timeline: &Timeline,
    exec: Execution,
) -> Result<Vec<(String, LagResult)>, LagError> {
    let mut y = lagcorr::from_cases(cases);
    if cfg.smooth_cases {
        y = y.moving_average7();
    }
    let y = y.restrict(cfg.study_start, cfg.study_end);
    let waves = lagcorr::wave_split(y.start, y.end(), &cfg.wave_boundaries)?;
    let lo = if cfg.allow_negative_lags {
        -cfg.lag_max_days
    } else {
        cfg.lag_min_days
    };
    let lags = lo..=cfg.lag_max_days;
    let mut out = Vec::new();
    for s in series {
        let x = lagcorr::resample_daily(s, timeline);
        for r in lagcorr::best_lag_by_wave(&x, &y, &waves, lags.clone(), cfg.min_overlap_days, exec)? {
            out.push((s.metric.as_str().to_string(), r));
        }
    }
    Ok(out)
}

/// Everything computed for one study, in memory.
#[derive(Clone, Debug)]
pub struct StudyOutputs {
    pub risk: RiskAssessment,
    pub mobility: MobilityOutput,
    pub counts: Vec<ContactCounts>,
    pub totals: Vec<IntervalTotals>,
    pub series: RegionalSeries,
    pub contributions: Vec<Contribution>,
    pub grid: GridOutput,
    pub weekly: Vec<GridScores>,
    pub lags: Option<Vec<(String, LagResult)>>,
}

/// In-memory run of all stages. `roster` lists every user; `track(u)`
/// yields the fixes of roster user `u`.
#[allow(clippy::too_many_arguments)]
pub fn run_study<F>(
    cfg: &StudyConfig,
    area: &StudyArea,
    roster: &Roster,
    track: F,
    queries: &QueryLog,
    cases: Option<&CaseSeries>,
    patterns: &QueryPatternSet,
    exec: Execution,
) -> Result<StudyOutputs, AnalysisError>
where
    F: Fn(usize) -> Vec<Fix> + Sync,
{
    let timeline = cfg.timeline();
    let risk = query_risk::assess(queries, roster, patterns, RiskParams::from_config(cfg), &timeline, exec);
    let mut mob = mobility(
        roster.len(),
        track,
        &MobilityParams::from_config(cfg),
        area,
        &timeline,
        cfg.include_homeless_in_population,
        exec,
    );
    let by_interval = positions_by_interval(&mob.outs, &timeline);
    mob.outs = Vec::new();
    let counts = contacts(&by_interval, cfg.contact_radius_m, exec);
    drop(by_interval);
    let totals = interval_totals(&counts, &risk.high_risk, &mob.population, &timeline);
    let series = regional_series(
        &totals,
        &risk.high_risk,
        &timeline,
        (cfg.baseline_start, cfg.baseline_end),
    )?;
    let contribs = contributions(&counts, &risk.high_risk, &timeline);
    let grid = grid_scores(
        &contribs,
        area,
        &timeline,
        (cfg.study_start, cfg.study_end),
        cfg.refine_top_n,
        exec,
    );
    let weekly = weekly_scores(&contribs, area, &grid.refined, &timeline, cfg.rank_period(), exec);
    let lags = match cases {
        Some(c) => Some(lag_analysis(&series.all(), c, cfg, &timeline, exec)?),
        None => None,
    };
    Ok(StudyOutputs {
        risk,
        mobility: mob,
        counts,
        totals,
        series,
        contributions: contribs,
        grid,
        weekly,
        lags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_world, OutbreakSpec, SynthConfig};

    fn world_cfg() -> SynthConfig {
        SynthConfig {
            users: 400,
            days: 28,
            extent_km: 6,
            outbreaks: vec![OutbreakSpec {
                col: Some(8),
                row: Some(40),
                search_start: NaiveDate::from_ymd_opt(2020, 6, 15).unwrap(),
                ..Default::default()
            }],
            ..Default::default()
        }
    }

    fn run(cfg: &StudyConfig, exec: Execution) -> StudyOutputs {
        let world = generate_world(&world_cfg()).unwrap();
        let roster = Roster::new(world.user_ids().iter().cloned());
        let log = world.query_log(exec);
        run_study(
            cfg,
            world.area(),
            &roster,
            |u| world.track(u),
            &log,
            None,
            &QueryPatternSet::synthetic(),
            exec,
        )
        .unwrap()
    }

    fn study_cfg() -> StudyConfig {
        StudyConfig {
            refine_top_n: 10,
            ..world_cfg().study_config()
        }
    }

    #[test]
    fn synthetic_study_is_consistent() {
        let cfg = study_cfg();
        let out = run(&cfg, Execution::Parallel);
        let timeline = cfg.timeline();
        assert!(out.totals.iter().any(|t| t.contacts > 0));
        for t in &out.totals {
            assert!(t.high_risk_contacts <= t.contacts);
            assert_eq!(t.contacts % 2, 0);
        }
        // Every contribution lands in one coarse cell.
        let coarse = out.grid.scores(GridLevel::Coarse, Metric::Sci).unwrap();
        let period = period_intervals(&timeline, cfg.study_start, cfg.study_end);
        let regional: u64 = out
            .totals
            .iter()
            .filter(|t| period.contains(&t.interval))
            .map(|t| t.contacts)
            .sum();
        assert_eq!(coarse.total(), regional);
        assert_eq!(out.grid.dropped, 0);
        assert!(out.mobility.homes.iter().filter(|h| h.is_some()).count() > 390);
        assert_eq!(out.weekly.len(), 3 * 4);
        let peak_value = out.series.sci.values.iter().map(|v| v.1).fold(0.0, f64::max);
        assert!(peak_value >= 1.0);
        assert!(out.lags.is_none());
    }

    #[test]
    fn execution_modes_agree() {
        let cfg = study_cfg();
        let a = run(&cfg, Execution::Parallel);
        let b = run(&cfg, Execution::Sequential);
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.series, b.series);
        assert_eq!(a.grid, b.grid);
        assert_eq!(a.weekly, b.weekly);
    }

    #[test]
    fn forcing_everyone_high_risk_equalizes() {
        let cfg = StudyConfig {
            force_all_high_risk: true,
            ..study_cfg()
        };
        let out = run(&cfg, Execution::Parallel);
        assert!(out.totals.iter().all(|t| t.high_risk_contacts == t.contacts));
        assert_eq!(out.series.sci.values, out.series.hrsci.values);
    }
}
