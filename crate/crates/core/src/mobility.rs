//! From raw fixes to interval-aligned positions: staypoints, nighttime home
//! estimation by flat-kernel meanshift, zero-order-hold interpolation and the
//! staying-out test.

use crate::config::StudyConfig;
use crate::geo::{PlanarPoint, Projection};
use crate::ingest::Fix;
use crate::timeline::{Timeline, SECONDS_PER_DAY, SECONDS_PER_HOUR};

/// Meanshift stops once a seed moves less than this many meters.
pub const MEANSHIFT_TOLERANCE_M: f64 = 1.0;
pub const MEANSHIFT_MAX_ITER: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Staypoint {
    pub centroid: PlanarPoint,
    pub lat: f64,
    pub lon: f64,
    pub start: i64,
    pub end: i64,
    pub fixes: usize,
}

/// Greedy staypoint scan. A window starting at fix `i` grows while every
/// member stays within `stay_radius` of the window's centroid; it is kept
/// when it lasts at least `min_duration` seconds, otherwise the scan retries
/// from `i + 1`. Kept windows are disjoint.
pub fn detect_staypoints(fixes: &[Fix], proj: &Projection, stay_radius: f64, min_duration: i64) -> Vec<Staypoint> {
    let pts: Vec<PlanarPoint> = fixes.iter().map(|f| proj.project(f.lat, f.lon)).collect();
    let n = pts.len();
    // Every member lies within `bound` of `anchor`. A candidate centroid
    // closer than `stay_radius - bound` to the anchor passes without a scan.
    let slack = stay_radius * (1.0 - 1e-9);
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let (mut sx, mut sy) = (pts[i].x, pts[i].y);
        let mut anchor = pts[i];
        let mut bound = 0.0f64;
        let mut j = i + 1;
        while j < n {
            let count = (j - i + 1) as f64;
            let c = PlanarPoint::new((sx + pts[j].x) / count, (sy + pts[j].y) / count);
            let fits = if bound.max(pts[j].distance(anchor)) + anchor.distance(c) < slack {
                true
            } else if pts[i..=j].iter().all(|p| p.within(c, stay_radius)) {
                anchor = c;
                bound = pts[i..j].iter().map(|p| p.distance(c)).fold(0.0, f64::max);
                true
            } else {
                false
            };
            if fits {
                bound = bound.max(pts[j].distance(anchor));
                sx += pts[j].x;
                sy += pts[j].y;
                j += 1;
            } else {
                break;
            }
        }
        if fixes[j - 1].timestamp - fixes[i].timestamp >= min_duration {
            let count = (j - i) as f64;
            let centroid = PlanarPoint::new(sx / count, sy / count);
            let (lat, lon) = proj.unproject(centroid);
            out.push(Staypoint {
                centroid,
                lat,
                lon,
                start: fixes[i].timestamp,
                end: fixes[j - 1].timestamp,
                fixes: j - i,
            });
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// True when `[sp.start, sp.end]` overlaps the local window
/// `[night_start_hour, night_end_hour)` on any day.
pub fn is_nighttime(sp: &Staypoint, timeline: &Timeline, night_start_hour: u32, night_end_hour: u32) -> bool {
    let off = timeline.utc_offset_secs() as i64;
    let (s, e) = (sp.start + off, sp.end + off);
    let (ns, ne) = (
        night_start_hour as i64 * SECONDS_PER_HOUR,
        night_end_hour as i64 * SECONDS_PER_HOUR,
    );
    (s.div_euclid(SECONDS_PER_DAY)..=e.div_euclid(SECONDS_PER_DAY)).any(|d| {
        let base = d * SECONDS_PER_DAY;
        s < base + ne && e >= base + ns
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomeLocation {
    pub lat: f64,
    pub lon: f64,
    pub planar: PlanarPoint,
    /// Nighttime staypoints whose mode merged into this one.
    pub support: u32,
}

fn mean_of(points: &[PlanarPoint], center: PlanarPoint, bandwidth: f64) -> PlanarPoint {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        if p.within(center, bandwidth) {
            sx += p.x;
            sy += p.y;
            n += 1;
        }
    }
    // Never empty: each iterate is a mean of points, so some point stays in range.
    PlanarPoint::new(sx / n as f64, sy / n as f64)
}

/// Seeds one meanshift run at every staypoint centroid and returns the
/// converged modes in staypoint order.
pub fn meanshift_modes(points: &[PlanarPoint], bandwidth: f64) -> Vec<PlanarPoint> {
    points
        .iter()
        .map(|&seed| {
            let mut m = seed;
            for _ in 0..MEANSHIFT_MAX_ITER {
                let next = mean_of(points, m, bandwidth);
                let shift = next.distance(m);
                m = next;
                if shift < MEANSHIFT_TOLERANCE_M {
                    break;
                }
            }
            m
        })
        .collect()
}

/// Home = the meanshift mode supported by the most nighttime staypoints.
/// Modes within `bandwidth / 2` of an earlier cluster's first mode join it;
/// ties go to the cluster founded by the earliest staypoint.
pub fn estimate_home(night_staypoints: &[Staypoint], bandwidth: f64, proj: &Projection) -> Option<HomeLocation> {
    if night_staypoints.is_empty() {
        return None;
    }
    let mut ordered: Vec<&Staypoint> = night_staypoints.iter().collect();
    ordered.sort_by_key(|s| s.start);
    let points: Vec<PlanarPoint> = ordered.iter().map(|s| s.centroid).collect();
    let modes = meanshift_modes(&points, bandwidth);

    struct Cluster {
        anchor: PlanarPoint,
        sum: (f64, f64),
        members: u32,
    }
    let mut clusters: Vec<Cluster> = Vec::new();
    for m in modes {
        match clusters.iter_mut().find(|c| c.anchor.within(m, bandwidth / 2.0)) {
            Some(c) => {
                c.sum.0 += m.x;
                c.sum.1 += m.y;
                c.members += 1;
            }
            None => clusters.push(Cluster {
                anchor: m,
                sum: (m.x, m.y),
                members: 1,
            }),
        }
    }
    let mut best = &clusters[0];
    for c in &clusters[1..] {
        if c.members > best.members {
            best = c;
        }
    }
    let planar = PlanarPoint::new(best.sum.0 / best.members as f64, best.sum.1 / best.members as f64);
    let (lat, lon) = proj.unproject(planar);
    Some(HomeLocation {
        lat,
        lon,
        planar,
        support: best.members,
    })
}

/// One user's position at the start of one interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalPosition {
    pub interval: u32,
    pub lat: f64,
    pub lon: f64,
    pub is_out: bool,
}

/// Calls `f(interval, fix)` for every interval of every day on which the user
/// has at least one fix. The fix is the last one at or before the interval
/// start on that day, or the day's first fix for earlier intervals.
fn for_each_held_fix(fixes: &[Fix], timeline: &Timeline, mut f: impl FnMut(u32, &Fix)) {
    let in_range: Vec<(u32, &Fix)> = fixes
        .iter()
        .filter_map(|fx| timeline.day_of(fx.timestamp).map(|d| (d, fx)))
        .collect();
    for day in in_range.chunk_by(|a, b| a.0 == b.0) {
        let d = day[0].0;
        let mut k = 0;
        for interval in timeline.intervals_of_day(d) {
            let t = timeline.interval_start(interval);
            while k + 1 < day.len() && day[k + 1].1.timestamp <= t {
                k += 1;
            }
            f(interval, day[k].1);
        }
    }
}

/// Zero-order hold of a time-sorted track onto the interval grid.
pub fn interpolate(fixes: &[Fix], timeline: &Timeline) -> Vec<IntervalPosition> {
    let mut out = Vec::new();
    for_each_held_fix(fixes, timeline, |interval, fx| {
        out.push(IntervalPosition {
            interval,
            lat: fx.lat,
            lon: fx.lon,
            is_out: false,
        })
    });
    out
}

/// Position held at an arbitrary timestamp under the same rule as
/// [`interpolate`]; `None` when the user has no fix that local day.
pub fn position_at(fixes: &[Fix], timeline: &Timeline, ts: i64) -> Option<(f64, f64)> {
    let day = timeline.day_of(ts)?;
    let same_day: Vec<&Fix> = fixes
        .iter()
        .filter(|f| timeline.day_of(f.timestamp) == Some(day))
        .collect();
    let first = *same_day.first()?;
    let held = same_day
        .iter()
        .rev()
        .find(|f| f.timestamp <= ts)
        .copied()
        .unwrap_or(first);
    Some((held.lat, held.lon))
}

/// Flags positions farther than `home_radius` from home. Users without a
/// home produce no output at all.
pub fn classify_out(
    positions: &[IntervalPosition],
    home: Option<&HomeLocation>,
    home_radius: f64,
    proj: &Projection,
) -> Vec<IntervalPosition> {
    let Some(home) = home else {
        return Vec::new();
    };
    positions
        .iter()
        .map(|p| IntervalPosition {
            is_out: !proj.project(p.lat, p.lon).within(home.planar, home_radius),
            ..*p
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MobilityParams {
    pub stay_radius_m: f64,
    pub stay_min_duration_secs: i64,
    pub bandwidth_m: f64,
    pub night_start_hour: u32,
    pub night_end_hour: u32,
    pub home_radius_m: f64,
}

impl MobilityParams {
    pub fn from_config(cfg: &StudyConfig) -> Self {
        MobilityParams {
            stay_radius_m: cfg.stay_radius_m,
            stay_min_duration_secs: cfg.stay_min_duration_secs as i64,
            bandwidth_m: cfg.meanshift_bandwidth_m,
            night_start_hour: cfg.night_start_hour,
            night_end_hour: cfg.night_end_hour,
            home_radius_m: cfg.home_radius_m,
        }
    }
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self::from_config(&StudyConfig::default())
    }
}

/// Staypoints, nighttime filter and meanshift for one user's track.
pub fn home_for_track(
    fixes: &[Fix],
    params: &MobilityParams,
    proj: &Projection,
    timeline: &Timeline,
) -> Option<HomeLocation> {
    let night: Vec<Staypoint> = detect_staypoints(fixes, proj, params.stay_radius_m, params.stay_min_duration_secs)
        .into_iter()
        .filter(|sp| is_nighttime(sp, timeline, params.night_start_hour, params.night_end_hour))
        .collect();
    estimate_home(&night, params.bandwidth_m, proj)
}

/// Sorted distinct day indices with at least one fix.
pub fn observed_days(fixes: &[Fix], timeline: &Timeline) -> Vec<u32> {
    let mut days: Vec<u32> = fixes.iter().filter_map(|f| timeline.day_of(f.timestamp)).collect();
    days.dedup();
    days
}

/// Interval positions where the user is staying out, in projected meters.
/// Equivalent to `classify_out(interpolate(..))` filtered on `is_out`.
pub fn out_positions(
    fixes: &[Fix],
    home: &HomeLocation,
    home_radius: f64,
    proj: &Projection,
    timeline: &Timeline,
) -> Vec<(u32, PlanarPoint)> {
    let mut out = Vec::new();
    for_each_held_fix(fixes, timeline, |interval, fx| {
        let p = proj.project(fx.lat, fx.lon);
        if !p.within(home.planar, home_radius) {
            out.push((interval, p));
        }
    });
    out
}

/// Everything the contact stage needs from one user.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UserMobility {
    pub home: Option<HomeLocation>,
    pub observed_days: Vec<u32>,
    pub outs: Vec<(u32, PlanarPoint)>,
}

impl UserMobility {
    pub fn build(fixes: &[Fix], params: &MobilityParams, proj: &Projection, timeline: &Timeline) -> Self {
        let home = home_for_track(fixes, params, proj, timeline);
        Self::with_home(fixes, home, params, proj, timeline)
    }

    pub fn with_home(
        fixes: &[Fix],
        home: Option<HomeLocation>,
        params: &MobilityParams,
        proj: &Projection,
        timeline: &Timeline,
    ) -> Self {
        let outs = match &home {
            Some(h) => out_positions(fixes, h, params.home_radius_m, proj, timeline),
            None => Vec::new(),
        };
        UserMobility {
            home,
            observed_days: observed_days(fixes, timeline),
            outs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{haversine_m, METERS_PER_DEGREE};
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LAT: f64 = 35.68;
    const LON: f64 = 139.76;

    fn proj() -> Projection {
        Projection::new(35.6, 139.6, 35.68)
    }

    fn timeline() -> Timeline {
        let d0 = NaiveDate::from_ymd_opt(2020, 2, 3).unwrap();
        Timeline::new(d0, d0 + chrono::Days::new(6), 1800, 0)
    }

    fn fix(ts: i64, lat: f64, lon: f64) -> Fix {
        Fix {
            timestamp: ts,
            lat,
            lon,
        }
    }

    /// Offsets a coordinate by meters using the test projection.
    fn shifted(dx: f64, dy: f64) -> (f64, f64) {
        let p = proj();
        let base = p.project(LAT, LON);
        p.unproject(base.offset(dx, dy))
    }

    #[test]
    fn single_site_is_one_staypoint() {
        let t0 = timeline().start();
        let fixes: Vec<Fix> = (0..10).map(|i| fix(t0 + i * 800, LAT, LON)).collect();
        let sps = detect_staypoints(&fixes, &proj(), 100.0, 900);
        assert_eq!(sps.len(), 1);
        assert!((sps[0].lat - LAT).abs() < 1e-12 && (sps[0].lon - LON).abs() < 1e-12);
        assert_eq!(sps[0].fixes, 10);
    }

    #[test]
    fn alternating_sites_give_no_staypoint() {
        let t0 = timeline().start();
        let far = shifted(1000.0, 0.0);
        let fixes: Vec<Fix> = (0..24)
            .map(|i| {
                let (la, lo) = if i % 2 == 0 { (LAT, LON) } else { far };
                fix(t0 + i * 300, la, lo)
            })
            .collect();
        assert!(detect_staypoints(&fixes, &proj(), 100.0, 900).is_empty());
    }

    /// Reference scan: for each start, try every prefix length from scratch.
    fn reference_staypoints(fixes: &[Fix], proj: &Projection, r: f64, min_dur: i64) -> Vec<(i64, i64, usize)> {
        let pts: Vec<PlanarPoint> = fixes.iter().map(|f| proj.project(f.lat, f.lon)).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < pts.len() {
            let mut end = i + 1;
            for j in i + 1..pts.len() {
                let members = &pts[i..=j];
                let mut sx = 0.0;
                let mut sy = 0.0;
                for p in members {
                    sx += p.x;
                    sy += p.y;
                }
                let c = PlanarPoint::new(sx / members.len() as f64, sy / members.len() as f64);
                if members.iter().all(|p| p.within(c, r)) {
                    end = j + 1;
                } else {
                    break;
                }
            }
            if fixes[end - 1].timestamp - fixes[i].timestamp >= min_dur {
                out.push((fixes[i].timestamp, fixes[end - 1].timestamp, end - i));
                i = end;
            } else {
                i += 1;
            }
        }
        out
    }

    #[test]
    fn staypoints_equal_reference_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = proj();
        for _ in 0..100 {
            let mut t = timeline().start();
            let mut fixes = Vec::new();
            let mut site = (0.0, 0.0);
            for _ in 0..rng.random_range(1..80) {
                if rng.random_bool(0.15) {
                    site = (rng.random_range(-2000.0..2000.0), rng.random_range(-2000.0..2000.0));
                }
                let (la, lo) = shifted(
                    site.0 + rng.random_range(-80.0..80.0),
                    site.1 + rng.random_range(-80.0..80.0),
                );
                fixes.push(fix(t, la, lo));
                t += rng.random_range(60..1200);
            }
            let got: Vec<_> = detect_staypoints(&fixes, &p, 100.0, 900)
                .iter()
                .map(|s| (s.start, s.end, s.fixes))
                .collect();
            assert_eq!(got, reference_staypoints(&fixes, &p, 100.0, 900));
        }
    }

    fn sp_at(dx: f64, dy: f64, start: i64) -> Staypoint {
        let (lat, lon) = shifted(dx, dy);
        Staypoint {
            centroid: proj().project(lat, lon),
            lat,
            lon,
            start,
            end: start + 3600,
            fixes: 3,
        }
    }

    #[test]
    fn home_at_single_site() {
        let sps: Vec<_> = (0..4).map(|i| sp_at(0.0, 0.0, i * 86_400)).collect();
        let home = estimate_home(&sps, 100.0, &proj()).unwrap();
        assert!(haversine_m(home.lat, home.lon, LAT, LON) < 1e-6);
        assert_eq!(home.support, 4);
    }

    #[test]
    fn home_prefers_larger_cluster() {
        // Five staypoints in a 40 m pattern; all within one bandwidth of each
        // other so meanshift reaches their mean (8, 4) in one step.
        let big = [(0.0, 0.0), (20.0, 0.0), (0.0, 20.0), (20.0, 20.0), (0.0, -20.0)];
        let mut sps: Vec<Staypoint> = Vec::new();
        for (i, (dx, dy)) in [(5000.0, 0.0), (5010.0, 0.0), (5000.0, 10.0)].iter().enumerate() {
            sps.push(sp_at(*dx, *dy, i as i64 * 100));
        }
        for (i, (dx, dy)) in big.iter().enumerate() {
            sps.push(sp_at(*dx, *dy, 1000 + i as i64 * 100));
        }
        let home = estimate_home(&sps, 100.0, &proj()).unwrap();
        assert_eq!(home.support, 5);
        let expected = proj().project(LAT, LON).offset(8.0, 4.0);
        assert!(home.planar.distance(expected) < 1e-6, "{:?}", home.planar);
    }

    #[test]
    fn tie_goes_to_earliest_cluster() {
        let sps = vec![sp_at(3000.0, 0.0, 500), sp_at(0.0, 0.0, 100)];
        let home = estimate_home(&sps, 100.0, &proj()).unwrap();
        assert!(home.planar.distance(sp_at(0.0, 0.0, 0).centroid) < 1e-9);
        assert_eq!(home.support, 1);
    }

    #[test]
    fn daytime_only_user_has_no_home() {
        let tl = timeline();
        let t0 = tl.start() + 10 * 3600;
        let fixes: Vec<Fix> = (0..8).map(|i| fix(t0 + i * 600, LAT, LON)).collect();
        assert!(home_for_track(&fixes, &MobilityParams::default(), &proj(), &tl).is_none());
        assert!(estimate_home(&[], 100.0, &proj()).is_none());
    }

    #[test]
    fn night_window_overlap() {
        let tl = timeline();
        let day = tl.start();
        let mut sp = sp_at(0.0, 0.0, day + 5 * 3600);
        assert!(is_nighttime(&sp, &tl, 0, 6));
        sp.start = day + 7 * 3600;
        sp.end = day + 20 * 3600;
        assert!(!is_nighttime(&sp, &tl, 0, 6));
        sp.end = day + 25 * 3600;
        assert!(is_nighttime(&sp, &tl, 0, 6));
    }

    #[test]
    fn hold_between_observations() {
        let tl = timeline();
        let d = tl.start();
        let nine = fix(d + 9 * 3600, LAT, LON);
        let eleven = fix(d + 11 * 3600, LAT + 0.01, LON);
        let pos = interpolate(&[nine, eleven], &tl);
        assert_eq!(pos.len(), 48);
        let ten = pos.iter().find(|p| p.interval == 20).unwrap();
        assert_eq!((ten.lat, ten.lon), (LAT, LON));
        let at_eleven = pos.iter().find(|p| p.interval == 22).unwrap();
        assert_eq!(at_eleven.lat, LAT + 0.01);
        // Before the first fix of the day: backward fill.
        assert_eq!(pos[0].lat, LAT);
    }

    #[test]
    fn dense_track_takes_latest_fix() {
        let tl = timeline();
        let d = tl.start() + 86_400;
        let fixes: Vec<Fix> = (0..1440)
            .map(|m| fix(d + m * 60 + 17, LAT + m as f64 * 1e-5, LON))
            .collect();
        let pos = interpolate(&fixes, &tl);
        for p in &pos {
            let t = tl.interval_start(p.interval);
            let expected = fixes.iter().rev().find(|f| f.timestamp <= t).unwrap_or(&fixes[0]);
            assert_eq!(p.lat, expected.lat);
        }
        assert_eq!(pos.len(), 48);
        assert!(pos.iter().all(|p| tl.day_of_interval(p.interval) == 1));
    }

    #[test]
    fn distances_to_home() {
        let home = estimate_home(&[sp_at(0.0, 0.0, 0)], 100.0, &proj()).unwrap();
        let mk = |dx: f64| {
            let (lat, lon) = shifted(dx, 0.0);
            IntervalPosition {
                interval: 0,
                lat,
                lon,
                is_out: false,
            }
        };
        let flags: Vec<bool> = classify_out(&[mk(0.0), mk(126.0), mk(124.0)], Some(&home), 125.0, &proj())
            .iter()
            .map(|p| p.is_out)
            .collect();
        assert_eq!(flags, [false, true, false]);
        // The constructed offsets are what a great-circle check says they are.
        let (lat, lon) = shifted(126.0, 0.0);
        let hv = haversine_m(home.lat, home.lon, lat, lon);
        assert!((hv - 126.0).abs() < 0.2, "{hv}");
        assert!(classify_out(&[mk(500.0)], None, 125.0, &proj()).is_empty());
    }

    #[test]
    fn out_positions_agree_with_classify() {
        let tl = timeline();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = tl.start();
        let mut fixes = Vec::new();
        while t < tl.end() {
            let (la, lo) = shifted(rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0));
            fixes.push(fix(t, la, lo));
            t += rng.random_range(300..7200);
        }
        let home = estimate_home(&[sp_at(0.0, 0.0, 0)], 100.0, &proj()).unwrap();
        let via_classify: Vec<u32> = classify_out(&interpolate(&fixes, &tl), Some(&home), 125.0, &proj())
            .iter()
            .filter(|p| p.is_out)
            .map(|p| p.interval)
            .collect();
        let direct: Vec<u32> = out_positions(&fixes, &home, 125.0, &proj(), &tl)
            .iter()
            .map(|o| o.0)
            .collect();
        assert_eq!(via_classify, direct);
    }

    proptest! {
        #[test]
        fn hold_reproduces_observations(offsets in proptest::collection::btree_set(0i64..(7 * 86_400), 1..40)) {
            let tl = timeline();
            let fixes: Vec<Fix> = offsets.iter().enumerate().map(|(i, o)| fix(tl.start() + o, LAT + i as f64 * 1e-4, LON)).collect();
            for f in &fixes {
                prop_assert_eq!(position_at(&fixes, &tl, f.timestamp), Some((f.lat, f.lon)));
            }
            for p in interpolate(&fixes, &tl) {
                prop_assert_eq!(position_at(&fixes, &tl, tl.interval_start(p.interval)), Some((p.lat, p.lon)));
            }
        }

        #[test]
        fn home_translation_equivariant(pts in proptest::collection::vec((-400.0f64..400.0, -400.0f64..400.0), 1..12), shift_n in -0.02f64..0.02, shift_e in -0.02f64..0.02) {
            let p = proj();
            let sps: Vec<Staypoint> = pts.iter().enumerate().map(|(i, (dx, dy))| sp_at(*dx, *dy, i as i64 * 100)).collect();
            let moved: Vec<Staypoint> = sps.iter().map(|s| {
                let (lat, lon) = (s.lat + shift_n, s.lon + shift_e);
                Staypoint { centroid: p.project(lat, lon), lat, lon, ..*s }
            }).collect();
            let a = estimate_home(&sps, 100.0, &p).unwrap();
            let b = estimate_home(&moved, 100.0, &p).unwrap();
            prop_assert_eq!(a.support, b.support);
            let dy = (b.lat - a.lat - shift_n) * METERS_PER_DEGREE;
            let dx = (b.lon - a.lon - shift_e) * p.meters_per_lon();
            prop_assert!((dx * dx + dy * dy).sqrt() < 0.1);
        }

        #[test]
        fn out_is_monotone_in_radius(dx in -300.0f64..300.0, dy in -300.0f64..300.0, r in 1.0f64..300.0, smaller in 0.0f64..1.0) {
            let home = estimate_home(&[sp_at(0.0, 0.0, 0)], 100.0, &proj()).unwrap();
            let (lat, lon) = shifted(dx, dy);
            let pos = [IntervalPosition { interval: 0, lat, lon, is_out: false }];
            let at_r = classify_out(&pos, Some(&home), r, &proj())[0].is_out;
            let at_less = classify_out(&pos, Some(&home), r * smaller, &proj())[0].is_out;
            prop_assert!(!at_r || at_less);
        }

        #[test]
        fn staypoints_never_overlap(gaps in proptest::collection::vec((30i64..1500, -150.0f64..150.0), 1..60)) {
            let mut t = timeline().start();
            let fixes: Vec<Fix> = gaps.iter().map(|(g, d)| { t += g; let (la, lo) = shifted(*d, 0.0); fix(t, la, lo) }).collect();
            let sps = detect_staypoints(&fixes, &proj(), 100.0, 900);
            for w in sps.windows(2) {
                prop_assert!(w[0].end < w[1].start);
            }
            for s in &sps {
                prop_assert!(s.end - s.start >= 900);
            }
        }
    }
}
