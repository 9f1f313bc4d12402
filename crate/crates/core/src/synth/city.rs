//! The two-anchor city model behind [`super::World`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::{GroundTruth, SynthConfig};
use crate::geo::{PlanarPoint, Projection};
use crate::indexes::grid::StudyArea;
use crate::ingest::{CaseSeries, Fix};
use crate::query_risk::QueryPatternSet;
use crate::timeline::{Timeline, SECONDS_PER_HOUR};

/// Business districts as fractions of the area side.
const HUBS: [(f64, f64); 4] = [(0.30, 0.30), (0.70, 0.32), (0.32, 0.70), (0.68, 0.68)];
const HUB_SPREAD_M: f64 = 350.0;
const HUB_SHARE: f64 = 0.5;
const LOCAL_SPREAD_M: f64 = 25.0;
const LOCAL_SIZES: std::ops::RangeInclusive<usize> = 6..=18;
const USERS_PER_LOCAL_SITE: usize = 40;
const PLANTED_SITE_SIZE: usize = 12;

const HOME_NOISE_M: f64 = 15.0;
const DESK_NOISE_M: f64 = 10.0;
const TRANSIT_NOISE_M: f64 = 50.0;
/// Relative sampling density while at home, in transit and at work. Phones
/// report rarely while static at home.
const HOME_WEIGHT: f64 = 0.3;
const TRANSIT_WEIGHT: f64 = 4.0;
const WORK_WEIGHT: f64 = 1.0;

/// Local hours in which search sessions may start; one session per hour.
const SESSION_HOURS: std::ops::Range<u32> = 6..24;

const WORLD_STREAM: u64 = u64::MAX >> 3;

const FILLER: [&str; 16] = [
    "weather tomorrow",
    "train timetable",
    "ramen near station",
    "movie showtimes",
    "shinjuku ramen",
    "ginza department store hours",
    "central hospital visiting hours",
    "how to cook rice",
    "football scores",
    "cheap flights",
    "used bicycles",
    "ueno park cherry blossoms",
    "public holiday calendar",
    "laptop reviews",
    "fever clinic parking",
    "recipe curry",
];
const PREFIXES: [&str; 4] = ["", "", "what to do ", "is it "];
const SUFFIXES: [&str; 4] = ["", " at night", " for three days", " adult"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteKind {
    Hub,
    Local,
    Planted(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Site {
    pub kind: SiteKind,
    pub center: PlanarPoint,
    pub spread_m: f64,
    pub capacity: usize,
    pub members: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub home: PlanarPoint,
    pub work: Option<usize>,
    pub desk: PlanarPoint,
    /// Outbreaks this user belongs to through home or workplace.
    pub surge: Vec<usize>,
}

fn stream(seed: u64, who: u64, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(who << 3 | purpose);
    r
}

fn extent_m(cfg: &SynthConfig) -> f64 {
    cfg.extent_km as f64 * 1000.0
}

fn clamp(cfg: &SynthConfig, p: PlanarPoint) -> PlanarPoint {
    let hi = extent_m(cfg) - 0.5;
    PlanarPoint::new(p.x.clamp(0.5, hi), p.y.clamp(0.5, hi))
}

fn jitter(rng: &mut ChaCha8Rng, p: PlanarPoint, sigma: f64) -> PlanarPoint {
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    p.offset(n.sample(rng), n.sample(rng))
}

pub(super) fn build(cfg: &SynthConfig, area: &StudyArea, truth: &GroundTruth) -> (Vec<Site>, Vec<Agent>) {
    let side = extent_m(cfg);
    let mut world = stream(cfg.seed, WORLD_STREAM, 0);
    let fine = area.fine_grid();

    let mut sites: Vec<Site> = Vec::new();
    for o in &truth.outbreaks {
        sites.push(Site {
            kind: SiteKind::Planted(o.id),
            center: fine.center(o.cell),
            spread_m: LOCAL_SPREAD_M,
            capacity: PLANTED_SITE_SIZE,
            members: 0,
        });
    }
    let hubs_from = sites.len();
    for (fx, fy) in HUBS {
        sites.push(Site {
            kind: SiteKind::Hub,
            center: PlanarPoint::new(fx * side, fy * side),
            spread_m: HUB_SPREAD_M,
            capacity: usize::MAX,
            members: 0,
        });
    }
    let locals_from = sites.len();
    for _ in 0..(cfg.users / USERS_PER_LOCAL_SITE).max(1) {
        sites.push(Site {
            kind: SiteKind::Local,
            center: PlanarPoint::new(world.random_range(0.0..side), world.random_range(0.0..side)),
            spread_m: LOCAL_SPREAD_M,
            capacity: world.random_range(LOCAL_SIZES),
            members: 0,
        });
    }
    let n_locals = sites.len() - locals_from;

    let mut agents = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let mut rng = stream(cfg.seed, u as u64, 0);
        let home = PlanarPoint::new(rng.random_range(0.0..side), rng.random_range(0.0..side));
        let commuter = rng.random_bool(cfg.commuter_fraction);
        let work = commuter.then(|| {
            if let Some(i) = (0..hubs_from).find(|&i| sites[i].members < sites[i].capacity) {
                return i;
            }
            let hub = hubs_from + world.random_range(0..HUBS.len());
            if world.random_bool(HUB_SHARE) {
                return hub;
            }
            let first = world.random_range(0..n_locals);
            (0..n_locals)
                .map(|k| locals_from + (first + k) % n_locals)
                .find(|&i| sites[i].members < sites[i].capacity)
                .unwrap_or(hub)
        });
        let desk = match work {
            Some(i) => {
                sites[i].members += 1;
                clamp(cfg, jitter(&mut rng, sites[i].center, sites[i].spread_m))
            }
            None => home,
        };
        let home_cell = fine.cell_of(home);
        let surge = truth
            .outbreaks
            .iter()
            .filter(|o| home_cell == Some(o.cell) || work.is_some_and(|w| sites[w].kind == SiteKind::Planted(o.id)))
            .map(|o| o.id)
            .collect();
        agents.push(Agent {
            home,
            work,
            desk,
            surge,
        });
    }
    (sites, agents)
}

#[derive(Clone, Copy)]
enum Place {
    Home,
    Work,
    ToWork,
    ToHome,
}

struct Segment {
    from: i64,
    to: i64,
    place: Place,
    weight: f64,
}

fn day_plan(commuting: bool) -> Vec<Segment> {
    let h = SECONDS_PER_HOUR;
    let seg = |a: i64, b: i64, place: Place, w: f64| Segment {
        from: a * h,
        to: b * h,
        place,
        weight: (b - a) as f64 * w,
    };
    if commuting {
        vec![
            seg(0, 7, Place::Home, HOME_WEIGHT),
            seg(7, 9, Place::ToWork, TRANSIT_WEIGHT),
            seg(9, 18, Place::Work, WORK_WEIGHT),
            seg(18, 20, Place::ToHome, TRANSIT_WEIGHT),
            seg(20, 24, Place::Home, HOME_WEIGHT),
        ]
    } else {
        vec![seg(0, 24, Place::Home, HOME_WEIGHT)]
    }
}

fn quantize(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

pub(super) fn track(cfg: &SynthConfig, proj: &Projection, timeline: &Timeline, agent: &Agent, user: usize) -> Vec<Fix> {
    let mut rng = stream(cfg.seed, user as u64, 1);
    let per_day = Poisson::new(cfg.sampling_rate).expect("positive sampling rate");
    let mut fixes = Vec::with_capacity((cfg.sampling_rate * cfg.days as f64 * 1.1) as usize);
    for day in 0..timeline.days() {
        let plan = day_plan(agent.work.is_some() && timeline.is_weekday(day));
        let total: f64 = plan.iter().map(|s| s.weight).sum();
        let n = per_day.sample(&mut rng) as usize;
        let mut secs: Vec<(i64, usize)> = (0..n)
            .map(|_| {
                let mut u = rng.random::<f64>() * total;
                let mut k = 0;
                while k + 1 < plan.len() && u >= plan[k].weight {
                    u -= plan[k].weight;
                    k += 1;
                }
                let s = &plan[k];
                let t = s.from + ((u / s.weight) * (s.to - s.from) as f64) as i64;
                (t.min(s.to - 1), k)
            })
            .collect();
        secs.sort_unstable();
        secs.dedup_by_key(|s| s.0);
        let base = timeline.day_start(day);
        for (t, k) in secs {
            let s = &plan[k];
            let frac = (t - s.from) as f64 / (s.to - s.from) as f64;
            let lerp =
                |a: PlanarPoint, b: PlanarPoint| PlanarPoint::new(a.x + (b.x - a.x) * frac, a.y + (b.y - a.y) * frac);
            let p = match s.place {
                Place::Home => jitter(&mut rng, agent.home, HOME_NOISE_M),
                Place::Work => jitter(&mut rng, agent.desk, DESK_NOISE_M),
                Place::ToWork => jitter(&mut rng, lerp(agent.home, agent.desk), TRANSIT_NOISE_M),
                Place::ToHome => jitter(&mut rng, lerp(agent.desk, agent.home), TRANSIT_NOISE_M),
            };
            let (lat, lon) = proj.unproject(clamp(cfg, p));
            fixes.push(Fix {
                timestamp: base + t,
                lat: quantize(lat),
                lon: quantize(lon),
            });
        }
    }
    fixes
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("finite rate").sample(rng) as usize
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [String]) -> &'a str {
    &items[rng.random_range(0..items.len())]
}

fn symptom_text(rng: &mut ChaCha8Rng, patterns: &QueryPatternSet) -> String {
    let text = if rng.random_bool(0.7) {
        let core = pick(rng, patterns.symptom());
        format!(
            "{}{}{}",
            PREFIXES[rng.random_range(0..4)],
            core,
            SUFFIXES[rng.random_range(0..4)]
        )
    } else {
        let inst = pick(rng, patterns.institution());
        let loc = pick(rng, patterns.location());
        if rng.random_bool(0.5) {
            format!("{inst} {loc}")
        } else {
            format!("{loc}  {inst} hours")
        }
    };
    if rng.random_bool(0.2) {
        text.to_uppercase()
    } else {
        text
    }
}

/// `(timestamp, text)` pairs sorted by time. Sessions start at most once per
/// local hour and finish within 25 minutes, so no two sessions merge.
pub(super) fn queries(
    cfg: &SynthConfig,
    timeline: &Timeline,
    agent: &Agent,
    patterns: &QueryPatternSet,
    user: usize,
) -> Vec<(i64, String)> {
    let mut rng = stream(cfg.seed, user as u64, 2);
    let mut out = Vec::new();
    let mut hours: Vec<u32> = SESSION_HOURS.collect();
    for day in 0..timeline.days() {
        let date = timeline.date_of_day(day);
        let boost = agent
            .surge
            .iter()
            .map(|&o| &cfg.outbreaks[o])
            .filter(|o| date >= o.search_start && (date - o.search_start).num_days() < cfg.surge_days as i64)
            .map(|o| o.multiplier)
            .fold(1.0, f64::max);
        let total_max = hours.len();
        let n_sym = poisson(&mut rng, cfg.baseline_symptom_rate * boost).min(total_max);
        let n_fill = poisson(&mut rng, cfg.filler_rate).min(total_max - n_sym);
        for k in 0..n_sym + n_fill {
            let j = rng.random_range(k..hours.len());
            hours.swap(k, j);
        }
        let mut day_sessions: Vec<(u32, bool)> = (0..n_sym + n_fill).map(|k| (hours[k], k < n_sym)).collect();
        day_sessions.sort_unstable();
        for (hour, symptom) in day_sessions {
            let mut ts = timeline.day_start(day) + hour as i64 * SECONDS_PER_HOUR + rng.random_range(0..900);
            for q in 0..rng.random_range(1..=3) {
                if q > 0 {
                    ts += rng.random_range(60..=240);
                }
                let text = if symptom {
                    symptom_text(&mut rng, patterns)
                } else {
                    FILLER[rng.random_range(0..FILLER.len())].to_string()
                };
                out.push((ts, text));
            }
        }
    }
    out
}

/// Expected extra cases `d` days after a case surge starts: one week of
/// linear rise, one week at the peak, two weeks of linear decay.
pub fn case_bump(magnitude: f64, d: i64) -> f64 {
    match d {
        0..=6 => magnitude * (d + 1) as f64 / 7.0,
        7..=13 => magnitude,
        14..=27 => magnitude * (28 - d) as f64 / 14.0,
        _ => 0.0,
    }
}

pub(super) fn cases(cfg: &SynthConfig, truth: &GroundTruth) -> CaseSeries {
    let mut rng = stream(cfg.seed, WORLD_STREAM, 3);
    let counts = (0..cfg.days)
        .map(|i| {
            let date = cfg.start_date + chrono::Days::new(i as u64);
            let lambda = cfg.base_cases
                + truth
                    .outbreaks
                    .iter()
                    .zip(&cfg.outbreaks)
                    .map(|(o, spec)| case_bump(spec.case_magnitude, (date - o.case_start).num_days()))
                    .sum::<f64>();
            poisson(&mut rng, lambda) as u64
        })
        .collect();
    CaseSeries {
        region_id: "all".into(),
        start: cfg.start_date,
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::query_risk::{match_query, segment_sessions};

    fn cfg(users: usize) -> SynthConfig {
        SynthConfig {
            users,
            days: 28,
            outbreaks: vec![OutbreakSpec {
                col: Some(48),
                row: Some(48),
                search_start: NaiveDate::from_ymd_opt(2020, 6, 8).unwrap(),
                ..Default::default()
            }],
            ..Default::default()
        }
    }

    #[test]
    fn rows_match_sampling_rate() {
        let world = generate_world(&SynthConfig {
            users: 1000,
            days: 14,
            ..Default::default()
        })
        .unwrap();
        let rows: usize = (0..1000).map(|u| world.track(u).len()).sum();
        let expected = 1000.0 * 14.0 * 50.0;
        assert!((rows as f64 - expected).abs() < 0.1 * expected, "{rows}");
    }

    #[test]
    fn planted_site_filled_first() {
        let world = generate_world(&cfg(500)).unwrap();
        let planted = &world.sites()[0];
        assert_eq!(planted.kind, SiteKind::Planted(0));
        assert_eq!(planted.members, PLANTED_SITE_SIZE);
        let surge = world.agents().iter().filter(|a| a.surge.contains(&0)).count();
        assert!(surge >= PLANTED_SITE_SIZE);
        let fine = world.area().fine_grid();
        assert_eq!(fine.cell_of(planted.center), Some(world.truth().outbreaks[0].cell));
    }

    #[test]
    fn sessions_never_merge() {
        let c = SynthConfig {
            baseline_symptom_rate: 3.0,
            filler_rate: 3.0,
            ..cfg(20)
        };
        let world = generate_world(&c).unwrap();
        for u in 0..20 {
            let qs = world.queries(u);
            // Gaps are either inside one session or a full session gap apart.
            for w in qs.windows(2) {
                let gap = w[1].timestamp - w[0].timestamp;
                assert!((60..=240).contains(&gap) || gap >= 1800, "{gap}");
            }
        }
    }

    #[test]
    fn filler_never_matches() {
        let patterns = QueryPatternSet::synthetic();
        for f in FILLER {
            assert!(!match_query(f, &patterns).is_covid(), "{f}");
        }
        let mut rng = stream(1, 1, 7);
        for _ in 0..500 {
            let t = symptom_text(&mut rng, &patterns);
            assert!(match_query(&t, &patterns).is_covid(), "{t}");
        }
    }

    #[test]
    fn surge_rate_is_boosted() {
        let c = cfg(300);
        let world = generate_world(&c).unwrap();
        let patterns = QueryPatternSet::synthetic();
        let o = &c.outbreaks[0];
        let surge_users: Vec<usize> = (0..300).filter(|&u| world.agents()[u].surge.contains(&0)).collect();
        let (mut during, mut days) = (0usize, 0usize);
        for &u in &surge_users {
            let tl = world.timeline();
            let start = tl.day_start(tl.day_of_date(o.search_start).unwrap());
            let sessions = segment_sessions(&world.queries(u), 1800);
            during += sessions
                .iter()
                .filter(|s| s.start >= start && crate::query_risk::classify_session(s, &patterns))
                .count();
            days += 21;
        }
        let rate = during as f64 / days as f64;
        assert!(rate >= o.multiplier / 2.0 * c.baseline_symptom_rate, "{rate}");
    }

    #[test]
    fn case_surge_shape() {
        assert_eq!(case_bump(7.0, -1), 0.0);
        assert_eq!(case_bump(7.0, 0), 1.0);
        assert_eq!(case_bump(7.0, 10), 7.0);
        assert_eq!(case_bump(7.0, 28), 0.0);
        let c = SynthConfig {
            base_cases: 0.0,
            ..cfg(10)
        };
        let world = generate_world(&c).unwrap();
        let cases = world.cases();
        let start = (world.truth().outbreaks[0].case_start - c.start_date).num_days() as usize;
        assert!(cases.counts[..start].iter().all(|&n| n == 0));
        assert!(cases.counts[start..].iter().sum::<u64>() > 0);
    }
}
