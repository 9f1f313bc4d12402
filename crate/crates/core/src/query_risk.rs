//! Session segmentation, query-pattern matching and high-risk user detection.

use std::ops::Range;

use thiserror::Error;

use crate::exec::{self, Execution};
use crate::ingest::{QueryLog, QueryRecord};
use crate::timeline::{Timeline, SECONDS_PER_HOUR};
use crate::{Roster, UserIdx};

const SYNTHETIC_PATTERNS: &str = include_str!("../data/patterns.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("line {line}: phrase outside of a section")]
    NoSection { line: usize },
    #[error("line {line}: unknown section `{name}`")]
    UnknownSection { line: usize, name: String },
    #[error("pattern section `{0}` is empty")]
    EmptySection(&'static str),
}

/// Lowercases and collapses whitespace runs to single spaces.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// The three phrase classes used to flag symptom-related searches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryPatternSet {
    symptom: Vec<String>,
    institution: Vec<String>,
    location: Vec<String>,
}

impl QueryPatternSet {
    pub fn new<S: AsRef<str>>(symptom: &[S], institution: &[S], location: &[S]) -> Result<Self, PatternError> {
        let clean = |phrases: &[S], name: &'static str| {
            let mut v: Vec<String> = phrases
                .iter()
                .map(|p| normalize(p.as_ref()))
                .filter(|p| !p.is_empty())
                .collect();
            v.sort();
            v.dedup();
            if v.is_empty() {
                Err(PatternError::EmptySection(name))
            } else {
                Ok(v)
            }
        };
        Ok(QueryPatternSet {
            symptom: clean(symptom, "symptom")?,
            institution: clean(institution, "institution")?,
            location: clean(location, "location")?,
        })
    }

    /// Parses the `patterns.txt` format: `[symptom]`, `[institution]` and
    /// `[location]` sections with one phrase per line. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, PatternError> {
        let mut sections: [Vec<&str>; 3] = Default::default();
        let mut current: Option<usize> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(match name.trim() {
                    "symptom" => 0,
                    "institution" => 1,
                    "location" => 2,
                    other => {
                        return Err(PatternError::UnknownSection {
                            line: i + 1,
                            name: other.to_string(),
                        })
                    }
                });
                continue;
            }
            let Some(idx) = current else {
                return Err(PatternError::NoSection { line: i + 1 });
            };
            sections[idx].push(line);
        }
        Self::new(&sections[0], &sections[1], &sections[2])
    }

    /// The small list shipped with the crate.
    pub fn synthetic() -> Self {
        Self::parse(SYNTHETIC_PATTERNS).expect("shipped pattern file is valid")
    }

    pub fn synthetic_source() -> &'static str {
        SYNTHETIC_PATTERNS
    }

    pub fn symptom(&self) -> &[String] {
        &self.symptom
    }

    pub fn institution(&self) -> &[String] {
        &self.institution
    }

    pub fn location(&self) -> &[String] {
        &self.location
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryMatch {
    Symptom,
    InstitutionPlusLocation,
    None,
}

impl QueryMatch {
    pub fn is_covid(self) -> bool {
        self != QueryMatch::None
    }
}

/// Normalized-substring matching. A symptom phrase alone suffices; institution
/// and location phrases only count when both occur in the same query.
pub fn match_query(text: &str, patterns: &QueryPatternSet) -> QueryMatch {
    let text = normalize(text);
    if patterns.symptom.iter().any(|p| text.contains(p.as_str())) {
        return QueryMatch::Symptom;
    }
    if patterns.institution.iter().any(|p| text.contains(p.as_str()))
        && patterns.location.iter().any(|p| text.contains(p.as_str()))
    {
        return QueryMatch::InstitutionPlusLocation;
    }
    QueryMatch::None
}

/// A gap-delimited burst of one user's queries.
#[derive(Clone, Debug, PartialEq)]
pub struct WebSearchSession {
    pub user_id: String,
    pub start: i64,
    pub end: i64,
    pub queries: Vec<QueryRecord>,
    pub covid_related: bool,
}

/// Splits one user's time-sorted queries into sessions; a gap of at least
/// `session_gap` seconds starts a new session.
pub fn segment_sessions(records: &[QueryRecord], session_gap: i64) -> Vec<WebSearchSession> {
    let mut sessions: Vec<WebSearchSession> = Vec::new();
    for r in records {
        match sessions.last_mut() {
            Some(s) if r.timestamp - s.end < session_gap => {
                s.end = r.timestamp;
                s.queries.push(r.clone());
            }
            _ => sessions.push(WebSearchSession {
                user_id: r.user_id.clone(),
                start: r.timestamp,
                end: r.timestamp,
                queries: vec![r.clone()],
                covid_related: false,
            }),
        }
    }
    sessions
}

/// True iff any query of the session matches either rule.
pub fn classify_session(session: &WebSearchSession, patterns: &QueryPatternSet) -> bool {
    session
        .queries
        .iter()
        .any(|q| match_query(&q.query_text, patterns).is_covid())
}

/// Time-varying set of high-risk users, evaluated on the hourly grid of a
/// [`Timeline`]. Stored per user as sorted, disjoint, non-adjacent hour ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HighRiskSet {
    hours: u32,
    spans: Vec<Vec<Range<u32>>>,
}

impl HighRiskSet {
    pub fn empty(n_users: usize, hours: u32) -> Self {
        HighRiskSet {
            hours,
            spans: vec![Vec::new(); n_users],
        }
    }

    /// Every user is a member at every hour.
    pub fn all(n_users: usize, hours: u32) -> Self {
        HighRiskSet {
            hours,
            spans: vec![
                if hours > 0 {
                    std::iter::once(0..hours).collect()
                } else {
                    Vec::new()
                };
                n_users
            ],
        }
    }

    /// Builds from `(hour, user)` memberships in any order.
    pub fn from_memberships(n_users: usize, hours: u32, mut pairs: Vec<(UserIdx, u32)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        let mut set = Self::empty(n_users, hours);
        for (user, hour) in pairs {
            push_span(&mut set.spans[user.index()], hour..hour + 1);
        }
        set
    }

    /// Builds from per-user hour ranges in any order; overlaps are merged.
    pub fn from_spans(hours: u32, spans: Vec<Vec<Range<u32>>>) -> Self {
        let spans = spans
            .into_iter()
            .map(|mut ranges| {
                ranges.sort_by_key(|r| (r.start, r.end));
                let mut merged = Vec::with_capacity(ranges.len());
                for r in ranges.into_iter().filter(|r| r.start < r.end) {
                    push_span(&mut merged, r.start..r.end.min(hours));
                }
                merged
            })
            .collect();
        HighRiskSet { hours, spans }
    }

    pub fn hours(&self) -> u32 {
        self.hours
    }

    pub fn user_count(&self) -> usize {
        self.spans.len()
    }

    pub fn spans(&self, user: UserIdx) -> &[Range<u32>] {
        &self.spans[user.index()]
    }

    pub fn contains(&self, user: UserIdx, hour: u32) -> bool {
        let Some(spans) = self.spans.get(user.index()) else {
            return false;
        };
        let i = spans.partition_point(|s| s.end <= hour);
        spans.get(i).is_some_and(|s| s.start <= hour)
    }

    pub fn members_at(&self, hour: u32) -> Vec<UserIdx> {
        (0..self.spans.len())
            .map(|u| UserIdx(u as u32))
            .filter(|u| self.contains(*u, hour))
            .collect()
    }

    /// Cardinality per hour.
    pub fn counts(&self) -> Vec<u32> {
        let mut delta = vec![0i64; self.hours as usize + 1];
        for s in self.spans.iter().flatten() {
            delta[s.start as usize] += 1;
            delta[s.end as usize] -= 1;
        }
        let mut running = 0i64;
        delta[..self.hours as usize]
            .iter()
            .map(|d| {
                running += d;
                running as u32
            })
            .collect()
    }

    /// All `(hour, user)` memberships sorted by hour then user.
    pub fn memberships(&self) -> Vec<(u32, UserIdx)> {
        let mut out: Vec<(u32, UserIdx)> = self
            .spans
            .iter()
            .enumerate()
            .flat_map(|(u, spans)| {
                spans
                    .iter()
                    .flat_map(move |s| s.clone().map(move |h| (h, UserIdx(u as u32))))
            })
            .collect();
        out.sort_unstable();
        out
    }
}

fn push_span(spans: &mut Vec<Range<u32>>, span: Range<u32>) {
    if span.is_empty() {
        return;
    }
    match spans.last_mut() {
        Some(last) if span.start <= last.end => last.end = last.end.max(span.end),
        _ => spans.push(span),
    }
}

fn hour_ceil(ts: i64, timeline: &Timeline) -> i64 {
    -(-(ts - timeline.start())).div_euclid(SECONDS_PER_HOUR)
}

/// Hour ranges during which a user with the given sorted covid-session end
/// times counts as high-risk: more than `k` ends in `(t - window, t]`.
pub fn high_risk_spans(ends: &[i64], k: u32, window_secs: i64, timeline: &Timeline) -> Vec<Range<u32>> {
    let hours = timeline.hour_count() as i64;
    let need = k as usize + 1;
    let mut spans = Vec::new();
    if ends.len() < need {
        return spans;
    }
    for j in 0..=ends.len() - need {
        // t in [ends[j + k], ends[j] + window)
        let lo = hour_ceil(ends[j + need - 1], timeline).clamp(0, hours);
        let hi = hour_ceil(ends[j] + window_secs, timeline).clamp(0, hours);
        if lo < hi {
            push_span(&mut spans, lo as u32..hi as u32);
        }
    }
    spans
}

/// Evaluates the high-risk rule for every user. `sessions_by_user` is indexed
/// by [`UserIdx`] and must be classified.
pub fn detect_high_risk_users(
    sessions_by_user: &[Vec<WebSearchSession>],
    k: u32,
    window_secs: i64,
    timeline: &Timeline,
) -> HighRiskSet {
    let spans = sessions_by_user
        .iter()
        .map(|sessions| {
            let mut ends: Vec<i64> = sessions.iter().filter(|s| s.covid_related).map(|s| s.end).collect();
            ends.sort_unstable();
            high_risk_spans(&ends, k, window_secs, timeline)
        })
        .collect();
    HighRiskSet {
        hours: timeline.hour_count(),
        spans,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RiskParams {
    pub session_gap_secs: i64,
    pub k: u32,
    pub window_secs: i64,
    pub force_all: bool,
}

impl RiskParams {
    pub fn from_config(cfg: &crate::StudyConfig) -> Self {
        RiskParams {
            session_gap_secs: cfg.session_gap_secs as i64,
            k: cfg.risk_threshold_k,
            window_secs: cfg.risk_window_secs(),
            force_all: cfg.force_all_high_risk,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RiskAssessment {
    /// Indexed by [`UserIdx`] of the roster used for the assessment.
    pub sessions: Vec<Vec<WebSearchSession>>,
    pub high_risk: HighRiskSet,
}

/// Segments and classifies every user's queries, then evaluates the
/// high-risk rule. Users in the roster without queries get no sessions.
pub fn assess(
    log: &QueryLog,
    roster: &Roster,
    patterns: &QueryPatternSet,
    params: RiskParams,
    timeline: &Timeline,
    exec: Execution,
) -> RiskAssessment {
    let groups: Vec<&[QueryRecord]> = log.by_user().collect();
    let segmented: Vec<(Option<UserIdx>, Vec<WebSearchSession>)> = exec::map_slice(exec, &groups, |records| {
        let user = roster.index_of(&records[0].user_id);
        let mut sessions = segment_sessions(records, params.session_gap_secs);
        for s in &mut sessions {
            s.covid_related = classify_session(s, patterns);
        }
        (user, sessions)
    });
    let mut sessions = vec![Vec::new(); roster.len()];
    for (user, s) in segmented {
        if let Some(u) = user {
            sessions[u.index()] = s;
        }
    }
    let high_risk = if params.force_all {
        HighRiskSet::all(roster.len(), timeline.hour_count())
    } else {
        detect_high_risk_users(&sessions, params.k, params.window_secs, timeline)
    };
    RiskAssessment { sessions, high_risk }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(ts: i64, text: &str) -> QueryRecord {
        QueryRecord {
            user_id: "u1".into(),
            timestamp: ts,
            query_text: text.into(),
        }
    }

    fn pats() -> QueryPatternSet {
        QueryPatternSet::new(&["corona fever"], &["hospital"], &["shibuya"]).unwrap()
    }

    fn timeline(days: u32) -> Timeline {
        let d0 = NaiveDate::from_ymd_opt(2020, 2, 1).unwrap();
        Timeline::new(d0, d0 + chrono::Days::new(days as u64 - 1), 1800, 0)
    }

    #[test]
    fn sessions_basic() {
        let r = [rec(0, "a"), rec(60, "b"), rec(120, "c")];
        let s = segment_sessions(&r, 1800);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].queries.len(), 3);
        assert_eq!((s[0].start, s[0].end), (0, 120));
    }

    #[test]
    fn session_boundary_is_exclusive() {
        let r = [rec(0, "a"), rec(1800, "b")];
        assert_eq!(segment_sessions(&r, 1800).len(), 2);
        let r = [rec(0, "a"), rec(1799, "b")];
        assert_eq!(segment_sessions(&r, 1800).len(), 1);
    }

    #[test]
    fn session_count_matches_gap_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let mut t = 0i64;
            let mut records = Vec::new();
            let mut big_gaps = 0;
            for i in 0..10 {
                if i > 0 {
                    let gap = rng.random_range(0..4000);
                    if gap >= 1800 {
                        big_gaps += 1;
                    }
                    t += gap;
                }
                records.push(rec(t, "q"));
            }
            assert_eq!(segment_sessions(&records, 1800).len(), 1 + big_gaps);
        }
    }

    #[test]
    fn matching_rules() {
        let p = pats();
        assert_eq!(
            match_query("central hospital Shibuya", &p),
            QueryMatch::InstitutionPlusLocation
        );
        assert_eq!(match_query("hospital opening hours", &p), QueryMatch::None);
        assert_eq!(match_query("corona fever", &p), QueryMatch::Symptom);
        assert_eq!(
            match_query("  CORONA   Fever hospital shibuya", &p),
            QueryMatch::Symptom
        );
        assert_eq!(match_query("shibuya ramen", &p), QueryMatch::None);
    }

    fn session(texts: &[&str]) -> WebSearchSession {
        let recs: Vec<_> = texts.iter().enumerate().map(|(i, t)| rec(i as i64 * 30, t)).collect();
        segment_sessions(&recs, 1800).remove(0)
    }

    #[test]
    fn session_classification() {
        let p = pats();
        assert!(classify_session(
            &session(&["weather", "news", "corona fever", "train", "maps"]),
            &p
        ));
        assert!(!classify_session(&session(&["weather", "news"]), &p));
        assert!(!classify_session(
            &session(&["hospital near me", "shibuya station"]),
            &p
        ));
    }

    #[test]
    fn pattern_file_parsing() {
        let p = QueryPatternSet::parse("[symptom]\nCorona  Fever\n\n[institution]\nhospital\n[location]\nShibuya\n")
            .unwrap();
        assert_eq!(p.symptom(), ["corona fever"]);
        assert_eq!(p.location(), ["shibuya"]);
        assert_eq!(
            QueryPatternSet::parse("fever\n"),
            Err(PatternError::NoSection { line: 1 })
        );
        assert_eq!(
            QueryPatternSet::parse("[symptom]\nx\n[institution]\ny\n"),
            Err(PatternError::EmptySection("location"))
        );
        assert!(matches!(
            QueryPatternSet::parse("[drugs]\n"),
            Err(PatternError::UnknownSection { .. })
        ));
        QueryPatternSet::synthetic();
    }

    fn covid_sessions(ends: &[i64]) -> Vec<WebSearchSession> {
        ends.iter()
            .map(|&e| WebSearchSession {
                user_id: "u1".into(),
                start: e,
                end: e,
                queries: vec![rec(e, "corona fever")],
                covid_related: true,
            })
            .collect()
    }

    fn brute_force(ends: &[i64], k: u32, w: i64, tl: &Timeline) -> Vec<bool> {
        (0..tl.hour_count())
            .map(|h| {
                let t = tl.hour_start(h);
                ends.iter().filter(|&&e| e > t - w && e <= t).count() > k as usize
            })
            .collect()
    }

    #[test]
    fn more_than_k_is_strict() {
        let tl = timeline(10);
        let day = 86_400;
        let w = 7 * day;
        let four: Vec<i64> = (0..4).map(|i| tl.start() + i * 3600 * 5).collect();
        let set = detect_high_risk_users(&[covid_sessions(&four)], 3, w, &tl);
        assert!(set.contains(UserIdx(0), 16));
        let three = &four[..3];
        let set = detect_high_risk_users(&[covid_sessions(three)], 3, w, &tl);
        assert!(set.counts().iter().all(|&c| c == 0));
    }

    #[test]
    fn ageing_out_matches_hourly_recount() {
        let tl = timeline(20);
        let w = 7 * 86_400;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(0..12);
            let mut ends: Vec<i64> = (0..n)
                .map(|_| tl.start() + rng.random_range(-86_400..tl.days() as i64 * 86_400))
                .collect();
            ends.sort_unstable();
            for k in 0..4 {
                let set = detect_high_risk_users(&[covid_sessions(&ends)], k, w, &tl);
                let expect = brute_force(&ends, k, w, &tl);
                let got: Vec<bool> = (0..tl.hour_count()).map(|h| set.contains(UserIdx(0), h)).collect();
                assert_eq!(got, expect, "k={k} ends={ends:?}");
            }
        }
    }

    #[test]
    fn memberships_round_trip_and_counts() {
        let tl = timeline(3);
        let set = HighRiskSet::from_memberships(
            3,
            tl.hour_count(),
            vec![(UserIdx(2), 5), (UserIdx(0), 5), (UserIdx(0), 6), (UserIdx(0), 7)],
        );
        assert_eq!(set.spans(UserIdx(0)), std::slice::from_ref(&(5..8)));
        assert_eq!(set.members_at(5), [UserIdx(0), UserIdx(2)]);
        let counts = set.counts();
        assert_eq!(&counts[4..9], &[0, 2, 1, 1, 0]);
        let pairs: Vec<_> = set.memberships().into_iter().map(|(h, u)| (u, h)).collect();
        assert_eq!(HighRiskSet::from_memberships(3, tl.hour_count(), pairs), set);
        let all = HighRiskSet::all(2, 72);
        assert!(all.counts().iter().all(|&c| c == 2));
    }

    proptest! {
        #[test]
        fn monotone_in_k_and_data(raw in proptest::collection::vec(0i64..(15 * 86_400), 0..15), extra in 0i64..(15*86_400), k in 0u32..5) {
            let tl = timeline(15);
            let w = 7 * 86_400;
            let mut ends: Vec<i64> = raw.iter().map(|e| tl.start() + e).collect();
            ends.sort_unstable();
            let base = detect_high_risk_users(&[covid_sessions(&ends)], k, w, &tl);
            let stricter = detect_high_risk_users(&[covid_sessions(&ends)], k + 1, w, &tl);
            let mut more = ends.clone();
            more.push(tl.start() + extra);
            more.sort_unstable();
            let grown = detect_high_risk_users(&[covid_sessions(&more)], k, w, &tl);
            for h in 0..tl.hour_count() {
                let u = UserIdx(0);
                prop_assert!(!stricter.contains(u, h) || base.contains(u, h));
                prop_assert!(!base.contains(u, h) || grown.contains(u, h));
            }
        }

        #[test]
        fn sessions_partition_stream(gaps in proptest::collection::vec(0i64..5000, 0..40)) {
            let mut t = 0;
            let records: Vec<_> = gaps.iter().map(|g| { t += g; rec(t, "x") }).collect();
            let sessions = segment_sessions(&records, 1800);
            let flat: Vec<_> = sessions.iter().flat_map(|s| s.queries.iter().cloned()).collect();
            prop_assert_eq!(flat, records);
            for s in &sessions {
                prop_assert_eq!(s.start, s.queries[0].timestamp);
                prop_assert_eq!(s.end, s.queries.last().unwrap().timestamp);
                for pair in s.queries.windows(2) {
                    prop_assert!(pair[1].timestamp - pair[0].timestamp < 1800);
                }
            }
        }

        #[test]
        fn matching_ignores_case_and_spacing(words in proptest::collection::vec("[a-zA-Z]{1,8}", 1..6), pads in proptest::collection::vec(1usize..4, 6)) {
            let p = QueryPatternSet::synthetic();
            let plain = words.join(" ");
            let noisy: String = words.iter().zip(&pads).map(|(w, n)| format!("{}{}", " ".repeat(*n), w.to_uppercase())).collect();
            prop_assert_eq!(match_query(&plain, &p), match_query(&noisy, &p));
            let sym = format!("{} CORONA   fever", noisy);
            prop_assert_eq!(match_query(&sym, &p), QueryMatch::Symptom);
        }
    }
}
