//! Batch analytics over joined GPS trajectories and web-search logs.
//!
//! The crate computes three city-scale indexes per 30-minute interval:
//!
//! * **SCI**, the social contact index: contacts between users who are away
//!   from home, per observed user, relative to a pre-period weekday peak.
//! * **HRU**, the hourly count of users whose symptom-related search sessions
//!   over a trailing window exceed a threshold.
//! * **HR-SCI**, the SCI numerator restricted to those high-risk users.
//!
//! The indexes are aggregated on a coarse/fine grid for hotspot ranking and
//! correlated against daily case counts to measure lead time. A synthetic
//! world generator with planted outbreaks provides ground truth.
//!
//! Data-parallel loops go through [`exec`]; build without the default
//! `parallel` feature for a purely sequential library.

pub mod analysis;
pub mod config;
pub mod contact;
pub mod exec;
pub mod geo;
pub mod indexes;
pub mod ingest;
pub mod lagcorr;
pub mod mobility;
pub mod pipeline;
pub mod query_risk;
pub mod synth;
pub mod timeline;
pub mod util;

use std::fmt;

pub use config::StudyConfig;
pub use exec::Execution;
pub use geo::{PlanarPoint, Projection};
pub use timeline::Timeline;

/// Dense index of a user in a [`Roster`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct UserIdx(pub u32);

impl UserIdx {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for UserIdx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Sorted, de-duplicated set of opaque user identifiers. The position of an id
/// is its [`UserIdx`], so indices follow lexicographic id order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Roster {
    ids: Vec<String>,
}

impl Roster {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        ids.sort_unstable();
        ids.dedup();
        Roster { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<UserIdx> {
        self.ids
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .ok()
            .map(|i| UserIdx(i as u32))
    }

    pub fn id(&self, user: UserIdx) -> &str {
        &self.ids[user.index()]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (UserIdx, &str)> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (UserIdx(i as u32), id.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roster_sorts_and_dedups() {
        let roster = Roster::new(["u3", "u1", "u2", "u1"]);
        assert_eq!(roster.ids(), ["u1", "u2", "u3"]);
        assert_eq!(roster.index_of("u2"), Some(UserIdx(1)));
        assert_eq!(roster.index_of("zz"), None);
        assert_eq!(roster.id(UserIdx(2)), "u3");
    }
}
