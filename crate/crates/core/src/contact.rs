//! Per-interval contact counts: for every user staying out, the number of
//! other out users within the contact radius.

use std::io::{self, Write};

use crate::exec::{self, Execution};
use crate::geo::PlanarPoint;
use crate::{Roster, UserIdx};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutPosition {
    pub user: UserIdx,
    pub point: PlanarPoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactEntry {
    pub user: UserIdx,
    pub point: PlanarPoint,
    pub count: u32,
}

/// Counts for one interval, sorted by user.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContactCounts {
    pub interval: u32,
    pub entries: Vec<ContactEntry>,
}

impl ContactCounts {
    pub fn get(&self, user: UserIdx) -> Option<u32> {
        self.entries
            .binary_search_by_key(&user, |e| e.user)
            .ok()
            .map(|i| self.entries[i].count)
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.count as u64).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `user_id,count` rows.
    pub fn write_debug_csv<W: Write>(&self, roster: &Roster, mut w: W) -> io::Result<()> {
        writeln!(w, "user_id,count")?;
        for e in &self.entries {
            writeln!(w, "{},{}", roster.id(e.user), e.count)?;
        }
        Ok(())
    }
}

fn finish(interval: u32, positions: &[OutPosition], counts: Vec<u32>) -> ContactCounts {
    let mut entries: Vec<ContactEntry> = positions
        .iter()
        .zip(counts)
        .map(|(p, count)| ContactEntry {
            user: p.user,
            point: p.point,
            count,
        })
        .collect();
    entries.sort_by_key(|e| e.user);
    ContactCounts { interval, entries }
}

/// O(n²) reference, using the same inclusive planar test as the fast path.
pub fn count_contacts_bruteforce(interval: u32, positions: &[OutPosition], radius: f64) -> ContactCounts {
    let mut counts = vec![0u32; positions.len()];
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            if positions[i].point.within(positions[j].point, radius) {
                counts[i] += 1;
                counts[j] += 1;
            }
        }
    }
    finish(interval, positions, counts)
}

type Bucket = (i64, i64);

/// Bucketed fixed-radius neighbor count. Buckets are slightly larger than the
/// radius so the 3×3 neighborhood covers every candidate despite rounding.
pub fn count_contacts(interval: u32, positions: &[OutPosition], radius: f64, exec: Execution) -> ContactCounts {
    if positions.is_empty() {
        return ContactCounts {
            interval,
            entries: Vec::new(),
        };
    }
    let edge = radius * (1.0 + 1e-9);
    let bucket_of = |p: PlanarPoint| -> Bucket { ((p.x / edge).floor() as i64, (p.y / edge).floor() as i64) };

    let mut order: Vec<(Bucket, u32)> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| (bucket_of(p.point), i as u32))
        .collect();
    order.sort_unstable();
    let keys: Vec<Bucket> = order.iter().map(|o| o.0).collect();
    let pts: Vec<PlanarPoint> = order.iter().map(|o| positions[o.1 as usize].point).collect();

    // Start offset of each distinct bucket in the sorted order.
    let mut starts: Vec<usize> = Vec::new();
    for (k, key) in keys.iter().enumerate() {
        if k == 0 || keys[k - 1] != *key {
            starts.push(k);
        }
    }
    starts.push(keys.len());

    let per_bucket: Vec<Vec<u32>> = exec::map_range(exec, starts.len() - 1, |b| {
        let (lo, hi) = (starts[b], starts[b + 1]);
        let (bx, by) = keys[lo];
        // Rows by-1..=by+1 of one column are contiguous in sorted order.
        let spans: Vec<&[PlanarPoint]> = (bx - 1..=bx + 1)
            .map(|cx| {
                let a = keys.partition_point(|k| *k < (cx, by - 1));
                let z = keys.partition_point(|k| *k <= (cx, by + 1));
                &pts[a..z]
            })
            .collect();
        (lo..hi)
            .map(|k| {
                let p = pts[k];
                let near: u32 = spans
                    .iter()
                    .map(|s| s.iter().filter(|q| p.within(**q, radius)).count() as u32)
                    .sum();
                near - 1
            })
            .collect()
    });

    let mut counts = vec![0u32; positions.len()];
    for (k, c) in per_bucket.into_iter().flatten().enumerate() {
        counts[order[k].1 as usize] = c;
    }
    finish(interval, positions, counts)
}

/// Counts for many intervals. Each element of `by_interval` pairs an interval
/// with its out positions; output follows input order.
pub fn count_all(by_interval: &[(u32, Vec<OutPosition>)], radius: f64, exec: Execution) -> Vec<ContactCounts> {
    exec::map_slice(exec, by_interval, |(interval, positions)| {
        count_contacts(*interval, positions, radius, exec)
    })
}
