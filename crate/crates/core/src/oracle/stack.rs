//! Exact stack (reuse) distances over a stream of dense address ids.
//!
//! Each address keeps a marker at the time of its latest access in a Fenwick
//! tree over time. The distance of an access is the number of markers after
//! the previous access to the same address, which is exactly the number of
//! distinct addresses touched since. When time runs past the tree capacity
//! the live markers are renumbered in order, so the tree stays O(M) for M
//! distinct addresses and every access costs O(log M).

use std::collections::HashSet;

use rayon::prelude::*;

use crate::reuse::ReuseProfile;

const NONE: u32 = u32::MAX;
const MIN_CAPACITY: usize = 1024;

#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<u32>,
}

impl Fenwick {
    fn new(size: usize) -> Self {
        Fenwick {
            tree: vec![0; size + 1],
        }
    }

    fn len(&self) -> usize {
        self.tree.len() - 1
    }

    fn add(&mut self, pos: usize, delta: i32) {
        let mut i = pos + 1;
        while i < self.tree.len() {
            self.tree[i] = self.tree[i].wrapping_add_signed(delta);
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over `0..=pos`.
    fn prefix(&self, pos: usize) -> u64 {
        let mut i = pos + 1;
        let mut sum = 0u64;
        while i > 0 {
            sum += u64::from(self.tree[i]);
            i &= i - 1;
        }
        sum
    }

    /// Linear-time build from a 0/1 occupancy of the first `ones` slots.
    fn with_prefix_ones(size: usize, ones: usize) -> Self {
        let mut tree = vec![0u32; size + 1];
        for slot in tree.iter_mut().skip(1).take(ones) {
            *slot = 1;
        }
        for i in 1..=size {
            let parent = i + (i & i.wrapping_neg());
            if parent <= size {
                tree[parent] += tree[i];
            }
        }
        Fenwick { tree }
    }
}

/// Streaming LRU stack-distance computation.
#[derive(Debug, Clone)]
pub struct StackDistanceTracker {
    last: Vec<u32>,
    owner: Vec<u32>,
    tree: Fenwick,
    now: usize,
    live: u64,
}

impl Default for StackDistanceTracker {
    fn default() -> Self {
        Self::new()
    }
}

impl StackDistanceTracker {
    pub fn new() -> Self {
        StackDistanceTracker {
            last: Vec::new(),
            owner: vec![NONE; MIN_CAPACITY],
            tree: Fenwick::new(MIN_CAPACITY),
            now: 0,
            live: 0,
        }
    }

    /// Distinct addresses seen so far.
    pub fn distinct(&self) -> u64 {
        self.live
    }

    /// Records an access; returns its distance, `None` for a first access.
    pub fn access(&mut self, addr: u32) -> Option<u64> {
        let a = addr as usize;
        if a >= self.last.len() {
            self.last.resize(a + 1, NONE);
        }
        if self.now == self.tree.len() {
            self.compact();
        }
        let prev = self.last[a];
        let distance = if prev == NONE {
            self.live += 1;
            None
        } else {
            let p = prev as usize;
            let d = self.live - self.tree.prefix(p);
            self.tree.add(p, -1);
            self.owner[p] = NONE;
            Some(d)
        };
        self.tree.add(self.now, 1);
        self.owner[self.now] = addr;
        self.last[a] = self.now as u32;
        self.now += 1;
        distance
    }

    fn compact(&mut self) {
        let live = self.live as usize;
        let mut capacity = self.tree.len();
        while live * 2 > capacity {
            capacity *= 2;
        }
        let mut owner = vec![NONE; capacity];
        let mut next = 0;
        for &addr in self.owner.iter().filter(|a| **a != NONE) {
            owner[next] = addr;
            self.last[addr as usize] = next as u32;
            next += 1;
        }
        debug_assert_eq!(next, live);
        self.owner = owner;
        self.tree = Fenwick::with_prefix_ones(capacity, live);
        self.now = live;
    }
}

/// O(N log M) exact histogram of a materialized address stream.
pub fn exact_reuse_profile(addresses: &[u32]) -> ReuseProfile {
    let mut tracker = StackDistanceTracker::new();
    let mut profile = ReuseProfile::default();
    for &a in addresses {
        profile.record(tracker.access(a));
    }
    profile
}

/// Direct backward scan per access, O(N·M). A second, independent oracle
/// for short streams.
pub fn naive_reuse_profile(addresses: &[u32]) -> ReuseProfile {
    let mut profile = ReuseProfile::default();
    let mut seen = HashSet::new();
    for (i, &a) in addresses.iter().enumerate() {
        seen.clear();
        let mut distance = None;
        for &b in addresses[..i].iter().rev() {
            if b == a {
                distance = Some(seen.len() as u64);
                break;
            }
            seen.insert(b);
        }
        profile.record(distance);
    }
    profile
}

/// Chunked computation. Each chunk is processed independently and keeps its
/// first accesses ("local cold list") unresolved. Then, from the last chunk
/// back to the first, the unresolved accesses of all later chunks are fed
/// through the final tracker state of the preceding chunk: an address found
/// there gets its exact distance, the rest continue to the next earlier
/// chunk. Whatever remains after chunk 0 is truly cold. The result equals
/// [`exact_reuse_profile`].
pub fn parallel_reuse_profile(addresses: &[u32], chunks: usize) -> ReuseProfile {
    let chunks = chunks.max(1);
    if addresses.is_empty() {
        return ReuseProfile::default();
    }
    let size = addresses.len().div_ceil(chunks);
    let mut parts: Vec<(StackDistanceTracker, ReuseProfile, Vec<u32>)> = addresses
        .par_chunks(size)
        .map(|chunk| {
            let mut tracker = StackDistanceTracker::new();
            let mut profile = ReuseProfile::default();
            let mut cold = Vec::new();
            for &a in chunk {
                match tracker.access(a) {
                    Some(d) => profile.record(Some(d)),
                    None => cold.push(a),
                }
            }
            (tracker, profile, cold)
        })
        .collect();

    let mut profile = ReuseProfile::default();
    let mut pending: Vec<u32> = Vec::new();
    for (tracker, local, cold) in parts.iter_mut().rev() {
        let mut unresolved = Vec::new();
        for &a in &pending {
            match tracker.access(a) {
                Some(d) => profile.record(Some(d)),
                None => unresolved.push(a),
            }
        }
        for (d, c) in local.buckets() {
            profile.add(d, c);
        }
        let mut next = std::mem::take(cold);
        next.extend(unresolved);
        pending = next;
    }
    profile.add(None, pending.len() as u64);
    profile
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(pairs: &[(Option<u64>, u64)]) -> ReuseProfile {
        let mut p = ReuseProfile::default();
        for (d, c) in pairs {
            p.add(*d, *c);
        }
        p
    }

    #[test]
    fn small_examples() {
        assert_eq!(exact_reuse_profile(&[0, 1, 0]), hist(&[(None, 2), (Some(1), 1)]));
        assert_eq!(exact_reuse_profile(&[0, 1, 0, 1, 0]), hist(&[(None, 2), (Some(1), 3)]));
        assert_eq!(exact_reuse_profile(&[0, 1, 2, 3]), hist(&[(None, 4)]));
        assert_eq!(exact_reuse_profile(&[5, 5, 5]), hist(&[(None, 1), (Some(0), 2)]));
        assert_eq!(naive_reuse_profile(&[0, 1, 0, 1, 0]), hist(&[(None, 2), (Some(1), 3)]));
    }

    #[test]
    fn compaction_preserves_distances() {
        // Far more accesses than the initial capacity over few addresses.
        let stream: Vec<u32> = (0..50_000u32).map(|i| (i * 7 + i / 13) % 37).collect();
        let small: Vec<u32> = stream[..3000].to_vec();
        assert_eq!(exact_reuse_profile(&small), naive_reuse_profile(&small));
        let p = exact_reuse_profile(&stream);
        assert_eq!(p.total(), stream.len() as u64);
        assert_eq!(p.inf_count, 37);
        assert_eq!(parallel_reuse_profile(&stream, 7), p);
    }

    #[test]
    fn growth_past_capacity() {
        let stream: Vec<u32> = (0..5000u32).chain(0..5000u32).collect();
        let p = exact_reuse_profile(&stream);
        assert_eq!(p, hist(&[(None, 5000), (Some(4999), 5000)]));
        assert_eq!(parallel_reuse_profile(&stream, 3), p);
    }

    #[test]
    fn parallel_matches_on_edge_chunkings() {
        let stream = [3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5];
        let p = exact_reuse_profile(&stream);
        for chunks in 1..=stream.len() + 2 {
            assert_eq!(parallel_reuse_profile(&stream, chunks), p, "chunks = {chunks}");
        }
        assert_eq!(parallel_reuse_profile(&[], 4), ReuseProfile::default());
    }
}
