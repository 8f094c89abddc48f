//! Sorted multiset with rank selection.
//!
//! Keys live in `(0, 1)` (fitness values), so elements are spread over
//! equal-width value buckets, each kept sorted, and a Fenwick tree over the
//! bucket counts answers rank queries. The bucket count grows with the
//! population, which keeps buckets at a few elements each for uniform keys;
//! insertion and rank selection then cost one short bucket edit plus a
//! logarithmic walk over a small array.

use std::cmp::Ordering;

const MIN_BUCKETS: usize = 16;
const MAX_BUCKETS: usize = 1 << 18;

pub trait RankKey: Copy {
    fn key_cmp(&self, other: &Self) -> Ordering;
    /// Position of the key in `[0, 1)`; must be monotone in `key_cmp`.
    fn unit_key(&self) -> f64;
}

impl RankKey for f64 {
    #[inline]
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }

    #[inline]
    fn unit_key(&self) -> f64 {
        *self
    }
}

#[derive(Debug, Clone)]
pub struct RankedList<T> {
    buckets: Vec<Vec<T>>,
    /// 1-based Fenwick tree of bucket lengths.
    tree: Vec<u32>,
    len: usize,
}

impl<T: RankKey> Default for RankedList<T> {
    fn default() -> Self {
        Self::with_buckets(MIN_BUCKETS)
    }
}

impl<T: RankKey> RankedList<T> {
    pub fn new() -> Self {
        Self::default()
    }

    fn with_buckets(n: usize) -> Self {
        Self { buckets: vec![Vec::new(); n], tree: vec![0; n + 1], len: 0 }
    }

    /// Builds from an iterator of elements in any order.
    pub fn from_unsorted<I: IntoIterator<Item = T>>(items: I) -> Self {
        let mut l = Self::new();
        for x in items {
            l.insert(x);
        }
        l
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn bucket_of(&self, item: &T) -> usize {
        let b = self.buckets.len();
        ((item.unit_key() * b as f64) as usize).min(b - 1)
    }

    #[inline]
    fn tree_add(&mut self, bucket: usize, delta: i32) {
        let mut i = bucket + 1;
        while i < self.tree.len() {
            self.tree[i] = self.tree[i].wrapping_add_signed(delta);
            i += i & i.wrapping_neg();
        }
    }

    /// Bucket and offset of the element with 0-based ascending `rank`.
    #[inline]
    fn locate(&self, rank: usize) -> (usize, usize) {
        let n = self.buckets.len();
        let mut pos = 0;
        let mut rem = rank as u32;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        (pos, rem as usize)
    }

    fn grow(&mut self) {
        let target = self.len.next_power_of_two().min(MAX_BUCKETS);
        let old = std::mem::replace(self, Self::with_buckets(target));
        for x in old.buckets.into_iter().flatten() {
            let b = self.bucket_of(&x);
            self.buckets[b].push(x);
        }
        for b in 0..self.buckets.len() {
            let l = self.buckets[b].len() as i32;
            if l > 0 {
                self.tree_add(b, l);
            }
        }
        self.len = old.len;
    }

    pub fn insert(&mut self, item: T) {
        let b = self.bucket_of(&item);
        let bucket = &mut self.buckets[b];
        let pos = bucket.partition_point(|e| e.key_cmp(&item) == Ordering::Less);
        bucket.insert(pos, item);
        self.tree_add(b, 1);
        self.len += 1;
        if self.len > 4 * self.buckets.len() && self.buckets.len() < MAX_BUCKETS {
            self.grow();
        }
    }

    /// Element with 0-based ascending `rank`.
    pub fn get(&self, rank: usize) -> Option<&T> {
        if rank >= self.len {
            return None;
        }
        let (b, i) = self.locate(rank);
        Some(&self.buckets[b][i])
    }

    /// Removes and returns the element with 0-based ascending `rank`.
    pub fn remove_rank(&mut self, rank: usize) -> Option<T> {
        if rank >= self.len {
            return None;
        }
        let (b, i) = self.locate(rank);
        let item = self.buckets[b].remove(i);
        self.tree_add(b, -1);
        self.len -= 1;
        Some(item)
    }

    pub fn first(&self) -> Option<&T> {
        self.get(0)
    }

    pub fn last(&self) -> Option<&T> {
        self.len.checked_sub(1).and_then(|r| self.get(r))
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        self.buckets.iter().flatten()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_operations() {
        let mut l = RankedList::new();
        for x in [0.5, 0.1, 0.9, 0.3] {
            l.insert(x);
        }
        assert_eq!(l.to_vec(), vec![0.1, 0.3, 0.5, 0.9]);
        assert_eq!(l.get(2), Some(&0.5));
        assert_eq!(l.remove_rank(1), Some(0.3));
        assert_eq!(l.first(), Some(&0.1));
        assert_eq!(l.last(), Some(&0.9));
        assert_eq!(l.remove_rank(5), None);
        assert_eq!(l.len(), 3);
    }

    #[test]
    fn edge_keys_and_growth() {
        let mut l = RankedList::new();
        for i in 0..10_000 {
            l.insert(((i * 7919) % 10_000) as f64 / 10_000.0);
        }
        l.insert(1.0);
        assert_eq!(l.len(), 10_001);
        assert_eq!(l.first(), Some(&0.0));
        assert_eq!(l.last(), Some(&1.0));
        assert_eq!(l.get(5_000), Some(&0.5));
        let v = l.to_vec();
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        while l.len() > 1 {
            let r = l.len() / 3;
            l.remove_rank(r);
        }
        assert_eq!(l.first(), l.last());
    }

    proptest! {
        #[test]
        fn matches_sorted_vec(ops in proptest::collection::vec((any::<bool>(), 0.0f64..1.0, any::<u16>()), 1..3000)) {
            let mut l = RankedList::new();
            let mut v: Vec<f64> = Vec::new();
            for (ins, x, r) in ops {
                if ins || v.is_empty() {
                    l.insert(x);
                    let p = v.partition_point(|e| *e < x);
                    v.insert(p, x);
                } else {
                    let rank = r as usize % v.len();
                    prop_assert_eq!(l.remove_rank(rank), Some(v.remove(rank)));
                }
                prop_assert_eq!(l.len(), v.len());
            }
            prop_assert_eq!(l.to_vec(), v);
        }
    }
}
