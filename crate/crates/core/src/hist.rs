//! Count-of-counts histogram representations and the earthmover's distance.
//!
//! A node's group-size distribution has three interchangeable forms:
//!
//! * [`CountHistogram`]: `counts[i]` is the number of groups with exactly `i` members.
//! * [`CumulativeHistogram`]: running sums of the counts; the last entry is the group total.
//! * [`UnattributedHistogram`]: the sorted list of group sizes, one entry per group.
//!
//! Size 0 is a valid group size and is always index 0.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Public upper bound `K` on group size. Histograms truncated to it have `K + 1` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct SizeBound(u64);

impl SizeBound {
    pub fn new(k: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidSizeBound);
        }
        Ok(Self(k))
    }

    pub fn get(self) -> u64 {
        self.0
    }

    /// Number of cells in a histogram truncated to this bound.
    pub fn cells(self) -> usize {
        self.0 as usize + 1
    }
}

impl TryFrom<u64> for SizeBound {
    type Error = Error;

    fn try_from(k: u64) -> Result<Self> {
        Self::new(k)
    }
}

impl From<SizeBound> for u64 {
    fn from(k: SizeBound) -> u64 {
        k.0
    }
}

impl fmt::Display for SizeBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountHistogram {
    counts: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct CumulativeHistogram {
    csums: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct UnattributedHistogram {
    sizes: Vec<u64>,
}

fn first_decrease(v: &[u64]) -> Option<usize> {
    v.windows(2).position(|w| w[0] > w[1]).map(|i| i + 1)
}

impl CountHistogram {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn zeros(len: usize) -> Self {
        Self { counts: vec![0; len] }
    }

    /// Builds a histogram from an arbitrary (unsorted) list of group sizes.
    pub fn from_sizes<I: IntoIterator<Item = u64>>(sizes: I) -> Self {
        let mut counts = Vec::new();
        for s in sizes {
            let s = s as usize;
            if s >= counts.len() {
                counts.resize(s + 1, 0);
            }
            counts[s] += 1;
        }
        Self { counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn into_counts(self) -> Vec<u64> {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn get(&self, size: usize) -> u64 {
        self.counts.get(size).copied().unwrap_or(0)
    }

    /// Number of groups.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Number of entities across all groups.
    pub fn people(&self) -> u64 {
        self.counts.iter().enumerate().map(|(s, &c)| s as u64 * c).sum()
    }

    /// Number of sizes with at least one group.
    pub fn distinct_sizes(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn max_size(&self) -> Option<u64> {
        self.counts.iter().rposition(|&c| c > 0).map(|s| s as u64)
    }

    /// Same histogram with trailing empty sizes removed.
    pub fn trimmed(&self) -> CountHistogram {
        let end = self.counts.iter().rposition(|&c| c > 0).map_or(0, |i| i + 1);
        CountHistogram::new(self.counts[..end].to_vec())
    }

    /// Element-wise sum, extending `self` if `other` is longer.
    pub fn add_assign(&mut self, other: &CountHistogram) {
        if other.len() > self.len() {
            self.counts.resize(other.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn to_cumulative(&self) -> CumulativeHistogram {
        let csums = self
            .counts
            .iter()
            .scan(0u64, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect();
        CumulativeHistogram { csums }
    }

    pub fn from_cumulative(hc: &CumulativeHistogram) -> Self {
        let mut prev = 0;
        let counts = hc
            .csums
            .iter()
            .map(|&c| {
                let d = c - prev;
                prev = c;
                d
            })
            .collect();
        Self { counts }
    }

    pub fn to_unattributed(&self) -> UnattributedHistogram {
        let mut sizes = Vec::with_capacity(self.total() as usize);
        for (s, &c) in self.counts.iter().enumerate() {
            sizes.extend(std::iter::repeat_n(s as u64, c as usize));
        }
        UnattributedHistogram { sizes }
    }

    /// Counts group sizes of `hg`, with sizes above `k` counted at `k`. Output has `k + 1` cells.
    pub fn from_unattributed(hg: &UnattributedHistogram, k: SizeBound) -> Self {
        let mut counts = vec![0u64; k.cells()];
        for &s in &hg.sizes {
            counts[s.min(k.get()) as usize] += 1;
        }
        Self { counts }
    }

    /// Pads with zeros or folds every size `>= k` into cell `k`; output has `k + 1` cells.
    pub fn truncate_extend(&self, k: SizeBound) -> Self {
        let cells = k.cells();
        let mut counts = vec![0u64; cells];
        for (s, &c) in self.counts.iter().enumerate() {
            counts[s.min(cells - 1)] += c;
        }
        Self { counts }
    }
}

impl From<Vec<u64>> for CountHistogram {
    fn from(counts: Vec<u64>) -> Self {
        Self::new(counts)
    }
}

impl CumulativeHistogram {
    pub fn new(csums: Vec<u64>) -> Result<Self> {
        if let Some(index) = first_decrease(&csums) {
            return Err(Error::DecreasingInput { index });
        }
        Ok(Self { csums })
    }

    pub fn csums(&self) -> &[u64] {
        &self.csums
    }

    pub fn len(&self) -> usize {
        self.csums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.csums.is_empty()
    }

    /// Final entry (the group total), 0 when empty.
    pub fn total(&self) -> u64 {
        self.csums.last().copied().unwrap_or(0)
    }
}

impl TryFrom<Vec<u64>> for CumulativeHistogram {
    type Error = Error;

    fn try_from(v: Vec<u64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CumulativeHistogram> for Vec<u64> {
    fn from(h: CumulativeHistogram) -> Vec<u64> {
        h.csums
    }
}

impl UnattributedHistogram {
    pub fn new(sizes: Vec<u64>) -> Result<Self> {
        if let Some(index) = first_decrease(&sizes) {
            return Err(Error::DecreasingInput { index });
        }
        Ok(Self { sizes })
    }

    /// Sorts arbitrary group sizes into an unattributed histogram.
    pub fn from_unsorted(mut sizes: Vec<u64>) -> Self {
        sizes.sort_unstable();
        Self { sizes }
    }

    pub(crate) fn from_sorted_unchecked(sizes: Vec<u64>) -> Self {
        debug_assert!(first_decrease(&sizes).is_none());
        Self { sizes }
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn into_sizes(self) -> Vec<u64> {
        self.sizes
    }

    /// Number of groups.
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn max(&self) -> Option<u64> {
        self.sizes.last().copied()
    }

    /// Count histogram without truncation (length `max + 1`).
    pub fn to_counts(&self) -> CountHistogram {
        CountHistogram::from_sizes(self.sizes.iter().copied())
    }
}

impl TryFrom<Vec<u64>> for UnattributedHistogram {
    type Error = Error;

    fn try_from(v: Vec<u64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<UnattributedHistogram> for Vec<u64> {
    fn from(h: UnattributedHistogram) -> Vec<u64> {
        h.sizes
    }
}

/// Earthmover's distance between two histograms with the same number of groups: the
/// minimum number of entities that must be added or removed to turn one into the other.
///
/// Computed as the L1 distance of the cumulative histograms, the shorter one padded
/// with its final value.
pub fn emd(h1: &CountHistogram, h2: &CountHistogram) -> Result<u64> {
    let (t1, t2) = (h1.total(), h2.total());
    if t1 != t2 {
        return Err(Error::TotalMismatch { left: t1, right: t2 });
    }
    let n = h1.len().max(h2.len());
    let (mut c1, mut c2, mut dist) = (0u64, 0u64, 0u64);
    for i in 0..n {
        c1 += h1.get(i);
        c2 += h2.get(i);
        dist += c1.abs_diff(c2);
    }
    Ok(dist)
}
