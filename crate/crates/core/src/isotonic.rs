//! Isotonic regression: weighted L2 pool-adjacent-violators, L1 (median) PAV, and
//! the bounded variant with a pinned final value used by the cumulative estimator.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::ops::Range;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
}

/// Nondecreasing fit together with its level sets.
///
/// `segments` partitions `0..n` into maximal runs of equal fitted values, so adjacent
/// segments have strictly increasing values.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicFit {
    values: Vec<f64>,
    segments: Vec<Range<usize>>,
}

impl IsotonicFit {
    /// Builds a fit from nondecreasing values, grouping equal neighbours into segments.
    pub fn from_values(values: Vec<f64>) -> Self {
        debug_assert!(values.windows(2).all(|w| w[0] <= w[1]), "fit must be nondecreasing");
        let mut segments = Vec::new();
        let mut start = 0;
        for i in 1..=values.len() {
            if i == values.len() || values[i] != values[start] {
                segments.push(start..i);
                start = i;
            }
        }
        Self { values, segments }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Clamps every value into `[lower, upper]`; monotonicity is preserved.
    pub fn clamped(self, lower: f64, upper: f64) -> Self {
        let values = self.values.into_iter().map(|v| v.clamp(lower, upper)).collect();
        Self::from_values(values)
    }
}

/// For each index, the size of the segment containing it.
pub fn partition_sizes(fit: &IsotonicFit) -> Vec<usize> {
    let mut out = Vec::with_capacity(fit.len());
    for seg in fit.segments() {
        out.extend(std::iter::repeat_n(seg.len(), seg.len()));
    }
    out
}

#[derive(Clone, Copy)]
struct MeanBlock {
    sum_wy: f64,
    sum_w: f64,
    len: usize,
}

impl MeanBlock {
    fn mean(&self) -> f64 {
        self.sum_wy / self.sum_w
    }
}

fn pav_l2(n: usize, y: impl Fn(usize) -> f64, w: impl Fn(usize) -> f64) -> IsotonicFit {
    let mut stack: Vec<MeanBlock> = Vec::new();
    for i in 0..n {
        let wi = w(i);
        stack.push(MeanBlock { sum_wy: wi * y(i), sum_w: wi, len: 1 });
        while stack.len() >= 2 {
            let last = stack[stack.len() - 1];
            let prev = stack[stack.len() - 2];
            if prev.mean() < last.mean() {
                break;
            }
            stack.pop();
            let top = stack.last_mut().unwrap();
            top.sum_wy += last.sum_wy;
            top.sum_w += last.sum_w;
            top.len += last.len;
        }
    }
    let mut values = Vec::with_capacity(n);
    for b in &stack {
        values.extend(std::iter::repeat_n(b.mean(), b.len));
    }
    IsotonicFit::from_values(values)
}

/// Weighted least-squares isotonic fit (pool-adjacent-violators, linear time).
///
/// Panics if the lengths differ or a weight is not positive.
pub fn isotonic_l2(y: &[f64], w: &[f64]) -> IsotonicFit {
    assert_eq!(y.len(), w.len(), "values and weights must have equal length");
    assert!(w.iter().all(|&x| x > 0.0), "weights must be positive");
    pav_l2(y.len(), |i| y[i], |i| w[i])
}

/// Unit-weight least-squares isotonic fit.
pub fn isotonic_l2_uniform(y: &[f64]) -> IsotonicFit {
    pav_l2(y.len(), |i| y[i], |_| 1.0)
}

type Key = OrderedFloat<f64>;

/// Multiset with O(log n) insertion and access to its lower median.
#[derive(Default)]
struct MedianBlock {
    // lower half, holds ceil(len / 2) elements
    low: BinaryHeap<Key>,
    high: BinaryHeap<Reverse<Key>>,
}

impl MedianBlock {
    fn singleton(x: f64) -> Self {
        let mut b = Self::default();
        b.low.push(OrderedFloat(x));
        b
    }

    fn len(&self) -> usize {
        self.low.len() + self.high.len()
    }

    fn median(&self) -> f64 {
        self.low.peek().expect("non-empty block").0
    }

    fn upper_median(&self) -> f64 {
        if self.low.len() > self.high.len() {
            self.median()
        } else {
            self.high.peek().expect("even block has an upper half").0 .0
        }
    }

    fn insert(&mut self, x: Key) {
        match self.low.peek() {
            Some(&top) if x > top => self.high.push(Reverse(x)),
            _ => self.low.push(x),
        }
        if self.low.len() > self.high.len() + 1 {
            let t = self.low.pop().unwrap();
            self.high.push(Reverse(t));
        } else if self.low.len() < self.high.len() {
            let Reverse(t) = self.high.pop().unwrap();
            self.low.push(t);
        }
    }

    fn absorb(&mut self, mut other: MedianBlock) {
        if other.len() > self.len() {
            std::mem::swap(self, &mut other);
        }
        for x in other.low.into_vec() {
            self.insert(x);
        }
        for Reverse(x) in other.high.into_vec() {
            self.insert(x);
        }
    }
}

/// Least-absolute-deviation isotonic fit.
///
/// A block is pooled into its predecessor while the two sets of medians admit a common
/// value (the predecessor's upper median is at least the block's lower median). Each
/// block is fitted at its lower median, so integer inputs give integer fits.
/// O(n log^2 n).
pub fn isotonic_l1(y: &[f64]) -> IsotonicFit {
    let mut stack: Vec<MedianBlock> = Vec::new();
    for &x in y {
        stack.push(MedianBlock::singleton(x));
        while stack.len() >= 2 && stack[stack.len() - 2].upper_median() >= stack[stack.len() - 1].median() {
            let last = stack.pop().unwrap();
            stack.last_mut().unwrap().absorb(last);
        }
    }
    let mut values = Vec::with_capacity(y.len());
    for b in &stack {
        values.extend(std::iter::repeat_n(b.median(), b.len()));
    }
    IsotonicFit::from_values(values)
}

pub fn isotonic(y: &[f64], norm: Norm) -> IsotonicFit {
    match norm {
        Norm::L1 => isotonic_l1(y),
        Norm::L2 => isotonic_l2_uniform(y),
    }
}

/// Isotonic fit with every value at least `lower` and the final value fixed at
/// `last_value`.
///
/// The free prefix is fitted without constraints and clamped into
/// `[lower, last_value]`; clamping an isotonic fit solves the box-constrained problem.
pub fn isotonic_constrained(y: &[f64], norm: Norm, lower: f64, last_value: f64) -> Result<IsotonicFit> {
    if last_value < lower || last_value.is_nan() || lower.is_nan() {
        return Err(Error::InfeasibleBounds { lower, last: last_value });
    }
    let Some((_, head)) = y.split_last() else {
        return Ok(IsotonicFit::from_values(Vec::new()));
    };
    let mut values = isotonic(head, norm).clamped(lower, last_value).into_values();
    values.push(last_value);
    Ok(IsotonicFit::from_values(values))
}

pub fn l2_objective(y: &[f64], w: &[f64], x: &[f64]) -> f64 {
    y.iter().zip(w).zip(x).map(|((a, wi), b)| wi * (a - b) * (a - b)).sum()
}

pub fn l1_objective(y: &[f64], x: &[f64]) -> f64 {
    y.iter().zip(x).map(|(a, b)| (a - b).abs()).sum()
}
