//! 1-based inclusive row intervals.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A 1-based, inclusive interval of tensor rows.
///
/// An interval with `end == start - 1` is empty; it still records where the
/// band would start, which is what the split arithmetic produces for a server
/// with a zero share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowRange {
    pub start: usize,
    pub end: usize,
}

impl RowRange {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start >= 1, "rows are 1-based");
        debug_assert!(end + 1 >= start, "malformed row range [{start}, {end}]");
        Self { start, end }
    }

    /// An empty band positioned just before `start`.
    pub fn empty_at(start: usize) -> Self {
        Self { start, end: start - 1 }
    }

    pub fn single(row: usize) -> Self {
        Self::new(row, row)
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn len(&self) -> usize {
        (self.end + 1).saturating_sub(self.start)
    }

    pub fn contains(&self, row: usize) -> bool {
        row >= self.start && row <= self.end
    }

    pub fn contains_range(&self, other: &RowRange) -> bool {
        other.is_empty() || (self.start <= other.start && other.end <= self.end)
    }

    pub fn intersect(&self, other: &RowRange) -> Option<RowRange> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then(|| RowRange::new(start, end))
    }

    /// Smallest interval containing both; empty operands are ignored.
    pub fn hull(&self, other: &RowRange) -> RowRange {
        match (self.is_empty(), other.is_empty()) {
            (true, _) => *other,
            (_, true) => *self,
            _ => RowRange::new(self.start.min(other.start), self.end.max(other.end)),
        }
    }

    /// Rows of `self` not in `other`, as at most two contiguous pieces.
    pub fn minus(&self, other: &RowRange) -> Vec<RowRange> {
        if self.is_empty() {
            return Vec::new();
        }
        if other.is_empty() || other.end < self.start || other.start > self.end {
            return vec![*self];
        }
        let mut pieces = Vec::with_capacity(2);
        if other.start > self.start {
            pieces.push(RowRange::new(self.start, other.start - 1));
        }
        if other.end < self.end {
            pieces.push(RowRange::new(other.end + 1, self.end));
        }
        pieces
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

impl fmt::Display for RowRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            write!(f, "[]")
        } else {
            write!(f, "[{}, {}]", self.start, self.end)
        }
    }
}
