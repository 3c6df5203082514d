//! One-dimensional geometry: positions, position multisets, closed intervals
//! and per-robot coordinate frames.
//!
//! Robots have no compass and no common origin, so every observation is taken
//! through a [`LocalFrame`], an affine map of the line that may also reflect it.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used by every bound check in the crate.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("coordinate {0} is not finite")]
    NonFinite(f64),
    #[error("operation requires a non-empty multiset")]
    EmptyMultiset,
    #[error("interval bounds out of order: lo={lo} > hi={hi}")]
    InvertedInterval { lo: f64, hi: f64 },
    #[error("frame scale must be finite and non-zero, got {0}")]
    DegenerateScale(f64),
}

/// A finite coordinate on the line.
#[derive(Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Position(f64);

impl Position {
    pub fn new(value: f64) -> Result<Self, GeometryError> {
        if value.is_finite() {
            Ok(Self(value))
        } else {
            Err(GeometryError::NonFinite(value))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.0 - other.0).abs()
    }

    /// Total order on finite values.
    pub fn total_cmp(&self, other: &Position) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl TryFrom<f64> for Position {
    type Error = GeometryError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Position> for f64 {
    fn from(p: Position) -> f64 {
        p.0
    }
}

impl fmt::Debug for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&self.0, f)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// A sorted multiset of positions. Multiplicities are kept, which is what a
/// strong multiplicity detector reports.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Position>", into = "Vec<Position>")]
pub struct PositionMultiset {
    elements: Vec<Position>,
}

impl PositionMultiset {
    pub fn new(mut elements: Vec<Position>) -> Self {
        elements.sort_by(Position::total_cmp);
        Self { elements }
    }

    /// Builds a multiset from raw coordinates, rejecting non-finite values.
    pub fn from_values<I>(values: I) -> Result<Self, GeometryError>
    where
        I: IntoIterator<Item = f64>,
    {
        let elements = values
            .into_iter()
            .map(Position::new)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(elements))
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn as_slice(&self) -> &[Position] {
        &self.elements
    }

    pub fn iter(&self) -> impl Iterator<Item = Position> + '_ {
        self.elements.iter().copied()
    }

    pub fn min(&self) -> Result<Position, GeometryError> {
        self.elements
            .first()
            .copied()
            .ok_or(GeometryError::EmptyMultiset)
    }

    pub fn max(&self) -> Result<Position, GeometryError> {
        self.elements
            .last()
            .copied()
            .ok_or(GeometryError::EmptyMultiset)
    }

    /// `max - min`.
    pub fn diameter(&self) -> Result<f64, GeometryError> {
        Ok(self.max()?.get() - self.min()?.get())
    }

    /// `[min, max]`.
    pub fn range(&self) -> Result<Interval, GeometryError> {
        Ok(Interval {
            lo: self.min()?,
            hi: self.max()?,
        })
    }

    /// Number of occurrences of `p`.
    pub fn multiplicity(&self, p: Position) -> usize {
        let lo = self.elements.partition_point(|x| x.get() < p.get());
        let hi = self.elements.partition_point(|x| x.get() <= p.get());
        hi - lo
    }

    /// Lowest 0-based rank holding the value `p`, if present.
    pub fn lowest_rank_of(&self, p: Position) -> Option<usize> {
        let idx = self.elements.partition_point(|x| x.get() < p.get());
        (idx < self.elements.len() && self.elements[idx].get() == p.get()).then_some(idx)
    }

    /// Applies `f` to every element and re-sorts.
    pub fn map(&self, f: impl Fn(Position) -> Position) -> Self {
        Self::new(self.elements.iter().map(|&p| f(p)).collect())
    }

    pub fn into_vec(self) -> Vec<Position> {
        self.elements
    }
}

impl From<Vec<Position>> for PositionMultiset {
    fn from(v: Vec<Position>) -> Self {
        Self::new(v)
    }
}

impl From<PositionMultiset> for Vec<Position> {
    fn from(s: PositionMultiset) -> Self {
        s.elements
    }
}

impl FromIterator<Position> for PositionMultiset {
    fn from_iter<T: IntoIterator<Item = Position>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// `diameter(s)` as a free function.
pub fn diameter(s: &PositionMultiset) -> Result<f64, GeometryError> {
    s.diameter()
}

/// `range(s)` as a free function.
pub fn range_of(s: &PositionMultiset) -> Result<Interval, GeometryError> {
    s.range()
}

/// Closed interval `[lo, hi]` with `lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    lo: Position,
    hi: Position,
}

impl Interval {
    pub fn new(lo: Position, hi: Position) -> Result<Self, GeometryError> {
        if lo.get() > hi.get() {
            return Err(GeometryError::InvertedInterval {
                lo: lo.get(),
                hi: hi.get(),
            });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> Position {
        self.lo
    }

    pub fn hi(&self) -> Position {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi.get() - self.lo.get()
    }

    pub fn midpoint(&self) -> Position {
        // The midpoint of two finite values is finite.
        Position(f64::midpoint(self.lo.get(), self.hi.get()))
    }

    pub fn contains(&self, p: Position, tol: f64) -> bool {
        p.get() >= self.lo.get() - tol && p.get() <= self.hi.get() + tol
    }

    pub fn is_subset_of(&self, other: &Interval, tol: f64) -> bool {
        self.lo.get() >= other.lo.get() - tol && self.hi.get() <= other.hi.get() + tol
    }
}

/// A robot's private coordinate system: `local = scale * (global - origin)`.
///
/// A negative scale flips the orientation of the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFrame")]
pub struct LocalFrame {
    origin: f64,
    scale: f64,
}

#[derive(Deserialize)]
struct RawFrame {
    origin: f64,
    scale: f64,
}

impl TryFrom<RawFrame> for LocalFrame {
    type Error = GeometryError;

    fn try_from(raw: RawFrame) -> Result<Self, Self::Error> {
        Self::new(raw.origin, raw.scale)
    }
}

impl LocalFrame {
    pub fn new(origin: f64, scale: f64) -> Result<Self, GeometryError> {
        if !origin.is_finite() {
            return Err(GeometryError::NonFinite(origin));
        }
        if !scale.is_finite() || scale == 0.0 {
            return Err(GeometryError::DegenerateScale(scale));
        }
        Ok(Self { origin, scale })
    }

    pub const fn identity() -> Self {
        Self {
            origin: 0.0,
            scale: 1.0,
        }
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_identity(&self) -> bool {
        self.origin == 0.0 && self.scale == 1.0
    }

    pub fn to_local(&self, p: Position) -> Position {
        if self.is_identity() {
            return p;
        }
        Position(self.scale * (p.get() - self.origin))
    }

    pub fn to_global(&self, p: Position) -> Position {
        if self.is_identity() {
            return p;
        }
        Position(p.get() / self.scale + self.origin)
    }
}

impl Default for LocalFrame {
    fn default() -> Self {
        Self::identity()
    }
}
