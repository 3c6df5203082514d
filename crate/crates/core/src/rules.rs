//! Compute-phase rules.
//!
//! Two rules ship:
//!
//! * [`PositionDependentTrim`] (`paper-3f1`): trims up to `f` of the largest
//!   positions only if they lie above the observer, and up to `f` of the
//!   smallest only if they lie below it, then heads for the middle of what is
//!   left. Needs `n > 3f`.
//! * [`PositionIndependentTrim`] (`naive-trim`): always drops the `f` largest
//!   and `f` smallest positions. Kept as a comparison baseline. Needs `n > 2f`.
//!
//! Both rules only look at order statistics and midpoints, so they commute
//! with any affine change of frame, reflections included.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Interval, Position, PositionMultiset};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("rule `{rule}` needs n >= {required} robots for f = {f}, got n = {n}")]
    TooFewRobots {
        rule: &'static str,
        n: usize,
        f: usize,
        required: usize,
    },
    #[error("observer position {0} is not part of its own snapshot")]
    ObserverMissing(f64),
}

/// What a robot sees during Look, expressed in its own frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    positions: PositionMultiset,
    self_position: Position,
    f: usize,
}

impl Snapshot {
    pub fn new(
        positions: PositionMultiset,
        self_position: Position,
        f: usize,
    ) -> Result<Self, RuleError> {
        if positions.lowest_rank_of(self_position).is_none() {
            return Err(RuleError::ObserverMissing(self_position.get()));
        }
        Ok(Self {
            positions,
            self_position,
            f,
        })
    }

    pub fn positions(&self) -> &PositionMultiset {
        &self.positions
    }

    pub fn self_position(&self) -> Position {
        self.self_position
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// Lowest rank among entries equal to the observer's coordinate.
    pub fn observer_rank(&self) -> usize {
        self.positions
            .lowest_rank_of(self.self_position)
            .expect("snapshot invariant: observer is in its snapshot")
    }
}

/// A contiguous slice `[min_index ..= max_index]` (0-based ranks) of a sorted
/// snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimmedView {
    pub kept: PositionMultiset,
    pub min_index: usize,
    pub max_index: usize,
}

impl TrimmedView {
    fn slice(sorted: &PositionMultiset, min_index: usize, max_index: usize) -> Self {
        let kept = PositionMultiset::new(sorted.as_slice()[min_index..=max_index].to_vec());
        Self {
            kept,
            min_index,
            max_index,
        }
    }

    pub fn range(&self) -> Interval {
        self.kept.range().expect("trimmed view is never empty")
    }
}

fn require(rule: &'static str, n: usize, f: usize, required: usize) -> Result<(), RuleError> {
    if n < required {
        Err(RuleError::TooFewRobots {
            rule,
            n,
            f,
            required,
        })
    } else {
        Ok(())
    }
}

/// Observer-relative trim.
///
/// With sorted `P_1 <= ... <= P_n` and observer rank `i`, the lower cut is `i`
/// when `P_i < P_{f+1}` and `f+1` otherwise; the upper cut is `i` when
/// `P_i > P_{n-f}` and `n-f` otherwise. Comparisons are strict and the
/// observer takes the lowest rank among equal values.
pub fn trim_position_dependent(snapshot: &Snapshot) -> Result<TrimmedView, RuleError> {
    let n = snapshot.n();
    let f = snapshot.f();
    require(PositionDependentTrim::NAME, n, f, 3 * f + 1)?;
    let sorted = snapshot.positions();
    let p = snapshot.self_position().get();
    let rank = snapshot.observer_rank();
    let lower = f;
    let upper = n - 1 - f;
    let min_index = if p < sorted.as_slice()[lower].get() {
        rank
    } else {
        lower
    };
    let max_index = if p > sorted.as_slice()[upper].get() {
        rank
    } else {
        upper
    };
    Ok(TrimmedView::slice(sorted, min_index, max_index))
}

/// Observer-independent trim: drop the `f` smallest and `f` largest values.
pub fn trim_position_independent(
    sorted: &PositionMultiset,
    f: usize,
) -> Result<TrimmedView, RuleError> {
    let n = sorted.len();
    require(PositionIndependentTrim::NAME, n, f, 2 * f + 1)?;
    Ok(TrimmedView::slice(sorted, f, n - 1 - f))
}

/// Middle point of an interval.
pub fn center(v: &Interval) -> Position {
    v.midpoint()
}

pub fn paper_rule_compute(snapshot: &Snapshot) -> Result<Position, RuleError> {
    Ok(center(&trim_position_dependent(snapshot)?.range()))
}

pub fn naive_trim_compute(snapshot: &Snapshot) -> Result<Position, RuleError> {
    Ok(center(
        &trim_position_independent(snapshot.positions(), snapshot.f())?.range(),
    ))
}

/// The Compute phase of a robot program. Implementations are deterministic
/// functions of the snapshot; the returned destination is in the observer's
/// frame.
pub trait ComputeRule: Send + Sync {
    fn name(&self) -> &'static str;

    /// Smallest network size the rule accepts for a given `f`.
    fn min_robots(&self, f: usize) -> usize;

    fn compute(&self, snapshot: &Snapshot) -> Result<Position, RuleError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PositionDependentTrim;

impl PositionDependentTrim {
    pub const NAME: &'static str = "paper-3f1";
}

impl ComputeRule for PositionDependentTrim {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn min_robots(&self, f: usize) -> usize {
        3 * f + 1
    }

    fn compute(&self, snapshot: &Snapshot) -> Result<Position, RuleError> {
        paper_rule_compute(snapshot)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PositionIndependentTrim;

impl PositionIndependentTrim {
    pub const NAME: &'static str = "naive-trim";
}

impl ComputeRule for PositionIndependentTrim {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn min_robots(&self, f: usize) -> usize {
        2 * f + 1
    }

    fn compute(&self, snapshot: &Snapshot) -> Result<Position, RuleError> {
        naive_trim_compute(snapshot)
    }
}

/// Rule selector used in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum RuleKind {
    #[default]
    #[serde(rename = "paper-3f1")]
    Paper3f1,
    #[serde(rename = "naive-trim")]
    NaiveTrim,
}

impl RuleKind {
    pub fn rule(self) -> &'static dyn ComputeRule {
        match self {
            RuleKind::Paper3f1 => &PositionDependentTrim,
            RuleKind::NaiveTrim => &PositionIndependentTrim,
        }
    }

    pub fn name(self) -> &'static str {
        self.rule().name()
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            PositionDependentTrim::NAME => Ok(RuleKind::Paper3f1),
            PositionIndependentTrim::NAME => Ok(RuleKind::NaiveTrim),
            other => Err(format!("unknown rule `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LocalFrame;
    use proptest::prelude::*;

    fn snap(values: &[f64], observer: f64, f: usize) -> Snapshot {
        Snapshot::new(
            PositionMultiset::from_values(values.iter().copied()).unwrap(),
            Position::new(observer).unwrap(),
            f,
        )
        .unwrap()
    }

    fn values(s: &PositionMultiset) -> Vec<f64> {
        s.iter().map(Position::get).collect()
    }

    #[test]
    fn trim_examples() {
        // 1-based ranks (2, 3) are 0-based (1, 2).
        let t = trim_position_dependent(&snap(&[0.0, 10.0, 20.0, 30.0], 10.0, 1)).unwrap();
        assert_eq!(values(&t.kept), vec![10.0, 20.0]);
        assert_eq!((t.min_index, t.max_index), (1, 2));

        let t = trim_position_dependent(&snap(&[0.0, 10.0, 20.0, 30.0], 0.0, 1)).unwrap();
        assert_eq!(values(&t.kept), vec![0.0, 10.0, 20.0]);
        assert_eq!((t.min_index, t.max_index), (0, 2));

        let t = trim_position_dependent(&snap(&[5.0, 5.0, 5.0, 5.0], 5.0, 1)).unwrap();
        assert_eq!(values(&t.kept), vec![5.0, 5.0]);
        assert_eq!((t.min_index, t.max_index), (1, 2));
    }

    #[test]
    fn trim_with_no_faults_keeps_everything() {
        let p = [3.0, -1.0, 8.0, 8.0, 2.5];
        for &obs in &p {
            let t = trim_position_dependent(&snap(&p, obs, 0)).unwrap();
            assert_eq!(t.kept.len(), p.len());
        }
    }

    #[test]
    fn observer_above_upper_cut_keeps_itself() {
        let t = trim_position_dependent(&snap(&[0.0, 10.0, 20.0, 30.0], 30.0, 1)).unwrap();
        assert_eq!(values(&t.kept), vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn center_examples() {
        let iv = |a: f64, b: f64| {
            Interval::new(Position::new(a).unwrap(), Position::new(b).unwrap()).unwrap()
        };
        assert_eq!(center(&iv(0.0, 10.0)).get(), 5.0);
        assert_eq!(center(&iv(7.0, 7.0)).get(), 7.0);
        assert_eq!(center(&iv(-4.0, 4.0)).get(), 0.0);
    }

    #[test]
    fn paper_rule_examples() {
        let p = [0.0, 10.0, 20.0, 30.0];
        assert_eq!(paper_rule_compute(&snap(&p, 10.0, 1)).unwrap().get(), 15.0);
        assert_eq!(paper_rule_compute(&snap(&p, 0.0, 1)).unwrap().get(), 10.0);
        assert_eq!(
            paper_rule_compute(&snap(&[4.25; 7], 4.25, 2))
                .unwrap()
                .get(),
            4.25
        );
    }

    #[test]
    fn naive_rule_examples() {
        let p = [0.0, 10.0, 20.0, 30.0];
        for &obs in &p {
            assert_eq!(naive_trim_compute(&snap(&p, obs, 1)).unwrap().get(), 15.0);
        }
        let p = [0.0, 0.0, 100.0, 100.0];
        for &obs in &p {
            assert_eq!(naive_trim_compute(&snap(&p, obs, 1)).unwrap().get(), 50.0);
        }
    }

    #[test]
    fn rules_coincide_without_faults() {
        let p = [1.0, 7.0, 2.0, 9.5, 9.5];
        for &obs in &p {
            let s = snap(&p, obs, 0);
            assert_eq!(paper_rule_compute(&s), naive_trim_compute(&s));
        }
    }

    #[test]
    fn too_few_robots() {
        let s = snap(&[0.0, 1.0, 2.0], 0.0, 1);
        assert!(matches!(
            paper_rule_compute(&s),
            Err(RuleError::TooFewRobots { required: 4, .. })
        ));
        assert!(naive_trim_compute(&s).is_ok());
        let s = snap(&[0.0, 1.0], 0.0, 1);
        assert!(naive_trim_compute(&s).is_err());
    }

    #[test]
    fn observer_must_be_in_snapshot() {
        let s = Snapshot::new(
            PositionMultiset::from_values([0.0, 1.0]).unwrap(),
            Position::new(0.5).unwrap(),
            0,
        );
        assert_eq!(s, Err(RuleError::ObserverMissing(0.5)));
    }

    #[test]
    fn rule_names_round_trip() {
        for kind in [RuleKind::Paper3f1, RuleKind::NaiveTrim] {
            assert_eq!(kind.name().parse::<RuleKind>().unwrap(), kind);
        }
        assert!("median".parse::<RuleKind>().is_err());
    }

    /// Reference implementation read straight off the definition: remove the
    /// `f` largest values only where they exceed the observer, and the `f`
    /// smallest only where they are below it.
    fn trim_by_removal(values: &[f64], observer: f64, f: usize) -> (f64, f64) {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let low: Vec<f64> = v[..f].iter().copied().filter(|&x| x >= observer).collect();
        let high: Vec<f64> = v[n - f..]
            .iter()
            .copied()
            .filter(|&x| x <= observer)
            .collect();
        let mid = &v[f..n - f];
        let kept: Vec<f64> = low.iter().chain(mid).chain(high.iter()).copied().collect();
        let lo = kept.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    fn snapshot_strategy() -> impl Strategy<Value = (Vec<f64>, usize, usize)> {
        (0usize..4).prop_flat_map(|f| {
            let n_min = 3 * f + 1;
            (n_min..n_min + 6).prop_flat_map(move |n| {
                (
                    prop::collection::vec((-20i32..20).prop_map(|v| v as f64 * 0.5), n),
                    0..n,
                    Just(f),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn trim_range_matches_removal_definition((p, obs, f) in snapshot_strategy()) {
            let t = trim_position_dependent(&snap(&p, p[obs], f)).unwrap();
            let (lo, hi) = trim_by_removal(&p, p[obs], f);
            prop_assert_eq!(t.range().lo().get(), lo);
            prop_assert_eq!(t.range().hi().get(), hi);
            prop_assert!(t.min_index <= t.max_index);
            prop_assert!(t.min_index <= f && t.max_index >= p.len() - 1 - f);
        }

        #[test]
        fn paper_rule_is_frame_invariant(
            (p, obs, f) in snapshot_strategy(),
            origin in -500.0..500.0f64,
            scale in 0.5..2.0f64,
            flip in any::<bool>(),
        ) {
            let frame = LocalFrame::new(origin, if flip { -scale } else { scale }).unwrap();
            let global = paper_rule_compute(&snap(&p, p[obs], f)).unwrap();
            let local_values: Vec<f64> = p.iter()
                .map(|&x| frame.to_local(Position::new(x).unwrap()).get())
                .collect();
            let local_obs = frame.to_local(Position::new(p[obs]).unwrap()).get();
            let local = paper_rule_compute(&snap(&local_values, local_obs, f)).unwrap();
            prop_assert!((frame.to_global(local).get() - global.get()).abs() <= 1e-9);
        }

        #[test]
        fn gathered_is_fixed_point(x in -1e6..1e6f64, f in 0usize..4, extra in 1usize..5) {
            let p = vec![x; 3 * f + extra];
            prop_assert_eq!(paper_rule_compute(&snap(&p, x, f)).unwrap().get(), x);
            prop_assert_eq!(naive_trim_compute(&snap(&p, x, f)).unwrap().get(), x);
        }
    }
}
