//! Trace checkers.
//!
//! Every checker consumes a run as a stream of events, so it can be attached
//! to a live simulation as a [`TraceSink`] or fed a stored [`Trace`]. Checks
//! that need the world as a robot saw it read the Look event, which carries
//! the ground-truth positions and every correct robot's pending destination.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Position, PositionMultiset, TOLERANCE};
use crate::rules::{trim_position_dependent, RuleKind, Snapshot};
use crate::schedule::{ActivationLedger, ActivationUnit};
use crate::trace::{EventKind, Trace, TraceEvent, TraceHeader, TraceSink};

/// At most this many violations are kept per report; the count is exact.
pub const MAX_RECORDED_VIOLATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: u64,
    pub robot: usize,
    pub bound: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub checker: String,
    pub events_examined: u64,
    pub violation_count: u64,
    /// The first [`MAX_RECORDED_VIOLATIONS`] violations.
    pub violations: Vec<Violation>,
    pub pass: bool,
    /// The property is not claimed for this trace (for instance a guarantee of
    /// the position-dependent rule on a baseline trace); report only.
    pub informational: bool,
}

impl CheckReport {
    fn new(checker: &str, informational: bool) -> Self {
        Self {
            checker: checker.to_owned(),
            events_examined: 0,
            violation_count: 0,
            violations: Vec::new(),
            pass: true,
            informational,
        }
    }

    fn flag(&mut self, step: u64, robot: usize, bound: f64, observed: f64) {
        self.violation_count += 1;
        self.pass = false;
        if self.violations.len() < MAX_RECORDED_VIOLATIONS {
            self.violations.push(Violation {
                step,
                robot,
                bound,
                observed,
            });
        }
    }

    /// Whether this report should fail a check run.
    pub fn is_failure(&self) -> bool {
        !self.pass && !self.informational
    }

    /// Folds another report of the same checker into this one.
    pub fn merge(&mut self, other: &CheckReport) {
        self.events_examined += other.events_examined;
        self.violation_count += other.violation_count;
        let room = MAX_RECORDED_VIOLATIONS.saturating_sub(self.violations.len());
        self.violations
            .extend(other.violations.iter().take(room).copied());
        self.pass &= other.pass;
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = match (self.pass, self.informational) {
            (true, _) => "pass",
            (false, true) => "info",
            (false, false) => "FAIL",
        };
        write!(
            f,
            "{:<22} {verdict:<4} events={} violations={}",
            self.checker, self.events_examined, self.violation_count
        )?;
        for v in self.violations.iter().take(5) {
            write!(
                f,
                "\n    step {} robot {}: bound {} observed {}",
                v.step, v.robot, v.bound, v.observed
            )?;
        }
        if self.violation_count > 5 {
            write!(f, "\n    ... {} more", self.violation_count - 5)?;
        }
        Ok(())
    }
}

/// A streaming trace checker.
pub trait Checker: Send {
    fn name(&self) -> &'static str;
    fn begin(&mut self, header: &TraceHeader);
    fn observe(&mut self, event: &TraceEvent);
    fn report(&self) -> CheckReport;
}

/// Feeds a stored trace through a checker.
pub fn run_checker<C: Checker + ?Sized>(checker: &mut C, trace: &Trace) -> CheckReport {
    checker.begin(&trace.header);
    for e in &trace.events {
        checker.observe(e);
    }
    checker.report()
}

/// What a correct robot saw at its latest Look, in global coordinates.
#[derive(Debug, Clone)]
struct LookView {
    position: f64,
    /// Correct positions, sorted.
    correct: Vec<f64>,
    /// Bounds of correct positions together with pending destinations.
    ud_min: f64,
    ud_max: f64,
}

impl LookView {
    fn correct_min(&self) -> f64 {
        self.correct[0]
    }

    fn correct_max(&self) -> f64 {
        self.correct[self.correct.len() - 1]
    }
}

/// Tracks each correct robot's Look view and pairs it with the following
/// Compute.
#[derive(Debug, Default)]
struct LookTracker {
    correct: usize,
    views: Vec<Option<LookView>>,
}

impl LookTracker {
    fn begin(&mut self, header: &TraceHeader) {
        self.correct = header.correct;
        self.views = vec![None; header.correct];
    }

    /// Returns the Look view and destination when `event` is a correct
    /// robot's Compute.
    fn observe(&mut self, event: &TraceEvent) -> Option<(&LookView, f64)> {
        if event.robot >= self.correct {
            return None;
        }
        match &event.kind {
            EventKind::Look { pending, .. } => {
                let mut correct: Vec<f64> = event.positions[..self.correct]
                    .iter()
                    .map(|p| p.get())
                    .collect();
                correct.sort_by(f64::total_cmp);
                let (ud_min, ud_max) = pending
                    .iter()
                    .fold((correct[0], correct[correct.len() - 1]), |(lo, hi), p| {
                        (lo.min(p.get()), hi.max(p.get()))
                    });
                self.views[event.robot] = Some(LookView {
                    position: event.positions[event.robot].get(),
                    correct,
                    ud_min,
                    ud_max,
                });
                None
            }
            EventKind::Compute { destination } => self.views[event.robot]
                .as_ref()
                .map(|v| (v, destination.get())),
            _ => None,
        }
    }
}

fn claimed_for(header: &TraceHeader) -> bool {
    header.config.rule == RuleKind::Paper3f1
}

/// Every destination lies in the range of the correct positions the robot
/// saw.
#[derive(Debug, Default)]
pub struct CautiousChecker {
    looks: LookTracker,
    report: Option<CheckReport>,
}

impl Checker for CautiousChecker {
    fn name(&self) -> &'static str {
        "cautious"
    }

    fn begin(&mut self, header: &TraceHeader) {
        self.looks.begin(header);
        self.report = Some(CheckReport::new(self.name(), false));
    }

    fn observe(&mut self, event: &TraceEvent) {
        let Some((view, d)) = self.looks.observe(event) else {
            return;
        };
        let report = self.report.as_mut().expect("begin called");
        report.events_examined += 1;
        let (lo, hi) = (view.correct_min(), view.correct_max());
        if d < lo - TOLERANCE {
            report.flag(event.step, event.robot, lo, d);
        } else if d > hi + TOLERANCE {
            report.flag(event.step, event.robot, hi, d);
        }
    }

    fn report(&self) -> CheckReport {
        self.report.clone().expect("begin called")
    }
}

/// A destination is at most half the correct diameter away from the robot.
#[derive(Debug, Default)]
pub struct HalfDiameterChecker {
    looks: LookTracker,
    report: Option<CheckReport>,
}

impl Checker for HalfDiameterChecker {
    fn name(&self) -> &'static str {
        "half-diameter"
    }

    fn begin(&mut self, header: &TraceHeader) {
        self.looks.begin(header);
        self.report = Some(CheckReport::new(self.name(), !claimed_for(header)));
    }

    fn observe(&mut self, event: &TraceEvent) {
        let Some((view, d)) = self.looks.observe(event) else {
            return;
        };
        let report = self.report.as_mut().expect("begin called");
        report.events_examined += 1;
        let bound = (view.correct_max() - view.correct_min()) / 2.0;
        let observed = (view.position - d).abs();
        if observed > bound + TOLERANCE {
            report.flag(event.step, event.robot, bound, observed);
        }
    }

    fn report(&self) -> CheckReport {
        self.report.clone().expect("begin called")
    }
}

/// With `U` the sorted correct positions and `UD` the correct positions and
/// pending destinations at Look time:
/// `(min UD + U_{m-f}) / 2 <= D <= (U_{f+1} + max UD) / 2`.
#[derive(Debug, Default)]
pub struct DestinationMidChecker {
    f: usize,
    looks: LookTracker,
    report: Option<CheckReport>,
}

impl Checker for DestinationMidChecker {
    fn name(&self) -> &'static str {
        "destination-mid"
    }

    fn begin(&mut self, header: &TraceHeader) {
        self.f = header.config.f;
        self.looks.begin(header);
        self.report = Some(CheckReport::new(self.name(), !claimed_for(header)));
    }

    fn observe(&mut self, event: &TraceEvent) {
        let f = self.f;
        let Some((view, d)) = self.looks.observe(event) else {
            return;
        };
        let report = self.report.as_mut().expect("begin called");
        report.events_examined += 1;
        let m = view.correct.len();
        if m <= f {
            return;
        }
        let upper = (view.correct[f] + view.ud_max) / 2.0;
        let lower = (view.ud_min + view.correct[m - f - 1]) / 2.0;
        if d > upper + TOLERANCE {
            report.flag(event.step, event.robot, upper, d);
        } else if d < lower - TOLERANCE {
            report.flag(event.step, event.robot, lower, d);
        }
    }

    fn report(&self) -> CheckReport {
        self.report.clone().expect("begin called")
    }
}

/// A destination within `b` of one end of `UD` implies at least `m - f`
/// correct robots within `2b` of that end. Only Compute events meeting the
/// hypothesis (`b < diameter(UD) / 2` and the destination in a fringe) are
/// counted as examined.
#[derive(Debug)]
pub struct MajorityChecker {
    /// `None` takes a tenth of the trace's initial UD-diameter.
    b: Option<f64>,
    resolved_b: f64,
    f: usize,
    looks: LookTracker,
    report: Option<CheckReport>,
}

impl MajorityChecker {
    pub fn new(b: Option<f64>) -> Self {
        Self {
            b,
            resolved_b: 0.0,
            f: 0,
            looks: LookTracker::default(),
            report: None,
        }
    }

    pub fn b(&self) -> f64 {
        self.resolved_b
    }
}

impl Default for MajorityChecker {
    fn default() -> Self {
        Self::new(None)
    }
}

impl Checker for MajorityChecker {
    fn name(&self) -> &'static str {
        "majority"
    }

    fn begin(&mut self, header: &TraceHeader) {
        self.f = header.config.f;
        self.resolved_b = self.b.unwrap_or(header.initial_ud_diameter / 10.0);
        self.looks.begin(header);
        self.report = Some(CheckReport::new(self.name(), !claimed_for(header)));
    }

    fn observe(&mut self, event: &TraceEvent) {
        let (b, f) = (self.resolved_b, self.f);
        let Some((view, d)) = self.looks.observe(event) else {
            return;
        };
        let report = self.report.as_mut().expect("begin called");
        if b <= 0.0 || b >= (view.ud_max - view.ud_min) / 2.0 {
            return;
        }
        let m = view.correct.len();
        let need = m.saturating_sub(f) as f64;
        if d < view.ud_min + b {
            report.events_examined += 1;
            let edge = view.ud_min + 2.0 * b;
            let near = view
                .correct
                .iter()
                .filter(|&&x| x < edge + TOLERANCE)
                .count() as f64;
            if near < need {
                report.flag(event.step, event.robot, need, near);
            }
        }
        if d > view.ud_max - b {
            report.events_examined += 1;
            let edge = view.ud_max - 2.0 * b;
            let near = view
                .correct
                .iter()
                .filter(|&&x| x > edge - TOLERANCE)
                .count() as f64;
            if near < need {
                report.flag(event.step, event.robot, need, near);
            }
        }
    }

    fn report(&self) -> CheckReport {
        self.report.clone().expect("begin called")
    }
}

/// The UD-diameter never grows from one event to the next.
#[derive(Debug, Default)]
pub struct UdMonotoneChecker {
    last: f64,
    report: Option<CheckReport>,
}

impl Checker for UdMonotoneChecker {
    fn name(&self) -> &'static str {
        "ud-monotone"
    }

    fn begin(&mut self, header: &TraceHeader) {
        self.last = header.initial_ud_diameter;
        self.report = Some(CheckReport::new(self.name(), !claimed_for(header)));
    }

    fn observe(&mut self, event: &TraceEvent) {
        let report = self.report.as_mut().expect("begin called");
        report.events_examined += 1;
        if event.ud_diameter > self.last + TOLERANCE {
            report.flag(event.step, event.robot, self.last, event.ud_diameter);
        }
        self.last = event.ud_diameter;
    }

    fn report(&self) -> CheckReport {
        self.report.clone().expect("begin called")
    }
}

/// Replays correct robots' activations through a fresh ledger.
#[derive(Debug, Default)]
pub struct KBoundChecker {
    correct: usize,
    unit: ActivationUnit,
    ledger: Option<ActivationLedger>,
    report: Option<CheckReport>,
}

impl Checker for KBoundChecker {
    fn name(&self) -> &'static str {
        "k-bound"
    }

    fn begin(&mut self, header: &TraceHeader) {
        self.correct = header.correct;
        self.unit = header.config.activation_unit;
        self.ledger = Some(ActivationLedger::new(
            header.correct,
            header.config.k.max(1),
        ));
        self.report = Some(CheckReport::new(self.name(), false));
    }

    fn observe(&mut self, event: &TraceEvent) {
        if event.robot >= self.correct {
            return;
        }
        let counts = matches!(
            (&event.kind, self.unit),
            (EventKind::Look { .. }, ActivationUnit::Look)
                | (EventKind::Move { .. }, ActivationUnit::Cycle)
        );
        if !counts {
            return;
        }
        let ledger = self.ledger.as_mut().expect("begin called");
        let report = self.report.as_mut().expect("begin called");
        report.events_examined += 1;
        if let Err(v) = ledger.record(event.robot) {
            report.flag(event.step, v.robot, f64::from(v.k), f64::from(v.count));
        }
    }

    fn report(&self) -> CheckReport {
        self.report.clone().expect("begin called")
    }
}

/// Which term of the shrinking-factor bound is largest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaTerm {
    /// `1 - 2δ/d0`
    TwoDelta,
    /// `4/5`
    FourFifths,
    /// `1 - δ/d0`
    Delta,
    /// `1 - 3/2^(k(f+1)+offset)`
    Activations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalAlpha {
    pub value: f64,
    pub dominant: AlphaTerm,
}

/// Exponent offsets of the activation term: the proof states both.
pub const LOOSE_OFFSET: u32 = 3;
pub const TIGHT_OFFSET: u32 = 2;

/// `max{1 - 2δ/d0, 4/5, 1 - δ/d0, 1 - 3/2^(k(f+1)+offset)}`.
pub fn theoretical_alpha(delta: f64, d0: f64, k: u32, f: usize, offset: u32) -> TheoreticalAlpha {
    let exponent = (k as u64 * (f as u64 + 1) + offset as u64).min(i32::MAX as u64) as i32;
    let terms = [
        (AlphaTerm::TwoDelta, 1.0 - 2.0 * delta / d0),
        (AlphaTerm::FourFifths, 0.8),
        (AlphaTerm::Delta, 1.0 - delta / d0),
        (AlphaTerm::Activations, 1.0 - 3.0 / 2f64.powi(exponent)),
    ];
    let (dominant, value) = terms
        .into_iter()
        .fold(terms[0], |best, t| if t.1 > best.1 { t } else { best });
    TheoreticalAlpha { value, dominant }
}

/// A minimal stretch of the run in which every correct robot Looked at or
/// after `start_step` and then completed the Move of that cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub start_step: u64,
    pub end_step: u64,
    pub start_ud: f64,
    pub end_ud: f64,
}

impl Epoch {
    pub fn ratio(&self) -> f64 {
        self.end_ud / self.start_ud
    }
}

/// A run of consecutive epochs and how much it shrank the UD-diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionWindow {
    pub first_epoch: usize,
    pub start_step: u64,
    pub end_step: u64,
    pub d0: f64,
    pub ratio: f64,
    pub alpha_loose: f64,
    pub alpha_tight: f64,
}

impl ContractionWindow {
    pub fn meets_loose(&self) -> bool {
        self.ratio < self.alpha_loose
    }

    pub fn meets_tight(&self) -> bool {
        self.ratio < self.alpha_tight
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContractionVerdict {
    /// Fewer than two complete epochs.
    Inconclusive,
    /// The run started gathered; nothing to shrink.
    Converged,
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub epochs: Vec<Epoch>,
    /// Epochs per window: `k(f+1) + 2`.
    pub window_epochs: usize,
    pub windows: Vec<ContractionWindow>,
    /// Bound at the run's initial UD-diameter, loose exponent.
    pub alpha_loose: TheoreticalAlpha,
    /// Same with the tight exponent.
    pub alpha_tight: TheoreticalAlpha,
    pub verdict: ContractionVerdict,
    /// Every window also beats the tight-exponent bound.
    pub satisfied_tight: bool,
}

impl ContractionEstimate {
    pub fn pass(&self) -> bool {
        self.verdict != ContractionVerdict::Fail
    }

    /// The largest window ratio, if any window was evaluated.
    pub fn worst_ratio(&self) -> Option<f64> {
        self.windows.iter().map(|w| w.ratio).reduce(f64::max)
    }

    /// The largest ratio relative to its own bound, `ratio / alpha_loose`.
    pub fn worst_margin(&self) -> Option<f64> {
        self.windows
            .iter()
            .map(|w| w.ratio / w.alpha_loose)
            .reduce(f64::max)
    }
}

/// Streaming epoch detection and window evaluation.
#[derive(Debug, Default)]
pub struct ContractionChecker {
    correct: usize,
    delta: f64,
    k: u32,
    f: usize,
    initial_ud: f64,
    claimed: bool,
    looked: Vec<bool>,
    done: Vec<bool>,
    remaining: usize,
    epoch_start: (u64, f64),
    epochs: Vec<Epoch>,
}

impl ContractionChecker {
    fn reset_epoch(&mut self, step: u64, ud: f64) {
        self.looked.iter_mut().for_each(|x| *x = false);
        self.done.iter_mut().for_each(|x| *x = false);
        self.remaining = self.correct;
        self.epoch_start = (step, ud);
    }

    pub fn estimate(&self) -> ContractionEstimate {
        let window_epochs = (self.k as usize) * (self.f + 1) + 2;
        let alpha = |d0, offset| theoretical_alpha(self.delta, d0, self.k, self.f, offset);
        let alpha_loose = alpha(self.initial_ud, LOOSE_OFFSET);
        let alpha_tight = alpha(self.initial_ud, TIGHT_OFFSET);
        let windows: Vec<ContractionWindow> = if self.epochs.len() >= window_epochs {
            self.epochs
                .windows(window_epochs)
                .enumerate()
                .filter(|(_, w)| w[0].start_ud > 0.0)
                .map(|(i, w)| {
                    let (first, last) = (w[0], w[w.len() - 1]);
                    let d0 = first.start_ud;
                    ContractionWindow {
                        first_epoch: i,
                        start_step: first.start_step,
                        end_step: last.end_step,
                        d0,
                        ratio: last.end_ud / d0,
                        alpha_loose: alpha(d0, LOOSE_OFFSET).value,
                        alpha_tight: alpha(d0, TIGHT_OFFSET).value,
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        let verdict = if self.initial_ud == 0.0 {
            ContractionVerdict::Converged
        } else if self.epochs.len() < 2 {
            ContractionVerdict::Inconclusive
        } else if windows.iter().all(ContractionWindow::meets_loose) {
            ContractionVerdict::Pass
        } else {
            ContractionVerdict::Fail
        };
        ContractionEstimate {
            epochs: self.epochs.clone(),
            window_epochs,
            satisfied_tight: windows.iter().all(ContractionWindow::meets_tight),
            windows,
            alpha_loose,
            alpha_tight,
            verdict,
        }
    }
}

impl Checker for ContractionChecker {
    fn name(&self) -> &'static str {
        "contraction"
    }

    fn begin(&mut self, header: &TraceHeader) {
        self.correct = header.correct;
        self.delta = header.config.delta;
        self.k = header.config.k;
        self.f = header.config.f;
        self.initial_ud = header.initial_ud_diameter;
        self.claimed = claimed_for(header);
        self.looked = vec![false; header.correct];
        self.done = vec![false; header.correct];
        self.epochs.clear();
        self.reset_epoch(0, header.initial_ud_diameter);
    }

    fn observe(&mut self, event: &TraceEvent) {
        let r = event.robot;
        if r >= self.correct {
            return;
        }
        match event.kind {
            EventKind::Look { .. } => self.looked[r] = true,
            EventKind::Move { .. } if self.looked[r] && !self.done[r] => {
                self.done[r] = true;
                self.remaining -= 1;
                if self.remaining == 0 {
                    let (start_step, start_ud) = self.epoch_start;
                    self.epochs.push(Epoch {
                        start_step,
                        end_step: event.step,
                        start_ud,
                        end_ud: event.ud_diameter,
                    });
                    self.reset_epoch(event.step, event.ud_diameter);
                }
            }
            _ => {}
        }
    }

    /// One violation per window whose ratio is not below the loose bound.
    fn report(&self) -> CheckReport {
        let estimate = self.estimate();
        let mut report = CheckReport::new(self.name(), !self.claimed);
        for w in &estimate.windows {
            report.events_examined += 1;
            if !w.meets_loose() {
                report.flag(w.end_step, 0, w.alpha_loose, w.ratio);
            }
        }
        report
    }
}

pub fn estimate_contraction(trace: &Trace) -> ContractionEstimate {
    let mut c = ContractionChecker::default();
    run_checker(&mut c, trace);
    c.estimate()
}

pub fn check_cautious(trace: &Trace) -> CheckReport {
    run_checker(&mut CautiousChecker::default(), trace)
}

pub fn check_half_diameter(trace: &Trace) -> CheckReport {
    run_checker(&mut HalfDiameterChecker::default(), trace)
}

pub fn check_destination_mid(trace: &Trace) -> CheckReport {
    run_checker(&mut DestinationMidChecker::default(), trace)
}

pub fn check_majority_neighborhood(trace: &Trace, b: Option<f64>) -> CheckReport {
    run_checker(&mut MajorityChecker::new(b), trace)
}

pub fn check_ud_monotone(trace: &Trace) -> CheckReport {
    run_checker(&mut UdMonotoneChecker::default(), trace)
}

pub fn check_k_bound(trace: &Trace) -> CheckReport {
    run_checker(&mut KBoundChecker::default(), trace)
}

/// Names accepted by [`CheckerKind::from_str`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckerKind {
    Cautious,
    HalfDiameter,
    DestinationMid,
    Majority,
    UdMonotone,
    KBound,
    Contraction,
}

impl CheckerKind {
    pub const ALL: [CheckerKind; 7] = [
        CheckerKind::Cautious,
        CheckerKind::HalfDiameter,
        CheckerKind::DestinationMid,
        CheckerKind::Majority,
        CheckerKind::UdMonotone,
        CheckerKind::KBound,
        CheckerKind::Contraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckerKind::Cautious => "cautious",
            CheckerKind::HalfDiameter => "half-diameter",
            CheckerKind::DestinationMid => "destination-mid",
            CheckerKind::Majority => "majority",
            CheckerKind::UdMonotone => "ud-monotone",
            CheckerKind::KBound => "k-bound",
            CheckerKind::Contraction => "contraction",
        }
    }

    pub fn build(self) -> Box<dyn Checker> {
        match self {
            CheckerKind::Cautious => Box::<CautiousChecker>::default(),
            CheckerKind::HalfDiameter => Box::<HalfDiameterChecker>::default(),
            CheckerKind::DestinationMid => Box::<DestinationMidChecker>::default(),
            CheckerKind::Majority => Box::<MajorityChecker>::default(),
            CheckerKind::UdMonotone => Box::<UdMonotoneChecker>::default(),
            CheckerKind::KBound => Box::<KBoundChecker>::default(),
            CheckerKind::Contraction => Box::<ContractionChecker>::default(),
        }
    }
}

impl fmt::Display for CheckerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CheckerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CheckerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = CheckerKind::ALL.iter().map(|k| k.name()).collect();
                format!(
                    "unknown checker `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

/// Several checkers fed from one stream.
pub struct CheckSuite {
    checkers: Vec<Box<dyn Checker>>,
}

impl CheckSuite {
    pub fn new(kinds: &[CheckerKind]) -> Self {
        Self {
            checkers: kinds.iter().map(|k| k.build()).collect(),
        }
    }

    pub fn all() -> Self {
        Self::new(&CheckerKind::ALL)
    }

    pub fn from_checkers(checkers: Vec<Box<dyn Checker>>) -> Self {
        Self { checkers }
    }

    pub fn reports(&self) -> Vec<CheckReport> {
        self.checkers.iter().map(|c| c.report()).collect()
    }

    pub fn check(mut self, trace: &Trace) -> Vec<CheckReport> {
        self.header(&trace.header);
        for e in &trace.events {
            self.event(e);
        }
        self.reports()
    }
}

impl TraceSink for CheckSuite {
    fn header(&mut self, header: &TraceHeader) {
        for c in &mut self.checkers {
            c.begin(header);
        }
    }

    fn event(&mut self, event: &TraceEvent) {
        for c in &mut self.checkers {
            c.observe(event);
        }
    }
}

/// A snapshot with its ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimInstance {
    pub f: usize,
    pub correct: Vec<f64>,
    pub outliers: Vec<f64>,
    /// Index into `correct`.
    pub observer: usize,
}

impl TrimInstance {
    /// Draws `n` values of which `outliers` are faulty. Correct values come
    /// from `[0, 100]`, half the time rounded to integers so that ties are
    /// common; outliers land anywhere in `[-200, 300]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n: usize, f: usize, outliers: usize) -> Self {
        assert!(outliers < n, "at least one correct robot is needed");
        let coarse = rng.random_bool(0.5);
        let mut draw = |lo: f64, hi: f64| {
            let x: f64 = rng.random_range(lo..=hi);
            if coarse {
                (x / 10.0).round() * 10.0
            } else {
                x
            }
        };
        let correct: Vec<f64> = (0..n - outliers).map(|_| draw(0.0, 100.0)).collect();
        let outliers: Vec<f64> = (0..outliers).map(|_| draw(-200.0, 300.0)).collect();
        let observer = rng.random_range(0..correct.len());
        Self {
            f,
            correct,
            outliers,
            observer,
        }
    }

    /// Whether the trimmed range stays inside the range of correct values.
    pub fn is_contained(&self) -> bool {
        let all = self
            .correct
            .iter()
            .chain(&self.outliers)
            .map(|&v| Position::new(v).expect("finite"))
            .collect::<Vec<_>>();
        let me = Position::new(self.correct[self.observer]).expect("finite");
        let snapshot = Snapshot::new(PositionMultiset::new(all), me, self.f)
            .expect("observer is in the snapshot");
        let kept = trim_position_dependent(&snapshot)
            .expect("instance sized for the rule")
            .range();
        let lo = self.correct.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self
            .correct
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        kept.lo().get() >= lo - TOLERANCE && kept.hi().get() <= hi + TOLERANCE
    }
}

/// Draws `count` instances with `n` robots and at most `f` outliers and
/// checks that trimming never leaves the correct range.
pub fn check_trim_containment<R: Rng + ?Sized>(
    count: u64,
    rng: &mut R,
    n: usize,
    f: usize,
) -> CheckReport {
    let mut report = CheckReport::new("trim-containment", false);
    for i in 0..count {
        let outliers = rng.random_range(0..=f);
        let instance = TrimInstance::random(rng, n, f, outliers);
        report.events_examined += 1;
        if !instance.is_contained() {
            report.flag(i, instance.observer, f as f64, outliers as f64);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::ByzantineKind;
    use crate::config::{FrameMode, InitialPositions, SimConfig};
    use crate::engine::run;
    use crate::geometry::LocalFrame;
    use crate::schedule::SchedulerKind;
    use crate::trace::{CODE_VERSION, FORMAT_VERSION};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(v: f64) -> Position {
        Position::new(v).unwrap()
    }

    fn ps(v: &[f64]) -> Vec<Position> {
        v.iter().map(|&x| p(x)).collect()
    }

    fn header(n: usize, f: usize, k: u32, correct: &[f64]) -> TraceHeader {
        let mut config = SimConfig::new(n, f);
        config.k = k;
        let mut initial = correct.to_vec();
        initial.resize(n, 0.0);
        let lo = correct.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = correct.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        TraceHeader {
            format_version: FORMAT_VERSION,
            code_version: CODE_VERSION.into(),
            config,
            correct: correct.len(),
            initial_positions: ps(&initial),
            initial_ud_diameter: hi - lo,
        }
    }

    fn look(step: u64, robot: usize, positions: &[f64], pending: &[f64]) -> TraceEvent {
        TraceEvent {
            step,
            robot,
            kind: EventKind::Look {
                frame: LocalFrame::identity(),
                digest: "0".into(),
                pending: ps(pending),
            },
            positions: ps(positions),
            diameter: 0.0,
            ud_diameter: 0.0,
        }
    }

    fn compute(step: u64, robot: usize, positions: &[f64], d: f64) -> TraceEvent {
        TraceEvent {
            step,
            robot,
            kind: EventKind::Compute { destination: p(d) },
            positions: ps(positions),
            diameter: 0.0,
            ud_diameter: 0.0,
        }
    }

    fn mv(step: u64, robot: usize, positions: &[f64], ud: f64) -> TraceEvent {
        TraceEvent {
            step,
            robot,
            kind: EventKind::Move {
                destination: positions[robot].try_into().unwrap(),
                granted: 0.0,
                new_position: positions[robot].try_into().unwrap(),
            },
            positions: ps(positions),
            diameter: ud,
            ud_diameter: ud,
        }
    }

    fn sample_run(seed: u64) -> Trace {
        let mut c = SimConfig::new(4, 1);
        c.k = 2;
        c.seed = seed;
        c.max_steps = 20_000;
        run(&c).unwrap().0
    }

    #[test]
    fn seeded_runs_pass_every_checker() {
        for seed in 0..5 {
            let trace = sample_run(seed);
            for r in CheckSuite::all().check(&trace) {
                assert!(r.pass, "seed {seed}: {r}");
            }
        }
    }

    #[test]
    fn checkers_are_pure() {
        let trace = sample_run(9);
        assert_eq!(
            CheckSuite::all().check(&trace),
            CheckSuite::all().check(&trace)
        );
    }

    #[test]
    fn destination_outside_correct_range_is_flagged() {
        let h = header(4, 1, 1, &[0.0, 10.0, 20.0]);
        let world = [0.0, 10.0, 20.0, 500.0];
        let trace = Trace {
            header: h,
            events: vec![
                look(1, 1, &world, &[0.0, 10.0, 20.0]),
                compute(2, 1, &world, 25.0),
            ],
        };
        let r = check_cautious(&trace);
        assert_eq!(r.events_examined, 1);
        assert_eq!(
            r.violations,
            vec![Violation {
                step: 2,
                robot: 1,
                bound: 20.0,
                observed: 25.0
            }]
        );
        assert!(!r.pass);
    }

    #[test]
    fn f0_trace_is_cautious() {
        let mut c = SimConfig::new(3, 0);
        c.byzantine = ByzantineKind::None;
        c.seed = 4;
        let (trace, _) = run(&c).unwrap();
        let r = check_cautious(&trace);
        assert!(r.pass && r.events_examined > 0);
    }

    #[test]
    fn symmetric_pair_destination_mid() {
        // {0, 100} correct with f = 0: destination 50 sits exactly at both
        // bounds (0 + 100) / 2.
        let h = header(2, 0, 1, &[0.0, 100.0]);
        let world = [0.0, 100.0];
        let trace = Trace {
            header: h,
            events: vec![look(1, 0, &world, &world), compute(2, 0, &world, 50.0)],
        };
        let r = check_destination_mid(&trace);
        assert!(r.pass && r.events_examined == 1);
        let mut bad = trace.clone();
        bad.events[1] = compute(2, 0, &world, 50.5);
        assert!(!check_destination_mid(&bad).pass);
    }

    #[test]
    fn gathered_trace_is_tight() {
        let h = header(4, 1, 1, &[5.0, 5.0, 5.0]);
        let world = [5.0, 5.0, 5.0, 9.0];
        let trace = Trace {
            header: h,
            events: vec![look(1, 0, &world, &[5.0; 3]), compute(2, 0, &world, 5.0)],
        };
        for r in [
            check_cautious(&trace),
            check_half_diameter(&trace),
            check_destination_mid(&trace),
        ] {
            assert!(r.pass && r.events_examined == 1, "{r}");
        }
        assert_eq!(
            estimate_contraction(&trace).verdict,
            ContractionVerdict::Converged
        );
    }

    #[test]
    fn majority_violation_is_flagged() {
        // Seven correct robots, f = 2: a destination near the low end while
        // only two correct robots are near it.
        let correct = [0.0, 1.0, 50.0, 60.0, 70.0, 80.0, 100.0];
        let h = header(9, 2, 1, &correct);
        let mut world = correct.to_vec();
        world.extend([-1.0, -1.0]);
        let trace = Trace {
            header: h,
            events: vec![look(1, 0, &world, &correct), compute(2, 0, &world, 2.0)],
        };
        let r = check_majority_neighborhood(&trace, None);
        assert_eq!(r.events_examined, 1);
        assert_eq!(r.violation_count, 1);
        assert_eq!(r.violations[0].bound, 5.0);
        assert_eq!(r.violations[0].observed, 2.0);
    }

    #[test]
    fn majority_without_fringe_destinations_is_vacuous() {
        let h = header(4, 1, 1, &[0.0, 50.0, 100.0]);
        let world = [0.0, 50.0, 100.0, 50.0];
        let trace = Trace {
            header: h,
            events: vec![
                look(1, 1, &world, &[0.0, 50.0, 100.0]),
                compute(2, 1, &world, 50.0),
            ],
        };
        let r = check_majority_neighborhood(&trace, None);
        assert!(r.pass);
        assert_eq!(r.events_examined, 0);
    }

    #[test]
    fn k_bound_flags_a_a_a_b() {
        let h = header(2, 0, 2, &[0.0, 1.0]);
        let world = [0.0, 1.0];
        let events = [0, 0, 0, 1]
            .iter()
            .enumerate()
            .map(|(i, &r)| look(i as u64 + 1, r, &world, &world))
            .collect();
        let r = check_k_bound(&Trace { header: h, events });
        assert_eq!(r.events_examined, 4);
        assert_eq!(r.violation_count, 1);
        assert_eq!(r.violations[0].step, 3);
        assert_eq!(r.violations[0].observed, 3.0);
    }

    #[test]
    fn single_robot_k_bound_is_vacuous() {
        let h = header(1, 0, 1, &[0.0]);
        let events = (1..=5).map(|s| look(s, 0, &[0.0], &[0.0])).collect();
        let r = check_k_bound(&Trace { header: h, events });
        assert!(r.pass);
    }

    #[test]
    fn ud_monotone_flags_growth() {
        let h = header(2, 0, 1, &[0.0, 10.0]);
        let trace = Trace {
            header: h,
            events: vec![mv(1, 0, &[2.0, 10.0], 8.0), mv(2, 0, &[1.0, 10.0], 9.0)],
        };
        let r = check_ud_monotone(&trace);
        assert_eq!(r.violation_count, 1);
        assert_eq!(r.violations[0].bound, 8.0);
    }

    #[test]
    fn alpha_dominant_term() {
        let a = theoretical_alpha(0.01, 100.0, 2, 1, LOOSE_OFFSET);
        assert_eq!(a.dominant, AlphaTerm::Delta);
        assert!((a.value - 0.9999).abs() < 1e-12);
        let big = theoretical_alpha(0.01, 0.001, 1, 0, TIGHT_OFFSET);
        assert_eq!(big.dominant, AlphaTerm::FourFifths);
        let act = theoretical_alpha(0.01, 0.02, 3, 3, LOOSE_OFFSET);
        assert_eq!(act.dominant, AlphaTerm::Activations);
        assert_eq!(act.value, 1.0 - 3.0 / 32768.0);
    }

    #[test]
    fn epochs_need_fresh_look_and_move() {
        let mut h = header(2, 0, 1, &[0.0, 10.0]);
        h.initial_ud_diameter = 10.0;
        let w = [0.0, 10.0];
        let events = vec![
            look(1, 0, &w, &w),
            look(2, 1, &w, &w),
            mv(3, 0, &w, 8.0),
            look(4, 0, &w, &w),
            mv(5, 1, &w, 6.0),
            // Robot 0 Looked before the second epoch began, so this Move
            // does not count towards it.
            mv(6, 0, &w, 5.0),
            look(7, 1, &w, &w),
            mv(8, 1, &w, 4.5),
            look(9, 0, &w, &w),
            mv(10, 0, &w, 4.0),
        ];
        let mut c = ContractionChecker::default();
        run_checker(&mut c, &Trace { header: h, events });
        let e = c.estimate();
        assert_eq!(e.epochs.len(), 2);
        assert_eq!((e.epochs[0].start_step, e.epochs[0].end_step), (0, 5));
        assert_eq!((e.epochs[1].start_step, e.epochs[1].end_step), (5, 10));
        assert_eq!(e.epochs[1].start_ud, 6.0);
        assert_eq!(e.epochs[1].end_ud, 4.0);
    }

    #[test]
    fn atom_round_contracts() {
        let mut c = SimConfig::new(2, 0);
        c.byzantine = ByzantineKind::None;
        c.scheduler = SchedulerKind::AtomFull;
        c.frame_mode = FrameMode::Identity;
        c.initial = InitialPositions::Explicit {
            positions: vec![0.0, 100.0],
        };
        let (trace, _) = run(&c).unwrap();
        let e = estimate_contraction(&trace);
        assert!(e.epochs[0].ratio() < 1.0);
    }

    #[test]
    fn short_trace_is_inconclusive() {
        let h = header(2, 0, 1, &[0.0, 10.0]);
        let trace = Trace {
            header: h,
            events: vec![],
        };
        assert_eq!(
            estimate_contraction(&trace).verdict,
            ContractionVerdict::Inconclusive
        );
    }

    #[test]
    fn containment_holds_with_at_most_f_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, f) in [(4, 1), (7, 2), (10, 3)] {
            let r = check_trim_containment(2000, &mut rng, n, f);
            assert!(r.pass, "{r}");
            assert_eq!(r.events_examined, 2000);
        }
    }

    #[test]
    fn containment_can_fail_with_f_plus_one_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let failed = (0..2000).any(|_| !TrimInstance::random(&mut rng, 7, 2, 3).is_contained());
        assert!(failed);
    }

    #[test]
    fn outliers_inside_range_are_contained() {
        let inst = TrimInstance {
            f: 1,
            correct: vec![0.0, 5.0, 10.0],
            outliers: vec![3.0],
            observer: 1,
        };
        assert!(inst.is_contained());
    }

    #[test]
    fn checker_names_round_trip() {
        for k in CheckerKind::ALL {
            assert_eq!(k.name().parse::<CheckerKind>().unwrap(), k);
            assert_eq!(k.build().name(), k.name());
        }
        assert!("nope".parse::<CheckerKind>().is_err());
    }
}
