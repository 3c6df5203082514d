//! The Look-Compute-Move phase machine, the k-bounded activation ledger and
//! the scheduler strategies that drive a run.
//!
//! Under CORDA a cycle is three separately schedulable steps, so a robot can
//! sit on a stale snapshot while others complete whole cycles. ATOM rounds
//! are expressed as a [`Decision::Round`] over the same machinery.

use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::MovementAdversary;
use crate::geometry::{LocalFrame, Position, PositionMultiset};
use crate::rules::{ComputeRule, RuleError, Snapshot};

/// One schedulable step of a robot's cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseStep {
    Look,
    Compute,
    Move,
}

impl fmt::Display for PhaseStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Phase {
    ReadyToLook,
    Looked {
        snapshot: Snapshot,
        frame: LocalFrame,
    },
    /// Destination in global coordinates.
    Computed {
        destination: Position,
    },
}

impl Phase {
    pub fn tag(&self) -> PhaseTag {
        match self {
            Phase::ReadyToLook => PhaseTag::Ready,
            Phase::Looked { .. } => PhaseTag::Looked,
            Phase::Computed { .. } => PhaseTag::Computed,
        }
    }
}

/// Label-only view of a [`Phase`], which is all a scheduler gets to see.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseTag {
    Ready,
    Looked,
    Computed,
}

impl PhaseTag {
    pub fn next_step(self) -> PhaseStep {
        match self {
            PhaseTag::Ready => PhaseStep::Look,
            PhaseTag::Looked => PhaseStep::Compute,
            PhaseTag::Computed => PhaseStep::Move,
        }
    }
}

/// A correct robot. Oblivious: nothing survives a cycle except its position.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub position: Position,
    pub phase: Phase,
    /// Destination of the current or latest cycle, fixed once the robot has
    /// Looked; the initial position before the first Look.
    pub last_destination: Position,
}

impl RobotState {
    pub fn at(position: Position) -> Self {
        Self {
            position,
            phase: Phase::ReadyToLook,
            last_destination: position,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhaseError {
    #[error("robot is in phase {actual:?}, cannot perform {requested}")]
    Mismatch {
        requested: PhaseStep,
        actual: PhaseTag,
    },
    #[error(transparent)]
    Rule(#[from] RuleError),
}

/// What the caller asks of [`advance_phase`]. A Look needs the frame through
/// which the world is observed.
#[derive(Debug, Clone, Copy)]
pub enum PhaseRequest {
    Look(LocalFrame),
    Compute,
    Move,
}

impl PhaseRequest {
    pub fn step(&self) -> PhaseStep {
        match self {
            PhaseRequest::Look(_) => PhaseStep::Look,
            PhaseRequest::Compute => PhaseStep::Compute,
            PhaseRequest::Move => PhaseStep::Move,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseOutcome {
    Looked {
        frame: LocalFrame,
        digest: u64,
    },
    Computed {
        destination: Position,
    },
    Moved {
        destination: Position,
        granted: f64,
        position: Position,
    },
}

/// Everything besides the robot itself that a phase step may consult.
pub struct PhaseEnv<'a> {
    pub f: usize,
    pub delta: f64,
    pub rule: &'a dyn ComputeRule,
    pub movement: &'a mut MovementAdversary,
    pub rng: &'a mut ChaCha8Rng,
}

/// FNV-1a over the bit patterns of a sorted snapshot.
pub fn snapshot_digest(s: &PositionMultiset) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    s.iter()
        .flat_map(|p| p.get().to_bits().to_le_bytes())
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Advances `robot` by one phase step.
///
/// Look records the whole `world` through `frame`; Compute runs the rule on
/// the stored (possibly stale) snapshot and maps the result back to global
/// coordinates; Move travels toward the destination by whatever the movement
/// adversary grants and returns the robot to `ReadyToLook`.
pub fn advance_phase(
    robot: &mut RobotState,
    request: PhaseRequest,
    world: &[Position],
    env: &mut PhaseEnv<'_>,
) -> Result<PhaseOutcome, PhaseError> {
    let actual = robot.phase.tag();
    if actual.next_step() != request.step() {
        return Err(PhaseError::Mismatch {
            requested: request.step(),
            actual,
        });
    }
    match request {
        PhaseRequest::Look(frame) => {
            let local = PositionMultiset::new(world.iter().map(|&p| frame.to_local(p)).collect());
            let digest = snapshot_digest(&local);
            let snapshot = Snapshot::new(local, frame.to_local(robot.position), env.f)?;
            robot.phase = Phase::Looked { snapshot, frame };
            Ok(PhaseOutcome::Looked { frame, digest })
        }
        PhaseRequest::Compute => {
            let Phase::Looked { snapshot, frame } = &robot.phase else {
                unreachable!("phase checked above")
            };
            let destination = frame.to_global(env.rule.compute(snapshot)?);
            robot.last_destination = destination;
            robot.phase = Phase::Computed { destination };
            Ok(PhaseOutcome::Computed { destination })
        }
        PhaseRequest::Move => {
            let Phase::Computed { destination } = robot.phase else {
                unreachable!("phase checked above")
            };
            let requested = robot.position.distance(destination);
            let granted = env.movement.grant(requested, env.delta, env.rng);
            robot.position = if granted >= requested {
                destination
            } else {
                let dir = (destination.get() - robot.position.get()).signum();
                Position::new(robot.position.get() + dir * granted)
                    .expect("partial move stays between two finite points")
            };
            robot.phase = Phase::ReadyToLook;
            Ok(PhaseOutcome::Moved {
                destination,
                granted,
                position: robot.position,
            })
        }
    }
}

/// What counts as one activation for the k-bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationUnit {
    /// The start of a Look phase.
    #[default]
    Look,
    /// A completed cycle, i.e. the end of a Move phase.
    Cycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error(
    "robot {robot} activated {count} times since robot {observer} was last activated (k = {k})"
)]
pub struct KBoundViolation {
    pub observer: usize,
    pub robot: usize,
    pub count: u32,
    pub k: u32,
}

/// Pairwise activation counters for the k-bounded scheduler predicate.
///
/// `since[i][j]` is the number of activations of `j` since the last
/// activation of `i` (or since the start, if `i` was never activated).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationLedger {
    k: u32,
    robots: usize,
    since: Vec<u32>,
    totals: Vec<u64>,
}

impl ActivationLedger {
    pub fn new(robots: usize, k: u32) -> Self {
        assert!(k >= 1, "k must be at least 1");
        Self {
            k,
            robots,
            since: vec![0; robots * robots],
            totals: vec![0; robots],
        }
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn robots(&self) -> usize {
        self.robots
    }

    pub fn count_since(&self, observer: usize, robot: usize) -> u32 {
        self.since[observer * self.robots + robot]
    }

    pub fn activations(&self) -> &[u64] {
        &self.totals
    }

    /// Whether activating `robot` now keeps every pairwise count within `k`.
    pub fn is_eligible(&self, robot: usize) -> bool {
        (0..self.robots)
            .filter(|&i| i != robot)
            .all(|i| self.count_since(i, robot) < self.k)
    }

    /// Records an activation of `robot`. The counters are updated even when
    /// the bound is broken, so a replay can keep going and report every
    /// violation.
    pub fn record(&mut self, robot: usize) -> Result<(), KBoundViolation> {
        let mut violation = None;
        for i in (0..self.robots).filter(|&i| i != robot) {
            let c = &mut self.since[i * self.robots + robot];
            *c += 1;
            if *c > self.k && violation.is_none() {
                violation = Some(KBoundViolation {
                    observer: i,
                    robot,
                    count: *c,
                    k: self.k,
                });
            }
        }
        let row = robot * self.robots;
        self.since[row..row + self.robots].fill(0);
        self.totals[robot] += 1;
        violation.map_or(Ok(()), Err)
    }
}

/// Robots whose activation right now would respect the bound. Never empty
/// for a non-empty ledger: the robot activated least recently always
/// qualifies.
pub fn k_bounded_eligible(ledger: &ActivationLedger) -> Vec<usize> {
    (0..ledger.robots())
        .filter(|&j| ledger.is_eligible(j))
        .collect()
}

/// A scheduler choice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    /// Advance one robot by one phase step.
    Step { robot: usize, step: PhaseStep },
    /// An atomic round: every listed robot Looks at the same world, then all
    /// Compute, then all Move.
    Round { robots: Vec<usize> },
}

pub trait SchedulerStrategy: Send {
    fn name(&self) -> &'static str;

    /// Picks the next action. Must only return choices the ledger permits.
    fn next(
        &mut self,
        phases: &[PhaseTag],
        ledger: &ActivationLedger,
        rng: &mut ChaCha8Rng,
    ) -> Decision;
}

fn can_act(tag: PhaseTag, robot: usize, ledger: &ActivationLedger) -> bool {
    tag != PhaseTag::Ready || ledger.is_eligible(robot)
}

/// Uniform choice among robots that may act, one phase step at a time.
#[derive(Debug, Default)]
pub struct RandomK {
    candidates: Vec<usize>,
}

impl SchedulerStrategy for RandomK {
    fn name(&self) -> &'static str {
        "random-k"
    }

    fn next(
        &mut self,
        phases: &[PhaseTag],
        ledger: &ActivationLedger,
        rng: &mut ChaCha8Rng,
    ) -> Decision {
        self.candidates.clear();
        self.candidates.extend(
            phases
                .iter()
                .enumerate()
                .filter(|&(j, &tag)| can_act(tag, j, ledger))
                .map(|(j, _)| j),
        );
        let robot = *self
            .candidates
            .choose(rng)
            .expect("k-bounded eligibility is never empty");
        Decision::Step {
            robot,
            step: phases[robot].next_step(),
        }
    }
}

/// Full cycles in fixed cyclic order: 0, 1, ..., m-1, 0, ...
#[derive(Debug, Default)]
pub struct RoundRobin {
    cursor: usize,
    started: bool,
}

impl SchedulerStrategy for RoundRobin {
    fn name(&self) -> &'static str {
        "round-robin"
    }

    fn next(
        &mut self,
        phases: &[PhaseTag],
        ledger: &ActivationLedger,
        _rng: &mut ChaCha8Rng,
    ) -> Decision {
        if phases[self.cursor] == PhaseTag::Ready && self.started {
            self.cursor = (self.cursor + 1) % phases.len();
            self.started = false;
        }
        let robot = self.cursor;
        let tag = phases[robot];
        if tag == PhaseTag::Ready {
            debug_assert!(ledger.is_eligible(robot));
            self.started = true;
        }
        Decision::Step {
            robot,
            step: tag.next_step(),
        }
    }
}

/// Keeps one victim robot sitting on its snapshot for as long as the bound
/// allows: after the victim Looks, the others run complete cycles until none
/// of them may start another, and only then does the victim Compute and Move.
#[derive(Debug)]
pub struct LaggingObserver {
    victim: usize,
    cursor: usize,
}

impl LaggingObserver {
    pub fn new(victim: usize) -> Self {
        Self { victim, cursor: 0 }
    }

    fn other_step(&mut self, phases: &[PhaseTag], ledger: &ActivationLedger) -> Option<Decision> {
        let m = phases.len();
        if let Some(robot) = (0..m).find(|&j| j != self.victim && phases[j] != PhaseTag::Ready) {
            return Some(Decision::Step {
                robot,
                step: phases[robot].next_step(),
            });
        }
        let robot = (0..m)
            .map(|off| (self.cursor + off) % m)
            .find(|&j| j != self.victim && ledger.is_eligible(j))?;
        self.cursor = (robot + 1) % m;
        Some(Decision::Step {
            robot,
            step: PhaseStep::Look,
        })
    }
}

impl SchedulerStrategy for LaggingObserver {
    fn name(&self) -> &'static str {
        "lagging"
    }

    fn next(
        &mut self,
        phases: &[PhaseTag],
        ledger: &ActivationLedger,
        _rng: &mut ChaCha8Rng,
    ) -> Decision {
        let v = self.victim;
        match phases[v] {
            PhaseTag::Ready if ledger.is_eligible(v) => Decision::Step {
                robot: v,
                step: PhaseStep::Look,
            },
            PhaseTag::Ready => self
                .other_step(phases, ledger)
                .expect("k-bounded eligibility is never empty"),
            tag => self.other_step(phases, ledger).unwrap_or(Decision::Step {
                robot: v,
                step: tag.next_step(),
            }),
        }
    }
}

/// Fully synchronous ATOM: every robot in every round.
#[derive(Debug, Default)]
pub struct AtomFull;

impl SchedulerStrategy for AtomFull {
    fn name(&self) -> &'static str {
        "atom-full"
    }

    fn next(
        &mut self,
        phases: &[PhaseTag],
        _ledger: &ActivationLedger,
        _rng: &mut ChaCha8Rng,
    ) -> Decision {
        Decision::Round {
            robots: (0..phases.len()).collect(),
        }
    }
}

/// Semi-synchronous ATOM: a random subset of at most `size` robots per round,
/// built so that each member is still eligible after the earlier ones Look.
/// Members Look in the order listed.
#[derive(Debug)]
pub struct AtomSubset {
    pub size: usize,
}

impl SchedulerStrategy for AtomSubset {
    fn name(&self) -> &'static str {
        "atom-subset"
    }

    fn next(
        &mut self,
        phases: &[PhaseTag],
        ledger: &ActivationLedger,
        rng: &mut ChaCha8Rng,
    ) -> Decision {
        let mut order: Vec<usize> = (0..phases.len()).collect();
        // Fisher-Yates, drawing from the run's own stream.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut tentative = ledger.clone();
        let mut robots = Vec::with_capacity(self.size);
        for j in order {
            if robots.len() == self.size {
                break;
            }
            if tentative.is_eligible(j) {
                tentative.record(j).expect("checked eligible");
                robots.push(j);
            }
        }
        Decision::Round { robots }
    }
}

/// Configuration-level scheduler selector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SchedulerKind {
    #[default]
    RandomK,
    RoundRobin,
    Lagging {
        #[serde(default)]
        victim: usize,
    },
    AtomFull,
    AtomSubset {
        size: usize,
    },
}

impl SchedulerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::RandomK => "random-k",
            SchedulerKind::RoundRobin => "round-robin",
            SchedulerKind::Lagging { .. } => "lagging",
            SchedulerKind::AtomFull => "atom-full",
            SchedulerKind::AtomSubset { .. } => "atom-subset",
        }
    }

    pub fn validate(&self, correct: usize) -> Result<(), String> {
        match self {
            SchedulerKind::Lagging { victim } if *victim >= correct => Err(format!(
                "lagging victim {victim} is not a correct robot (correct ids are 0..{correct})"
            )),
            SchedulerKind::AtomSubset { size } if *size == 0 => {
                Err("atom-subset size must be at least 1".into())
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Box<dyn SchedulerStrategy> {
        match self {
            SchedulerKind::RandomK => Box::new(RandomK::default()),
            SchedulerKind::RoundRobin => Box::new(RoundRobin::default()),
            SchedulerKind::Lagging { victim } => Box::new(LaggingObserver::new(*victim)),
            SchedulerKind::AtomFull => Box::new(AtomFull),
            SchedulerKind::AtomSubset { size } => Box::new(AtomSubset { size: *size }),
        }
    }
}
