//! The deterministic simulation loop.
//!
//! A run is fully determined by its [`SimConfig`]: every random choice is
//! drawn from a ChaCha stream derived from the seed, with one stream per
//! consumer so that swapping, say, the movement policy leaves the schedule
//! untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{ByzantineStrategy, MovementAdversary, WorldView};
use crate::config::{ConfigError, FrameMode, InitialPositions, SimConfig};
use crate::geometry::{LocalFrame, Position};
use crate::schedule::{
    advance_phase, ActivationLedger, ActivationUnit, Decision, Phase, PhaseEnv, PhaseError,
    PhaseOutcome, PhaseRequest, PhaseStep, PhaseTag, RobotState, SchedulerStrategy,
};
use crate::trace::{
    event_line, header_line, EventKind, Trace, TraceEvent, TraceHeader, TraceRecorder, TraceSink,
    CODE_VERSION, FORMAT_VERSION,
};

/// Upper bound on the number of points kept in a diameter time series.
const SERIES_POINTS: u64 = 500;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("robot {robot}: {source}")]
    Phase {
        robot: usize,
        #[source]
        source: PhaseError,
    },
    #[error("scheduler `{scheduler}` returned an inadmissible choice: {reason}")]
    Scheduler {
        scheduler: &'static str,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub converged: bool,
    /// First phase-step index at which the UD-diameter was below epsilon.
    pub t_epsilon: Option<u64>,
    pub steps: u64,
    pub initial_ud_diameter: f64,
    pub final_ud_diameter: f64,
    pub final_diameter: f64,
    /// Activations per correct robot, in the configured activation unit.
    pub activations: Vec<u64>,
    /// Downsampled `(step, ud_diameter)` series.
    pub diameter_series: Vec<(u64, f64)>,
}

struct Streams {
    scheduler: ChaCha8Rng,
    byzantine: ChaCha8Rng,
    movement: ChaCha8Rng,
    frames: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Diameters of the correct positions and of positions plus last
/// destinations.
fn diameters(robots: &[RobotState]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in robots {
        lo = lo.min(r.position.get());
        hi = hi.max(r.position.get());
    }
    let d = hi - lo;
    for r in robots {
        lo = lo.min(r.last_destination.get());
        hi = hi.max(r.last_destination.get());
    }
    (d, hi - lo)
}

/// A run in progress.
pub struct Simulation {
    config: SimConfig,
    correct: usize,
    robots: Vec<RobotState>,
    positions: Vec<Position>,
    ledger: ActivationLedger,
    scheduler: Box<dyn SchedulerStrategy>,
    byzantine: Option<Box<dyn ByzantineStrategy>>,
    movement: MovementAdversary,
    streams: Streams,
    phases: Vec<PhaseTag>,
    step: u64,
    diameter: f64,
    ud_diameter: f64,
    initial_ud_diameter: f64,
    t_epsilon: Option<u64>,
    series: Vec<(u64, f64)>,
    series_stride: u64,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let correct = config.correct_count();
        let mut init = stream(config.seed, 0);
        let correct_positions: Vec<Position> = match &config.initial {
            InitialPositions::Explicit { positions } => positions
                .iter()
                .map(|&v| Position::new(v).expect("validated finite"))
                .collect(),
            InitialPositions::Uniform { lo, hi } => (0..correct)
                .map(|_| Position::new(init.random_range(*lo..=*hi)).expect("finite bounds"))
                .collect(),
        };
        let robots: Vec<RobotState> = correct_positions
            .iter()
            .map(|&p| RobotState::at(p))
            .collect();
        let mut positions = correct_positions;
        positions.resize(config.n, Position::new(0.0).unwrap());
        let mut streams = Streams {
            scheduler: stream(config.seed, 1),
            byzantine: stream(config.seed, 2),
            movement: stream(config.seed, 3),
            frames: stream(config.seed, 4),
        };
        let mut byzantine = config.byzantine.build();
        if let Some(strategy) = byzantine.as_mut() {
            let placed = strategy.place(
                &WorldView {
                    step: 0,
                    positions: &positions,
                    correct,
                },
                &mut streams.byzantine,
            );
            positions[correct..].copy_from_slice(&placed);
        }
        let (diameter, ud_diameter) = diameters(&robots);
        let t_epsilon = (ud_diameter < config.epsilon).then_some(0);
        let series_stride = config.max_steps.div_ceil(SERIES_POINTS).max(1);
        Ok(Self {
            correct,
            ledger: ActivationLedger::new(correct, config.k),
            scheduler: config.scheduler.build(),
            movement: MovementAdversary::new(config.movement.clone()),
            phases: vec![PhaseTag::Ready; correct],
            robots,
            positions,
            byzantine,
            streams,
            step: 0,
            diameter,
            ud_diameter,
            initial_ud_diameter: ud_diameter,
            t_epsilon,
            series: vec![(0, ud_diameter)],
            series_stride,
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            format_version: FORMAT_VERSION,
            code_version: CODE_VERSION.to_owned(),
            config: self.config.clone(),
            correct: self.correct,
            initial_positions: self.positions.clone(),
            initial_ud_diameter: self.initial_ud_diameter,
        }
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn robots(&self) -> &[RobotState] {
        &self.robots
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn ud_diameter(&self) -> f64 {
        self.ud_diameter
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn is_converged(&self) -> bool {
        self.t_epsilon.is_some()
    }

    fn emit(&mut self, robot: usize, kind: EventKind, sink: &mut dyn TraceSink) {
        sink.event(&TraceEvent {
            step: self.step,
            robot,
            kind,
            positions: self.positions.clone(),
            diameter: self.diameter,
            ud_diameter: self.ud_diameter,
        });
    }

    /// Lets the Byzantine strategy reposition its robots ahead of phase step
    /// `self.step + 1`.
    fn place_byzantine(&mut self, sink: &mut dyn TraceSink) {
        let Some(strategy) = self.byzantine.as_mut() else {
            return;
        };
        let upcoming = self.step + 1;
        let placed = strategy.place(
            &WorldView {
                step: upcoming,
                positions: &self.positions,
                correct: self.correct,
            },
            &mut self.streams.byzantine,
        );
        for (b, p) in placed.into_iter().enumerate() {
            let id = self.correct + b;
            if self.positions[id].get().to_bits() != p.get().to_bits() {
                self.positions[id] = p;
                sink.event(&TraceEvent {
                    step: upcoming,
                    robot: id,
                    kind: EventKind::ByzMove { new_position: p },
                    positions: self.positions.clone(),
                    diameter: self.diameter,
                    ud_diameter: self.ud_diameter,
                });
            }
        }
    }

    fn draw_frame(&mut self) -> LocalFrame {
        match self.config.frame_mode {
            FrameMode::Identity => LocalFrame::identity(),
            FrameMode::RandomPerLook => {
                let rng = &mut self.streams.frames;
                let origin = rng.random_range(-1000.0..=1000.0);
                let magnitude = rng.random_range(0.5..=2.0);
                let scale = if rng.random_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                };
                LocalFrame::new(origin, scale).expect("scale magnitude is at least 0.5")
            }
        }
    }

    fn record_activation(&mut self, robot: usize) -> Result<(), EngineError> {
        self.ledger
            .record(robot)
            .map_err(|v| EngineError::Scheduler {
                scheduler: self.scheduler.name(),
                reason: v.to_string(),
            })
    }

    /// The rule is a deterministic function of the snapshot, so a robot's
    /// destination is fixed the moment it Looks. Counting it as pending from
    /// then on keeps every member of UD inside the range UD had when it was
    /// added; waiting for Compute would let a stale destination land outside
    /// a range that shrank in the meantime.
    fn commit_destination(&mut self, robot: usize) -> Result<(), EngineError> {
        let state = &mut self.robots[robot];
        let Phase::Looked { snapshot, frame } = &state.phase else {
            unreachable!("called right after a Look")
        };
        let local = self
            .config
            .rule
            .rule()
            .compute(snapshot)
            .map_err(|e| EngineError::Phase {
                robot,
                source: e.into(),
            })?;
        state.last_destination = frame.to_global(local);
        Ok(())
    }

    /// Executes one phase step of a correct robot and emits its event.
    fn execute(
        &mut self,
        robot: usize,
        step: PhaseStep,
        sink: &mut dyn TraceSink,
    ) -> Result<(), EngineError> {
        if step == PhaseStep::Look {
            if !self.ledger.is_eligible(robot) {
                return Err(EngineError::Scheduler {
                    scheduler: self.scheduler.name(),
                    reason: format!("robot {robot} is not eligible to Look"),
                });
            }
            if self.config.activation_unit == ActivationUnit::Look {
                self.record_activation(robot)?;
            }
        }
        let request = match step {
            PhaseStep::Look => PhaseRequest::Look(self.draw_frame()),
            PhaseStep::Compute => PhaseRequest::Compute,
            PhaseStep::Move => PhaseRequest::Move,
        };
        let mut env = PhaseEnv {
            f: self.config.f,
            delta: self.config.delta,
            rule: self.config.rule.rule(),
            movement: &mut self.movement,
            rng: &mut self.streams.movement,
        };
        let outcome = advance_phase(&mut self.robots[robot], request, &self.positions, &mut env)
            .map_err(|source| EngineError::Phase { robot, source })?;
        self.phases[robot] = self.robots[robot].phase.tag();
        self.step += 1;
        let kind = match outcome {
            PhaseOutcome::Looked { frame, digest } => {
                let pending = self.robots.iter().map(|r| r.last_destination).collect();
                self.commit_destination(robot)?;
                EventKind::Look {
                    frame,
                    digest: format!("{digest:016x}"),
                    pending,
                }
            }
            PhaseOutcome::Computed { destination } => EventKind::Compute { destination },
            PhaseOutcome::Moved {
                destination,
                granted,
                position,
            } => {
                self.positions[robot] = position;
                if self.config.activation_unit == ActivationUnit::Cycle {
                    self.record_activation(robot)?;
                }
                EventKind::Move {
                    destination,
                    granted,
                    new_position: position,
                }
            }
        };
        (self.diameter, self.ud_diameter) = diameters(&self.robots);
        if self.t_epsilon.is_none() && self.ud_diameter < self.config.epsilon {
            self.t_epsilon = Some(self.step);
        }
        if self.step.is_multiple_of(self.series_stride) {
            self.series.push((self.step, self.ud_diameter));
        }
        self.emit(robot, kind, sink);
        Ok(())
    }

    /// One atomic round: all `subset` robots Look at the same world, then all
    /// Compute, then all Move. Only robots at the start of a cycle may take
    /// part.
    pub fn atom_round(
        &mut self,
        subset: &[usize],
        sink: &mut dyn TraceSink,
    ) -> Result<(), EngineError> {
        let reject = |reason: String| EngineError::Scheduler {
            scheduler: "atom",
            reason,
        };
        if subset.is_empty() {
            return Err(reject("empty round".into()));
        }
        if let Some(&r) = subset.iter().find(|&&r| r >= self.correct) {
            return Err(reject(format!("robot {r} is not a correct robot")));
        }
        if let Some(&r) = subset.iter().find(|&&r| self.phases[r] != PhaseTag::Ready) {
            return Err(reject(format!("robot {r} is mid-cycle")));
        }
        self.place_byzantine(sink);
        for step in [PhaseStep::Look, PhaseStep::Compute, PhaseStep::Move] {
            for &r in subset {
                self.execute(r, step, sink)?;
            }
        }
        Ok(())
    }

    /// Asks the scheduler for one decision and carries it out.
    pub fn step_once(&mut self, sink: &mut dyn TraceSink) -> Result<(), EngineError> {
        let decision = self
            .scheduler
            .next(&self.phases, &self.ledger, &mut self.streams.scheduler);
        match decision {
            Decision::Step { robot, step } => {
                if robot >= self.correct || self.phases[robot].next_step() != step {
                    return Err(EngineError::Scheduler {
                        scheduler: self.scheduler.name(),
                        reason: format!("robot {robot} cannot perform {step}"),
                    });
                }
                self.place_byzantine(sink);
                self.execute(robot, step, sink)
            }
            Decision::Round { robots } => self.atom_round(&robots, sink),
        }
    }

    /// Runs until the UD-diameter drops below epsilon or the step budget is
    /// spent.
    pub fn run_to_end(mut self, sink: &mut dyn TraceSink) -> Result<RunResult, EngineError> {
        while self.t_epsilon.is_none() && self.step < self.config.max_steps {
            self.step_once(sink)?;
        }
        Ok(self.finish())
    }

    fn finish(mut self) -> RunResult {
        if self.series.last().map(|&(s, _)| s) != Some(self.step) {
            self.series.push((self.step, self.ud_diameter));
        }
        let converged = self.t_epsilon.is_some_and(|t| t <= self.config.max_steps);
        RunResult {
            converged,
            t_epsilon: self.t_epsilon.filter(|_| converged),
            steps: self.step,
            initial_ud_diameter: self.initial_ud_diameter,
            final_ud_diameter: self.ud_diameter,
            final_diameter: self.diameter,
            activations: self.ledger.activations().to_vec(),
            diameter_series: self.series,
        }
    }
}

/// Runs `config`, streaming the trace into `sink`.
pub fn run_with_sink(
    config: &SimConfig,
    sink: &mut dyn TraceSink,
) -> Result<RunResult, EngineError> {
    let sim = Simulation::new(config.clone())?;
    sink.header(&sim.header());
    sim.run_to_end(sink)
}

/// Runs `config` and keeps the whole trace in memory.
pub fn run(config: &SimConfig) -> Result<(Trace, RunResult), EngineError> {
    let mut recorder = TraceRecorder::default();
    let result = run_with_sink(config, &mut recorder)?;
    let trace = recorder.finish().expect("header was emitted");
    Ok((trace, result))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("cannot re-run trace configuration: {0}")]
    Engine(#[from] EngineError),
    #[error("trace header differs from the re-run header")]
    HeaderMismatch,
    #[error("replay diverges at event {index}:\n  recorded: {recorded}\n  replayed: {replayed}")]
    Divergence {
        index: usize,
        recorded: String,
        replayed: String,
    },
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub trace: Trace,
    pub result: RunResult,
    pub warnings: Vec<String>,
}

/// Re-executes a trace from its header and checks that the result matches
/// it event for event, comparing the encoded lines.
pub fn replay(trace: &Trace) -> Result<ReplayReport, ReplayError> {
    let mut warnings = Vec::new();
    if trace.header.code_version != CODE_VERSION {
        warnings.push(format!(
            "trace was written by {} but this is {CODE_VERSION}; replay is best-effort",
            trace.header.code_version
        ));
    }
    let (replayed, result) = run(&trace.header.config)?;
    let mut recorded_header = trace.header.clone();
    recorded_header.code_version = replayed.header.code_version.clone();
    if header_line(&recorded_header) != header_line(&replayed.header) {
        return Err(ReplayError::HeaderMismatch);
    }
    let len = trace.events.len().max(replayed.events.len());
    for index in 0..len {
        let a = trace.events.get(index).map(event_line);
        let b = replayed.events.get(index).map(event_line);
        if a != b {
            let missing = || "<no event>".to_owned();
            return Err(ReplayError::Divergence {
                index,
                recorded: a.unwrap_or_else(missing),
                replayed: b.unwrap_or_else(missing),
            });
        }
    }
    Ok(ReplayReport {
        trace: replayed,
        result,
        warnings,
    })
}
