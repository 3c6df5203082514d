//! Execution traces and their line-delimited JSON encoding.
//!
//! The first line is the header (configuration echo, format and code
//! version); every further line is one event. Floats are written in shortest
//! round-trip form, so a decoded trace is bit-identical to the one written.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::geometry::{LocalFrame, Position};

pub const FORMAT_VERSION: u32 = 1;
pub const CODE_VERSION: &str = concat!("byzline-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format_version: u32,
    pub code_version: String,
    pub config: SimConfig,
    /// Number of correct robots; they hold ids `0..correct`, Byzantine robots
    /// hold the rest.
    pub correct: usize,
    /// Positions of all robots before the first step.
    pub initial_positions: Vec<Position>,
    pub initial_ud_diameter: f64,
}

impl TraceHeader {
    pub fn is_correct(&self, robot: usize) -> bool {
        robot < self.correct
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum EventKind {
    Look {
        frame: LocalFrame,
        /// FNV-1a digest of the local snapshot, hex encoded.
        digest: String,
        /// Last destination of every correct robot at Look time, in id
        /// order. Engine ground truth; the robot never sees it.
        pending: Vec<Position>,
    },
    Compute {
        destination: Position,
    },
    Move {
        destination: Position,
        granted: f64,
        new_position: Position,
    },
    ByzMove {
        new_position: Position,
    },
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::Look { .. } => "Look",
            EventKind::Compute { .. } => "Compute",
            EventKind::Move { .. } => "Move",
            EventKind::ByzMove { .. } => "ByzMove",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Phase-step index; Byzantine moves share the index of the phase step
    /// they precede.
    pub step: u64,
    pub robot: usize,
    #[serde(flatten)]
    pub kind: EventKind,
    /// Global positions of all robots after the event.
    pub positions: Vec<Position>,
    /// Diameter of the correct positions after the event.
    pub diameter: f64,
    /// Diameter of correct positions together with correct robots' last
    /// destinations, after the event.
    pub ud_diameter: f64,
}

impl TraceEvent {
    pub fn correct_positions<'a>(&'a self, header: &TraceHeader) -> &'a [Position] {
        &self.positions[..header.correct]
    }
}

/// Receives a run as it happens.
pub trait TraceSink {
    fn header(&mut self, header: &TraceHeader);
    fn event(&mut self, event: &TraceEvent);
}

impl<A: TraceSink, B: TraceSink> TraceSink for (A, B) {
    fn header(&mut self, header: &TraceHeader) {
        self.0.header(header);
        self.1.header(header);
    }

    fn event(&mut self, event: &TraceEvent) {
        self.0.event(event);
        self.1.event(event);
    }
}

impl<S: TraceSink + ?Sized> TraceSink for &mut S {
    fn header(&mut self, header: &TraceHeader) {
        (**self).header(header);
    }

    fn event(&mut self, event: &TraceEvent) {
        (**self).event(event);
    }
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn header(&mut self, _: &TraceHeader) {}
    fn event(&mut self, _: &TraceEvent) {}
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

/// Collects a run into a [`Trace`].
#[derive(Debug, Default)]
pub struct TraceRecorder {
    header: Option<TraceHeader>,
    events: Vec<TraceEvent>,
}

impl TraceRecorder {
    pub fn finish(self) -> Option<Trace> {
        Some(Trace {
            header: self.header?,
            events: self.events,
        })
    }
}

impl TraceSink for TraceRecorder {
    fn header(&mut self, header: &TraceHeader) {
        self.header = Some(header.clone());
        self.events.clear();
    }

    fn event(&mut self, event: &TraceEvent) {
        self.events.push(event.clone());
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace is empty")]
    Empty,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line {
    Header(TraceHeader),
    Event(TraceEvent),
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum LineRef<'a> {
    Header(&'a TraceHeader),
    Event(&'a TraceEvent),
}

pub fn header_line(header: &TraceHeader) -> String {
    serde_json::to_string(&LineRef::Header(header)).expect("header serializes")
}

pub fn event_line(event: &TraceEvent) -> String {
    serde_json::to_string(&LineRef::Event(event)).expect("event serializes")
}

impl Trace {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", header_line(&self.header))?;
        for e in &self.events {
            writeln!(out, "{}", event_line(e))?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut header = None;
        let mut events = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            match (parsed, header.is_some()) {
                (Line::Header(h), false) => header = Some(h),
                (Line::Event(e), true) => events.push(e),
                (Line::Header(_), true) => {
                    return Err(TraceError::Parse {
                        line: idx + 1,
                        message: "second header record".into(),
                    })
                }
                (Line::Event(_), false) => {
                    return Err(TraceError::Parse {
                        line: idx + 1,
                        message: "event before header".into(),
                    })
                }
            }
        }
        let header = header.ok_or(TraceError::Empty)?;
        let trace = Trace { header, events };
        trace.check_shape()?;
        Ok(trace)
    }

    fn check_shape(&self) -> Result<(), TraceError> {
        let n = self.header.config.n;
        let bad = |i: usize, message: String| TraceError::Parse {
            line: i + 2,
            message,
        };
        if self.header.initial_positions.len() != n || self.header.correct > n {
            return Err(TraceError::Parse {
                line: 1,
                message: "header robot counts disagree".into(),
            });
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.positions.len() != n {
                return Err(bad(
                    i,
                    format!("expected {n} positions, got {}", e.positions.len()),
                ));
            }
            if e.robot >= n {
                return Err(bad(i, format!("robot id {} out of range", e.robot)));
            }
            if let EventKind::Look { pending, .. } = &e.kind {
                if pending.len() != self.header.correct {
                    return Err(bad(
                        i,
                        "pending destinations do not match correct count".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Streams a run straight to a writer as line-delimited JSON.
pub struct JsonlWriter<W: Write> {
    out: W,
    error: Option<std::io::Error>,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, error: None }
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }

    fn write_line(&mut self, line: String) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.out, "{line}") {
                self.error = Some(e);
            }
        }
    }
}

impl<W: Write> TraceSink for JsonlWriter<W> {
    fn header(&mut self, header: &TraceHeader) {
        self.write_line(header_line(header));
    }

    fn event(&mut self, event: &TraceEvent) {
        self.write_line(event_line(event));
    }
}
