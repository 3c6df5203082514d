//! Byzantine placement strategies and the movement adversary.
//!
//! Byzantine robots do not run a phase machine. The engine asks the strategy
//! for their positions once per step, before the scheduled event, and
//! teleports them there.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Position;

/// Ground truth handed to a Byzantine strategy.
#[derive(Debug, Clone, Copy)]
pub struct WorldView<'a> {
    pub step: u64,
    /// Positions of every robot; correct robots come first.
    pub positions: &'a [Position],
    pub correct: usize,
}

impl WorldView<'_> {
    pub fn correct_positions(&self) -> &[Position] {
        &self.positions[..self.correct]
    }

    pub fn byzantine_count(&self) -> usize {
        self.positions.len() - self.correct
    }

    fn correct_extremes(&self) -> (f64, f64) {
        self.correct_positions()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.get()), hi.max(p.get()))
            })
    }
}

pub trait ByzantineStrategy: Send {
    fn name(&self) -> &'static str;

    /// One position per Byzantine robot, in id order.
    fn place(&mut self, world: &WorldView<'_>, rng: &mut ChaCha8Rng) -> Vec<Position>;
}

/// Pins Byzantine robot `b` at `positions[b % len]`.
#[derive(Debug, Clone)]
pub struct StaticExtremes {
    pub positions: Vec<Position>,
}

impl ByzantineStrategy for StaticExtremes {
    fn name(&self) -> &'static str {
        "static"
    }

    fn place(&mut self, world: &WorldView<'_>, _rng: &mut ChaCha8Rng) -> Vec<Position> {
        (0..world.byzantine_count())
            .map(|b| self.positions[b % self.positions.len()])
            .collect()
    }
}

/// Every Byzantine robot flips between `low` and `high` each step; odd-indexed
/// robots run in opposite phase to even-indexed ones.
#[derive(Debug, Clone)]
pub struct Oscillate {
    pub low: Position,
    pub high: Position,
}

impl ByzantineStrategy for Oscillate {
    fn name(&self) -> &'static str {
        "oscillate"
    }

    fn place(&mut self, world: &WorldView<'_>, _rng: &mut ChaCha8Rng) -> Vec<Position> {
        (0..world.byzantine_count())
            .map(|b| {
                if (world.step + b as u64).is_multiple_of(2) {
                    self.low
                } else {
                    self.high
                }
            })
            .collect()
    }
}

/// Sits just outside the current correct range: even-indexed robots at
/// `min - gap`, odd-indexed at `max + gap`.
#[derive(Debug, Clone)]
pub struct Stretch {
    pub gap: f64,
}

impl ByzantineStrategy for Stretch {
    fn name(&self) -> &'static str {
        "stretch"
    }

    fn place(&mut self, world: &WorldView<'_>, _rng: &mut ChaCha8Rng) -> Vec<Position> {
        let (lo, hi) = world.correct_extremes();
        (0..world.byzantine_count())
            .map(|b| {
                let v = if b % 2 == 0 {
                    lo - self.gap
                } else {
                    hi + self.gap
                };
                Position::new(v).expect("stretch placement is finite")
            })
            .collect()
    }
}

/// Replays `steps[i]` at the i-th call, then holds the last entry.
#[derive(Debug, Clone)]
pub struct Scripted {
    pub steps: Vec<Vec<Position>>,
    cursor: usize,
}

impl Scripted {
    pub fn new(steps: Vec<Vec<Position>>) -> Self {
        Self { steps, cursor: 0 }
    }
}

impl ByzantineStrategy for Scripted {
    fn name(&self) -> &'static str {
        "scripted"
    }

    fn place(&mut self, world: &WorldView<'_>, _rng: &mut ChaCha8Rng) -> Vec<Position> {
        let idx = self.cursor.min(self.steps.len() - 1);
        self.cursor += 1;
        let row = &self.steps[idx];
        (0..world.byzantine_count())
            .map(|b| row[b % row.len()])
            .collect()
    }
}

/// Configuration-level selector for Byzantine behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ByzantineKind {
    /// No Byzantine robots at all; every robot is correct.
    None,
    Static {
        positions: Vec<Position>,
    },
    Oscillate {
        low: Position,
        high: Position,
    },
    Stretch {
        gap: f64,
    },
    Scripted {
        steps: Vec<Vec<Position>>,
    },
}

impl Default for ByzantineKind {
    fn default() -> Self {
        ByzantineKind::Static {
            positions: vec![
                Position::new(-1000.0).unwrap(),
                Position::new(1000.0).unwrap(),
            ],
        }
    }
}

impl ByzantineKind {
    pub fn name(&self) -> &'static str {
        match self {
            ByzantineKind::None => "none",
            ByzantineKind::Static { .. } => "static",
            ByzantineKind::Oscillate { .. } => "oscillate",
            ByzantineKind::Stretch { .. } => "stretch",
            ByzantineKind::Scripted { .. } => "scripted",
        }
    }

    /// Number of Byzantine robots this strategy puts into an `f`-tolerant run.
    pub fn byzantine_count(&self, f: usize) -> usize {
        match self {
            ByzantineKind::None => 0,
            _ => f,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            ByzantineKind::Static { positions } if positions.is_empty() => {
                Err("static strategy needs at least one position".into())
            }
            ByzantineKind::Stretch { gap } if !gap.is_finite() || *gap < 0.0 => {
                Err(format!("stretch gap must be finite and >= 0, got {gap}"))
            }
            ByzantineKind::Scripted { steps }
                if steps.is_empty() || steps.iter().any(Vec::is_empty) =>
            {
                Err("scripted strategy needs a non-empty list of non-empty rows".into())
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Option<Box<dyn ByzantineStrategy>> {
        match self {
            ByzantineKind::None => None,
            ByzantineKind::Static { positions } => Some(Box::new(StaticExtremes {
                positions: positions.clone(),
            })),
            ByzantineKind::Oscillate { low, high } => Some(Box::new(Oscillate {
                low: *low,
                high: *high,
            })),
            ByzantineKind::Stretch { gap } => Some(Box::new(Stretch { gap: *gap })),
            ByzantineKind::Scripted { steps } => Some(Box::new(Scripted::new(steps.clone()))),
        }
    }
}

/// How far a correct robot is allowed to travel in a Move step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MovementPolicy {
    #[default]
    Full,
    StopAtDelta,
    RandomInRange,
    /// Fractions of the requested distance, clamped to `[delta, d]`. The list
    /// is replayed once and its last entry held.
    Scripted {
        fractions: Vec<f64>,
    },
}

impl MovementPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            MovementPolicy::Full => "full",
            MovementPolicy::StopAtDelta => "stop-at-delta",
            MovementPolicy::RandomInRange => "random-in-range",
            MovementPolicy::Scripted { .. } => "scripted",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            MovementPolicy::Scripted { fractions } => {
                if fractions.is_empty() {
                    Err("scripted movement needs at least one fraction".into())
                } else if fractions.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    Err("scripted movement fractions must lie in [0, 1]".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Stateful wrapper that applies a [`MovementPolicy`] over a run.
#[derive(Debug, Clone)]
pub struct MovementAdversary {
    policy: MovementPolicy,
    cursor: usize,
}

impl MovementAdversary {
    pub fn new(policy: MovementPolicy) -> Self {
        Self { policy, cursor: 0 }
    }

    pub fn policy(&self) -> &MovementPolicy {
        &self.policy
    }

    pub fn grant(&mut self, requested: f64, delta: f64, rng: &mut ChaCha8Rng) -> f64 {
        let fraction = match &self.policy {
            MovementPolicy::Scripted { fractions } => {
                let f = fractions[self.cursor.min(fractions.len() - 1)];
                self.cursor += 1;
                Some(f)
            }
            _ => None,
        };
        grant_move(requested, delta, &self.policy, fraction, rng)
    }
}

/// Distance a robot actually travels toward a destination `requested` away.
///
/// Within `delta` of the destination the robot always arrives; otherwise the
/// grant lies in `[delta, requested]`. `fraction` is only read by the scripted
/// policy.
pub fn grant_move(
    requested: f64,
    delta: f64,
    policy: &MovementPolicy,
    fraction: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    debug_assert!(requested >= 0.0 && delta > 0.0);
    if requested <= delta {
        return requested;
    }
    match policy {
        MovementPolicy::Full => requested,
        MovementPolicy::StopAtDelta => delta,
        MovementPolicy::RandomInRange => rng.random_range(delta..=requested),
        MovementPolicy::Scripted { .. } => {
            (fraction.unwrap_or(1.0) * requested).clamp(delta, requested)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn p(v: f64) -> Position {
        Position::new(v).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn world(step: u64, positions: &[Position], correct: usize) -> WorldView<'_> {
        WorldView {
            step,
            positions,
            correct,
        }
    }

    #[test]
    fn static_holds_forever() {
        let mut s = ByzantineKind::Static {
            positions: vec![p(1000.0)],
        }
        .build()
        .unwrap();
        let pos = [p(0.0), p(50.0), p(100.0), p(0.0)];
        for step in 0..10 {
            assert_eq!(s.place(&world(step, &pos, 3), &mut rng()), vec![p(1000.0)]);
        }
    }

    #[test]
    fn oscillate_alternates() {
        let mut s = Oscillate {
            low: p(-50.0),
            high: p(150.0),
        };
        let pos = [p(0.0), p(1.0), p(2.0), p(3.0)];
        let seq: Vec<f64> = (0..4)
            .map(|step| s.place(&world(step, &pos, 3), &mut rng())[0].get())
            .collect();
        assert_eq!(seq, vec![-50.0, 150.0, -50.0, 150.0]);
    }

    #[test]
    fn stretch_sits_outside_correct_range() {
        let mut s = Stretch { gap: 10.0 };
        let pos = [p(3.0), p(40.0), p(20.0), p(0.0), p(0.0)];
        let placed = s.place(&world(0, &pos, 3), &mut rng());
        assert_eq!(placed, vec![p(-7.0), p(50.0)]);
    }

    #[test]
    fn scripted_holds_last_row() {
        let mut s = Scripted::new(vec![vec![p(1.0)], vec![p(2.0)]]);
        let pos = [p(0.0), p(0.0)];
        let got: Vec<f64> = (0..4)
            .map(|step| s.place(&world(step, &pos, 1), &mut rng())[0].get())
            .collect();
        assert_eq!(got, vec![1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn grant_examples() {
        let mut r = rng();
        assert_eq!(
            grant_move(0.0, 0.01, &MovementPolicy::StopAtDelta, None, &mut r),
            0.0
        );
        assert_eq!(
            grant_move(0.005, 0.01, &MovementPolicy::StopAtDelta, None, &mut r),
            0.005
        );
        assert_eq!(
            grant_move(10.0, 0.01, &MovementPolicy::StopAtDelta, None, &mut r),
            0.01
        );
        assert_eq!(
            grant_move(10.0, 0.01, &MovementPolicy::Full, None, &mut r),
            10.0
        );
    }

    #[test]
    fn scripted_movement_is_clamped() {
        let mut m = MovementAdversary::new(MovementPolicy::Scripted {
            fractions: vec![0.0, 0.5],
        });
        let mut r = rng();
        assert_eq!(m.grant(10.0, 1.0, &mut r), 1.0);
        assert_eq!(m.grant(10.0, 1.0, &mut r), 5.0);
        assert_eq!(m.grant(4.0, 1.0, &mut r), 2.0);
    }

    #[test]
    fn kinds_parse_from_toml() {
        let k: ByzantineKind = toml::from_str("kind = \"stretch\"\ngap = 10.0").unwrap();
        assert_eq!(k, ByzantineKind::Stretch { gap: 10.0 });
        assert!(
            toml::from_str::<ByzantineKind>("kind = \"stretch\"\ngap = 1.0\nwidth = 2").is_err()
        );
        let m: MovementPolicy = toml::from_str("kind = \"stop-at-delta\"").unwrap();
        assert_eq!(m, MovementPolicy::StopAtDelta);
    }

    proptest::proptest! {
        #[test]
        fn grants_respect_bounds(
            d in 0.0..100.0f64,
            delta in 1e-4..1.0f64,
            seed in 0u64..1000,
            which in 0usize..4,
            frac in 0.0..=1.0f64,
        ) {
            let policy = [
                MovementPolicy::Full,
                MovementPolicy::StopAtDelta,
                MovementPolicy::RandomInRange,
                MovementPolicy::Scripted { fractions: vec![frac] },
            ][which].clone();
            let mut m = MovementAdversary::new(policy);
            let g = m.grant(d, delta, &mut ChaCha8Rng::seed_from_u64(seed));
            proptest::prop_assert!(g >= d.min(delta) && g <= d);
        }
    }
}
