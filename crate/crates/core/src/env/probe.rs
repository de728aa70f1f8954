//! Scripted probe policies that force specific game events and report which
//! program deviations they observed.
//!
//! These probes are the conformance oracle for the simulators and the
//! reachability oracle used to mask unobservable labels on the full grid.

use std::collections::BTreeSet;

use crate::env::bounce::{self, BounceEnv, Cell, EventRecord, EventType, ProgramSpec, PADDLE_Y};
use crate::env::breakout::{self, BreakoutEnv, BreakoutError, BreakoutEvent, BreakoutProgramSpec};
use crate::env::{fold_unit, Action};

/// Episodes tried per event before declaring it unreachable.
pub const PROBE_EPISODES: u64 = 40;

/// What the Bounce probes saw.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BounceProbeReport {
    pub reached: BTreeSet<EventType>,
    pub deviations: BTreeSet<Cell>,
}

/// Where a ball moving with the given state crosses the paddle line.
fn landing_x(x: f64, y: f64, vx: f64, vy: f64) -> Option<f64> {
    if vy >= 0.0 {
        return None;
    }
    let steps = (y - PADDLE_Y) / -vy;
    Some(fold_unit(x + vx * steps))
}

/// Tracks whether the paddle responds to commands in reverse.
#[derive(Debug, Default)]
struct Calibration {
    reversed: bool,
}

impl Calibration {
    fn command(&self, want: f64) -> Action {
        let dir = if self.reversed { -want } else { want };
        if dir < 0.0 {
            Action::Left
        } else if dir > 0.0 {
            Action::Right
        } else {
            Action::Stay
        }
    }

    fn observe(&mut self, action: Action, before: f64, after: f64, only_paddle_event: bool) {
        if action == Action::Stay || !only_paddle_event || (after - before).abs() < 1e-12 {
            return;
        }
        let moved = (after - before).signum();
        let commanded = action.direction();
        self.reversed = moved != commanded;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Intent {
    Catch,
    Avoid,
}

fn bounce_probe_action(env: &BounceEnv, intent: Intent, cal: &Calibration) -> Action {
    let state = env.state();
    let paddle = state.paddle_x;
    let step = env.program().paddle_speed.paddle_step();
    let target = state
        .balls
        .iter()
        .filter_map(|b| landing_x(b.x, b.y, b.vx, b.vy).map(|lx| (b.y, lx)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, lx)| lx);
    let Some(target) = target else {
        return Action::Stay;
    };
    let goal = match intent {
        Intent::Catch => target,
        Intent::Avoid => {
            if target > 0.5 {
                0.0
            } else {
                1.0
            }
        }
    };
    let diff = goal - paddle;
    if diff.abs() <= step / 2.0 {
        Action::Stay
    } else {
        cal.command(diff.signum())
    }
}

/// First record of `event` observed by the matching probe, if any.
fn probe_event(program: &ProgramSpec, event: EventType, episodes: u64) -> Option<EventRecord> {
    match event {
        EventType::ProgramStarts => {
            let (env, _) = BounceEnv::reset(program.clone(), 0).ok()?;
            env.start_events().first().copied()
        }
        EventType::PaddleMoves => {
            let (mut env, _) = BounceEnv::reset(program.clone(), 0).ok()?;
            let t = env.step(Action::Left).ok()?;
            t.events.into_iter().find(|r| r.event == event)
        }
        _ => {
            let intent = if event == EventType::BallHitsFloor {
                Intent::Avoid
            } else {
                Intent::Catch
            };
            for seed in 0..episodes {
                let Ok((mut env, _)) = BounceEnv::reset(program.clone(), seed) else {
                    return None;
                };
                let mut cal = Calibration::default();
                // Wiggle once so the calibration can see the paddle respond.
                let mut first = true;
                while !env.is_done() {
                    let action = if first {
                        first = false;
                        Action::Right
                    } else {
                        bounce_probe_action(&env, intent, &cal)
                    };
                    let before = env.state().paddle_x;
                    let t = env.step(action).ok()?;
                    if let Some(r) = t.events.iter().find(|r| r.event == event) {
                        return Some(*r);
                    }
                    let only_paddle = t.events.iter().all(|r| r.event == EventType::PaddleMoves);
                    cal.observe(action, before, env.state().paddle_x, only_paddle);
                }
            }
            None
        }
    }
}

/// Runs every event probe against `program`.
pub fn probe_bounce(program: &ProgramSpec) -> BounceProbeReport {
    probe_bounce_with(program, PROBE_EPISODES)
}

pub fn probe_bounce_with(program: &ProgramSpec, episodes: u64) -> BounceProbeReport {
    let mut report = BounceProbeReport::default();
    for event in EventType::ALL {
        if let Some(record) = probe_event(program, event, episodes) {
            report.reached.insert(event);
            report.deviations.extend(record.deviations());
        }
    }
    report
}

/// What the Breakout probes saw.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BreakoutProbeReport {
    pub detected: BTreeSet<BreakoutError>,
}

fn breakout_rows_visible(obs: &[f64]) -> usize {
    (0..breakout::MAX_ROWS)
        .filter(|r| {
            (0..breakout::COLUMNS).any(|c| obs[5 + r * breakout::COLUMNS + c] > 0.5)
        })
        .count()
}

fn breakout_track(env: &BreakoutEnv, goal_offset: f64, cal: &Calibration) -> Action {
    let s = env.state();
    let step = env.program().paddle_speed.paddle_step();
    let b = s.ball;
    let target = landing_x(b.x, b.y, b.vx, b.vy).unwrap_or(b.x) + goal_offset;
    let diff = target - s.paddle_x;
    if diff.abs() <= step / 2.0 {
        Action::Stay
    } else {
        cal.command(diff.signum())
    }
}

/// Side-contact manoeuvre: let a falling ball pass just beside the paddle,
/// then slide into it and follow it. Returns the longest run of consecutive
/// steps with a reversing paddle contact.
pub fn skewer_run(program: &BreakoutProgramSpec, seed: u64) -> usize {
    let Ok((mut env, _)) = BreakoutEnv::reset(program.clone(), seed) else {
        return 0;
    };
    let mut cal = Calibration::default();
    let mut best = 0;
    let mut run = 0;
    let mut engaged = false;
    let mut first = true;
    while !env.is_done() {
        let s = env.state();
        let b = s.ball;
        let step = env.program().paddle_speed.paddle_step();
        let action = if first {
            first = false;
            Action::Right
        } else if engaged || (b.y <= PADDLE_Y && b.y >= breakout::PADDLE_BOTTOM) {
            engaged = true;
            let diff = b.x + b.vx - s.paddle_x;
            if diff.abs() <= step / 2.0 {
                Action::Stay
            } else {
                cal.command(diff.signum())
            }
        } else {
            // Park the paddle edge just past the landing point, on the side
            // the ball is travelling away from.
            let side = if b.vx >= 0.0 { -1.0 } else { 1.0 };
            let offset = side * (bounce::PADDLE_HALF_WIDTH + 0.6 * step);
            breakout_track(&env, offset, &cal)
        };
        let before = env.state().paddle_x;
        let Ok(t) = env.step(action) else { break };
        let only_paddle = t
            .events
            .iter()
            .all(|e| matches!(e, BreakoutEvent::PaddleMoved { .. }));
        cal.observe(action, before, env.state().paddle_x, only_paddle);
        let reversed = t
            .events
            .iter()
            .any(|e| matches!(e, BreakoutEvent::PaddleContact { reversed: true }));
        if reversed {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
            if engaged && env.state().ball.y > breakout::BRICK_BOTTOM / 2.0 {
                engaged = false;
            }
        }
    }
    best
}

/// Runs every Breakout probe against `program`.
pub fn probe_breakout(program: &BreakoutProgramSpec) -> BreakoutProbeReport {
    let mut report = BreakoutProbeReport::default();
    let Ok((mut env, obs)) = BreakoutEnv::reset(program.clone(), 0) else {
        return report;
    };
    if breakout_rows_visible(&obs) != breakout::CORRECT_ROWS {
        report.detected.insert(BreakoutError::WrongRowCount);
    }
    let before = env.state().paddle_x;
    if env.step(Action::Left).is_ok() && env.state().paddle_x > before {
        report.detected.insert(BreakoutError::ReversedPaddle);
    }

    // Keep the ball in play until it meets a brick.
    'bricks: for seed in 0..PROBE_EPISODES {
        let Ok((mut env, _)) = BreakoutEnv::reset(program.clone(), seed) else {
            break;
        };
        let mut cal = Calibration::default();
        let mut first = true;
        while !env.is_done() {
            let action = if first {
                first = false;
                Action::Right
            } else {
                breakout_track(&env, 0.0, &cal)
            };
            let before = env.state().paddle_x;
            let Ok(t) = env.step(action) else { break };
            for e in &t.events {
                if let BreakoutEvent::BrickContact { deleted, bounced } = *e {
                    if !deleted {
                        report.detected.insert(BreakoutError::NoDeleteBrick);
                    }
                    if !bounced {
                        report.detected.insert(BreakoutError::NoBounceOffBrick);
                    }
                    break 'bricks;
                }
            }
            let only_paddle = t
                .events
                .iter()
                .all(|e| matches!(e, BreakoutEvent::PaddleMoved { .. }));
            cal.observe(action, before, env.state().paddle_x, only_paddle);
        }
    }

    // Stay away from the ball until it reaches the floor.
    'floor: for seed in 0..PROBE_EPISODES {
        let Ok((mut env, _)) = BreakoutEnv::reset(program.clone(), seed) else {
            break;
        };
        let mut cal = Calibration::default();
        let mut first = true;
        while !env.is_done() {
            let action = if first {
                first = false;
                Action::Right
            } else {
                let b = env.state().ball;
                let lx = landing_x(b.x, b.y, b.vx, b.vy).unwrap_or(b.x);
                let goal = if lx > 0.5 { 0.0 } else { 1.0 };
                cal.command((goal - env.state().paddle_x).signum())
            };
            let before = env.state().paddle_x;
            let Ok(t) = env.step(action) else { break };
            for e in &t.events {
                if let BreakoutEvent::Floor { bounced } = *e {
                    if bounced {
                        report.detected.insert(BreakoutError::BounceOffFloor);
                    }
                    break 'floor;
                }
            }
            let only_paddle = t
                .events
                .iter()
                .all(|e| matches!(e, BreakoutEvent::PaddleMoved { .. }));
            cal.observe(action, before, env.state().paddle_x, only_paddle);
        }
    }

    if (0..PROBE_EPISODES).any(|seed| skewer_run(program, seed) >= 3) {
        report.detected.insert(BreakoutError::PaddleSkewer);
    }
    report
}
