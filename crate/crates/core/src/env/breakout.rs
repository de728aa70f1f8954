//! Breakout: one ball, a paddle and a grid of bricks.
//!
//! Bricks fill the band `y ∈ [0.6, 0.95]` in 8 columns; the row height is the
//! band height divided by the program's row count. The paddle is the box
//! `[x - 0.1, x + 0.1] × [0.01, 0.05]`. The environment reward is always 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::bounce::{PADDLE_HALF_WIDTH, PADDLE_Y};
use crate::env::{Action, Speed};
use crate::error::{Error, Result};

pub const COLUMNS: usize = 8;
pub const CORRECT_ROWS: usize = 10;
pub const MAX_ROWS: usize = 14;
pub const BRICK_TOP: f64 = 0.95;
pub const BRICK_BOTTOM: f64 = 0.6;
pub const PADDLE_BOTTOM: f64 = 0.01;
pub const OBS_DIM: usize = 5 + MAX_ROWS * COLUMNS;
pub const MAX_STEPS: usize = 300;
pub const LAUNCH_POINT: (f64, f64) = (0.5, 0.5);

/// Rubric entries for this assignment, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakoutError {
    PaddleSkewer,
    NoDeleteBrick,
    NoBounceOffBrick,
    WrongRowCount,
    ReversedPaddle,
    BounceOffFloor,
}

impl BreakoutError {
    pub const ALL: [BreakoutError; 6] = [
        BreakoutError::PaddleSkewer,
        BreakoutError::NoDeleteBrick,
        BreakoutError::NoBounceOffBrick,
        BreakoutError::WrongRowCount,
        BreakoutError::ReversedPaddle,
        BreakoutError::BounceOffFloor,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BreakoutProgramSpec {
    pub paddle_skewer: bool,
    pub no_delete_brick: bool,
    pub no_bounce_off_brick: bool,
    pub wrong_row_count: bool,
    pub row_count: usize,
    pub reversed_paddle: bool,
    pub bounce_off_floor: bool,
    pub ball_speed: Speed,
    pub paddle_speed: Speed,
}

impl Default for BreakoutProgramSpec {
    fn default() -> Self {
        Self {
            paddle_skewer: false,
            no_delete_brick: false,
            no_bounce_off_brick: false,
            wrong_row_count: false,
            row_count: CORRECT_ROWS,
            reversed_paddle: false,
            bounce_off_floor: false,
            ball_speed: Speed::Normal,
            paddle_speed: Speed::Normal,
        }
    }
}

impl BreakoutProgramSpec {
    pub fn correct() -> Self {
        Self::default()
    }

    /// Program with exactly one error; a wrong row count uses `rows_if_wrong` rows.
    pub fn with_error(error: BreakoutError, rows_if_wrong: usize) -> Self {
        let mut p = Self::default();
        p.set(error, true, rows_if_wrong);
        p
    }

    pub fn has(&self, error: BreakoutError) -> bool {
        match error {
            BreakoutError::PaddleSkewer => self.paddle_skewer,
            BreakoutError::NoDeleteBrick => self.no_delete_brick,
            BreakoutError::NoBounceOffBrick => self.no_bounce_off_brick,
            BreakoutError::WrongRowCount => self.wrong_row_count,
            BreakoutError::ReversedPaddle => self.reversed_paddle,
            BreakoutError::BounceOffFloor => self.bounce_off_floor,
        }
    }

    pub fn set(&mut self, error: BreakoutError, on: bool, rows_if_wrong: usize) {
        match error {
            BreakoutError::PaddleSkewer => self.paddle_skewer = on,
            BreakoutError::NoDeleteBrick => self.no_delete_brick = on,
            BreakoutError::NoBounceOffBrick => self.no_bounce_off_brick = on,
            BreakoutError::WrongRowCount => {
                self.wrong_row_count = on;
                self.row_count = if on { rows_if_wrong } else { CORRECT_ROWS };
            }
            BreakoutError::ReversedPaddle => self.reversed_paddle = on,
            BreakoutError::BounceOffFloor => self.bounce_off_floor = on,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_count == 0 || self.row_count > MAX_ROWS {
            return Err(Error::Config(format!(
                "row count {} outside 1..={MAX_ROWS}",
                self.row_count
            )));
        }
        if self.wrong_row_count == (self.row_count == CORRECT_ROWS) {
            return Err(Error::Config(
                "wrong_row_count must be set exactly when row_count != 10".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreakoutBall {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone)]
pub struct BreakoutState {
    pub paddle_x: f64,
    pub ball: BreakoutBall,
    /// Alive flags, row-major with row 0 at the top.
    pub bricks: Vec<bool>,
    pub rows: usize,
    pub step_index: usize,
}

impl BreakoutState {
    pub fn alive_count(&self) -> usize {
        self.bricks.iter().filter(|&&b| b).count()
    }

    fn brick_at(&self, x: f64, y: f64) -> Option<usize> {
        if !(BRICK_BOTTOM..BRICK_TOP).contains(&y) || !(0.0..1.0).contains(&x) {
            return None;
        }
        let h = (BRICK_TOP - BRICK_BOTTOM) / self.rows as f64;
        let row = (((BRICK_TOP - y) / h) as usize).min(self.rows - 1);
        let col = ((x * COLUMNS as f64) as usize).min(COLUMNS - 1);
        Some(row * COLUMNS + col)
    }
}

/// Audit record of one step's collisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BreakoutEvent {
    PaddleMoved { forward: bool },
    PaddleContact { reversed: bool },
    BrickContact { deleted: bool, bounced: bool },
    Wall,
    Floor { bounced: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakoutTransition {
    pub s: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub s_next: Vec<f64>,
    pub events: Vec<BreakoutEvent>,
}

#[derive(Debug, Clone)]
pub struct BreakoutEnv {
    program: BreakoutProgramSpec,
    state: BreakoutState,
    done: bool,
}

impl BreakoutEnv {
    pub fn reset(program: BreakoutProgramSpec, seed: u64) -> Result<(Self, Vec<f64>)> {
        program.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heading = rng.gen_range(200.0f64..340.0).to_radians();
        let speed = program.ball_speed.ball_step();
        let ball = BreakoutBall {
            x: LAUNCH_POINT.0,
            y: LAUNCH_POINT.1,
            vx: speed * heading.cos(),
            vy: speed * heading.sin(),
        };
        let env = Self::from_state(program, 0.5, ball)?;
        let obs = env.observation();
        Ok((env, obs))
    }

    /// Full brick grid with an explicit paddle and ball.
    pub fn from_state(program: BreakoutProgramSpec, paddle_x: f64, ball: BreakoutBall) -> Result<Self> {
        program.validate()?;
        let rows = program.row_count;
        Ok(Self {
            state: BreakoutState {
                paddle_x,
                ball,
                bricks: vec![true; rows * COLUMNS],
                rows,
                step_index: 0,
            },
            program,
            done: false,
        })
    }

    pub fn program(&self) -> &BreakoutProgramSpec {
        &self.program
    }

    pub fn state(&self) -> &BreakoutState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> Vec<f64> {
        let s = &self.state;
        let mut obs = vec![0.0; OBS_DIM];
        obs[..5].copy_from_slice(&[s.paddle_x, s.ball.x, s.ball.y, s.ball.vx, s.ball.vy]);
        for (i, &alive) in s.bricks.iter().enumerate() {
            if alive {
                obs[5 + i] = 1.0;
            }
        }
        obs
    }

    pub fn step(&mut self, action: Action) -> Result<BreakoutTransition> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let s = self.observation();
        let mut events = Vec::new();
        if action != Action::Stay {
            let forward = !self.program.reversed_paddle;
            let dir = if forward { action.direction() } else { -action.direction() };
            let step = self.program.paddle_speed.paddle_step();
            self.state.paddle_x = (self.state.paddle_x + dir * step).clamp(0.0, 1.0);
            events.push(BreakoutEvent::PaddleMoved { forward });
        }
        let mut lost = false;
        self.advance_ball(&mut events, &mut lost);
        self.state.step_index += 1;
        self.done = lost || self.state.step_index >= MAX_STEPS || self.state.alive_count() == 0;
        Ok(BreakoutTransition {
            s,
            action,
            reward: 0.0,
            s_next: self.observation(),
            events,
        })
    }

    fn advance_ball(&mut self, events: &mut Vec<BreakoutEvent>, lost: &mut bool) {
        let prev = self.state.ball;
        let mut b = prev;
        b.x += b.vx;
        b.y += b.vy;

        let px = self.state.paddle_x;
        let within = |x: f64| (x - px).abs() <= PADDLE_HALF_WIDTH;
        let crossed_top = b.vy < 0.0 && prev.y > PADDLE_Y && b.y <= PADDLE_Y && {
            let frac = (prev.y - PADDLE_Y) / (prev.y - b.y);
            within(prev.x + (b.x - prev.x) * frac)
        };
        let inside = within(b.x) && (PADDLE_BOTTOM..=PADDLE_Y).contains(&b.y);
        if crossed_top || inside {
            let reverse = self.program.paddle_skewer || b.vy < 0.0;
            if reverse {
                if crossed_top {
                    b.y = 2.0 * PADDLE_Y - b.y;
                }
                b.vy = -b.vy;
            }
            events.push(BreakoutEvent::PaddleContact { reversed: reverse });
        }

        if b.x < 0.0 || b.x > 1.0 {
            b.x = if b.x < 0.0 { -b.x } else { 2.0 - b.x };
            b.vx = -b.vx;
            events.push(BreakoutEvent::Wall);
        }
        if b.y > 1.0 {
            b.y = 2.0 - b.y;
            b.vy = -b.vy;
            events.push(BreakoutEvent::Wall);
        }

        if let Some(idx) = self.state.brick_at(b.x, b.y).filter(|&i| self.state.bricks[i]) {
            let deleted = !self.program.no_delete_brick;
            let bounced = !self.program.no_bounce_off_brick;
            if deleted {
                self.state.bricks[idx] = false;
            }
            if bounced {
                b.x = prev.x;
                b.y = prev.y;
                b.vy = -b.vy;
                b.vx = prev.vx;
            }
            events.push(BreakoutEvent::BrickContact { deleted, bounced });
        }

        if b.y < 0.0 {
            let bounced = self.program.bounce_off_floor;
            if bounced {
                b.y = -b.y;
                b.vy = -b.vy;
            } else {
                *lost = true;
                b.y = 0.0;
            }
            events.push(BreakoutEvent::Floor { bounced });
        }
        self.state.ball = b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const V: f64 = 0.04;

    fn ball(x: f64, y: f64, vx: f64, vy: f64) -> BreakoutBall {
        BreakoutBall { x, y, vx, vy }
    }

    /// Index of the bottom-row brick above `x` for a 10-row grid.
    fn bottom_brick(x: f64) -> usize {
        (CORRECT_ROWS - 1) * COLUMNS + (x * COLUMNS as f64) as usize
    }

    #[test]
    fn reset_brick_counts() {
        let (env, obs) = BreakoutEnv::reset(BreakoutProgramSpec::correct(), 0).unwrap();
        assert_eq!(env.state().alive_count(), 80);
        assert_eq!(obs.len(), OBS_DIM);
        assert_eq!(obs[5..].iter().filter(|&&v| v == 1.0).count(), 80);

        let seven = BreakoutProgramSpec::with_error(BreakoutError::WrongRowCount, 7);
        let (env, obs) = BreakoutEnv::reset(seven, 0).unwrap();
        assert_eq!(env.state().alive_count(), 56);
        assert!(obs[5 + 56..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reset_is_deterministic_and_launches_downward() {
        let a = BreakoutEnv::reset(BreakoutProgramSpec::correct(), 9).unwrap().1;
        let b = BreakoutEnv::reset(BreakoutProgramSpec::correct(), 9).unwrap().1;
        assert_eq!(a, b);
        assert!(a[4] < 0.0 && a[2] < BRICK_BOTTOM);
    }

    #[test]
    fn row_count_must_match_flag() {
        let mut p = BreakoutProgramSpec::correct();
        p.row_count = 7;
        assert!(p.validate().is_err());
        p.row_count = 15;
        p.wrong_row_count = true;
        assert!(p.validate().is_err());
    }

    #[test]
    fn brick_contact_deletes_and_reflects() {
        let start = ball(0.3, 0.58, 0.0, V);
        let mut env = BreakoutEnv::from_state(BreakoutProgramSpec::correct(), 0.5, start).unwrap();
        let t = env.step(Action::Stay).unwrap();
        assert_eq!(t.reward, 0.0);
        assert!(!env.state().bricks[bottom_brick(0.3)]);
        assert_eq!(env.state().ball.vy, -V);
        assert_eq!(env.state().alive_count(), 79);
    }

    #[test]
    fn undeleted_brick_still_reflects() {
        let p = BreakoutProgramSpec::with_error(BreakoutError::NoDeleteBrick, 0);
        let mut env = BreakoutEnv::from_state(p, 0.5, ball(0.3, 0.58, 0.0, V)).unwrap();
        env.step(Action::Stay).unwrap();
        assert!(env.state().bricks[bottom_brick(0.3)]);
        assert_eq!(env.state().ball.vy, -V);
    }

    #[test]
    fn floor_ends_episode_unless_bouncy() {
        let mut env =
            BreakoutEnv::from_state(BreakoutProgramSpec::correct(), 0.9, ball(0.3, 0.02, 0.0, -V)).unwrap();
        env.step(Action::Stay).unwrap();
        assert!(env.is_done());
        assert!(matches!(env.step(Action::Stay), Err(Error::Usage(_))));

        let p = BreakoutProgramSpec::with_error(BreakoutError::BounceOffFloor, 0);
        let mut env = BreakoutEnv::from_state(p, 0.9, ball(0.3, 0.02, 0.0, -V)).unwrap();
        let t = env.step(Action::Stay).unwrap();
        assert!(!env.is_done());
        assert!(t.events.contains(&BreakoutEvent::Floor { bounced: true }));
        assert!(env.state().ball.vy > 0.0 && env.state().ball.y >= 0.0);
    }

    #[test]
    fn clearing_the_last_brick_ends_episode() {
        let mut env =
            BreakoutEnv::from_state(BreakoutProgramSpec::correct(), 0.5, ball(0.3, 0.58, 0.0, V)).unwrap();
        let keep = bottom_brick(0.3);
        for (i, b) in env.state.bricks.iter_mut().enumerate() {
            *b = i == keep;
        }
        env.step(Action::Stay).unwrap();
        assert!(env.is_done());
    }

    #[test]
    fn skewer_traps_ball_inside_paddle() {
        // Ball sits inside the paddle box moving down: normal play lets it
        // fall through, the skewer error flips it every step.
        let start = ball(0.42, 0.035, 0.0, -0.01);
        let mut normal = BreakoutEnv::from_state(BreakoutProgramSpec::correct(), 0.5, start).unwrap();
        let mut skewer =
            BreakoutEnv::from_state(BreakoutProgramSpec::with_error(BreakoutError::PaddleSkewer, 0), 0.5, start)
                .unwrap();
        let contacts = |env: &mut BreakoutEnv| {
            (0..6)
                .filter(|_| {
                    !env.is_done()
                        && env
                            .step(Action::Stay)
                            .unwrap()
                            .events
                            .contains(&BreakoutEvent::PaddleContact { reversed: true })
                })
                .count()
        };
        assert!(contacts(&mut normal) <= 1);
        assert_eq!(contacts(&mut skewer), 6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn dynamics_invariants(
            flags in proptest::collection::vec(any::<bool>(), 6),
            rows in 1usize..=MAX_ROWS,
            seed in any::<u64>(),
            actions in proptest::collection::vec(0usize..3, 1..30),
        ) {
            let mut p = BreakoutProgramSpec::correct();
            for (e, on) in BreakoutError::ALL.iter().zip(flags) {
                p.set(*e, on && (*e != BreakoutError::WrongRowCount || rows != CORRECT_ROWS), rows);
            }
            let (mut env, _) = BreakoutEnv::reset(p.clone(), seed).unwrap();
            let mut alive = env.state().alive_count();
            let mut steps = 0;
            for &a in actions.iter().cycle() {
                if env.is_done() {
                    break;
                }
                let t = env.step(Action::ALL[a]).unwrap();
                steps += 1;
                prop_assert_eq!(t.reward, 0.0);
                let s = env.state();
                prop_assert!((0.0..=1.0).contains(&s.ball.x) && (0.0..=1.0).contains(&s.ball.y));
                let now = s.alive_count();
                prop_assert!(now <= alive);
                if p.no_delete_brick {
                    prop_assert_eq!(now, alive);
                }
                alive = now;
                let lost = t.events.contains(&BreakoutEvent::Floor { bounced: false });
                prop_assert_eq!(env.is_done(), lost || steps >= MAX_STEPS || now == 0);
            }
            prop_assert!(steps <= MAX_STEPS);
        }
    }
}
