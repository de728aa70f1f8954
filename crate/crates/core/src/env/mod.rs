//! Game simulators driven by a student program description.
//!
//! Both assignments share the three-action interface, fixed-width real
//! observations and the [`Trajectory`] record consumed by the networks.

pub mod bounce;
pub mod breakout;
pub mod meta;
pub mod probe;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use bounce::{BounceEnv, Cell, ConsequenceKind, EventType, ProgramSpec};
pub use breakout::{BreakoutEnv, BreakoutError, BreakoutProgramSpec};

/// Paddle command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
    Stay,
}

pub const NUM_ACTIONS: usize = 3;
/// Embedding row reserved for the start token's missing action.
pub const NULL_ACTION: usize = 3;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Left, Action::Right, Action::Stay];

    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
            Action::Stay => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Signed direction of travel the command asks for.
    pub fn direction(self) -> f64 {
        match self {
            Action::Left => -1.0,
            Action::Right => 1.0,
            Action::Stay => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::ALL[rng.gen_range(0..NUM_ACTIONS)]
    }
}

/// Five-level speed setting shared by ball and paddle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speed {
    VerySlow,
    Slow,
    Normal,
    Fast,
    VeryFast,
}

impl Default for Speed {
    fn default() -> Self {
        Speed::Normal
    }
}

impl Speed {
    pub const ALL: [Speed; 5] = [
        Speed::VerySlow,
        Speed::Slow,
        Speed::Normal,
        Speed::Fast,
        Speed::VeryFast,
    ];
    /// Settings used for training when `Normal` is held out.
    pub const NON_NORMAL: [Speed; 4] = [Speed::VerySlow, Speed::Slow, Speed::Fast, Speed::VeryFast];

    fn rank(self) -> usize {
        self as usize
    }

    /// Distance per step travelled by a ball.
    pub fn ball_step(self) -> f64 {
        [0.02, 0.03, 0.04, 0.06, 0.08][self.rank()]
    }

    /// Distance per step travelled by the paddle.
    pub fn paddle_step(self) -> f64 {
        [0.02, 0.035, 0.05, 0.07, 0.09][self.rank()]
    }
}

/// Which assignment a program belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Bounce,
    Breakout,
}

impl EnvKind {
    pub fn observation_dim(self) -> usize {
        match self {
            EnvKind::Bounce => bounce::OBS_DIM,
            EnvKind::Breakout => breakout::OBS_DIM,
        }
    }

    pub fn max_steps(self) -> usize {
        match self {
            EnvKind::Bounce => bounce::MAX_STEPS,
            EnvKind::Breakout => breakout::MAX_STEPS,
        }
    }
}

/// One student program of either assignment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "env", content = "program", rename_all = "snake_case")]
pub enum Program {
    Bounce(ProgramSpec),
    Breakout(BreakoutProgramSpec),
}

impl Program {
    pub fn kind(&self) -> EnvKind {
        match self {
            Program::Bounce(_) => EnvKind::Bounce,
            Program::Breakout(_) => EnvKind::Breakout,
        }
    }

    pub fn ball_speed(&self) -> Speed {
        match self {
            Program::Bounce(p) => p.ball_speed,
            Program::Breakout(p) => p.ball_speed,
        }
    }

    pub fn paddle_speed(&self) -> Speed {
        match self {
            Program::Bounce(p) => p.paddle_speed,
            Program::Breakout(p) => p.paddle_speed,
        }
    }

    pub fn set_speeds(&mut self, ball: Speed, paddle: Speed) {
        match self {
            Program::Bounce(p) => {
                p.ball_speed = ball;
                p.paddle_speed = paddle;
            }
            Program::Breakout(p) => {
                p.ball_speed = ball;
                p.paddle_speed = paddle;
            }
        }
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Either simulator behind one interface.
#[derive(Debug, Clone)]
pub enum GameEnv {
    Bounce(BounceEnv),
    Breakout(BreakoutEnv),
}

impl GameEnv {
    pub fn reset(program: &Program, seed: u64) -> Result<(Self, Vec<f64>)> {
        Ok(match program {
            Program::Bounce(p) => {
                let (env, obs) = BounceEnv::reset(p.clone(), seed)?;
                (GameEnv::Bounce(env), obs)
            }
            Program::Breakout(p) => {
                let (env, obs) = BreakoutEnv::reset(p.clone(), seed)?;
                (GameEnv::Breakout(env), obs)
            }
        })
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        match self {
            GameEnv::Bounce(env) => {
                let t = env.step(action)?;
                Ok(StepOutcome {
                    observation: t.s_next,
                    reward: t.reward,
                    done: env.is_done(),
                })
            }
            GameEnv::Breakout(env) => {
                let t = env.step(action)?;
                Ok(StepOutcome {
                    observation: t.s_next,
                    reward: t.reward,
                    done: env.is_done(),
                })
            }
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            GameEnv::Bounce(env) => env.is_done(),
            GameEnv::Breakout(env) => env.is_done(),
        }
    }
}

/// `(s_0, a_0, r_0, ..., s_T)` with environment rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn new(s0: Vec<f64>) -> Self {
        Self {
            states: vec![s0],
            actions: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn push(&mut self, action: Action, reward: f64, next: Vec<f64>) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.states.push(next);
    }

    /// Number of completed transitions `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// Prefix `τ_{:t}` holding the first `t` transitions.
    pub fn prefix(&self, t: usize) -> Trajectory {
        Trajectory {
            states: self.states[..=t].to_vec(),
            actions: self.actions[..t].to_vec(),
            rewards: self.rewards[..t].to_vec(),
        }
    }
}

/// Reflects `v` into `[0, 1]` as a ball bouncing between two walls would.
pub(crate) fn fold_unit(mut v: f64) -> f64 {
    for _ in 0..64 {
        if v < 0.0 {
            v = -v;
        } else if v > 1.0 {
            v = 2.0 - v;
        } else {
            return v;
        }
    }
    v.clamp(0.0, 1.0)
}
