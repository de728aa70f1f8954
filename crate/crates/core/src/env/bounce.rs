//! Bounce: paddle, balls, a goal on the top edge, and the event→consequence
//! table that defines a student's program.
//!
//! Geometry is the unit square. The floor is `y = 0`, the top edge `y = 1`
//! with the goal mouth at `x ∈ [0.3, 0.7]`, side walls at `x = 0` and `x = 1`.
//! The paddle is a segment of width 0.2 on the line `y = 0.05`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Speed};
use crate::error::{Error, Result};

pub const MAX_BALLS: usize = 6;
pub const BALL_FIELDS: usize = 5;
pub const OBS_DIM: usize = 1 + MAX_BALLS * BALL_FIELDS;
pub const MAX_STEPS: usize = 100;
/// An episode ends once either score exceeds this.
pub const SCORE_LIMIT: u32 = 30;

pub const PADDLE_Y: f64 = 0.05;
pub const PADDLE_HALF_WIDTH: f64 = 0.1;
pub const GOAL_LEFT: f64 = 0.3;
pub const GOAL_RIGHT: f64 = 0.7;
pub const LAUNCH_POINT: (f64, f64) = (0.5, 0.85);
/// Launch headings are drawn uniformly from this range (degrees).
pub const LAUNCH_HEADING_DEG: (f64, f64) = (200.0, 340.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventType {
    BallHitsPaddle,
    BallHitsWall,
    BallHitsGoal,
    BallHitsFloor,
    PaddleMoves,
    ProgramStarts,
}

impl EventType {
    pub const ALL: [EventType; 6] = [
        EventType::BallHitsPaddle,
        EventType::BallHitsWall,
        EventType::BallHitsGoal,
        EventType::BallHitsFloor,
        EventType::PaddleMoves,
        EventType::ProgramStarts,
    ];

    pub fn is_ball_event(self) -> bool {
        matches!(
            self,
            EventType::BallHitsPaddle
                | EventType::BallHitsWall
                | EventType::BallHitsGoal
                | EventType::BallHitsFloor
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConsequenceKind {
    Bounce,
    PlayerScore,
    OpponentScore,
    LaunchBall,
    MovePaddle,
}

impl ConsequenceKind {
    pub const ALL: [ConsequenceKind; 5] = [
        ConsequenceKind::Bounce,
        ConsequenceKind::PlayerScore,
        ConsequenceKind::OpponentScore,
        ConsequenceKind::LaunchBall,
        ConsequenceKind::MovePaddle,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// One `(event, consequence)` entry of the program table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell(pub EventType, pub ConsequenceKind);

impl Cell {
    pub fn event(self) -> EventType {
        self.0
    }

    pub fn consequence(self) -> ConsequenceKind {
        self.1
    }

    /// Bounce is meaningless for paddle movement and program start.
    pub fn is_valid(self) -> bool {
        !(self.1 == ConsequenceKind::Bounce
            && matches!(self.0, EventType::PaddleMoves | EventType::ProgramStarts))
    }

    /// The 28 valid cells in event-major order.
    pub fn all_valid() -> Vec<Cell> {
        EventType::ALL
            .iter()
            .flat_map(|&e| ConsequenceKind::ALL.iter().map(move |&c| Cell(e, c)))
            .filter(|c| c.is_valid())
            .collect()
    }

    /// Whether a correct program applies this consequence on this event.
    pub fn template(self) -> bool {
        use ConsequenceKind as C;
        use EventType as E;
        match (self.0, self.1) {
            (E::BallHitsPaddle, C::Bounce) | (E::BallHitsWall, C::Bounce) => true,
            (E::BallHitsGoal, C::PlayerScore) | (E::BallHitsGoal, C::LaunchBall) => true,
            (E::BallHitsFloor, C::OpponentScore) | (E::BallHitsFloor, C::LaunchBall) => true,
            (E::PaddleMoves, C::MovePaddle) => true,
            (E::ProgramStarts, C::LaunchBall) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}:{:?}", self.0, self.1)
    }
}

impl FromStr for Cell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (e, c) = s
            .split_once(':')
            .ok_or_else(|| Error::Input(format!("cell '{s}' is not EVENT:CONSEQUENCE")))?;
        let event = EventType::ALL
            .into_iter()
            .find(|x| format!("{x:?}") == e)
            .ok_or_else(|| Error::Input(format!("unknown event '{e}'")))?;
        let consequence = ConsequenceKind::ALL
            .into_iter()
            .find(|x| format!("{x:?}") == c)
            .ok_or_else(|| Error::Input(format!("unknown consequence '{c}'")))?;
        let cell = Cell(event, consequence);
        if !cell.is_valid() {
            return Err(Error::Input(format!("cell '{s}' is not a valid pair")));
        }
        Ok(cell)
    }
}

/// Complete description of one student's Bounce program.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ProgramSpec {
    /// Cells whose behaviour is inverted relative to the correct program.
    pub deviations: BTreeSet<Cell>,
    pub ball_speed: Speed,
    pub paddle_speed: Speed,
}

impl ProgramSpec {
    pub fn correct() -> Self {
        Self::default()
    }

    pub fn with_deviations(cells: impl IntoIterator<Item = Cell>) -> Self {
        Self {
            deviations: cells.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.deviations.iter().find(|c| !c.is_valid()) {
            Some(c) => Err(Error::Config(format!("invalid program cell {c}"))),
            None => Ok(()),
        }
    }

    pub fn is_toggled(&self, cell: Cell) -> bool {
        self.deviations.contains(&cell)
    }

    /// Whether the program applies `consequence` when `event` fires.
    pub fn applies(&self, event: EventType, consequence: ConsequenceKind) -> bool {
        let cell = Cell(event, consequence);
        cell.template() ^ self.is_toggled(cell)
    }
}

/// Set of consequence kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ConsequenceSet(u8);

impl ConsequenceSet {
    pub fn insert(&mut self, c: ConsequenceKind) {
        self.0 |= c.bit();
    }

    pub fn set(&mut self, c: ConsequenceKind, on: bool) {
        if on {
            self.insert(c);
        }
    }

    pub fn contains(self, c: ConsequenceKind) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn iter(self) -> impl Iterator<Item = ConsequenceKind> {
        ConsequenceKind::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

/// Audit record of one fired event.
///
/// `evaluated` lists consequences the program decided on; `applied` the subset
/// that took effect. For [`ConsequenceKind::MovePaddle`] on
/// [`EventType::PaddleMoves`], "applied" means the paddle moved in the
/// commanded direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub event: EventType,
    pub evaluated: ConsequenceSet,
    pub applied: ConsequenceSet,
}

impl EventRecord {
    fn new(event: EventType) -> Self {
        Self {
            event,
            evaluated: ConsequenceSet::default(),
            applied: ConsequenceSet::default(),
        }
    }

    fn decide(&mut self, c: ConsequenceKind, on: bool) {
        self.evaluated.insert(c);
        self.applied.set(c, on);
    }

    /// Cells where this record disagrees with the correct program.
    pub fn deviations(&self) -> impl Iterator<Item = Cell> + '_ {
        self.evaluated
            .iter()
            .map(move |c| Cell(self.event, c))
            .filter(move |cell| cell.template() != self.applied.contains(cell.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Ball {
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub paddle_x: f64,
    /// Live balls in creation order.
    pub balls: Vec<Ball>,
    pub player_score: u32,
    pub opponent_score: u32,
    pub step_index: usize,
    /// Scores already reported through rewards; start-up increments are
    /// reported with the first step.
    reported: (u32, u32),
    rng: ChaCha8Rng,
}

/// One simulated step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub s_next: Vec<f64>,
    pub events: Vec<EventRecord>,
}

/// A running Bounce episode.
#[derive(Debug, Clone)]
pub struct BounceEnv {
    program: ProgramSpec,
    state: EnvState,
    start_events: Vec<EventRecord>,
    done: bool,
    /// Balls that leave play during the current step but are not yet dropped.
    leaving: usize,
}

impl BounceEnv {
    /// Starts an episode: centres the paddle and fires `ProgramStarts`.
    pub fn reset(program: ProgramSpec, seed: u64) -> Result<(Self, Vec<f64>)> {
        program.validate()?;
        let mut env = Self {
            program,
            state: EnvState {
                paddle_x: 0.5,
                balls: Vec::new(),
                player_score: 0,
                opponent_score: 0,
                step_index: 0,
                reported: (0, 0),
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
            start_events: Vec::new(),
            done: false,
            leaving: 0,
        };
        let mut record = EventRecord::new(EventType::ProgramStarts);
        env.apply_common(EventType::ProgramStarts, &mut record);
        env.start_events.push(record);
        let obs = env.observation();
        Ok((env, obs))
    }

    /// Builds an episode from an explicit state, bypassing the start event.
    pub fn from_state(program: ProgramSpec, paddle_x: f64, balls: Vec<Ball>, seed: u64) -> Result<Self> {
        program.validate()?;
        if balls.len() > MAX_BALLS {
            return Err(Error::Input("too many balls".into()));
        }
        Ok(Self {
            program,
            state: EnvState {
                paddle_x,
                balls,
                player_score: 0,
                opponent_score: 0,
                step_index: 0,
                reported: (0, 0),
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
            start_events: Vec::new(),
            done: false,
            leaving: 0,
        })
    }

    pub fn program(&self) -> &ProgramSpec {
        &self.program
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn start_events(&self) -> &[EventRecord] {
        &self.start_events
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> Vec<f64> {
        encode_observation(&self.state)
    }

    pub fn step(&mut self, action: Action) -> Result<Transition> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let s = self.observation();
        let mut events = Vec::new();

        if action != Action::Stay {
            let mut record = EventRecord::new(EventType::PaddleMoves);
            let forward = self.program.applies(EventType::PaddleMoves, ConsequenceKind::MovePaddle);
            record.decide(ConsequenceKind::MovePaddle, forward);
            let dir = if forward { action.direction() } else { -action.direction() };
            self.move_paddle(dir);
            self.apply_common(EventType::PaddleMoves, &mut record);
            events.push(record);
        }

        let live = self.state.balls.len();
        let mut keep = vec![true; live];
        for (i, kept) in keep.iter_mut().enumerate() {
            *kept = self.advance_ball(i, &mut events);
        }
        let mut idx = 0;
        self.state.balls.retain(|_| {
            let k = idx >= live || keep[idx];
            idx += 1;
            k
        });
        self.leaving = 0;

        self.state.step_index += 1;
        let (rp, ro) = self.state.reported;
        let reward = (self.state.player_score - rp) as f64 - (self.state.opponent_score - ro) as f64;
        self.state.reported = (self.state.player_score, self.state.opponent_score);
        self.done = self.state.step_index >= MAX_STEPS
            || self.state.player_score > SCORE_LIMIT
            || self.state.opponent_score > SCORE_LIMIT;
        Ok(Transition {
            s,
            action,
            reward,
            s_next: self.observation(),
            events,
        })
    }

    fn move_paddle(&mut self, dir: f64) {
        let step = self.program.paddle_speed.paddle_step();
        self.state.paddle_x = (self.state.paddle_x + dir * step).clamp(0.0, 1.0);
    }

    fn launch(&mut self) {
        if self.state.balls.len() - self.leaving >= MAX_BALLS {
            return;
        }
        let (lo, hi) = LAUNCH_HEADING_DEG;
        let heading = self.state.rng.gen_range(lo..hi).to_radians();
        let speed = self.program.ball_speed.ball_step();
        self.state.balls.push(Ball {
            x: LAUNCH_POINT.0,
            y: LAUNCH_POINT.1,
            vx: speed * heading.cos(),
            vy: speed * heading.sin(),
        });
    }

    /// Score, launch and paddle consequences shared by every event.
    fn apply_common(&mut self, event: EventType, record: &mut EventRecord) {
        use ConsequenceKind as C;
        let player = self.program.applies(event, C::PlayerScore);
        let opponent = self.program.applies(event, C::OpponentScore);
        let launch = self.program.applies(event, C::LaunchBall);
        record.decide(C::PlayerScore, player);
        record.decide(C::OpponentScore, opponent);
        record.decide(C::LaunchBall, launch);
        if player {
            self.state.player_score += 1;
        }
        if opponent {
            self.state.opponent_score += 1;
        }
        if launch {
            self.launch();
        }
        if event != EventType::PaddleMoves {
            let nudge = self.program.applies(event, C::MovePaddle);
            record.decide(C::MovePaddle, nudge);
            if nudge {
                self.move_paddle(-1.0);
            }
        }
    }

    /// Fires a ball event; returns whether the ball reflects.
    fn ball_event(&mut self, event: EventType, events: &mut Vec<EventRecord>) -> bool {
        use ConsequenceKind as C;
        let mut record = EventRecord::new(event);
        let bounce = self.program.applies(event, C::Bounce);
        record.decide(C::Bounce, bounce);
        let terminal = matches!(event, EventType::BallHitsGoal | EventType::BallHitsFloor);
        if terminal && bounce {
            // A reflected ball never entered the goal/floor: nothing else fires.
            let nudge = self.program.applies(event, C::MovePaddle);
            record.decide(C::MovePaddle, nudge);
            if nudge {
                self.move_paddle(-1.0);
            }
        } else {
            if !bounce && event != EventType::BallHitsPaddle {
                self.leaving += 1;
            }
            self.apply_common(event, &mut record);
        }
        events.push(record);
        bounce
    }

    /// Moves ball `i` and resolves its collisions; returns whether it stays live.
    fn advance_ball(&mut self, i: usize, events: &mut Vec<EventRecord>) -> bool {
        let prev = self.state.balls[i];
        let mut b = prev;
        b.x += b.vx;
        b.y += b.vy;
        self.state.balls[i] = b;

        if b.vy < 0.0 && prev.y > PADDLE_Y && b.y <= PADDLE_Y {
            let frac = (prev.y - PADDLE_Y) / (prev.y - b.y);
            let cross_x = prev.x + (b.x - prev.x) * frac;
            if (cross_x - self.state.paddle_x).abs() <= PADDLE_HALF_WIDTH
                && self.ball_event(EventType::BallHitsPaddle, events)
            {
                let ball = &mut self.state.balls[i];
                ball.y = 2.0 * PADDLE_Y - ball.y;
                ball.vy = -ball.vy;
            }
        }

        let b = self.state.balls[i];
        if b.x < 0.0 || b.x > 1.0 {
            if !self.ball_event(EventType::BallHitsWall, events) {
                return false;
            }
            let ball = &mut self.state.balls[i];
            ball.x = if ball.x < 0.0 { -ball.x } else { 2.0 - ball.x };
            ball.vx = -ball.vx;
        }

        let b = self.state.balls[i];
        if b.y > 1.0 {
            let frac = (1.0 - prev.y) / (b.y - prev.y);
            let cross_x = crate::env::fold_unit(prev.x + (b.x - prev.x) * frac);
            let event = if (GOAL_LEFT..=GOAL_RIGHT).contains(&cross_x) {
                EventType::BallHitsGoal
            } else {
                EventType::BallHitsWall
            };
            if !self.ball_event(event, events) {
                return false;
            }
            let ball = &mut self.state.balls[i];
            ball.y = 2.0 - ball.y;
            ball.vy = -ball.vy;
        }

        let b = self.state.balls[i];
        if b.y < 0.0 {
            if !self.ball_event(EventType::BallHitsFloor, events) {
                return false;
            }
            let ball = &mut self.state.balls[i];
            ball.y = -ball.y;
            ball.vy = -ball.vy;
        }
        true
    }
}

/// Fixed-width encoding: `paddle_x`, then `MAX_BALLS` slots of
/// `(present, x, y, vx, vy)` in ball creation order.
pub fn encode_observation(state: &EnvState) -> Vec<f64> {
    let mut obs = vec![0.0; OBS_DIM];
    obs[0] = state.paddle_x;
    for (slot, ball) in state.balls.iter().take(MAX_BALLS).enumerate() {
        let o = 1 + slot * BALL_FIELDS;
        obs[o..o + BALL_FIELDS].copy_from_slice(&[1.0, ball.x, ball.y, ball.vx, ball.vy]);
    }
    obs
}

/// Number of ball slots marked present in an observation.
pub fn balls_in_observation(obs: &[f64]) -> usize {
    (0..MAX_BALLS)
        .filter(|slot| obs[1 + slot * BALL_FIELDS] > 0.5)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const V: f64 = 0.04;

    fn ball(x: f64, y: f64, vx: f64, vy: f64) -> Ball {
        Ball { x, y, vx, vy }
    }

    #[test]
    fn correct_program_starts_with_one_ball() {
        let (_, obs) = BounceEnv::reset(ProgramSpec::correct(), 3).unwrap();
        assert_eq!(obs.len(), OBS_DIM);
        assert_eq!(balls_in_observation(&obs), 1);
        assert_eq!(obs[0], 0.5);
    }

    #[test]
    fn missing_start_launch_leaves_field_empty() {
        let p = ProgramSpec::with_deviations([Cell(EventType::ProgramStarts, ConsequenceKind::LaunchBall)]);
        let (_, obs) = BounceEnv::reset(p, 3).unwrap();
        assert_eq!(balls_in_observation(&obs), 0);
        assert!(obs[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reset_is_deterministic() {
        let a = BounceEnv::reset(ProgramSpec::correct(), 11).unwrap().1;
        let b = BounceEnv::reset(ProgramSpec::correct(), 11).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn goal_entry_scores_and_relaunches() {
        let mut env =
            BounceEnv::from_state(ProgramSpec::correct(), 0.5, vec![ball(0.5, 0.98, 0.0, V)], 0).unwrap();
        let t = env.step(Action::Stay).unwrap();
        assert_eq!(t.reward, 1.0);
        assert_eq!(env.state().player_score, 1);
        assert_eq!(env.state().balls.len(), 1);
        let b = env.state().balls[0];
        assert_eq!((b.x, b.y), LAUNCH_POINT);
    }

    #[test]
    fn goal_bounce_error_reflects_without_scoring() {
        let p = ProgramSpec::with_deviations([Cell(EventType::BallHitsGoal, ConsequenceKind::Bounce)]);
        let mut env = BounceEnv::from_state(p, 0.5, vec![ball(0.5, 0.98, 0.0, V)], 0).unwrap();
        let t = env.step(Action::Stay).unwrap();
        assert_eq!(t.reward, 0.0);
        assert_eq!(env.state().player_score, 0);
        assert_eq!(env.state().balls.len(), 1);
        let b = env.state().balls[0];
        assert!((b.y - 0.98).abs() < 1e-12 && b.vy == -V);
    }

    #[test]
    fn free_motion() {
        let mut env =
            BounceEnv::from_state(ProgramSpec::correct(), 0.1, vec![ball(0.5, 0.5, 0.0, -V)], 0).unwrap();
        let t = env.step(Action::Stay).unwrap();
        assert_eq!(t.reward, 0.0);
        let b = env.state().balls[0];
        assert_eq!((b.x, b.y), (0.5, 0.5 - V));
        assert!(t.events.is_empty());
    }

    #[test]
    fn floor_costs_a_point() {
        let mut env =
            BounceEnv::from_state(ProgramSpec::correct(), 0.9, vec![ball(0.5, 0.02, 0.0, -V)], 0).unwrap();
        let t = env.step(Action::Stay).unwrap();
        assert_eq!(t.reward, -1.0);
        assert_eq!(env.state().opponent_score, 1);
    }

    #[test]
    fn paddle_reflects_falling_ball() {
        let mut env =
            BounceEnv::from_state(ProgramSpec::correct(), 0.5, vec![ball(0.5, 0.07, 0.0, -V)], 0).unwrap();
        let t = env.step(Action::Stay).unwrap();
        assert_eq!(t.events[0].event, EventType::BallHitsPaddle);
        let b = env.state().balls[0];
        assert!((b.y - 0.07).abs() < 1e-12 && b.vy == V);
    }

    #[test]
    fn reversed_paddle_moves_the_wrong_way() {
        let p = ProgramSpec::with_deviations([Cell(EventType::PaddleMoves, ConsequenceKind::MovePaddle)]);
        let (mut env, _) = BounceEnv::reset(p, 0).unwrap();
        env.step(Action::Left).unwrap();
        assert!(env.state().paddle_x > 0.5);
    }

    #[test]
    fn launches_are_capped() {
        let p = ProgramSpec::with_deviations([Cell(EventType::PaddleMoves, ConsequenceKind::LaunchBall)]);
        let (mut env, _) = BounceEnv::reset(p, 0).unwrap();
        for _ in 0..10 {
            env.step(Action::Right).unwrap();
        }
        assert_eq!(env.state().balls.len(), MAX_BALLS);
    }

    #[test]
    fn stepping_finished_episode_is_usage_error() {
        let (mut env, _) = BounceEnv::reset(ProgramSpec::correct(), 0).unwrap();
        while !env.is_done() {
            env.step(Action::Stay).unwrap();
        }
        assert_eq!(env.state().step_index, MAX_STEPS);
        assert!(matches!(env.step(Action::Stay), Err(Error::Usage(_))));
    }

    #[test]
    fn encoding_examples() {
        let mut state = BounceEnv::from_state(ProgramSpec::correct(), 0.3, vec![], 0)
            .unwrap()
            .state()
            .clone();
        let empty = encode_observation(&state);
        assert_eq!(empty[0], 0.3);
        assert!(empty[1..].iter().all(|&v| v == 0.0));

        state.balls.push(ball(0.5, 0.9, 0.01, -0.03));
        let one = encode_observation(&state);
        assert_eq!(&one[1..6], &[1.0, 0.5, 0.9, 0.01, -0.03]);
        assert!(one[6..].iter().all(|&v| v == 0.0));

        state.balls.push(ball(0.2, 0.4, 0.0, 0.04));
        let two = encode_observation(&state);
        assert_eq!(&two[1..6], &one[1..6]);
        assert_eq!(&two[6..11], &[1.0, 0.2, 0.4, 0.0, 0.04]);
    }

    #[test]
    fn cell_grid_and_parsing() {
        let all = Cell::all_valid();
        assert_eq!(all.len(), 28);
        for c in &all {
            assert_eq!(c.to_string().parse::<Cell>().unwrap(), *c);
        }
        assert!("PaddleMoves:Bounce".parse::<Cell>().is_err());
        assert!("ProgramStarts:Bounce".parse::<Cell>().is_err());
    }

    fn program_strategy() -> impl Strategy<Value = ProgramSpec> {
        let cells = Cell::all_valid();
        (
            proptest::collection::vec(any::<bool>(), cells.len()),
            0usize..5,
            0usize..5,
        )
            .prop_map(move |(mask, b, p)| ProgramSpec {
                deviations: cells.iter().zip(mask).filter(|(_, m)| *m).map(|(c, _)| *c).collect(),
                ball_speed: Speed::ALL[b],
                paddle_speed: Speed::ALL[p],
            })
    }

    fn run(program: &ProgramSpec, seed: u64, actions: &[usize]) -> (BounceEnv, Vec<Transition>) {
        let (mut env, _) = BounceEnv::reset(program.clone(), seed).unwrap();
        let mut out = Vec::new();
        for &a in actions.iter().cycle().take(MAX_STEPS + 5) {
            if env.is_done() {
                break;
            }
            out.push(env.step(Action::ALL[a]).unwrap());
        }
        (env, out)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dynamics_invariants(
            program in program_strategy(),
            seed in any::<u64>(),
            actions in proptest::collection::vec(0usize..3, 1..40),
        ) {
            let (mut env, _) = BounceEnv::reset(program.clone(), seed).unwrap();
            let speed = program.ball_speed.ball_step();
            let mut scores = (0i64, 0i64);
            let mut steps = 0;
            for &a in actions.iter().cycle() {
                if env.is_done() {
                    break;
                }
                let t = env.step(Action::ALL[a]).unwrap();
                steps += 1;
                let s = env.state();
                let (p, o) = (s.player_score as i64, s.opponent_score as i64);
                if steps > 1 {
                    prop_assert_eq!(t.reward, ((p - scores.0) - (o - scores.1)) as f64);
                } else {
                    // Start-up increments are reported with the first step.
                    prop_assert_eq!(t.reward, (p - o) as f64);
                }
                scores = (p, o);
                for b in &s.balls {
                    prop_assert!((0.0..=1.0).contains(&b.x) && (0.0..=1.0).contains(&b.y));
                    prop_assert!((b.speed() - speed).abs() < 1e-12);
                }
                prop_assert!((0.0..=1.0).contains(&s.paddle_x));
                prop_assert!(s.balls.len() <= MAX_BALLS);
                let limit = steps >= MAX_STEPS
                    || s.player_score > SCORE_LIMIT
                    || s.opponent_score > SCORE_LIMIT;
                prop_assert_eq!(env.is_done(), limit);
            }
            prop_assert!(steps <= MAX_STEPS);
        }

        #[test]
        fn determinism(
            program in program_strategy(),
            seed in any::<u64>(),
            actions in proptest::collection::vec(0usize..3, 1..20),
        ) {
            let (_, a) = run(&program, seed, &actions);
            let (_, b) = run(&program, seed, &actions);
            prop_assert_eq!(a, b);
        }
    }
}
