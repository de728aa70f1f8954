//! Recurrent dueling Q-network, ε-greedy action selection, episode replay and
//! the double-DQN update.

mod dqn;
mod replay;

pub use dqn::{dqn_targets, DqnAgent, DqnConfig, TdLoss};
pub use replay::{ReplayBuffer, StoredEpisode};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Trajectory, NULL_ACTION, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::{linear_forward, lstm_step, Linear, Lstm, LstmState, ParameterSet, Tape, Var};
use crate::scalar::Scalar;
use crate::tuple::{TupleBatch, TupleEmbedder};

pub const EMBED_DIM: usize = 64;
pub const LSTM_DIM: usize = 64;

/// `Q(τ, a) = V(τ) + A(τ, a) - mean_a' A(τ, a')` over a recurrent summary of τ.
#[derive(Debug, Clone)]
pub struct QNetwork<F: Scalar> {
    params: ParameterSet<F>,
    embedder: TupleEmbedder,
    lstm: Lstm,
    value: Linear,
    advantage: Linear,
}

impl<F: Scalar> QNetwork<F> {
    pub fn new(obs_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let embedder = TupleEmbedder::new(&mut params, "q.embed", obs_dim, &[EMBED_DIM], &mut rng);
        let lstm = Lstm::new(&mut params, "q.lstm", EMBED_DIM, LSTM_DIM, 1.0, &mut rng);
        let value = Linear::new(&mut params, "q.value", LSTM_DIM, 1, &mut rng);
        let advantage = Linear::new(&mut params, "q.advantage", LSTM_DIM, NUM_ACTIONS, &mut rng);
        Self {
            params,
            embedder,
            lstm,
            value,
            advantage,
        }
    }

    pub fn params(&self) -> &ParameterSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<F> {
        &mut self.params
    }

    pub fn obs_dim(&self) -> usize {
        self.embedder.obs_dim()
    }

    pub fn value_head(&self) -> Linear {
        self.value
    }

    pub fn advantage_head(&self) -> Linear {
        self.advantage
    }

    /// Q-values for every prefix of every trajectory: `[steps * batch, |A|]`.
    pub fn forward(&self, tape: &mut Tape<'_, F>, batch: &TupleBatch<F>) -> Result<Var> {
        let x = self.embedder.forward(tape, batch)?;
        let (h, _, _) = tape.lstm(&self.lstm, x, batch.batch(), None)?;
        let v = tape.linear(&self.value, h)?;
        let a = tape.linear(&self.advantage, h)?;
        tape.dueling(v, a)
    }

    /// Q-values of `τ_{:t}` for `t = 0..=T`.
    pub fn q_values(&self, trajectory: &Trajectory) -> Result<Vec<[F; NUM_ACTIONS]>> {
        let batch = TupleBatch::new(&[trajectory], self.obs_dim())?;
        let mut tape = Tape::new(&self.params);
        let q = self.forward(&mut tape, &batch)?;
        Ok(tape
            .value(q)
            .data()
            .chunks_exact(NUM_ACTIONS)
            .map(|r| [r[0], r[1], r[2]])
            .collect())
    }

    /// `Q(τ_{:t}, ·)` for the whole given prefix.
    pub fn q_forward(&self, prefix: &Trajectory) -> Result<[F; NUM_ACTIONS]> {
        Ok(*self.q_values(prefix)?.last().expect("at least the start tuple"))
    }

    /// `V(τ_{:t})` and `A(τ_{:t}, ·)` for the whole prefix.
    pub fn heads(&self, prefix: &Trajectory) -> Result<(F, Vec<F>)> {
        let mut actor = self.actor(&prefix.states[0])?;
        for t in 0..prefix.len() {
            actor.observe(self, prefix.actions[t], prefix.rewards[t], &prefix.states[t + 1])?;
        }
        let h = &actor.state.hidden;
        let v = linear_forward(&self.params, &self.value, h)?[0];
        let a = linear_forward(&self.params, &self.advantage, h)?;
        Ok((v, a))
    }

    /// Starts a step-by-step evaluation at `s_0`.
    pub fn actor(&self, s0: &[f64]) -> Result<QActor<F>> {
        if s0.len() != self.obs_dim() {
            return Err(Error::Config(format!(
                "observation width {} does not match network width {}",
                s0.len(),
                self.obs_dim()
            )));
        }
        let s = self.embedder.embed_state(&self.params, s0)?;
        let mut actor = QActor {
            state: LstmState::zeros(LSTM_DIM),
            last_state: s.clone(),
            q: [F::zero(); NUM_ACTIONS],
        };
        actor.advance(self, NULL_ACTION, 0.0, s)?;
        Ok(actor)
    }
}

/// Incremental Q evaluation along a rollout.
#[derive(Debug, Clone)]
pub struct QActor<F> {
    state: LstmState<F>,
    last_state: Vec<F>,
    q: [F; NUM_ACTIONS],
}

impl<F: Scalar> QActor<F> {
    pub fn q(&self) -> &[F; NUM_ACTIONS] {
        &self.q
    }

    /// Feeds the transition `(s_t, a_t, r_t, s_{t+1})`.
    pub fn observe(&mut self, net: &QNetwork<F>, action: Action, reward: f64, next: &[f64]) -> Result<()> {
        if next.len() != net.obs_dim() {
            return Err(Error::Config("observation width changed mid-episode".into()));
        }
        let s_next = net.embedder.embed_state(&net.params, next)?;
        self.advance(net, action.index(), reward, s_next)
    }

    fn advance(&mut self, net: &QNetwork<F>, action: usize, reward: f64, s_next: Vec<F>) -> Result<()> {
        let x = net
            .embedder
            .embed_tuple(&net.params, &self.last_state, action, reward, &s_next)?;
        let (h, state) = lstm_step(&net.params, &net.lstm, &x, &self.state)?;
        let v = linear_forward(&net.params, &net.value, &h)?[0];
        let a = linear_forward(&net.params, &net.advantage, &h)?;
        let mean = a.iter().copied().sum::<F>() * (F::one() / F::of(NUM_ACTIONS as f64));
        for (q, &ai) in self.q.iter_mut().zip(&a) {
            *q = v + ai - mean;
        }
        self.state = state;
        self.last_state = s_next;
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Uniform action with probability `epsilon`, otherwise the greedy one.
pub fn act_epsilon_greedy<F: Scalar, R: Rng + ?Sized>(q: &[F], epsilon: f64, rng: &mut R) -> Action {
    if rng.gen::<f64>() < epsilon {
        Action::sample(rng)
    } else {
        Action::ALL[argmax(q)]
    }
}

/// Linear annealing of ε over environment steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.01,
            horizon: 250_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if step >= self.horizon {
            return self.end;
        }
        let frac = step as f64 / self.horizon as f64;
        self.start + (self.end - self.start) * frac
    }
}
