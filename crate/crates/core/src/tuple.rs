//! Transition-tuple embedding shared by the Q-network and the classifiers.
//!
//! A trajectory `(s_0, a_0, r_0, ..., s_T)` is read as `T + 1` tuples: the
//! start token `(s_0, null, 0, s_0)` followed by `(s_t, a_t, r_t, s_{t+1})`.
//! The recurrent output after tuple `t` summarizes the prefix `τ_{:t}`.

use rand::Rng;

use crate::env::{Trajectory, NULL_ACTION, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::{linear_forward, Embedding, Linear, ParameterSet, Tape, Tensor, Var};
use crate::scalar::Scalar;

pub const STATE_HIDDEN: usize = 128;
pub const STATE_OUT: usize = 64;
pub const ACTION_DIM: usize = 16;
pub const REWARD_DIM: usize = 32;
const CONCAT_DIM: usize = 2 * STATE_OUT + ACTION_DIM + REWARD_DIM;

/// Time-major batch of trajectories padded to a common length.
///
/// Row `t * batch + b` holds tuple `t` of trajectory `b`. Rows past a
/// trajectory's end repeat its final state with the null action and must be
/// masked by the caller.
#[derive(Debug, Clone)]
pub struct TupleBatch<F> {
    batch: usize,
    steps: usize,
    lens: Vec<usize>,
    states: Tensor<F>,
    s_idx: Vec<usize>,
    next_idx: Vec<usize>,
    actions: Vec<usize>,
    rewards: Tensor<F>,
}

impl<F: Scalar> TupleBatch<F> {
    pub fn new(trajectories: &[&Trajectory], obs_dim: usize) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Input("empty trajectory batch".into()));
        }
        let batch = trajectories.len();
        let mut offsets = Vec::with_capacity(batch);
        let mut state_data = Vec::new();
        for tr in trajectories {
            if tr.states.is_empty() {
                return Err(Error::Input("trajectory has no initial state".into()));
            }
            if tr.states.len() != tr.actions.len() + 1 || tr.rewards.len() != tr.actions.len() {
                return Err(Error::Input("trajectory fields have inconsistent lengths".into()));
            }
            offsets.push(state_data.len() / obs_dim.max(1));
            for s in &tr.states {
                if s.len() != obs_dim {
                    return Err(Error::Config(format!(
                        "observation width {} does not match network width {obs_dim}",
                        s.len()
                    )));
                }
                state_data.extend(s.iter().map(|&v| F::of(v)));
            }
        }
        let lens: Vec<usize> = trajectories.iter().map(|t| t.len()).collect();
        let steps = lens.iter().max().copied().unwrap_or(0) + 1;
        let rows = steps * batch;
        let mut s_idx = Vec::with_capacity(rows);
        let mut next_idx = Vec::with_capacity(rows);
        let mut actions = Vec::with_capacity(rows);
        let mut rewards = Vec::with_capacity(rows);
        for t in 0..steps {
            for (b, tr) in trajectories.iter().enumerate() {
                let base = offsets[b];
                let len = lens[b];
                if t == 0 || t > len {
                    let s = if t == 0 { base } else { base + len };
                    s_idx.push(s);
                    next_idx.push(s);
                    actions.push(NULL_ACTION);
                    rewards.push(F::zero());
                } else {
                    s_idx.push(base + t - 1);
                    next_idx.push(base + t);
                    actions.push(tr.actions[t - 1].index());
                    rewards.push(F::of(tr.rewards[t - 1]));
                }
            }
        }
        let n_states = state_data.len() / obs_dim.max(1);
        Ok(Self {
            batch,
            steps,
            lens,
            states: Tensor::matrix(n_states, obs_dim, state_data)?,
            s_idx,
            next_idx,
            actions,
            rewards: Tensor::matrix(rows, 1, rewards)?,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Tuples per trajectory after padding (`max T + 1`).
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Transitions in trajectory `b`.
    pub fn len(&self, b: usize) -> usize {
        self.lens[b]
    }

    pub fn row(&self, t: usize, b: usize) -> usize {
        t * self.batch + b
    }
}

/// State MLP, action embedding and reward projection, concatenated and
/// passed through a stack of linear layers with rectifiers between them.
#[derive(Debug, Clone)]
pub struct TupleEmbedder {
    obs_dim: usize,
    state_in: Linear,
    state_out: Linear,
    action: Embedding,
    reward: Linear,
    fuse: Vec<Linear>,
}

impl TupleEmbedder {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        params: &mut ParameterSet<F>,
        name: &str,
        obs_dim: usize,
        fuse_dims: &[usize],
        rng: &mut R,
    ) -> Self {
        let state_in = Linear::new(params, &format!("{name}.state_in"), obs_dim, STATE_HIDDEN, rng);
        let state_out = Linear::new(params, &format!("{name}.state_out"), STATE_HIDDEN, STATE_OUT, rng);
        let action = Embedding::new(params, &format!("{name}.action"), NUM_ACTIONS + 1, ACTION_DIM, rng);
        let reward = Linear::new(params, &format!("{name}.reward"), 1, REWARD_DIM, rng);
        let mut fuse = Vec::with_capacity(fuse_dims.len());
        let mut width = CONCAT_DIM;
        for (i, &d) in fuse_dims.iter().enumerate() {
            fuse.push(Linear::new(params, &format!("{name}.fuse{i}"), width, d, rng));
            width = d;
        }
        Self {
            obs_dim,
            state_in,
            state_out,
            action,
            reward,
            fuse,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn out_dim(&self) -> usize {
        self.fuse.last().map_or(CONCAT_DIM, Linear::out_dim)
    }

    /// Embeds every tuple of the batch: `[steps * batch, out_dim]`.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<'_, F>, batch: &TupleBatch<F>) -> Result<Var> {
        // Each distinct state goes through the MLP once and is gathered twice.
        let states = tape.input(batch.states.clone());
        let h = tape.linear(&self.state_in, states)?;
        let h = tape.relu(h)?;
        let emb = tape.linear(&self.state_out, h)?;
        let s = tape.gather_rows(emb, batch.s_idx.clone())?;
        let s_next = tape.gather_rows(emb, batch.next_idx.clone())?;
        let a = tape.embed(&self.action, batch.actions.clone())?;
        let r = tape.input(batch.rewards.clone());
        let r = tape.linear(&self.reward, r)?;
        let mut x = tape.concat(&[s, a, r, s_next])?;
        for (i, layer) in self.fuse.iter().enumerate() {
            if i > 0 {
                x = tape.relu(x)?;
            }
            x = tape.linear(layer, x)?;
        }
        Ok(x)
    }

    /// Single-state embedding used while streaming.
    pub fn embed_state<F: Scalar>(&self, params: &ParameterSet<F>, obs: &[f64]) -> Result<Vec<F>> {
        let x: Vec<F> = obs.iter().map(|&v| F::of(v)).collect();
        let mut h = linear_forward(params, &self.state_in, &x)?;
        for v in &mut h {
            *v = v.max(F::zero());
        }
        linear_forward(params, &self.state_out, &h)
    }

    /// Single-tuple embedding from pre-embedded states.
    pub fn embed_tuple<F: Scalar>(
        &self,
        params: &ParameterSet<F>,
        s: &[F],
        action: usize,
        reward: f64,
        s_next: &[F],
    ) -> Result<Vec<F>> {
        let table = params.get(self.action.table());
        if action >= table.rows() {
            return Err(Error::Input(format!("action index {action} out of range")));
        }
        let r = linear_forward(params, &self.reward, &[F::of(reward)])?;
        let mut x = Vec::with_capacity(CONCAT_DIM);
        x.extend_from_slice(s);
        x.extend_from_slice(table.row(action));
        x.extend_from_slice(&r);
        x.extend_from_slice(s_next);
        for (i, layer) in self.fuse.iter().enumerate() {
            if i > 0 {
                for v in &mut x {
                    *v = v.max(F::zero());
                }
            }
            x = linear_forward(params, layer, &x)?;
        }
        Ok(x)
    }
}
