use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, clip_grad_norm, AdamConfig, Tape};
use crate::policy::{argmax, QNetwork, StoredEpisode};
use crate::scalar::Scalar;
use crate::tuple::TupleBatch;
use crate::env::{Trajectory, NUM_ACTIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdLoss {
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub gamma: f64,
    pub adam: AdamConfig,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub target_sync_every: u64,
    pub loss: TdLoss,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            adam: AdamConfig::default(),
            grad_clip: 10.0,
            batch_size: 32,
            target_sync_every: 5000,
            loss: TdLoss::Mse,
        }
    }
}

/// TD targets for one trajectory.
///
/// `online[t]` and `target[t]` are the Q-values of `τ_{:t}` for `t = 0..=T`;
/// the last step of the trajectory is terminal.
pub fn dqn_targets<F: Scalar>(
    rewards: &[f64],
    online: &[[F; NUM_ACTIONS]],
    target: &[[F; NUM_ACTIONS]],
    gamma: f64,
) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            if t + 1 == n {
                rewards[t]
            } else {
                let best = argmax(&online[t + 1]);
                rewards[t] + gamma * target[t + 1][best].to_f64_lossy()
            }
        })
        .collect()
}

/// Online and target Q-networks with their update counter.
#[derive(Debug, Clone)]
pub struct DqnAgent<F: Scalar> {
    pub online: QNetwork<F>,
    target: QNetwork<F>,
    config: DqnConfig,
    updates: u64,
}

impl<F: Scalar> DqnAgent<F> {
    pub fn new(online: QNetwork<F>, config: DqnConfig) -> Self {
        Self {
            target: online.clone(),
            online,
            config,
            updates: 0,
        }
    }

    pub fn target(&self) -> &QNetwork<F> {
        &self.target
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Restores the counter after loading a checkpoint.
    pub fn set_updates(&mut self, updates: u64) {
        self.updates = updates;
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// One double-DQN step on a batch of stored episodes; returns the loss.
    ///
    /// The target network is refreshed after every `target_sync_every`-th call.
    pub fn update(&mut self, batch: &[&StoredEpisode]) -> Result<f64> {
        let trajectories: Vec<&Trajectory> = batch.iter().map(|e| e.trajectory.as_ref()).collect();
        let tuples = TupleBatch::<F>::new(&trajectories, self.online.obs_dim())?;
        let b = tuples.batch();

        let target_q = {
            let mut tape = Tape::new(self.target.params());
            let q = self.target.forward(&mut tape, &tuples)?;
            tape.value(q).data().to_vec()
        };

        let mut tape = Tape::new(self.online.params());
        let q = self.online.forward(&mut tape, &tuples)?;
        let online_q = tape.value(q).data().to_vec();
        let rows = tuples.steps() * b;
        let mut cols = vec![0usize; rows];
        let mut targets = vec![F::zero(); rows];
        let mut weights = vec![F::zero(); rows];
        let count: usize = (0..b).map(|i| tuples.len(i)).sum();
        if count == 0 {
            return Err(Error::Input("batch holds no transitions".into()));
        }
        let w = F::one() / F::of(count as f64);
        let prefix_q = |data: &[F], i: usize, len: usize| -> Vec<[F; NUM_ACTIONS]> {
            (0..=len)
                .map(|t| {
                    let r = tuples.row(t, i) * NUM_ACTIONS;
                    [data[r], data[r + 1], data[r + 2]]
                })
                .collect()
        };
        for (i, episode) in batch.iter().enumerate() {
            let len = tuples.len(i);
            let on = prefix_q(&online_q, i, len);
            let tg = prefix_q(&target_q, i, len);
            let y = dqn_targets(&episode.rewards, &on, &tg, self.config.gamma);
            for t in 0..len {
                let row = tuples.row(t, i);
                cols[row] = episode.trajectory.actions[t].index();
                targets[row] = F::of(y[t]);
                weights[row] = w;
            }
        }
        let picked = tape.pick_cols(q, cols)?;
        let loss = tape.weighted_squared_error(picked, targets, weights)?;
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite TD loss {loss_value} at update {}",
                self.updates
            )));
        }
        let mut grads = tape.backward(loss)?;
        drop(tape);
        if !grads.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite Q-network gradient at update {}",
                self.updates
            )));
        }
        clip_grad_norm(&mut grads, F::of(self.config.grad_clip));
        adam_step(self.online.params_mut(), &grads, &self.config.adam)?;
        self.updates += 1;
        if self.updates % self.config.target_sync_every == 0 {
            self.sync_target();
        }
        Ok(loss_value.to_f64_lossy())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Action;
    use crate::policy::ReplayBuffer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn myopic_targets_are_rewards() {
        let q = vec![[3.0, -1.0, 2.0]; 4];
        assert_eq!(dqn_targets(&[0.1, 0.2, 0.3], &q, &q, 0.0), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn terminal_target_ignores_networks() {
        let q = vec![[100.0, 100.0, 100.0]; 2];
        assert_eq!(dqn_targets(&[0.5], &q, &q, 0.99), vec![0.5]);
    }

    #[test]
    fn double_dqn_hand_case() {
        // Online argmax at τ_{:1} is action 2; the target net values it at 1.0.
        let online = vec![[0.0; 3], [0.1, 0.2, 0.9], [0.0; 3]];
        let target = vec![[0.0; 3], [5.0, 5.0, 1.0], [0.0; 3]];
        let y = dqn_targets(&[0.5, 0.0], &online, &target, 0.99);
        assert!((y[0] - 1.49).abs() < 1e-12);
    }

    fn tiny_buffer(obs: usize) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(8, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        use rand::Rng;
        for _ in 0..4 {
            let mut tr = Trajectory::new(vec![0.3; obs]);
            for _ in 0..3 {
                tr.push(Action::sample(&mut rng), 0.0, (0..obs).map(|_| rng.gen()).collect());
            }
            buf.insert(Arc::new(tr), vec![0.1, -0.2, 0.3]).unwrap();
        }
        buf
    }

    fn bytes(net: &QNetwork<f64>) -> Vec<f64> {
        net.params().iter().flat_map(|(_, t)| t.data().to_vec()).collect()
    }

    #[test]
    fn target_is_isolated_until_sync() {
        let config = DqnConfig {
            target_sync_every: 3,
            adam: AdamConfig::with_lr(1e-2),
            ..DqnConfig::default()
        };
        let mut agent = DqnAgent::new(QNetwork::<f64>::new(4, 1), config);
        let buf = tiny_buffer(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frozen = bytes(agent.target());
        for _ in 0..2 {
            agent.update(&buf.sample(4, &mut rng).unwrap()).unwrap();
            assert_eq!(bytes(agent.target()), frozen);
            assert_ne!(bytes(&agent.online), frozen);
        }
        agent.update(&buf.sample(4, &mut rng).unwrap()).unwrap();
        assert_eq!(bytes(agent.target()), bytes(&agent.online));
        let tr = buf.iter().next().unwrap().trajectory.clone();
        assert_eq!(agent.target().q_values(&tr).unwrap(), agent.online.q_values(&tr).unwrap());
    }

    #[test]
    fn sync_happens_on_the_configured_update() {
        let mut agent = DqnAgent::new(QNetwork::<f64>::new(4, 1), DqnConfig::default());
        let buf = tiny_buffer(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        agent.set_updates(4998);
        let before = bytes(agent.target());
        agent.update(&buf.sample(2, &mut rng).unwrap()).unwrap();
        assert_eq!(agent.updates(), 4999);
        assert_eq!(bytes(agent.target()), before);
        agent.update(&buf.sample(2, &mut rng).unwrap()).unwrap();
        assert_eq!(agent.updates(), 5000);
        assert_eq!(bytes(agent.target()), bytes(&agent.online));
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let config = DqnConfig {
            adam: AdamConfig::with_lr(0.0),
            ..DqnConfig::default()
        };
        let mut agent = DqnAgent::new(QNetwork::<f64>::new(4, 1), config);
        let before = bytes(&agent.online);
        let buf = tiny_buffer(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..3 {
            agent.update(&buf.sample(4, &mut rng).unwrap()).unwrap();
        }
        assert_eq!(bytes(&agent.online), before);
    }
}
