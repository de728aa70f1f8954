use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use crate::env::Trajectory;
use crate::error::{Error, Result};

/// A trajectory with the exploration rewards computed when it was inserted.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEpisode {
    pub trajectory: Arc<Trajectory>,
    pub rewards: Vec<f64>,
}

/// Ring buffer of whole episodes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    min_size: usize,
    episodes: VecDeque<StoredEpisode>,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 10_000;
    pub const DEFAULT_MIN_SIZE: usize = 500;

    pub fn new(capacity: usize, min_size: usize) -> Result<Self> {
        if capacity == 0 || min_size > capacity {
            return Err(Error::Config(format!(
                "replay capacity {capacity} must be positive and at least the minimum size {min_size}"
            )));
        }
        Ok(Self {
            capacity,
            min_size,
            episodes: VecDeque::with_capacity(capacity.min(1024)),
        })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Whether enough episodes are stored to start sampling.
    pub fn ready(&self) -> bool {
        self.episodes.len() >= self.min_size
    }

    pub fn insert(&mut self, trajectory: Arc<Trajectory>, rewards: Vec<f64>) -> Result<()> {
        if rewards.len() != trajectory.len() {
            return Err(Error::Input(format!(
                "{} rewards for a trajectory of {} steps",
                rewards.len(),
                trajectory.len()
            )));
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(StoredEpisode { trajectory, rewards });
        Ok(())
    }

    /// Uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&StoredEpisode>> {
        if !self.ready() || self.episodes.is_empty() {
            return Err(Error::Usage(format!(
                "replay holds {} episodes; sampling needs {}",
                self.episodes.len(),
                self.min_size.max(1)
            )));
        }
        Ok((0..batch)
            .map(|_| &self.episodes[rng.gen_range(0..self.episodes.len())])
            .collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredEpisode> {
        self.episodes.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Action;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn episode(tag: f64) -> Arc<Trajectory> {
        let mut t = Trajectory::new(vec![tag]);
        t.push(Action::Stay, 0.0, vec![tag]);
        Arc::new(t)
    }

    #[test]
    fn evicts_oldest() {
        let mut buf = ReplayBuffer::new(2, 0).unwrap();
        for tag in [1.0, 2.0, 3.0] {
            buf.insert(episode(tag), vec![tag]).unwrap();
        }
        let tags: Vec<f64> = buf.iter().map(|e| e.rewards[0]).collect();
        assert_eq!(tags, vec![2.0, 3.0]);
    }

    #[test]
    fn refuses_to_sample_below_gate() {
        let mut buf = ReplayBuffer::new(1000, 500).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..499 {
            buf.insert(episode(i as f64), vec![0.0]).unwrap();
        }
        assert!(matches!(buf.sample(32, &mut rng), Err(Error::Usage(_))));
        buf.insert(episode(0.0), vec![0.0]).unwrap();
        assert_eq!(buf.sample(32, &mut rng).unwrap().len(), 32);
    }

    #[test]
    fn singleton_always_sampled() {
        let mut buf = ReplayBuffer::new(4, 1).unwrap();
        buf.insert(episode(7.0), vec![7.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(buf.sample(10, &mut rng).unwrap().iter().all(|e| e.rewards[0] == 7.0));
    }

    #[test]
    fn reward_count_must_match() {
        let mut buf = ReplayBuffer::new(4, 1).unwrap();
        assert!(buf.insert(episode(1.0), vec![]).is_err());
    }
}
