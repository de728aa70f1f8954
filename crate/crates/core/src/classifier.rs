//! Recurrent binary classifier `g(y_k | τ_{:t})` for one rubric dimension.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::nn::{adam_step, clip_grad_norm, log_softmax, AdamConfig, Linear, Lstm, ParameterSet, Tape, Var};
use crate::scalar::Scalar;
use crate::tuple::{TupleBatch, TupleEmbedder};

pub const EMBED_DIMS: [usize; 2] = [128, 64];
pub const LSTM_DIM: usize = 128;
pub const HEAD_DIMS: [usize; 3] = [128, 128, 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub adam: AdamConfig,
    pub grad_clip: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            grad_clip: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeedbackClassifier<F: Scalar> {
    params: ParameterSet<F>,
    embedder: TupleEmbedder,
    lstm: Lstm,
    head: [Linear; 3],
}

/// Output of one classifier pass over a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixPass {
    /// `log g(· | τ_{:t})` for `t = 0..=T`.
    pub log_probs: Vec<[f64; 2]>,
    /// Cross-entropy of the full trajectory before the update.
    pub loss: f64,
}

impl<F: Scalar> FeedbackClassifier<F> {
    pub fn new(obs_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let embedder = TupleEmbedder::new(&mut params, "g.embed", obs_dim, &EMBED_DIMS, &mut rng);
        let lstm = Lstm::new(&mut params, "g.lstm", EMBED_DIMS[1], LSTM_DIM, 1.0, &mut rng);
        let h0 = Linear::new(&mut params, "g.head0", LSTM_DIM, HEAD_DIMS[0], &mut rng);
        let h1 = Linear::new(&mut params, "g.head1", HEAD_DIMS[0], HEAD_DIMS[1], &mut rng);
        let h2 = Linear::new(&mut params, "g.head2", HEAD_DIMS[1], HEAD_DIMS[2], &mut rng);
        Self {
            params,
            embedder,
            lstm,
            head: [h0, h1, h2],
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

    pub fn output_layer(&self) -> Linear {
        self.head[2]
    }

    /// Logits for every prefix of every trajectory: `[steps * batch, 2]`.
    pub fn forward(&self, tape: &mut Tape<'_, F>, batch: &TupleBatch<F>) -> Result<Var> {
        let x = self.embedder.forward(tape, batch)?;
        let (mut h, _, _) = tape.lstm(&self.lstm, x, batch.batch(), None)?;
        for (i, layer) in self.head.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h)?;
            }
            h = tape.linear(layer, h)?;
        }
        Ok(h)
    }

    fn check(&self, trajectory: &Trajectory) -> Result<()> {
        if trajectory.states.is_empty() {
            return Err(Error::Input("trajectory has no initial state".into()));
        }
        Ok(())
    }

    /// `log g(· | τ_{:t})` for `t = 0..=T` from one recurrent pass.
    pub fn log_prefix_probs(&self, trajectory: &Trajectory) -> Result<Vec<[F; 2]>> {
        self.check(trajectory)?;
        let batch = TupleBatch::new(&[trajectory], self.obs_dim())?;
        let mut tape = Tape::new(&self.params);
        let logits = self.forward(&mut tape, &batch)?;
        Ok(log_softmax(tape.value(logits).data(), 2)
            .chunks_exact(2)
            .map(|r| [r[0], r[1]])
            .collect())
    }

    /// `g(· | τ_{:t})` for `t = 0..=T`.
    pub fn classify_prefixes(&self, trajectory: &Trajectory) -> Result<Vec<[F; 2]>> {
        Ok(self
            .log_prefix_probs(trajectory)?
            .into_iter()
            .map(|[a, b]| [a.exp(), b.exp()])
            .collect())
    }

    /// `g(· | τ)` on the complete trajectory.
    pub fn classify(&self, trajectory: &Trajectory) -> Result<[F; 2]> {
        Ok(*self.classify_prefixes(trajectory)?.last().expect("start tuple"))
    }

    /// Scores every prefix and then takes one supervised step on the full
    /// trajectory, reusing the same forward pass.
    pub fn score_and_update(
        &mut self,
        trajectory: &Trajectory,
        label: u8,
        config: &ClassifierConfig,
    ) -> Result<PrefixPass> {
        self.check(trajectory)?;
        if label > 1 {
            return Err(Error::Input(format!("label bit {label} is not 0 or 1")));
        }
        let batch = TupleBatch::new(&[trajectory], self.obs_dim())?;
        let mut tape = Tape::new(&self.params);
        let logits = self.forward(&mut tape, &batch)?;
        let log_probs: Vec<[f64; 2]> = log_softmax(tape.value(logits).data(), 2)
            .chunks_exact(2)
            .map(|r| [r[0].to_f64_lossy(), r[1].to_f64_lossy()])
            .collect();
        let steps = batch.steps();
        let mut weights = vec![F::zero(); steps];
        weights[steps - 1] = F::one();
        let loss = tape.softmax_cross_entropy(logits, vec![label as usize; steps], weights)?;
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite classifier loss {loss_value} at step {}",
                self.params.step()
            )));
        }
        let mut grads = tape.backward(loss)?;
        drop(tape);
        if !grads.all_finite() {
            return Err(Error::Numeric("non-finite classifier gradient".into()));
        }
        clip_grad_norm(&mut grads, F::of(config.grad_clip));
        adam_step(&mut self.params, &grads, &config.adam)?;
        Ok(PrefixPass {
            log_probs,
            loss: loss_value.to_f64_lossy(),
        })
    }

    /// One supervised step on `-log g(y | τ)`; returns the pre-update loss.
    pub fn update(&mut self, trajectory: &Trajectory, label: u8, config: &ClassifierConfig) -> Result<f64> {
        Ok(self.score_and_update(trajectory, label, config)?.loss)
    }
}

/// Class with the larger probability; ties go to class 0.
pub fn predict<F: Scalar>(probs: &[F; 2]) -> u8 {
    u8::from(probs[1] > probs[0])
}
