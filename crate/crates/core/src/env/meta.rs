//! Episodic meta-RL view: each program is a task whose one-step objective is
//! predicting its feedback label after exploring it.

use rand::Rng;

use crate::corpus::LabeledProgram;
use crate::env::GameEnv;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Test,
}

/// A sampled program with a freshly reset environment.
#[derive(Debug)]
pub struct MetaTask<'a> {
    program: &'a LabeledProgram,
    split: SplitKind,
    predicted: bool,
    pub env: GameEnv,
    pub initial_observation: Vec<f64>,
}

impl<'a> MetaTask<'a> {
    pub fn program(&self) -> &'a LabeledProgram {
        self.program
    }

    /// Ground truth; on test tasks only after a prediction was submitted.
    pub fn label(&self) -> Result<&'a [u8]> {
        if self.split == SplitKind::Test && !self.predicted {
            return Err(Error::Usage(
                "test-split label requested before a prediction was submitted".into(),
            ));
        }
        Ok(&self.program.label)
    }

    /// Scores a prediction: number of label dimensions predicted correctly.
    pub fn submit_prediction(&mut self, prediction: &[u8]) -> Result<usize> {
        if prediction.len() != self.program.label.len() {
            return Err(Error::Input(format!(
                "prediction has {} bits, label has {}",
                prediction.len(),
                self.program.label.len()
            )));
        }
        self.predicted = true;
        Ok(prediction
            .iter()
            .zip(&self.program.label)
            .filter(|(a, b)| a == b)
            .count())
    }
}

/// Samples a program uniformly from `split` and resets an environment on it.
pub fn meta_reset<'a, R: Rng + ?Sized>(
    programs: &'a [LabeledProgram],
    split: SplitKind,
    rng: &mut R,
) -> Result<MetaTask<'a>> {
    if programs.is_empty() {
        return Err(Error::Usage("cannot sample from an empty split".into()));
    }
    let program = &programs[rng.gen_range(0..programs.len())];
    let (env, obs) = GameEnv::reset(&program.program, rng.gen())?;
    Ok(MetaTask {
        program,
        split,
        predicted: false,
        env,
        initial_observation: obs,
    })
}
