//! Training loop for exploration policies and feedback classifiers.
//!
//! A [`Worker`] owns one policy, its replay buffer and the classifiers whose
//! outputs define its reward. Factorized runs use one worker per rubric
//! dimension; the unfactorized and direct-max baselines use a single worker
//! holding every classifier.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{predict, ClassifierConfig, FeedbackClassifier};
use crate::corpus::{LabeledProgram, Rubric};
use crate::env::{EnvKind, GameEnv, Program, Trajectory};
use crate::error::{Error, Result};
use crate::grader::{evaluate, Grader, MetricsReport};
use crate::nn::checkpoint;
use crate::policy::{act_epsilon_greedy, DqnAgent, DqnConfig, EpsilonSchedule, QNetwork, ReplayBuffer};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Factorized,
    Unfactorized,
    DirectMax,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factorized" => Ok(Mode::Factorized),
            "unfactorized" => Ok(Mode::Unfactorized),
            "direct-max" => Ok(Mode::DirectMax),
            _ => Err(Error::Config(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub env: EnvKind,
    /// Environment steps taken by each policy.
    pub total_steps: u64,
    pub seed: u64,
    pub dqn: DqnConfig,
    pub classifier: ClassifierConfig,
    pub epsilon: EpsilonSchedule,
    pub replay_capacity: usize,
    pub replay_min_episodes: usize,
    /// Environment steps per Q-network update once replay is warm.
    pub update_every: u64,
    /// Environment steps between held-out evaluations (0 disables them).
    pub eval_every: u64,
    pub eval_programs: usize,
}

impl TrainConfig {
    pub fn new(mode: Mode, env: EnvKind, total_steps: u64, seed: u64) -> Self {
        Self {
            mode,
            env,
            total_steps,
            seed,
            dqn: DqnConfig::default(),
            classifier: ClassifierConfig::default(),
            epsilon: EpsilonSchedule::default(),
            replay_capacity: ReplayBuffer::DEFAULT_CAPACITY,
            replay_min_episodes: ReplayBuffer::DEFAULT_MIN_SIZE,
            update_every: 4,
            eval_every: 10_000,
            eval_programs: 200,
        }
    }

    /// Hyperparameter groups that differ from the defaults.
    pub fn overrides(&self) -> Vec<&'static str> {
        let d = Self::new(self.mode, self.env, self.total_steps, self.seed);
        let mut out = Vec::new();
        if self.dqn != d.dqn {
            out.push("dqn");
        }
        if self.classifier != d.classifier {
            out.push("classifier");
        }
        if self.epsilon != d.epsilon {
            out.push("epsilon");
        }
        if (self.replay_capacity, self.replay_min_episodes) != (d.replay_capacity, d.replay_min_episodes) {
            out.push("replay");
        }
        if self.update_every != d.update_every {
            out.push("update_every");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        if self.update_every == 0 {
            return bad("update_every must be positive");
        }
        if self.dqn.batch_size == 0 || self.dqn.target_sync_every == 0 {
            return bad("batch size and target sync interval must be positive");
        }
        if !(0.0..=1.0).contains(&self.dqn.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.dqn.grad_clip <= 0.0 || self.classifier.grad_clip <= 0.0 {
            return bad("gradient clip norms must be positive");
        }
        if self.epsilon.horizon == 0 {
            return bad("epsilon horizon must be positive");
        }
        if self.eval_every > 0 && self.eval_programs == 0 {
            return bad("evaluation needs at least one program");
        }
        if self.replay_capacity == 0 || self.replay_min_episodes > self.replay_capacity {
            return bad("replay minimum must not exceed capacity");
        }
        Ok(())
    }
}

/// Stable 64-bit mix of a master seed with a purpose tag and an index.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in tag.bytes().chain(master.to_le_bytes()).chain(index.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// `r_t = log g(y | τ_{:t+1}) - log g(y | τ_{:t})` for every step.
pub fn exploration_rewards(log_probs: &[[f64; 2]], label: u8) -> Vec<f64> {
    let y = label as usize;
    log_probs.windows(2).map(|w| w[1][y] - w[0][y]).collect()
}

/// Fraction of dimensions whose argmax prediction matches the label.
pub fn direct_max_reward(final_probs: &[[f64; 2]], label: &[u8]) -> f64 {
    let correct = final_probs
        .iter()
        .zip(label)
        .filter(|(p, &y)| predict(p) == y)
        .count();
    correct as f64 / label.len() as f64
}

/// Terminal-only reward sequence for the direct-max baseline.
pub fn direct_max_rewards(steps: usize, final_probs: &[[f64; 2]], label: &[u8]) -> Vec<f64> {
    let mut r = vec![0.0; steps];
    if let Some(last) = r.last_mut() {
        *last = direct_max_reward(final_probs, label);
    }
    r
}

/// Plays one episode, choosing actions ε-greedily from `net`.
pub fn rollout<F: Scalar, R: Rng + ?Sized>(
    net: &QNetwork<F>,
    program: &Program,
    env_seed: u64,
    rng: &mut R,
    mut epsilon: impl FnMut() -> f64,
) -> Result<Trajectory> {
    let (mut env, s0) = GameEnv::reset(program, env_seed)?;
    let mut actor = net.actor(&s0)?;
    let mut trajectory = Trajectory::new(s0);
    while !env.is_done() {
        let action = act_epsilon_greedy(actor.q(), epsilon(), rng);
        let out = env.step(action)?;
        actor.observe(net, action, out.reward, &out.observation)?;
        trajectory.push(action, out.reward, out.observation);
    }
    Ok(trajectory)
}

/// Per-episode bookkeeping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeStats {
    pub steps: u64,
    pub return_exploration: f64,
    pub dqn_updates: u64,
    pub q_loss_sum: f64,
    pub classifier_loss: f64,
}

/// How a worker turns classifier outputs into rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    InformationGain,
    DirectMax,
}

/// One policy with its replay buffer and the classifiers that reward it.
#[derive(Debug, Clone)]
pub struct Worker<F: Scalar> {
    pub agent: DqnAgent<F>,
    /// `(rubric dimension, classifier)` pairs.
    pub classifiers: Vec<(usize, FeedbackClassifier<F>)>,
    pub buffer: ReplayBuffer,
    reward: RewardKind,
    epsilon: EpsilonSchedule,
    classifier_config: ClassifierConfig,
    update_every: u64,
    rng: ChaCha8Rng,
    env_steps: u64,
    episodes: u64,
}

impl<F: Scalar> Worker<F> {
    pub fn new(
        config: &TrainConfig,
        index: usize,
        dims: &[usize],
        obs_dim: usize,
        reward: RewardKind,
    ) -> Result<Self> {
        let policy = QNetwork::new(obs_dim, derive_seed(config.seed, "policy", index as u64));
        let classifiers = dims
            .iter()
            .map(|&k| {
                let seed = derive_seed(config.seed, "classifier", k as u64);
                (k, FeedbackClassifier::new(obs_dim, seed))
            })
            .collect();
        Ok(Self {
            agent: DqnAgent::new(policy, config.dqn.clone()),
            classifiers,
            buffer: ReplayBuffer::new(config.replay_capacity, config.replay_min_episodes)?,
            reward,
            epsilon: config.epsilon,
            classifier_config: config.classifier.clone(),
            update_every: config.update_every,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "worker", index as u64)),
            env_steps: 0,
            episodes: 0,
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Rewards for `trajectory` from every classifier's prefix outputs, then
    /// one supervised step per classifier on the full trajectory.
    pub fn score_and_train_classifiers(&mut self, trajectory: &Trajectory, label: &[u8]) -> Result<(Vec<f64>, f64)> {
        let mut rewards = vec![0.0; trajectory.len()];
        let mut finals = Vec::with_capacity(self.classifiers.len());
        let mut loss = 0.0;
        let mut direct_labels = Vec::with_capacity(self.classifiers.len());
        for (k, g) in &mut self.classifiers {
            let y = label[*k];
            let pass = g.score_and_update(trajectory, y, &self.classifier_config)?;
            loss += pass.loss;
            match self.reward {
                RewardKind::InformationGain => {
                    for (acc, r) in rewards.iter_mut().zip(exploration_rewards(&pass.log_probs, y)) {
                        *acc += r;
                    }
                }
                RewardKind::DirectMax => {
                    let [a, b] = *pass.log_probs.last().expect("start tuple");
                    finals.push([a.exp(), b.exp()]);
                    direct_labels.push(y);
                }
            }
        }
        if self.reward == RewardKind::DirectMax {
            rewards = direct_max_rewards(trajectory.len(), &finals, &direct_labels);
        }
        Ok((rewards, loss / self.classifiers.len().max(1) as f64))
    }

    /// Samples a training program, plays it, stores the episode, trains the
    /// classifiers and performs any Q-network updates now due.
    pub fn run_episode(&mut self, programs: &[LabeledProgram]) -> Result<EpisodeStats> {
        if programs.is_empty() {
            return Err(Error::Config("no training programs".into()));
        }
        let program = &programs[self.rng.gen_range(0..programs.len())];
        let env_seed: u64 = self.rng.gen();
        let start = self.env_steps;
        let schedule = self.epsilon;
        let mut step = start;
        let trajectory = rollout(&self.agent.online, &program.program, env_seed, &mut self.rng, || {
            let e = schedule.value(step);
            step += 1;
            e
        })?;
        self.env_steps += trajectory.len() as u64;
        self.episodes += 1;

        let (rewards, classifier_loss) = self.score_and_train_classifiers(&trajectory, &program.label)?;
        let mut stats = EpisodeStats {
            steps: trajectory.len() as u64,
            return_exploration: rewards.iter().sum(),
            classifier_loss,
            ..EpisodeStats::default()
        };
        self.buffer.insert(Arc::new(trajectory), rewards)?;

        if self.buffer.ready() {
            let due = self.env_steps / self.update_every - start / self.update_every;
            for _ in 0..due {
                let batch = self.buffer.sample(self.agent.config().batch_size, &mut self.rng)?;
                stats.q_loss_sum += self.agent.update(&batch)?;
                stats.dqn_updates += 1;
            }
        }
        Ok(stats)
    }

    /// Runs episodes until at least `target` environment steps were taken.
    pub fn run_until(&mut self, programs: &[LabeledProgram], target: u64) -> Result<PhaseStats> {
        let mut phase = PhaseStats::default();
        while self.env_steps < target {
            let s = self.run_episode(programs)?;
            phase.episodes += 1;
            phase.return_sum += s.return_exploration;
            phase.q_loss_sum += s.q_loss_sum;
            phase.q_updates += s.dqn_updates;
            phase.classifier_loss_sum += s.classifier_loss;
        }
        Ok(phase)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseStats {
    pub episodes: u64,
    pub return_sum: f64,
    pub q_loss_sum: f64,
    pub q_updates: u64,
    pub classifier_loss_sum: f64,
}

impl PhaseStats {
    fn merge(&mut self, o: &PhaseStats) {
        self.episodes += o.episodes;
        self.return_sum += o.return_sum;
        self.q_loss_sum += o.q_loss_sum;
        self.q_updates += o.q_updates;
        self.classifier_loss_sum += o.classifier_loss_sum;
    }
}

/// One learning-curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub accuracy: Vec<f64>,
    pub macro_accuracy: f64,
    pub mean_exploration_return: f64,
    pub epsilon: f64,
    pub q_loss: f64,
    pub classifier_loss: f64,
}

pub fn write_curves(rows: &[CurveRow], dims: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string()];
    header.extend((0..dims).map(|k| format!("accuracy_{k}")));
    header.extend(
        ["macro_accuracy", "mean_exploration_return", "epsilon", "q_loss", "classifier_loss"]
            .map(String::from),
    );
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.step.to_string()];
        rec.extend(r.accuracy.iter().map(|a| format!("{a:.6}")));
        rec.push(format!("{:.6}", r.macro_accuracy));
        rec.push(format!("{:.6}", r.mean_exploration_return));
        rec.push(format!("{:.6}", r.epsilon));
        rec.push(format!("{:.6}", r.q_loss));
        rec.push(format!("{:.6}", r.classifier_loss));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Everything persisted next to the checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    /// Floating-point width the networks were trained in.
    pub precision: String,
    pub rubric: Rubric,
    pub obs_dim: usize,
    pub policies: usize,
    pub train_programs: usize,
    pub eval_programs: usize,
}

pub struct TrainOutcome<F: Scalar> {
    pub grader: Grader<F>,
    pub curves: Vec<CurveRow>,
    pub manifest: RunManifest,
}

fn check_programs(rubric: &Rubric, env: EnvKind, programs: &[LabeledProgram], what: &str) -> Result<()> {
    for p in programs {
        if p.program.kind() != env {
            return Err(Error::Config(format!("{what} program for {:?} in a {env:?} run", p.program.kind())));
        }
        if &p.rubric != rubric || p.label.len() != rubric.len() {
            return Err(Error::Config(format!("{what} program labelled with a different rubric")));
        }
    }
    Ok(())
}

fn build_workers<F: Scalar>(config: &TrainConfig, k: usize, obs_dim: usize) -> Result<Vec<Worker<F>>> {
    let all: Vec<usize> = (0..k).collect();
    match config.mode {
        Mode::Factorized => (0..k)
            .map(|i| Worker::new(config, i, &[i], obs_dim, RewardKind::InformationGain))
            .collect(),
        Mode::Unfactorized => Ok(vec![Worker::new(config, 0, &all, obs_dim, RewardKind::InformationGain)?]),
        Mode::DirectMax => Ok(vec![Worker::new(config, 0, &all, obs_dim, RewardKind::DirectMax)?]),
    }
}

fn snapshot<F: Scalar>(workers: &[Worker<F>], mode: Mode, rubric: &Rubric) -> Grader<F> {
    let policies = workers.iter().map(|w| w.agent.online.clone()).collect();
    let mut classifiers: Vec<(usize, FeedbackClassifier<F>)> =
        workers.iter().flat_map(|w| w.classifiers.iter().cloned()).collect();
    classifiers.sort_by_key(|(k, _)| *k);
    Grader::new(mode, rubric.clone(), policies, classifiers.into_iter().map(|(_, g)| g).collect())
        .expect("workers cover every rubric dimension")
}

/// Full training run. Checkpoints, config and curves go to `out` if given.
pub fn train<F: Scalar>(
    config: &TrainConfig,
    rubric: &Rubric,
    train_programs: &[LabeledProgram],
    eval_programs: &[LabeledProgram],
    out: Option<&Path>,
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    rubric.validate()?;
    if rubric.env_kind() != config.env {
        return Err(Error::Config("rubric and environment disagree".into()));
    }
    if train_programs.is_empty() {
        return Err(Error::Config("no training programs".into()));
    }
    check_programs(rubric, config.env, train_programs, "training")?;
    check_programs(rubric, config.env, eval_programs, "evaluation")?;
    if config.eval_every > 0 && eval_programs.is_empty() {
        return Err(Error::Config("evaluation requested without held-out programs".into()));
    }
    let eval_set = &eval_programs[..config.eval_programs.min(eval_programs.len())];
    let k = rubric.len();
    let obs_dim = config.env.observation_dim();
    let mut workers = build_workers::<F>(config, k, obs_dim)?;
    let manifest = RunManifest {
        config: config.clone(),
        precision: F::PRECISION.to_string(),
        rubric: rubric.clone(),
        obs_dim,
        policies: workers.len(),
        train_programs: train_programs.len(),
        eval_programs: eval_set.len(),
    };
    for name in config.overrides() {
        log::info!("hyperparameter override: {name}");
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.json");
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }

    let interval = if config.eval_every == 0 { config.total_steps } else { config.eval_every };
    let mut curves = Vec::new();
    let mut target = 0;
    while target < config.total_steps {
        target = (target + interval).min(config.total_steps);
        let results: Vec<Result<PhaseStats>> = std::thread::scope(|s| {
            let handles: Vec<_> = workers
                .iter_mut()
                .map(|w| s.spawn(move || w.run_until(train_programs, target)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
        });
        let mut phase = PhaseStats::default();
        for r in results {
            phase.merge(&r?);
        }
        if config.eval_every > 0 {
            let grader = snapshot(&workers, config.mode, rubric);
            let report = evaluate_programs(&grader, eval_set, config.seed)?;
            let row = CurveRow {
                step: target,
                accuracy: report.dimensions.iter().map(|d| d.accuracy).collect(),
                macro_accuracy: report.macro_avg.accuracy,
                mean_exploration_return: phase.return_sum / phase.episodes.max(1) as f64,
                epsilon: config.epsilon.value(target),
                q_loss: phase.q_loss_sum / phase.q_updates.max(1) as f64,
                classifier_loss: phase.classifier_loss_sum / phase.episodes.max(1) as f64,
            };
            log::info!(
                "step {} macro accuracy {:.4} return {:.4} q_loss {:.5}",
                row.step,
                row.macro_accuracy,
                row.mean_exploration_return,
                row.q_loss
            );
            curves.push(row);
            if let Some(dir) = out {
                write_curves(&curves, k, &dir.join("curves.csv"))?;
            }
        }
    }

    let grader = snapshot(&workers, config.mode, rubric);
    if let Some(dir) = out {
        grader.save(dir, &manifest)?;
    }
    Ok(TrainOutcome {
        grader,
        curves,
        manifest,
    })
}

/// Grades held-out programs with per-program episode seeds.
pub fn evaluate_programs<F: Scalar>(grader: &Grader<F>, programs: &[LabeledProgram], seed: u64) -> Result<MetricsReport> {
    let mut labels = Vec::with_capacity(programs.len());
    let mut predictions = Vec::with_capacity(programs.len());
    let start = std::time::Instant::now();
    for p in programs {
        predictions.push(grader.grade(&p.program, seed)?.bits);
        labels.push(p.label.clone());
    }
    let mut report = evaluate(&labels, &predictions, &grader.rubric().dimension_names())?;
    report.seconds_per_program = start.elapsed().as_secs_f64() / programs.len().max(1) as f64;
    Ok(report)
}

/// Header fields shared by every checkpoint of a run.
pub(crate) fn checkpoint_meta(config: &TrainConfig, role: &str, index: usize) -> (BTreeMap<String, u64>, serde_json::Value) {
    let mut seeds = BTreeMap::new();
    seeds.insert("train_seed".to_string(), config.seed);
    seeds.insert(format!("{role}_init_seed"), derive_seed(config.seed, role, index as u64));
    let hyper = serde_json::json!({
        "role": role,
        "index": index,
        "mode": config.mode,
        "env": config.env,
        "gamma": config.dqn.gamma,
        "lr": config.dqn.adam.lr,
        "batch_size": config.dqn.batch_size,
        "target_sync_every": config.dqn.target_sync_every,
        "grad_clip": config.dqn.grad_clip,
    });
    (seeds, hyper)
}

pub(crate) fn save_params<F: Scalar>(
    path: &Path,
    params: &crate::nn::ParameterSet<F>,
    config: &TrainConfig,
    role: &str,
    index: usize,
) -> Result<()> {
    let (seeds, hyper) = checkpoint_meta(config, role, index);
    checkpoint::save(path, params, seeds, hyper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, CorpusConfig};

    fn corpus(rubric: &Rubric, n: usize, seed: u64) -> Vec<LabeledProgram> {
        let mut c = CorpusConfig::new(rubric.clone(), n, seed);
        c.toggle_probability = 0.5;
        generate(&c).unwrap()
    }

    fn tiny(mode: Mode, rubric: &Rubric) -> TrainConfig {
        let mut c = TrainConfig::new(mode, rubric.env_kind(), 400, 11);
        c.dqn.batch_size = 2;
        c.replay_min_episodes = 3;
        c.eval_every = 0;
        c
    }

    #[test]
    fn reward_examples() {
        let lp = |p: f64| [(1.0 - p).ln(), p.ln()];
        let r = exploration_rewards(&[lp(0.12), lp(0.12), lp(0.9)], 1);
        assert_eq!(r[0], 0.0);
        assert!((r[1] - 2.0149030205422647).abs() < 1e-12);
        assert!(exploration_rewards(&[lp(0.3); 5], 0).iter().all(|&x| x == 0.0));

        let label = [1, 0, 1, 1, 0, 0, 1, 0];
        let mut probs: Vec<[f64; 2]> = label.iter().map(|&y| if y == 1 { [0.2, 0.8] } else { [0.7, 0.3] }).collect();
        assert_eq!(direct_max_reward(&probs, &label), 1.0);
        probs[0] = [0.9, 0.1];
        probs[1] = [0.1, 0.9];
        assert_eq!(direct_max_reward(&probs, &label), 0.75);
        assert_eq!(direct_max_reward(&[[0.5, 0.5]], &[0]), 1.0);
        assert_eq!(direct_max_rewards(3, &probs, &label), vec![0.0, 0.0, 0.75]);
    }

    #[test]
    fn gate_and_accounting() {
        let rubric = Rubric::bounce8_subset(&[1]).unwrap();
        let programs = corpus(&rubric, 6, 2);
        let config = tiny(Mode::Factorized, &rubric);
        let mut w = Worker::<f64>::new(&config, 0, &[0], rubric.env_kind().observation_dim(), RewardKind::InformationGain).unwrap();
        let initial = w.agent.online.params().clone();
        for e in 1..=3u64 {
            let before = w.classifiers[0].1.params().step();
            let s = w.run_episode(&programs).unwrap();
            assert_eq!(w.buffer.len() as u64, e);
            assert_eq!(w.classifiers[0].1.params().step(), before + 1);
            if e < 3 {
                assert_eq!(s.dqn_updates, 0);
                assert_eq!(w.agent.online.params(), &initial);
            } else {
                // The gate opens once the third episode is stored.
                assert_eq!(s.dqn_updates, w.env_steps() / 4 - (w.env_steps() - s.steps) / 4);
                assert_ne!(w.agent.online.params(), &initial);
            }
        }
        assert_eq!(w.episodes(), 3);
    }

    #[test]
    fn zero_learning_rates_freeze_everything() {
        let rubric = Rubric::bounce8_subset(&[1, 8]).unwrap();
        let programs = corpus(&rubric, 5, 3);
        let mut config = tiny(Mode::Unfactorized, &rubric);
        config.dqn.adam.lr = 0.0;
        config.classifier.adam.lr = 0.0;
        let mut w = Worker::<f64>::new(&config, 0, &[0, 1], rubric.env_kind().observation_dim(), RewardKind::InformationGain).unwrap();
        let q = w.agent.online.params().clone();
        let g: Vec<_> = w.classifiers.iter().map(|(_, g)| g.params().clone()).collect();
        for _ in 0..5 {
            w.run_episode(&programs).unwrap();
        }
        assert!(w.agent.updates() > 0);
        let same = |a: &crate::nn::ParameterSet<f64>, b: &crate::nn::ParameterSet<f64>| {
            a.iter().zip(b.iter()).all(|((_, x), (_, y))| x.data() == y.data())
        };
        assert!(same(w.agent.online.params(), &q));
        for ((_, now), before) in w.classifiers.iter().zip(&g) {
            assert!(same(now.params(), before));
        }
    }

    #[test]
    fn rewards_telescope() {
        let rubric = Rubric::bounce8_subset(&[2, 8]).unwrap();
        let programs = corpus(&rubric, 4, 4);
        let config = tiny(Mode::Unfactorized, &rubric);
        let obs = rubric.env_kind().observation_dim();
        let mut w = Worker::<f64>::new(&config, 0, &[0, 1], obs, RewardKind::InformationGain).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in &programs {
            let t = rollout(&w.agent.online, &p.program, 3, &mut rng, || 0.5).unwrap();
            let ends: f64 = w
                .classifiers
                .iter()
                .zip(&p.label)
                .map(|((_, g), &y)| {
                    let lp = g.log_prefix_probs(&t).unwrap();
                    lp.last().unwrap()[y as usize] - lp[0][y as usize]
                })
                .sum();
            let (r, _) = w.score_and_train_classifiers(&t, &p.label).unwrap();
            assert_eq!(r.len(), t.len());
            assert!((r.iter().sum::<f64>() - ends).abs() <= 1e-9);
        }
    }

    #[test]
    fn factorized_rewards_ignore_other_dimensions() {
        let rubric = Rubric::bounce8_subset(&[1, 6, 8]).unwrap();
        let config = tiny(Mode::Factorized, &rubric);
        let obs = rubric.env_kind().observation_dim();
        let w = Worker::<f64>::new(&config, 1, &[1], obs, RewardKind::InformationGain).unwrap();
        let p = corpus(&rubric, 1, 5).remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = rollout(&w.agent.online, &p.program, 9, &mut rng, || 0.3).unwrap();
        let y = p.label[1];
        let mut base = None;
        for others in [[0, 0], [1, 0], [0, 1], [1, 1]] {
            let mut a = w.clone();
            let (r, _) = a.score_and_train_classifiers(&t, &[others[0], y, others[1]]).unwrap();
            let bits: Vec<u64> = r.iter().map(|x| x.to_bits()).collect();
            assert_eq!(base.get_or_insert_with(|| bits.clone()), &bits);
        }
    }

    #[test]
    fn single_dimension_modes_agree() {
        let rubric = Rubric::bounce8_subset(&[8]).unwrap();
        let programs = corpus(&rubric, 6, 6);
        let obs = rubric.env_kind().observation_dim();
        let mut a = build_workers::<f64>(&tiny(Mode::Factorized, &rubric), 1, obs).unwrap().remove(0);
        let mut b = build_workers::<f64>(&tiny(Mode::Unfactorized, &rubric), 1, obs).unwrap().remove(0);
        for _ in 0..4 {
            a.run_episode(&programs).unwrap();
            b.run_episode(&programs).unwrap();
        }
        let ra: Vec<_> = a.buffer.iter().map(|e| e.rewards.clone()).collect();
        let rb: Vec<_> = b.buffer.iter().map(|e| e.rewards.clone()).collect();
        assert_eq!(ra, rb);
        assert_eq!(a.agent.online.params(), b.agent.online.params());
    }

    #[test]
    fn config_validation() {
        let rubric = Rubric::bounce8();
        let programs = corpus(&rubric, 2, 0);
        let mut c = tiny(Mode::Factorized, &rubric);
        c.total_steps = 0;
        assert!(matches!(train::<f64>(&c, &rubric, &programs, &[], None), Err(Error::Config(_))));
        let c = TrainConfig::new(Mode::Factorized, EnvKind::Breakout, 10, 0);
        assert!(matches!(train::<f64>(&c, &rubric, &programs, &programs, None), Err(Error::Config(_))));
        let mut c = tiny(Mode::Factorized, &rubric);
        c.eval_every = 100;
        assert!(matches!(train::<f64>(&c, &rubric, &programs, &[], None), Err(Error::Config(_))));
        let mut c = tiny(Mode::Factorized, &rubric);
        c.dqn.gamma = 1.5;
        assert!(c.validate().is_err());
        assert!(tiny(Mode::Factorized, &rubric).overrides().contains(&"dqn"));
        assert!(TrainConfig::new(Mode::Factorized, EnvKind::Bounce, 1, 0).overrides().is_empty());
        assert_eq!("direct-max".parse::<Mode>().unwrap(), Mode::DirectMax);
        assert!("both".parse::<Mode>().is_err());
    }

    #[test]
    fn factorized_run_writes_one_pair_per_dimension() {
        let rubric = Rubric::bounce8();
        let programs = corpus(&rubric, 4, 7);
        let mut c = tiny(Mode::Factorized, &rubric);
        c.total_steps = 1;
        let dir = tempfile::tempdir().unwrap();
        train::<f32>(&c, &rubric, &programs, &[], Some(dir.path())).unwrap();
        for k in 0..8 {
            assert!(dir.path().join(format!("policy_{k}.ckpt")).exists());
            assert!(dir.path().join(format!("classifier_{k}.ckpt")).exists());
        }
        assert!(!dir.path().join("policy_8.ckpt").exists());
        let (g, m) = Grader::<f32>::load(dir.path()).unwrap();
        assert_eq!(g.policies().len(), 8);
        assert_eq!(m.config, c);
    }

    #[test]
    fn curves_are_reproducible() {
        let rubric = Rubric::bounce8_subset(&[8]).unwrap();
        let programs = corpus(&rubric, 8, 8);
        let mut c = tiny(Mode::Factorized, &rubric);
        c.total_steps = 600;
        c.eval_every = 200;
        c.eval_programs = 4;
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let out = train::<f32>(&c, &rubric, &programs[..6], &programs[6..], Some(dir.path())).unwrap();
            (out.curves, fs::read(dir.path().join("curves.csv")).unwrap())
        };
        let (a, bytes) = run();
        assert_eq!(a.iter().map(|r| r.step).collect::<Vec<_>>(), vec![200, 400, 600]);
        assert_eq!(bytes, run().1);
    }

    proptest::proptest! {
        #[test]
        fn reward_sum_telescopes(ps in proptest::collection::vec(0.001f64..0.999, 1..120), y in 0u8..2) {
            let lp: Vec<[f64; 2]> = ps.iter().map(|&p| [(1.0 - p).ln(), p.ln()]).collect();
            let r = exploration_rewards(&lp, y);
            proptest::prop_assert_eq!(r.len(), lp.len() - 1);
            let ends = lp[lp.len() - 1][y as usize] - lp[0][y as usize];
            proptest::prop_assert!((r.iter().sum::<f64>() - ends).abs() <= 1e-9);
        }
    }

    #[test]
    fn derived_seeds_differ_by_tag_and_index() {
        assert_ne!(derive_seed(1, "policy", 0), derive_seed(1, "classifier", 0));
        assert_ne!(derive_seed(1, "policy", 0), derive_seed(1, "policy", 1));
        assert_eq!(derive_seed(5, "x", 2), derive_seed(5, "x", 2));
    }
}
