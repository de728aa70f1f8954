//! Central finite-difference checks of analytic gradients, in f64.

use probegrade::classifier::FeedbackClassifier;
use probegrade::env::{Action, Trajectory};
use probegrade::nn::{Embedding, Gradients, Linear, Lstm, ParameterSet, Tape, Tensor, Var};
use probegrade::policy::QNetwork;
use probegrade::tuple::TupleBatch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Coordinates probed per parameter tensor.
const PROBES: usize = 12;

#[derive(Debug, Default, Clone, Copy)]
pub struct Probes {
    pub configs: usize,
    pub probed: usize,
    pub kinks: usize,
    pub worst: f64,
}

impl Probes {
    pub fn check(&self) {
        assert!(self.probed > 0);
        assert!(
            self.kinks * 20 <= self.probed,
            "too many non-differentiable probes: {self:?}"
        );
    }
}

/// Largest per-tensor relative error between the analytic gradient and
/// central differences over a random subset of coordinates.
fn max_relative_error<M: Clone>(
    model: &M,
    params_mut: fn(&mut M) -> &mut ParameterSet<f64>,
    params: fn(&M) -> &ParameterSet<f64>,
    loss: &dyn Fn(&M) -> (f64, Option<Gradients<f64>>),
    rng: &mut ChaCha8Rng,
    stats: &mut Probes,
) -> f64 {
    let (_, grads) = loss(model);
    let grads = grads.expect("gradient");
    let mut worst = 0.0f64;
    let ids: Vec<_> = params(model).ids().collect();
    for id in ids {
        let n = params(model).get(id).len();
        let coords: Vec<usize> = if n <= PROBES {
            (0..n).collect()
        } else {
            (0..PROBES).map(|_| rng.gen_range(0..n)).collect()
        };
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &i in &coords {
            let mut m = model.clone();
            let x = params(&m).get(id).data()[i];
            params_mut(&mut m).get_mut(id).data_mut()[i] = x + H;
            let up = loss(&m).0;
            params_mut(&mut m).get_mut(id).data_mut()[i] = x - H;
            let down = loss(&m).0;
            params_mut(&mut m).get_mut(id).data_mut()[i] = x + H / 8.0;
            let up_fine = loss(&m).0;
            params_mut(&mut m).get_mut(id).data_mut()[i] = x - H / 8.0;
            let down_fine = loss(&m).0;
            let coarse = (up - down) / (2.0 * H);
            let fine = (up_fine - down_fine) / (H / 4.0);
            // Disagreeing step sizes mean a ReLU kink lies inside the window.
            if (coarse - fine).abs() > 1e-7 + 1e-5 * coarse.abs().max(fine.abs()) {
                stats.kinks += 1;
                continue;
            }
            stats.probed += 1;
            numeric.push(coarse);
            analytic.push(grads.get(id).data()[i]);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        if scale < 1e-8 {
            continue;
        }
        let err = norm(&diff) / scale;
        worst = worst.max(err);
        stats.worst = stats.worst.max(err);
        assert!(
            err <= TOL,
            "{}: relative error {err:.3e} (analytic {analytic:?}, numeric {numeric:?})",
            params(model).name(id)
        );
    }
    stats.configs += 1;
    worst
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// A small graph: trainable pre-layer, the op under test, a scalar head.
#[derive(Clone)]
struct Graph {
    params: ParameterSet<f64>,
    pre: Linear,
    pre2: Linear,
    emb: Embedding,
    lstm: Lstm,
    head: Linear,
    x: Tensor<f64>,
    rows: usize,
    width: usize,
    batch: usize,
    h0: Vec<f64>,
    c0: Vec<f64>,
    idx: Vec<usize>,
    targets: Vec<f64>,
    weights: Vec<f64>,
}

impl Graph {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let batch = rng.gen_range(1..4);
        let steps = rng.gen_range(1..5);
        let rows = batch * steps;
        let input = rng.gen_range(1..6);
        let width = rng.gen_range(2..7);
        let hidden = rng.gen_range(1..6);
        let mut params = ParameterSet::new();
        let pre = Linear::new(&mut params, "pre", input, width, rng);
        let pre2 = Linear::new(&mut params, "pre2", input, width, rng);
        let emb = Embedding::new(&mut params, "emb", 5, width, rng);
        let lstm = Lstm::new(&mut params, "lstm", width, hidden, 1.0, rng);
        let head = Linear::new(&mut params, "head", width, 1, rng);
        // Non-zero biases so every term of the backward pass is exercised.
        for id in params.ids().collect::<Vec<_>>() {
            for v in params.get_mut(id).data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        Self {
            params,
            pre,
            pre2,
            emb,
            lstm,
            head,
            x: random_tensor(rng, rows, input),
            rows,
            width,
            batch,
            h0: (0..batch * hidden).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            c0: (0..batch * hidden).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            idx: (0..rows).map(|_| rng.gen_range(0..5)).collect(),
            targets: (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            weights: (0..rows).map(|_| rng.gen_range(0.1..1.0)).collect(),
        }
    }

    fn finish(&self, tape: &mut Tape<'_, f64>, y: Var, head: &Linear) -> Var {
        let out = tape.linear(head, y).unwrap();
        tape.weighted_squared_error(out, self.targets.clone(), self.weights.clone()).unwrap()
    }

    fn loss(&self, op: &str, with_grad: bool) -> (f64, Option<Gradients<f64>>) {
        let mut tape = Tape::new(&self.params);
        let x = tape.input(self.x.clone());
        let a = tape.linear(&self.pre, x).unwrap();
        let loss = match op {
            "linear" => self.finish(&mut tape, a, &self.head),
            "relu" => {
                let r = tape.relu(a).unwrap();
                self.finish(&mut tape, r, &self.head)
            }
            "embed" => {
                let e = tape.embed(&self.emb, self.idx.clone()).unwrap();
                self.finish(&mut tape, e, &self.head)
            }
            "gather" => {
                let rows: Vec<usize> = self.idx.iter().map(|&i| i % self.rows).collect();
                let g = tape.gather_rows(a, rows).unwrap();
                self.finish(&mut tape, g, &self.head)
            }
            "concat" => {
                let b = tape.linear(&self.pre2, x).unwrap();
                let c = tape.concat(&[a, b]).unwrap();
                let picked = tape.pick_cols(c, self.idx.iter().map(|&i| i % (2 * self.width)).collect()).unwrap();
                tape.weighted_squared_error(picked, self.targets.clone(), self.weights.clone()).unwrap()
            }
            "lstm" => {
                let (h, _, _) = tape.lstm(&self.lstm, a, self.batch, Some((&self.h0, &self.c0))).unwrap();
                let picked = tape.pick_cols(h, self.idx.iter().map(|&i| i % self.lstm.hidden()).collect()).unwrap();
                tape.weighted_squared_error(picked, self.targets.clone(), self.weights.clone()).unwrap()
            }
            "dueling" => {
                let b = tape.linear(&self.pre2, x).unwrap();
                let v = tape.linear(&self.head, b).unwrap();
                let q = tape.dueling(v, a).unwrap();
                let picked = tape.pick_cols(q, self.idx.iter().map(|&i| i % self.width).collect()).unwrap();
                tape.weighted_squared_error(picked, self.targets.clone(), self.weights.clone()).unwrap()
            }
            "xent" => {
                let targets = self.idx.iter().map(|&i| i % self.width).collect();
                tape.softmax_cross_entropy(a, targets, self.weights.clone()).unwrap()
            }
            _ => unreachable!(),
        };
        let value = tape.value(loss).data()[0];
        (value, with_grad.then(|| tape.backward(loss).unwrap()))
    }
}

const OPS: [&str; 8] = ["linear", "relu", "embed", "gather", "concat", "lstm", "dueling", "xent"];

/// Every tape operation inside a small random graph, `per_op` graphs each.
pub fn layers(seed: u64, per_op: usize) -> Probes {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Probes::default();
    for op in OPS {
        for _ in 0..per_op {
            let g = Graph::new(&mut rng);
            max_relative_error(&g, |g| &mut g.params, |g| &g.params, &|g: &Graph| g.loss(op, true), &mut rng, &mut stats);
        }
    }
    stats.check();
    stats
}

fn random_trajectory(rng: &mut ChaCha8Rng, obs: usize) -> Trajectory {
    let state = |rng: &mut ChaCha8Rng| (0..obs).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<f64>>();
    let mut t = Trajectory::new(state(rng));
    let steps = rng.gen_range(1..6);
    for _ in 0..steps {
        let s = state(rng);
        t.push(Action::from_index(rng.gen_range(0..3)).unwrap(), rng.gen_range(-1.0..1.0), s);
    }
    t
}

fn batch(rng: &mut ChaCha8Rng, obs: usize) -> Vec<Trajectory> {
    (0..rng.gen_range(1..4)).map(|_| random_trajectory(rng, obs)).collect()
}

#[derive(Clone)]
struct QCase {
    net: QNetwork<f64>,
    trajectories: Vec<Trajectory>,
    obs: usize,
    cols: Vec<usize>,
    targets: Vec<f64>,
}

impl QCase {
    fn loss(&self) -> (f64, Option<Gradients<f64>>) {
        let refs: Vec<&Trajectory> = self.trajectories.iter().collect();
        let b = TupleBatch::new(&refs, self.obs).unwrap();
        let mut tape = Tape::new(self.net.params());
        let q = self.net.forward(&mut tape, &b).unwrap();
        let picked = tape.pick_cols(q, self.cols.clone()).unwrap();
        let n = self.cols.len();
        let loss = tape
            .weighted_squared_error(picked, self.targets.clone(), vec![1.0 / n as f64; n])
            .unwrap();
        (tape.value(loss).data()[0], Some(tape.backward(loss).unwrap()))
    }
}

/// Full Q-network under a TD-style loss.
pub fn q_network(seed: u64, cases: u64) -> Probes {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Probes::default();
    for case in 0..cases {
        let obs = rng.gen_range(2..6);
        let trajectories = batch(&mut rng, obs);
        let rows = trajectories.iter().map(Trajectory::len).max().unwrap() + 1;
        let n = rows * trajectories.len();
        let q = QCase {
            net: QNetwork::new(obs, case),
            obs,
            cols: (0..n).map(|_| rng.gen_range(0..3)).collect(),
            targets: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            trajectories,
        };
        max_relative_error(&q, |q| q.net.params_mut(), |q| q.net.params(), &|q: &QCase| q.loss(), &mut rng, &mut stats);
    }
    stats.check();
    stats
}

#[derive(Clone)]
struct ClassifierCase {
    net: FeedbackClassifier<f64>,
    trajectories: Vec<Trajectory>,
    obs: usize,
    labels: Vec<usize>,
    weights: Vec<f64>,
}

impl ClassifierCase {
    fn loss(&self) -> (f64, Option<Gradients<f64>>) {
        let refs: Vec<&Trajectory> = self.trajectories.iter().collect();
        let b = TupleBatch::new(&refs, self.obs).unwrap();
        let mut tape = Tape::new(self.net.params());
        let logits = self.net.forward(&mut tape, &b).unwrap();
        let loss = tape
            .softmax_cross_entropy(logits, self.labels.clone(), self.weights.clone())
            .unwrap();
        (tape.value(loss).data()[0], Some(tape.backward(loss).unwrap()))
    }
}

/// Full classifier under weighted cross-entropy on every prefix.
pub fn classifier(seed: u64, cases: u64) -> Probes {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Probes::default();
    for case in 0..cases {
        let obs = rng.gen_range(2..6);
        let trajectories = batch(&mut rng, obs);
        let rows = trajectories.iter().map(Trajectory::len).max().unwrap() + 1;
        let n = rows * trajectories.len();
        let c = ClassifierCase {
            net: FeedbackClassifier::new(obs, case),
            obs,
            labels: (0..n).map(|_| rng.gen_range(0..2)).collect(),
            weights: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            trajectories,
        };
        max_relative_error(&c, |c| c.net.params_mut(), |c| c.net.params(), &|c: &ClassifierCase| c.loss(), &mut rng, &mut stats);
    }
    stats.check();
    stats
}
