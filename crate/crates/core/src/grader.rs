//! Grading new programs with trained policies and classifiers, plus the
//! evaluation metrics and report files.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{predict, FeedbackClassifier};
use crate::corpus::Rubric;
use crate::env::{Program, Trajectory};
use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::policy::QNetwork;
use crate::scalar::Scalar;
use crate::trainer::{rollout, save_params, CurveRow, Mode, RunManifest};

/// Grader output for one program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedLabel {
    pub bits: Vec<u8>,
    /// `g(y_k = 1 | τ_k)` per dimension.
    pub confidence: Vec<f64>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seed of the `k`-th grading episode of `program`.
pub fn episode_seed(program: &Program, master: u64, k: usize) -> u64 {
    let json = serde_json::to_vec(program).expect("programs always serialize");
    crate::trainer::derive_seed(fnv1a(&json) ^ master, "grade", k as u64)
}

/// Trained policies and classifiers for one rubric.
#[derive(Debug, Clone)]
pub struct Grader<F: Scalar> {
    mode: Mode,
    rubric: Rubric,
    policies: Vec<QNetwork<F>>,
    classifiers: Vec<FeedbackClassifier<F>>,
}

impl<F: Scalar> Grader<F> {
    pub fn new(
        mode: Mode,
        rubric: Rubric,
        policies: Vec<QNetwork<F>>,
        classifiers: Vec<FeedbackClassifier<F>>,
    ) -> Result<Self> {
        let k = rubric.len();
        let want_policies = if mode == Mode::Factorized { k } else { 1 };
        if policies.len() != want_policies || classifiers.len() != k {
            return Err(Error::Config(format!(
                "{mode:?} grader for {k} dimensions needs {want_policies} policies and {k} classifiers, got {} and {}",
                policies.len(),
                classifiers.len()
            )));
        }
        let obs = rubric.env_kind().observation_dim();
        if policies.iter().any(|p| p.obs_dim() != obs) || classifiers.iter().any(|c| c.obs_dim() != obs) {
            return Err(Error::Config("network input size does not match the rubric's environment".into()));
        }
        Ok(Self {
            mode,
            rubric,
            policies,
            classifiers,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn rubric(&self) -> &Rubric {
        &self.rubric
    }

    pub fn policies(&self) -> &[QNetwork<F>] {
        &self.policies
    }

    pub fn classifiers(&self) -> &[FeedbackClassifier<F>] {
        &self.classifiers
    }

    /// Greedy episode used to judge dimension `k`.
    pub fn explore(&self, program: &Program, master_seed: u64, k: usize) -> Result<Trajectory> {
        let policy = &self.policies[if self.mode == Mode::Factorized { k } else { 0 }];
        let seed = episode_seed(program, master_seed, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rollout(policy, program, seed, &mut rng, || 0.0)
    }

    /// One greedy episode per rubric dimension, each read by that
    /// dimension's classifier.
    pub fn grade(&self, program: &Program, master_seed: u64) -> Result<PredictedLabel> {
        if program.kind() != self.rubric.env_kind() {
            return Err(Error::Config(format!(
                "{:?} program given to a {:?} grader",
                program.kind(),
                self.rubric.env_kind()
            )));
        }
        let mut bits = Vec::with_capacity(self.classifiers.len());
        let mut confidence = Vec::with_capacity(self.classifiers.len());
        for (k, g) in self.classifiers.iter().enumerate() {
            let trajectory = self.explore(program, master_seed, k)?;
            let p = g.classify(&trajectory)?;
            bits.push(predict(&p));
            confidence.push(p[1].to_f64().unwrap_or(f64::NAN));
        }
        Ok(PredictedLabel { bits, confidence })
    }

    /// Writes `config.json` and one checkpoint per network.
    pub fn save(&self, dir: &Path, manifest: &RunManifest) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.json");
        fs::write(&path, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(&path, e))?;
        for (i, p) in self.policies.iter().enumerate() {
            save_params(&dir.join(format!("policy_{i}.ckpt")), p.params(), &manifest.config, "policy", i)?;
        }
        for (k, g) in self.classifiers.iter().enumerate() {
            save_params(&dir.join(format!("classifier_{k}.ckpt")), g.params(), &manifest.config, "classifier", k)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, RunManifest)> {
        let manifest = read_manifest(dir)?;
        manifest.rubric.validate()?;
        let obs = manifest.obs_dim;
        if obs != manifest.rubric.env_kind().observation_dim() {
            return Err(Error::Config("checkpoint observation size does not match its rubric".into()));
        }
        let k = manifest.rubric.len();
        let n_policies = if manifest.config.mode == Mode::Factorized { k } else { 1 };
        let mut policies = Vec::with_capacity(n_policies);
        for i in 0..n_policies {
            let mut net = QNetwork::new(obs, 0);
            let (_, tensors) = checkpoint::load::<F>(&dir.join(format!("policy_{i}.ckpt")))?;
            net.params_mut().load_values(tensors)?;
            policies.push(net);
        }
        let mut classifiers = Vec::with_capacity(k);
        for i in 0..k {
            let mut g = FeedbackClassifier::new(obs, 0);
            let (_, tensors) = checkpoint::load::<F>(&dir.join(format!("classifier_{i}.ckpt")))?;
            g.params_mut().load_values(tensors)?;
            classifiers.push(g);
        }
        let grader = Self::new(manifest.config.mode, manifest.rubric.clone(), policies, classifiers)?;
        Ok((grader, manifest))
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join("config.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Confusion counts and derived metrics for one rubric dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionMetrics {
    pub name: String,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl DimensionMetrics {
    pub fn from_counts(name: impl Into<String>, tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        // An empty denominator scores 1 only when there is nothing positive at all.
        let clean = if tp + fp + fn_ == 0 { 1.0 } else { 0.0 };
        let ratio = |num: u64, den: u64| if den == 0 { clean } else { num as f64 / den as f64 };
        let total = tp + fp + tn + fn_;
        Self {
            name: name.into(),
            tp,
            fp,
            tn,
            fn_,
            accuracy: if total == 0 { 0.0 } else { (tp + tn) as f64 / total as f64 },
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dimensions: Vec<DimensionMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub programs: usize,
    pub seconds_per_program: f64,
}

/// Per-dimension confusion counts over paired label and prediction vectors.
pub fn evaluate(labels: &[Vec<u8>], predictions: &[Vec<u8>], names: &[String]) -> Result<MetricsReport> {
    if labels.len() != predictions.len() {
        return Err(Error::Input(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let k = names.len();
    let mut counts = vec![[0u64; 4]; k];
    for (y, p) in labels.iter().zip(predictions) {
        if y.len() != k || p.len() != k {
            return Err(Error::Input(format!("expected {k}-bit labels and predictions")));
        }
        for (c, (&a, &b)) in counts.iter_mut().zip(y.iter().zip(p)) {
            let slot = match (a != 0, b != 0) {
                (true, true) => 0,
                (false, true) => 1,
                (false, false) => 2,
                (true, false) => 3,
            };
            c[slot] += 1;
        }
    }
    let dimensions: Vec<DimensionMetrics> = names
        .iter()
        .zip(&counts)
        .map(|(n, c)| DimensionMetrics::from_counts(n.clone(), c[0], c[1], c[2], c[3]))
        .collect();
    let mean = |f: fn(&DimensionMetrics) -> f64| {
        if k == 0 {
            0.0
        } else {
            dimensions.iter().map(f).sum::<f64>() / k as f64
        }
    };
    let macro_avg = MacroMetrics {
        accuracy: mean(|d| d.accuracy),
        precision: mean(|d| d.precision),
        recall: mean(|d| d.recall),
        f1: mean(|d| d.f1),
    };
    Ok(MetricsReport {
        dimensions,
        macro_avg,
        programs: labels.len(),
        seconds_per_program: 0.0,
    })
}

/// One line of the tabular metrics file; the last row is the macro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dimension: String,
    pub tp: Option<u64>,
    pub fp: Option<u64>,
    pub tn: Option<u64>,
    #[serde(rename = "fn")]
    pub fn_: Option<u64>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsReport {
    pub fn rows(&self) -> Vec<MetricsRow> {
        let mut rows: Vec<MetricsRow> = self
            .dimensions
            .iter()
            .map(|d| MetricsRow {
                dimension: d.name.clone(),
                tp: Some(d.tp),
                fp: Some(d.fp),
                tn: Some(d.tn),
                fn_: Some(d.fn_),
                accuracy: d.accuracy,
                precision: d.precision,
                recall: d.recall,
                f1: d.f1,
            })
            .collect();
        rows.push(MetricsRow {
            dimension: "macro".into(),
            tp: None,
            fp: None,
            tn: None,
            fn_: None,
            accuracy: self.macro_avg.accuracy,
            precision: self.macro_avg.precision,
            recall: self.macro_avg.recall,
            f1: self.macro_avg.f1,
        });
        rows
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Everything written by [`emit_report`] besides the metrics themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportContext {
    pub precision: String,
    pub grading_seed: u64,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub context: ReportContext,
    pub metrics: MetricsReport,
}

/// Writes `metrics.json`, `metrics.csv` and, when given, `curves.csv`.
pub fn emit_report(
    metrics: &MetricsReport,
    curves: &[CurveRow],
    context: &ReportContext,
    out: &Path,
) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let file = ReportFile {
        context: context.clone(),
        metrics: metrics.clone(),
    };
    let path = out.join("metrics.json");
    fs::write(&path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(&path, e))?;
    let path = out.join("metrics.csv");
    fs::write(&path, metrics.to_csv()?).map_err(|e| Error::io(&path, e))?;
    if !curves.is_empty() {
        crate::trainer::write_curves(curves, metrics.dimensions.len(), &out.join("curves.csv"))?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<ReportFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Mean and sample standard deviation of a metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// A single run has no spread and reports a standard deviation of 0.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1} ± {:.1}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dimension: String,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

/// Combines reports of several seeds over the same rubric, row by row.
pub fn aggregate(reports: &[MetricsReport]) -> Result<Vec<AggregateRow>> {
    let first = reports.first().ok_or_else(|| Error::Input("no reports to aggregate".into()))?;
    let rows: Vec<Vec<MetricsRow>> = reports.iter().map(MetricsReport::rows).collect();
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Input("reports cover different rubrics".into()));
    }
    let _ = first;
    Ok((0..rows[0].len())
        .map(|i| {
            let col = |f: fn(&MetricsRow) -> f64| MeanStd::of(&rows.iter().map(|r| f(&r[i])).collect::<Vec<_>>());
            AggregateRow {
                dimension: rows[0][i].dimension.clone(),
                accuracy: col(|r| r.accuracy),
                precision: col(|r| r.precision),
                recall: col(|r| r.recall),
                f1: col(|r| r.f1),
            }
        })
        .collect())
}
