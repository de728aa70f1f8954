use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use probegrade::corpus::{self, apply_speed_suite, CorpusConfig, LabeledProgram, Rubric, SpeedPolicy, SpeedSuite};
use probegrade::env::{EnvKind, Program};
use probegrade::grader::{aggregate, emit_report, read_manifest, read_report, Grader, ReportContext};
use probegrade::trainer::{evaluate_programs, train, Mode, TrainConfig};
use probegrade::{Error, Result, Scalar};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "probegrade", version, about = "Train and run learned graders for interactive paddle-game programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus as JSON lines.
    GenCorpus(GenCorpus),
    /// Train exploration policies and feedback classifiers.
    Train(Train),
    /// Grade one program and print the prediction as JSON.
    Grade(Grade),
    /// Grade a corpus split and write metrics reports.
    Eval(Eval),
    /// Combine metrics.json files from several seeds into mean and standard deviation.
    Aggregate(Aggregate),
}

#[derive(Args)]
struct GenCorpus {
    /// Rubric: 8, 28, breakout, or a subset of the 8-error rubric such as 8:1,6
    #[arg(long, default_value = "8")]
    rubric: String,
    #[arg(long)]
    n: usize,
    /// Per-error toggle probability.
    #[arg(long, default_value_t = 0.12)]
    p: f64,
    #[arg(long, default_value = "fixed")]
    speed_policy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Factorized,
    Unfactorized,
    DirectMax,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Bounce,
    Breakout,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct Train {
    #[arg(long, value_enum, default_value = "factorized")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "bounce")]
    env: EnvArg,
    #[arg(long)]
    corpus: PathBuf,
    /// Environment steps per policy.
    #[arg(long)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Fraction of the corpus used for training; the rest is held out.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Steps between held-out evaluations (0 disables them).
    #[arg(long, default_value_t = 10_000)]
    eval_every: u64,
    #[arg(long, default_value_t = 200)]
    eval_programs: usize,
    #[arg(long, value_enum, default_value = "f32")]
    precision: Precision,
}

#[derive(Args)]
struct Grade {
    #[arg(long)]
    checkpoints: PathBuf,
    /// A program JSON file, or one corpus line.
    #[arg(long)]
    program: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoints: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
    /// Grading seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also evaluate the four held-out speed suites.
    #[arg(long)]
    speed_suites: bool,
}

#[derive(Args)]
struct Aggregate {
    /// metrics.json files, one per seed.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Optional CSV output; the table is always printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// How `train` carved its corpus, so `eval` can recover the same split.
#[derive(Debug, Serialize, Deserialize)]
struct SplitRecord {
    corpus: PathBuf,
    train_fraction: f64,
    seed: u64,
}

fn gen_corpus(args: GenCorpus) -> Result<()> {
    let mut config = CorpusConfig::new(Rubric::parse(&args.rubric)?, args.n, args.seed);
    config.toggle_probability = args.p;
    config.speed_policy = args.speed_policy.parse::<SpeedPolicy>()?;
    let programs = corpus::generate(&config)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    corpus::write_dataset(&programs, &args.out)?;
    let positives: Vec<usize> = (0..config.rubric.len())
        .map(|k| programs.iter().filter(|p| p.label[k] == 1).count())
        .collect();
    log::info!("wrote {} programs to {}; positives per error {positives:?}", programs.len(), args.out.display());
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn corpus_rubric(programs: &[LabeledProgram]) -> Result<Rubric> {
    let first = programs.first().ok_or_else(|| Error::Config("corpus is empty".into()))?;
    if programs.iter().any(|p| p.rubric != first.rubric) {
        return Err(Error::Config("corpus mixes rubrics".into()));
    }
    Ok(first.rubric.clone())
}

fn run_train<F: Scalar>(args: &Train, config: &TrainConfig, rubric: &Rubric, train_set: &[LabeledProgram], test_set: &[LabeledProgram]) -> Result<()> {
    let run = train::<F>(config, rubric, train_set, test_set, Some(&args.out))?;
    if let Some(last) = run.curves.last() {
        log::info!("final held-out macro accuracy {:.4}", last.macro_accuracy);
    }
    Ok(())
}

fn train_cmd(args: Train) -> Result<()> {
    let programs = corpus::read_dataset(&args.corpus)?;
    let rubric = corpus_rubric(&programs)?;
    let (train_set, test_set) = corpus::split(&programs, args.train_fraction, args.seed)?;
    let env = match args.env {
        EnvArg::Bounce => EnvKind::Bounce,
        EnvArg::Breakout => EnvKind::Breakout,
    };
    let mode = match args.mode {
        ModeArg::Factorized => Mode::Factorized,
        ModeArg::Unfactorized => Mode::Unfactorized,
        ModeArg::DirectMax => Mode::DirectMax,
    };
    let mut config = TrainConfig::new(mode, env, args.steps, args.seed);
    config.eval_every = args.eval_every;
    config.eval_programs = args.eval_programs;
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let record = SplitRecord {
        corpus: args.corpus.clone(),
        train_fraction: args.train_fraction,
        seed: args.seed,
    };
    let path = args.out.join("split.json");
    fs::write(&path, serde_json::to_string_pretty(&record)?).map_err(|e| io_error(&path, e))?;
    log::info!(
        "training {mode:?} on {} programs ({} held out), {} steps per policy",
        train_set.len(),
        test_set.len(),
        args.steps
    );
    match args.precision {
        Precision::F32 => run_train::<f32>(&args, &config, &rubric, &train_set, &test_set),
        Precision::F64 => run_train::<f64>(&args, &config, &rubric, &train_set, &test_set),
    }
}

fn read_program(path: &Path) -> Result<Program> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    if let Ok(p) = serde_json::from_str::<Program>(&text) {
        return Ok(p);
    }
    Ok(serde_json::from_str::<LabeledProgram>(&text)?.program)
}

fn grade_with<F: Scalar>(args: &Grade, program: &Program) -> Result<()> {
    let (grader, _) = Grader::<F>::load(&args.checkpoints)?;
    let label = grader.grade(program, args.seed)?;
    let out = serde_json::json!({
        "errors": grader.rubric().dimension_names(),
        "prediction": label.bits,
        "confidence": label.confidence,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn grade_cmd(args: Grade) -> Result<()> {
    let program = read_program(&args.program)?;
    if read_manifest(&args.checkpoints)?.precision == "f64" {
        grade_with::<f64>(&args, &program)
    } else {
        grade_with::<f32>(&args, &program)
    }
}

fn eval_with<F: Scalar>(args: &Eval, programs: &[LabeledProgram]) -> Result<()> {
    let (grader, manifest) = Grader::<F>::load(&args.checkpoints)?;
    if programs.iter().any(|p| &p.rubric != grader.rubric()) {
        return Err(Error::Config("corpus rubric does not match the checkpoints".into()));
    }
    let context = ReportContext {
        precision: manifest.precision.clone(),
        grading_seed: args.seed,
        config: serde_json::to_value(&manifest)?,
    };
    let report = evaluate_programs(&grader, programs, args.seed)?;
    emit_report(&report, &[], &context, &args.out)?;
    println!("{}", report.to_csv()?);
    if args.speed_suites {
        let mut w = csv::Writer::from_path(args.out.join("speed_suites.csv"))?;
        w.write_record(["suite", "accuracy", "precision", "recall", "f1"])?;
        for suite in SpeedSuite::ALL {
            let suite_programs = apply_speed_suite(programs, suite, args.seed);
            let r = evaluate_programs(&grader, &suite_programs, args.seed)?;
            emit_report(&r, &[], &context, &args.out.join(suite.name()))?;
            let m = r.macro_avg;
            w.write_record([suite.name().to_string(), m.accuracy.to_string(), m.precision.to_string(), m.recall.to_string(), m.f1.to_string()])?;
            println!("{:<16} accuracy {:.4} f1 {:.4}", suite.name(), m.accuracy, m.f1);
        }
        w.flush().map_err(|e| io_error(&args.out, e))?;
    }
    Ok(())
}

fn eval_cmd(args: Eval) -> Result<()> {
    let programs = corpus::read_dataset(&args.corpus)?;
    let selected = match args.split {
        SplitArg::All => programs,
        split => {
            let path = args.checkpoints.join("split.json");
            let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
            let record: SplitRecord = serde_json::from_str(&text)?;
            let (train_set, test_set) = corpus::split(&programs, record.train_fraction, record.seed)?;
            if split == SplitArg::Train {
                train_set
            } else {
                test_set
            }
        }
    };
    if selected.is_empty() {
        return Err(Error::Config("selected split is empty".into()));
    }
    if read_manifest(&args.checkpoints)?.precision == "f64" {
        eval_with::<f64>(&args, &selected)
    } else {
        eval_with::<f32>(&args, &selected)
    }
}

fn aggregate_cmd(args: Aggregate) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| read_report(p).map(|r| r.metrics))
        .collect::<Result<Vec<_>>>()?;
    let rows = aggregate(&reports)?;
    println!("{:<20} {:>14} {:>14} {:>14} {:>14}", "dimension", "accuracy", "precision", "recall", "f1");
    for r in &rows {
        println!(
            "{:<20} {:>14} {:>14} {:>14} {:>14}",
            r.dimension,
            r.accuracy.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string()
        );
    }
    if let Some(out) = &args.out {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["dimension", "accuracy_mean", "accuracy_std", "precision_mean", "precision_std", "recall_mean", "recall_std", "f1_mean", "f1_std"])?;
        for r in &rows {
            let mut rec = vec![r.dimension.clone()];
            for m in [r.accuracy, r.precision, r.recall, r.f1] {
                rec.push(m.mean.to_string());
                rec.push(m.std.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| io_error(out, e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Train(a) => train_cmd(a),
        Command::Grade(a) => grade_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Aggregate(a) => aggregate_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
