//! Synthetic labeled programs: rubric definitions, generation, masking of
//! unobservable errors, JSON-lines persistence and train/test splits.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::bounce::{Cell, ConsequenceKind as C, EventType as E, ProgramSpec};
use crate::env::breakout::{BreakoutError, BreakoutProgramSpec, CORRECT_ROWS, MAX_ROWS};
use crate::env::probe;
use crate::env::{EnvKind, Program, Speed};
use crate::error::{Error, Result};

/// The eight-error Bounce rubric, in label order.
pub const BOUNCE8: [Cell; 8] = [
    Cell(E::BallHitsGoal, C::Bounce),
    Cell(E::BallHitsGoal, C::OpponentScore),
    Cell(E::BallHitsGoal, C::LaunchBall),
    Cell(E::BallHitsFloor, C::OpponentScore),
    Cell(E::BallHitsWall, C::OpponentScore),
    Cell(E::PaddleMoves, C::MovePaddle),
    Cell(E::BallHitsPaddle, C::PlayerScore),
    Cell(E::ProgramStarts, C::LaunchBall),
];

const START_LAUNCH: Cell = Cell(E::ProgramStarts, C::LaunchBall);
const GOAL_BOUNCE: Cell = Cell(E::BallHitsGoal, C::Bounce);

/// Ordered list of errors; position `k` is label bit `k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "items", rename_all = "snake_case")]
pub enum Rubric {
    Bounce(Vec<Cell>),
    Breakout(Vec<BreakoutError>),
}

impl Rubric {
    pub fn bounce8() -> Self {
        Rubric::Bounce(BOUNCE8.to_vec())
    }

    pub fn bounce28() -> Self {
        Rubric::Bounce(Cell::all_valid())
    }

    pub fn breakout() -> Self {
        Rubric::Breakout(BreakoutError::ALL.to_vec())
    }

    /// Subset of the eight-error rubric by 1-based error number.
    pub fn bounce8_subset(numbers: &[usize]) -> Result<Self> {
        let cells = numbers
            .iter()
            .map(|&n| {
                n.checked_sub(1)
                    .and_then(|i| BOUNCE8.get(i).copied())
                    .ok_or_else(|| Error::Config(format!("rubric error number {n} not in 1..=8")))
            })
            .collect::<Result<Vec<_>>>()?;
        let rubric = Rubric::Bounce(cells);
        rubric.validate()?;
        Ok(rubric)
    }

    /// Parses `8`, `28`, `breakout`, or `8:1,6` (a subset of the eight errors).
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "8" => Ok(Self::bounce8()),
            "28" => Ok(Self::bounce28()),
            "breakout" => Ok(Self::breakout()),
            other => {
                let list = other.strip_prefix("8:").ok_or_else(|| {
                    Error::Config(format!("unknown rubric '{other}' (expected 8, 28, breakout or 8:i,j,..)"))
                })?;
                let numbers = list
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad rubric index '{t}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::bounce8_subset(&numbers)
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Rubric::Bounce(c) => c.len(),
            Rubric::Breakout(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn env_kind(&self) -> EnvKind {
        match self {
            Rubric::Bounce(_) => EnvKind::Bounce,
            Rubric::Breakout(_) => EnvKind::Breakout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Config("rubric is empty".into()));
        }
        match self {
            Rubric::Bounce(cells) => {
                if let Some(c) = cells.iter().find(|c| !c.is_valid()) {
                    return Err(Error::Config(format!("invalid rubric cell {c}")));
                }
                if cells.iter().collect::<BTreeSet<_>>().len() != cells.len() {
                    return Err(Error::Config("rubric cells repeat".into()));
                }
            }
            Rubric::Breakout(errors) => {
                if errors.iter().collect::<BTreeSet<_>>().len() != errors.len() {
                    return Err(Error::Config("rubric errors repeat".into()));
                }
            }
        }
        Ok(())
    }

    /// Human-readable name of each dimension.
    pub fn dimension_names(&self) -> Vec<String> {
        match self {
            Rubric::Bounce(cells) => cells.iter().map(Cell::to_string).collect(),
            Rubric::Breakout(errors) => errors
                .iter()
                .map(|e| serde_json::to_value(e).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default())
                .collect(),
        }
    }

    fn within_bounce8(cells: &[Cell]) -> bool {
        cells.iter().all(|c| BOUNCE8.contains(c))
    }
}

/// How ball and paddle speeds are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpeedPolicy {
    /// Both speeds `Normal`.
    Fixed,
    /// Each axis uniform over the four non-normal settings.
    HoldoutNormal,
}

impl std::str::FromStr for SpeedPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(SpeedPolicy::Fixed),
            "holdout-normal" => Ok(SpeedPolicy::HoldoutNormal),
            _ => Err(Error::Config(format!("unknown speed policy '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub rubric: Rubric,
    /// Independent per-error probability of a toggled cell.
    pub toggle_probability: f64,
    pub programs: usize,
    pub speed_policy: SpeedPolicy,
    pub seed: u64,
}

impl CorpusConfig {
    pub fn new(rubric: Rubric, programs: usize, seed: u64) -> Self {
        Self {
            rubric,
            toggle_probability: 0.12,
            programs,
            speed_policy: SpeedPolicy::Fixed,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rubric.validate()?;
        if !(0.0..=1.0).contains(&self.toggle_probability) {
            return Err(Error::Config(format!(
                "toggle probability {} outside [0, 1]",
                self.toggle_probability
            )));
        }
        if self.programs == 0 {
            return Err(Error::Config("corpus must contain at least one program".into()));
        }
        Ok(())
    }
}

/// One program with its ground-truth feedback.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledProgram {
    pub program: Program,
    /// Bit `k` is 1 when rubric error `k` is present and observable.
    pub label: Vec<u8>,
    pub seed: u64,
    pub rubric: Rubric,
}

fn sample_speeds<R: Rng + ?Sized>(policy: SpeedPolicy, rng: &mut R) -> (Speed, Speed) {
    match policy {
        SpeedPolicy::Fixed => (Speed::Normal, Speed::Normal),
        SpeedPolicy::HoldoutNormal => (
            *Speed::NON_NORMAL.choose(rng).expect("non-empty"),
            *Speed::NON_NORMAL.choose(rng).expect("non-empty"),
        ),
    }
}

/// Draws one labeled program; fully determined by the seed taken from `rng`.
pub fn sample_program<R: Rng + ?Sized>(config: &CorpusConfig, rng: &mut R) -> LabeledProgram {
    let seed: u64 = rng.gen();
    let mut own = ChaCha8Rng::seed_from_u64(seed);
    let p = config.toggle_probability;
    match &config.rubric {
        Rubric::Bounce(cells) => {
            let deviations = cells.iter().copied().filter(|_| own.gen_bool(p)).collect();
            let (ball_speed, paddle_speed) = sample_speeds(config.speed_policy, &mut own);
            let spec = ProgramSpec {
                deviations,
                ball_speed,
                paddle_speed,
            };
            let label = mask_unobservable(&spec, &config.rubric);
            LabeledProgram {
                program: Program::Bounce(spec),
                label,
                seed,
                rubric: config.rubric.clone(),
            }
        }
        Rubric::Breakout(errors) => {
            let mut spec = BreakoutProgramSpec::correct();
            for &e in errors {
                if own.gen_bool(p) {
                    let rows = loop {
                        let r = own.gen_range(5..=MAX_ROWS);
                        if r != CORRECT_ROWS {
                            break r;
                        }
                    };
                    spec.set(e, true, rows);
                }
            }
            let (ball_speed, paddle_speed) = sample_speeds(config.speed_policy, &mut own);
            spec.ball_speed = ball_speed;
            spec.paddle_speed = paddle_speed;
            let label = errors.iter().map(|&e| u8::from(spec.has(e))).collect();
            LabeledProgram {
                program: Program::Breakout(spec),
                label,
                seed,
                rubric: config.rubric.clone(),
            }
        }
    }
}

/// Generates `config.programs` programs from the master seed.
pub fn generate(config: &CorpusConfig) -> Result<Vec<LabeledProgram>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok((0..config.programs)
        .map(|_| sample_program(config, &mut rng))
        .collect())
}

/// Projects a program's toggles onto the rubric, clearing errors that
/// cannot be observed because another error hides their triggering event.
///
/// Rubrics drawn from the eight-error list use closed-form rules; any other
/// Bounce rubric asks the scripted probes which events are reachable.
pub fn mask_unobservable(program: &ProgramSpec, rubric: &Rubric) -> Vec<u8> {
    let cells = match rubric {
        Rubric::Bounce(cells) => cells,
        Rubric::Breakout(_) => panic!("mask_unobservable called with a Breakout rubric"),
    };
    if Rubric::within_bounce8(cells) {
        let no_ball = program.is_toggled(START_LAUNCH);
        let goal_bounces = program.is_toggled(GOAL_BOUNCE);
        cells
            .iter()
            .map(|&cell| {
                let hidden = (no_ball && cell.event().is_ball_event())
                    || (goal_bounces
                        && cell.event() == E::BallHitsGoal
                        && matches!(cell.consequence(), C::PlayerScore | C::OpponentScore | C::LaunchBall));
                u8::from(program.is_toggled(cell) && !hidden)
            })
            .collect()
    } else {
        let report = probe::probe_bounce(program);
        cells
            .iter()
            .map(|c| u8::from(program.is_toggled(*c) && report.deviations.contains(c)))
            .collect()
    }
}

/// Writes one JSON object per line.
pub fn write_dataset(programs: &[LabeledProgram], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in programs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines corpus; blank lines are skipped.
pub fn read_dataset(path: &Path) -> Result<Vec<LabeledProgram>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let program: LabeledProgram = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if program.label.len() != program.rubric.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "label length does not match rubric".into(),
            });
        }
        out.push(program);
    }
    Ok(out)
}

/// Seeded shuffle followed by a prefix split of `floor(fraction * n)` programs.
pub fn split(
    corpus: &[LabeledProgram],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledProgram>, Vec<LabeledProgram>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n_train = split_point(corpus.len(), train_fraction);
    if n_train == 0 || n_train == corpus.len() {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} of {} programs leaves an empty split",
            corpus.len()
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..n_train].iter().map(|&i| corpus[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| corpus[i].clone()).collect();
    Ok((train, test))
}

/// Number of training programs for a corpus of `n`.
pub fn split_point(n: usize, train_fraction: f64) -> usize {
    (train_fraction * n as f64 + 1e-9).floor() as usize
}

/// Which speed axes use the held-out `Normal` setting at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpeedSuite {
    BothHeldOut,
    BallHeldOut,
    PaddleHeldOut,
    NoneHeldOut,
}

impl SpeedSuite {
    pub const ALL: [SpeedSuite; 4] = [
        SpeedSuite::BothHeldOut,
        SpeedSuite::BallHeldOut,
        SpeedSuite::PaddleHeldOut,
        SpeedSuite::NoneHeldOut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpeedSuite::BothHeldOut => "both-held-out",
            SpeedSuite::BallHeldOut => "ball-held-out",
            SpeedSuite::PaddleHeldOut => "paddle-held-out",
            SpeedSuite::NoneHeldOut => "none-held-out",
        }
    }
}

/// Re-draws program speeds for an evaluation suite; labels are unchanged.
pub fn apply_speed_suite(programs: &[LabeledProgram], suite: SpeedSuite, seed: u64) -> Vec<LabeledProgram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    programs
        .iter()
        .map(|p| {
            let mut p = p.clone();
            let trained = |rng: &mut ChaCha8Rng| *Speed::NON_NORMAL.choose(rng).expect("non-empty");
            let ball = match suite {
                SpeedSuite::BothHeldOut | SpeedSuite::BallHeldOut => Speed::Normal,
                _ => trained(&mut rng),
            };
            let paddle = match suite {
                SpeedSuite::BothHeldOut | SpeedSuite::PaddleHeldOut => Speed::Normal,
                _ => trained(&mut rng),
            };
            p.program.set_speeds(ball, paddle);
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bounce_spec(p: &LabeledProgram) -> &ProgramSpec {
        match &p.program {
            Program::Bounce(s) => s,
            Program::Breakout(_) => unreachable!(),
        }
    }

    #[test]
    fn zero_probability_gives_correct_programs() {
        let mut c = CorpusConfig::new(Rubric::bounce8(), 50, 1);
        c.toggle_probability = 0.0;
        for p in generate(&c).unwrap() {
            assert!(bounce_spec(&p).deviations.is_empty());
            assert!(p.label.iter().all(|&b| b == 0));
        }
    }

    #[test]
    fn certain_toggles_are_masked_by_missing_launch() {
        let mut c = CorpusConfig::new(Rubric::bounce8(), 5, 1);
        c.toggle_probability = 1.0;
        for p in generate(&c).unwrap() {
            assert_eq!(bounce_spec(&p).deviations.len(), 8);
            // Errors 6 (paddle direction) and 8 (start launch) stay visible.
            assert_eq!(p.label, vec![0, 0, 0, 0, 0, 1, 0, 1]);
        }
    }

    #[test]
    fn toggle_frequency_matches_prior() {
        let c = CorpusConfig::new(Rubric::bounce8(), 10_000, 5);
        let programs = generate(&c).unwrap();
        for cell in BOUNCE8 {
            let n = programs.iter().filter(|p| bounce_spec(p).is_toggled(cell)).count();
            let f = n as f64 / programs.len() as f64;
            assert!((0.10..=0.14).contains(&f), "{cell}: {f}");
        }
    }

    #[test]
    fn masking_examples() {
        let r = Rubric::bounce8();
        let goal = ProgramSpec::with_deviations([BOUNCE8[0], BOUNCE8[1]]);
        assert_eq!(mask_unobservable(&goal, &r), vec![1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(mask_unobservable(&ProgramSpec::correct(), &r), vec![0; 8]);
        let paddle = ProgramSpec::with_deviations([BOUNCE8[5]]);
        assert_eq!(mask_unobservable(&paddle, &r), vec![0, 0, 0, 0, 0, 1, 0, 0]);
    }

    #[test]
    fn full_grid_masking_uses_probes() {
        let r = Rubric::bounce28();
        let cells = Cell::all_valid();
        let start = ProgramSpec::with_deviations([START_LAUNCH, Cell(E::BallHitsWall, C::PlayerScore)]);
        let label = mask_unobservable(&start, &r);
        let on: Vec<Cell> = cells.iter().zip(&label).filter(|(_, &b)| b == 1).map(|(c, _)| *c).collect();
        assert_eq!(on, vec![START_LAUNCH]);
    }

    #[test]
    fn rubric_parsing() {
        assert_eq!(Rubric::parse("8").unwrap().len(), 8);
        assert_eq!(Rubric::parse("28").unwrap().len(), 28);
        assert_eq!(Rubric::parse("breakout").unwrap().len(), 6);
        assert_eq!(
            Rubric::parse("8:1,6").unwrap(),
            Rubric::Bounce(vec![BOUNCE8[0], BOUNCE8[5]])
        );
        assert!(Rubric::parse("8:1,1").is_err());
        assert!(Rubric::parse("8:9").is_err());
        assert!(Rubric::parse("nine").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut c = CorpusConfig::new(Rubric::bounce8(), 100, 2);
        c.speed_policy = SpeedPolicy::HoldoutNormal;
        let programs = generate(&c).unwrap();
        write_dataset(&programs, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), programs);

        let b = generate(&CorpusConfig::new(Rubric::breakout(), 20, 2)).unwrap();
        write_dataset(&b, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), b);
    }

    #[test]
    fn empty_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_dataset(&path).unwrap().is_empty());

        let programs = generate(&CorpusConfig::new(Rubric::bounce8(), 3, 2)).unwrap();
        write_dataset(&programs, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = text.trim_end().len() - 5;
        std::fs::write(&path, &text[..cut]).unwrap();
        match read_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn split_examples() {
        let programs = generate(&CorpusConfig::new(Rubric::bounce8(), 1000, 3)).unwrap();
        let (train, test) = split(&programs, 0.5, 9).unwrap();
        assert_eq!((train.len(), test.len()), (500, 500));
        let seeds: BTreeSet<u64> = train.iter().chain(&test).map(|p| p.seed).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(split(&programs, 0.5, 9).unwrap().0, train);
        assert!(split(&programs, 0.0001, 9).is_err());
        assert!(split(&programs, 1.0, 9).is_err());
        assert_eq!(split_point(711_274, 0.005), 3556);
    }

    #[test]
    fn speed_suites_pin_held_out_axes() {
        let mut c = CorpusConfig::new(Rubric::bounce8(), 40, 4);
        c.speed_policy = SpeedPolicy::HoldoutNormal;
        let programs = generate(&c).unwrap();
        assert!(programs.iter().all(|p| p.program.ball_speed() != Speed::Normal
            && p.program.paddle_speed() != Speed::Normal));
        for suite in SpeedSuite::ALL {
            for p in apply_speed_suite(&programs, suite, 0) {
                let ball = p.program.ball_speed() == Speed::Normal;
                let paddle = p.program.paddle_speed() == Speed::Normal;
                let expect = match suite {
                    SpeedSuite::BothHeldOut => (true, true),
                    SpeedSuite::BallHeldOut => (true, false),
                    SpeedSuite::PaddleHeldOut => (false, true),
                    SpeedSuite::NoneHeldOut => (false, false),
                };
                assert_eq!((ball, paddle), expect);
            }
        }
    }

    fn spec_from_mask(mask: &[bool]) -> ProgramSpec {
        ProgramSpec::with_deviations(BOUNCE8.iter().zip(mask).filter(|(_, &m)| m).map(|(c, _)| *c))
    }

    proptest! {
        #[test]
        fn masking_is_idempotent(mask in proptest::collection::vec(any::<bool>(), 8)) {
            let r = Rubric::bounce8();
            let once = mask_unobservable(&spec_from_mask(&mask), &r);
            let as_bools: Vec<bool> = once.iter().map(|&b| b == 1).collect();
            let twice = mask_unobservable(&spec_from_mask(&as_bools), &r);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn splits_partition_the_corpus(n in 2usize..200, f in 0.05f64..0.95, seed in any::<u64>()) {
            let programs = generate(&CorpusConfig::new(Rubric::bounce8(), n, 1)).unwrap();
            match split(&programs, f, seed) {
                Ok((a, b)) => {
                    prop_assert_eq!(a.len() + b.len(), n);
                    let mut all: Vec<u64> = a.iter().chain(&b).map(|p| p.seed).collect();
                    all.sort_unstable();
                    let mut expect: Vec<u64> = programs.iter().map(|p| p.seed).collect();
                    expect.sort_unstable();
                    prop_assert_eq!(all, expect);
                }
                Err(e) => prop_assert!(matches!(e, Error::Config(_))),
            }
        }

        #[test]
        fn generation_is_reproducible(seed in any::<u64>()) {
            let c = CorpusConfig::new(Rubric::bounce8(), 20, seed);
            prop_assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        }
    }
}
