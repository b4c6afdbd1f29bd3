//! Planning metrics, the chance baseline, experiment runs and the
//! per-action displacement tables of the fitted token maps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept::{distance, Concept, ConceptCodebook, ConceptTokens, CONCEPTS};
use crate::env::{adjudicate, format_actions, Action, FailureReason, ObjectState};
use crate::error::{Error, Result};
use crate::pipeline::{codebook_covering, Pipeline, Planner};
use crate::rng::{self, TAG_CHANCE};
use crate::taskgen::{Dataset, Split, Task};
use crate::transition::{transition, ActionKey, ActionTransitionMaps};

pub const ATTEMPTS: usize = 5;

/// Mean of `gt / predicted` length over successful plans. A successful
/// empty plan counts as 1. `None` when nothing succeeded.
pub fn ase(records: &[(usize, usize, bool)]) -> Option<f64> {
    let wins: Vec<f64> = records
        .iter()
        .filter(|r| r.2)
        .map(|&(gt, pred, _)| if pred == 0 { 1.0 } else { gt as f64 / pred as f64 })
        .collect();
    (!wins.is_empty()).then(|| wins.iter().sum::<f64>() / wins.len() as f64)
}

/// Euclidean distance between final and goal grid positions.
pub fn fsd(a: &ObjectState, b: &ObjectState) -> f64 {
    let dx = a.pos_x as f64 - b.pos_x as f64;
    let dy = a.pos_y as f64 - b.pos_y as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Top-1 and top-5 success rates in percent. Each inner list holds the
/// adjudicated outcome of each attempt in rank order.
pub fn asacc(attempt_sets: &[Vec<bool>]) -> (f64, f64) {
    if attempt_sets.is_empty() {
        return (0.0, 0.0);
    }
    let n = attempt_sets.len() as f64;
    let top1 = attempt_sets.iter().filter(|a| a.first() == Some(&true)).count() as f64;
    let top5 = attempt_sets.iter().filter(|a| a.iter().take(ATTEMPTS).any(|&s| s)).count() as f64;
    (100.0 * top1 / n, 100.0 * top5 / n)
}

/// Random action sequences with lengths uniform in `1..=max_len`.
pub fn chance_baseline<R: Rng>(task: &Task, rng: &mut R, attempts: usize) -> Vec<Vec<Action>> {
    (0..attempts)
        .map(|_| {
            let len = rng.random_range(1..=task.env.max_len);
            (0..len).map(|_| Action::ALL[rng.random_range(0..Action::COUNT)]).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Symbolic,
    TokenSpace,
    Chance,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Symbolic => "symbolic",
            Method::TokenSpace => "token_space",
            Method::Chance => "chance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub split: Split,
    /// Token noise standard deviation when encoding init and goal.
    pub sigma: f64,
    pub top_k: usize,
    pub l_max: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Symbolic,
            split: Split::Test,
            sigma: 0.0,
            top_k: crate::mdp::DEFAULT_TOP_K,
            l_max: crate::mdp::DEFAULT_L_MAX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub gt_len: usize,
    pub successes: Vec<bool>,
    pub plan_lengths: Vec<usize>,
    /// Final-to-goal distance of the first attempt, or of init when the
    /// planner produced nothing.
    pub fsd: f64,
    pub failure: FailureReason,
    pub top1_actions: Option<Vec<Action>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: u8,
    pub config: ExperimentConfig,
    pub n_tasks: usize,
    pub asacc_top1: f64,
    pub asacc_top5: f64,
    pub ase: Option<f64>,
    /// Averaged over every task.
    pub fsd_mean: f64,
    /// Averaged over tasks whose first attempt succeeded.
    pub fsd_success_mean: Option<f64>,
    pub records: Vec<TaskOutcome>,
}

fn outcome(task: &Task, attempts: Vec<Vec<Action>>, error: Option<String>) -> TaskOutcome {
    let reports: Vec<_> = attempts.iter().map(|a| adjudicate(task, a)).collect();
    let (fsd_first, failure) = match reports.first() {
        Some(r) => (fsd(&r.final_state, &task.goal), r.failure_reason),
        None => (fsd(&task.init, &task.goal), FailureReason::WrongFinalState),
    };
    TaskOutcome {
        task_id: task.task_id.clone(),
        gt_len: task.gt_actions.len(),
        successes: reports.iter().map(|r| r.success).collect(),
        plan_lengths: attempts.iter().map(Vec::len).collect(),
        fsd: fsd_first,
        failure,
        top1_actions: attempts.into_iter().next(),
        error,
    }
}

fn run_task(
    pipeline: Option<&Pipeline>,
    codebook: Option<&ConceptCodebook>,
    task: &Task,
    index: usize,
    config: &ExperimentConfig,
) -> Result<TaskOutcome> {
    let planner = match config.method {
        Method::Chance => {
            let mut rng = rng::stream(config.seed, &[TAG_CHANCE, index as u64]);
            return Ok(outcome(task, chance_baseline(task, &mut rng, ATTEMPTS), None));
        }
        Method::Symbolic => Planner::Symbolic,
        Method::TokenSpace => Planner::TokenSpace,
    };
    let (p, cb) = pipeline.zip(codebook).expect("checked by caller");
    let (init, goal) = p.encode_task(cb, task, index, config.sigma, config.seed)?;
    match p.plan_tokens(cb, task, &init, &goal, planner, config.top_k, config.l_max) {
        Ok(r) => {
            let attempts = r.plans.into_iter().take(ATTEMPTS).map(|p| p.actions).collect();
            Ok(outcome(task, attempts, None))
        }
        Err(e @ (Error::NoPlanFound { .. } | Error::DeadDistribution { .. })) => {
            Ok(outcome(task, Vec::new(), Some(e.to_string())))
        }
        Err(e) => Err(e),
    }
}

/// Evaluates one method on one split. Tasks run in parallel with per-task
/// random streams, so the report does not depend on scheduling.
pub fn run_experiment(dataset: &Dataset, pipeline: Option<&Pipeline>, config: &ExperimentConfig) -> Result<EvalReport> {
    let tasks: Vec<&Task> = dataset.split(config.split).collect();
    let codebook = match (config.method, pipeline) {
        (Method::Chance, _) => None,
        (_, Some(p)) => Some(codebook_covering(&p.codebook, tasks.iter().copied())?),
        (m, None) => {
            return Err(Error::InvalidArgument(format!("method {} needs fitted artifacts", m.name())));
        }
    };
    let records = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| run_task(pipeline, codebook.as_ref(), t, i, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(dataset.level, config.clone(), records))
}

pub fn summarize(level: u8, config: ExperimentConfig, records: Vec<TaskOutcome>) -> EvalReport {
    let sets: Vec<Vec<bool>> = records.iter().map(|r| r.successes.clone()).collect();
    let (top1, top5) = asacc(&sets);
    let ase_rows: Vec<(usize, usize, bool)> = records
        .iter()
        .map(|r| (r.gt_len, r.plan_lengths.first().copied().unwrap_or(0), r.successes.first() == Some(&true)))
        .collect();
    let n = records.len();
    let fsd_mean = if n == 0 { 0.0 } else { records.iter().map(|r| r.fsd).sum::<f64>() / n as f64 };
    let wins: Vec<f64> = records.iter().filter(|r| r.successes.first() == Some(&true)).map(|r| r.fsd).collect();
    EvalReport {
        level,
        config,
        n_tasks: n,
        asacc_top1: top1,
        asacc_top5: top5,
        ase: ase(&ase_rows),
        fsd_mean,
        fsd_success_mean: (!wins.is_empty()).then(|| wins.iter().sum::<f64>() / wins.len() as f64),
        records,
    }
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        writeln!(s, "method\t{}", c.method.name()).unwrap();
        writeln!(s, "level\t{}", self.level).unwrap();
        writeln!(s, "split\t{}", c.split).unwrap();
        writeln!(s, "sigma\t{}", c.sigma).unwrap();
        writeln!(s, "top_k\t{}", c.top_k).unwrap();
        writeln!(s, "l_max\t{}", c.l_max).unwrap();
        writeln!(s, "seed\t{}", c.seed).unwrap();
        writeln!(s, "tasks\t{}", self.n_tasks).unwrap();
        writeln!(s, "asacc_top1\t{:.2}", self.asacc_top1).unwrap();
        writeln!(s, "asacc_top5\t{:.2}", self.asacc_top5).unwrap();
        match self.ase {
            Some(v) => writeln!(s, "ase\t{v:.4}").unwrap(),
            None => writeln!(s, "ase\tabsent").unwrap(),
        }
        writeln!(s, "fsd_mean\t{:.4}", self.fsd_mean).unwrap();
        match self.fsd_success_mean {
            Some(v) => writeln!(s, "fsd_success_mean\t{v:.4}").unwrap(),
            None => writeln!(s, "fsd_success_mean\tabsent").unwrap(),
        }
        s
    }

    pub fn records_tsv(&self) -> String {
        let mut s = String::from("task_id\tgt_len\tsuccesses\tplan_lengths\tfsd\tfailure\ttop1\terror\n");
        for r in &self.records {
            let flags: Vec<&str> = r.successes.iter().map(|&b| if b { "1" } else { "0" }).collect();
            let lens: Vec<String> = r.plan_lengths.iter().map(usize::to_string).collect();
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.4}\t{}\t{}\t{}",
                r.task_id,
                r.gt_len,
                flags.join(","),
                lens.join(","),
                r.fsd,
                r.failure.name(),
                r.top1_actions.as_deref().map(format_actions).unwrap_or_default(),
                r.error.as_deref().unwrap_or(""),
            )
            .unwrap();
        }
        s
    }

    /// Writes `<stem>.txt` and `<stem>.tsv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{stem}.txt")), self.summary())?;
        fs::write(dir.join(format!("{stem}.tsv")), self.records_tsv())?;
        Ok(())
    }
}

/// Mean token displacement per concept and action, plus decoded grid
/// displacements for movement actions.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpretabilityReport {
    /// `table[concept][action]`, NaN where the action has no map.
    pub table: [[f64; Action::COUNT]; CONCEPTS],
    pub samples: [usize; Action::COUNT],
    /// (action, dx, dy) in grid cells, decoded through nearest centroids.
    pub position_moves: Vec<(Action, f64, f64)>,
}

impl InterpretabilityReport {
    /// Concept with the largest mean displacement for `action`.
    pub fn dominant_concept(&self, action: Action) -> Option<Concept> {
        let a = action.index();
        if self.samples[a] == 0 {
            return None;
        }
        Concept::ALL.into_iter().max_by(|x, y| self.table[x.index()][a].total_cmp(&self.table[y.index()][a]))
    }

    pub fn table_text(&self) -> String {
        let mut s = format!("{:<10}", "concept");
        for a in Action::ALL {
            write!(s, " {:>12}", a.name()).unwrap();
        }
        s.push('\n');
        for c in Concept::ALL {
            write!(s, "{:<10}", c.name()).unwrap();
            for a in Action::ALL {
                match self.table[c.index()][a.index()] {
                    v if v.is_nan() => write!(s, " {:>12}", "-").unwrap(),
                    v => write!(s, " {v:>12.4}").unwrap(),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn table_tsv(&self) -> String {
        let mut s = String::from("concept\taction\tmean_l2\tsamples\n");
        for c in Concept::ALL {
            for a in Action::ALL {
                writeln!(
                    s,
                    "{}\t{}\t{:.6}\t{}",
                    c.name(),
                    a.name(),
                    self.table[c.index()][a.index()],
                    self.samples[a.index()]
                )
                .unwrap();
            }
        }
        s
    }

    pub fn moves_tsv(&self) -> String {
        let mut s = String::from("action\tdx\tdy\n");
        for (a, dx, dy) in &self.position_moves {
            writeln!(s, "{}\t{dx}\t{dy}", a.name()).unwrap();
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("displacement.txt"), self.table_text())?;
        fs::write(dir.join("displacement.tsv"), self.table_tsv())?;
        fs::write(dir.join("position_moves.tsv"), self.moves_tsv())?;
        Ok(())
    }
}

/// Pushes each sampled token state through the map of its key and averages
/// the per-concept l2 change. `change_color` pools every dyer color.
pub fn interpretability_report(
    maps: &ActionTransitionMaps,
    codebook: &ConceptCodebook,
    samples: &[(ConceptTokens, ActionKey)],
) -> Result<InterpretabilityReport> {
    let mut sums = [[0.0; Action::COUNT]; CONCEPTS];
    let mut counts = [0usize; Action::COUNT];
    let mut moves = Vec::new();
    for (tokens, key) in samples {
        if maps.get(key).is_none() {
            continue;
        }
        let out = transition(tokens, key, maps)?;
        let a = key.action.index();
        counts[a] += 1;
        for c in Concept::ALL {
            sums[c.index()][a] += distance(tokens.token(c), out.token(c));
        }
        if key.action.displacement().is_some() {
            let before = codebook.decode(tokens);
            let after = codebook.decode(&out);
            let dx = after[Concept::PosX.index()] as f64 - before[Concept::PosX.index()] as f64;
            let dy = after[Concept::PosY.index()] as f64 - before[Concept::PosY.index()] as f64;
            moves.push((key.action, dx, dy));
        }
    }
    let mut table = [[f64::NAN; Action::COUNT]; CONCEPTS];
    for (c, row) in table.iter_mut().enumerate() {
        for (a, v) in row.iter_mut().enumerate() {
            if counts[a] > 0 {
                *v = sums[c][a] / counts[a] as f64;
            }
        }
    }
    Ok(InterpretabilityReport { table, samples: counts, position_moves: moves })
}

/// Displacement samples from the noiseless encodings of every state where
/// each gt action of `tasks` was taken.
pub fn sample_transitions(tasks: &[&Task], codebook: &ConceptCodebook) -> Result<Vec<(ConceptTokens, ActionKey)>> {
    let cb = codebook_covering(codebook, tasks.iter().copied())?;
    let mut rng = rng::stream(0, &[]);
    let mut out = Vec::new();
    for t in tasks {
        let traj = crate::env::simulate(&t.init, &t.gt_actions, &t.env)?;
        let dyer = t.env.dyer.map(|d| d.color);
        for (s, &a) in traj.iter().zip(&t.gt_actions) {
            out.push((crate::concept::encode(s, &cb, 0.0, &mut rng)?, ActionKey::in_scene(a, dyer)));
        }
    }
    Ok(out)
}
