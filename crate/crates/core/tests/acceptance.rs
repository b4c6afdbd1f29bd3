//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ctplan::concept::{build_codebook, disentanglement_score, encode, Concept, CONCEPTS, DEFAULT_DIM};
use ctplan::env::{Action, Cell, Dyer, EnvConfig, ObjectState, GRID_HEIGHT, GRID_WIDTH};
use ctplan::eval::{interpretability_report, run_experiment, sample_transitions, EvalReport, ExperimentConfig, Method};
use ctplan::mdp::{propagate, SymbolDistribution, SymbolMasks, TransitionModel};
use ctplan::pipeline::{fit, FitConfig, FitSummary, Pipeline};
use ctplan::symbol::SymbolState;
use ctplan::taskgen::{
    generate_dataset, make_unseen_object_split, make_unseen_task_split, Dataset, Split, SplitSizes,
    DEFAULT_HELD_OUT_TYPES,
};
use ctplan::Error;

const MIN_SEP: f64 = 1.0;
const SEED: u64 = 7;
const DESK: SplitSizes = SplitSizes { train: 800, val: 10, test: 100 };
const ORACLE_TOL: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

struct Run {
    dataset: Dataset,
    pipeline: Pipeline,
    summary: FitSummary,
    elapsed: Duration,
    symbolic: EvalReport,
}

fn run_level(level: u8, sizes: SplitSizes, sigma: f64) -> Run {
    let t0 = Instant::now();
    let dataset = generate_dataset(level, sizes, SEED).expect("dataset");
    let (pipeline, summary) = fit(&dataset, &FitConfig { sigma, ..FitConfig::default() }).expect("fit");
    let symbolic = run_experiment(&dataset, Some(&pipeline), &experiment(Method::Symbolic, sigma)).expect("eval");
    Run { dataset, pipeline, summary, elapsed: t0.elapsed(), symbolic }
}

fn experiment(method: Method, sigma: f64) -> ExperimentConfig {
    ExperimentConfig { method, sigma, ..ExperimentConfig::default() }
}

fn rates(r: &EvalReport) -> String {
    format!("top1 {:.1}% top5 {:.1}%", r.asacc_top1, r.asacc_top5)
}

/// Step weight tables `w[action][from][to]`: source legality times count
/// ratio times destination validity.
type StepTable = Vec<Vec<Vec<f64>>>;

fn block_table(model: &TransitionModel, masks: &SymbolMasks, c: Concept) -> StepTable {
    let k = model.cardinality(c);
    Action::ALL
        .iter()
        .map(|&a| {
            (0..k)
                .map(|from| {
                    (0..k)
                        .map(|to| {
                            let legal = legal_ratio(model, c, from, a) > model.thresh;
                            let valid = masks.values[c.index()][to]
                                && (a != Action::ChangeColor || c != Concept::Color || masks.dyer_color == Some(to));
                            if legal && valid {
                                count_ratio(model, c, a, from, to)
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn position_table(model: &TransitionModel, masks: &SymbolMasks) -> StepTable {
    let ky = model.cardinality(Concept::PosY);
    let n = model.cardinality(Concept::PosX) * ky;
    Action::ALL
        .iter()
        .map(|&a| {
            (0..n)
                .map(|from| {
                    (0..n)
                        .map(|to| {
                            let (x, y, x2, y2) = (from / ky, from % ky, to / ky, to % ky);
                            let legal = legal_ratio(model, Concept::PosX, x, a) > model.thresh
                                && legal_ratio(model, Concept::PosY, y, a) > model.thresh;
                            let valid = masks.position[to] && (a != Action::ChangeColor || masks.dyer_position[to]);
                            if legal && valid {
                                count_ratio(model, Concept::PosX, a, x, x2)
                                    * count_ratio(model, Concept::PosY, a, y, y2)
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Brute-force distribution after `actions` from a point mass: every symbol
/// path is weighted by the product of its step weights, and the surviving
/// weights are normalized once at the end.
fn enumerate_paths(table: &StepTable, start: usize, actions: &[Action]) -> Option<Vec<f64>> {
    let states = table[0].len();
    let mut out = vec![0.0; states];
    let mut path = vec![start];
    walk(
        actions,
        &mut path,
        1.0,
        &mut |path, w| out[*path.last().unwrap()] += w,
        &|from, a, to| table[a.index()][from][to],
        states,
    );
    finish(out)
}

fn walk(
    actions: &[Action],
    path: &mut Vec<usize>,
    weight: f64,
    emit: &mut dyn FnMut(&[usize], f64),
    step: &dyn Fn(usize, Action, usize) -> f64,
    states: usize,
) {
    let t = path.len() - 1;
    if t == actions.len() {
        emit(path, weight);
        return;
    }
    let from = path[t];
    for to in 0..states {
        let w = step(from, actions[t], to);
        if w > 0.0 {
            path.push(to);
            walk(actions, path, weight * w, emit, step, states);
            path.pop();
        }
    }
}

fn finish(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return None;
    }
    v.iter_mut().for_each(|p| *p /= total);
    Some(v)
}

fn count_ratio(model: &TransitionModel, c: Concept, a: Action, from: usize, to: usize) -> f64 {
    let row: u64 = (0..model.cardinality(c)).map(|t| model.count(c, a, from, t)).sum();
    if row == 0 {
        0.0
    } else {
        model.count(c, a, from, to) as f64 / row as f64
    }
}

fn legal_ratio(model: &TransitionModel, c: Concept, from: usize, a: Action) -> f64 {
    let total: u64 = Action::ALL.iter().map(|&b| model.occurrence(c, from, b)).sum();
    if total == 0 {
        0.0
    } else {
        model.occurrence(c, from, a) as f64 / total as f64
    }
}

fn sequences(max_len: usize) -> Vec<Vec<Action>> {
    let mut all = Vec::new();
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s: &Vec<Action>| {
                Action::ALL.iter().map(move |&a| {
                    let mut n = s.clone();
                    n.push(a);
                    n
                })
            })
            .collect();
        all.extend(layer.iter().cloned());
    }
    all
}

const BLOCKS: [Concept; 4] = [Concept::Type, Concept::Rotation, Concept::Color, Concept::Size];

/// Compares propagate against the path enumeration over every point-mass
/// start and every sequence of length 1..=3. Returns (comparisons, worst
/// error, disagreements on dead distributions).
fn oracle_sweep(model: &TransitionModel, masks: &SymbolMasks) -> (usize, f64, usize) {
    let cards = model.cardinalities();
    let seqs = sequences(3);
    let (kx, ky) = (cards[Concept::PosX.index()], cards[Concept::PosY.index()]);
    let index: BTreeMap<&[Action], usize> = seqs.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect();
    let parents: Vec<Option<usize>> = seqs.iter().map(|s| index.get(&s[..s.len() - 1]).copied()).collect();

    // Oracle tables indexed [concept block][start symbol][sequence] and
    // [joint start][sequence].
    let block_oracles: Vec<Vec<Vec<Option<Vec<f64>>>>> = BLOCKS
        .iter()
        .map(|&c| {
            let table = block_table(model, masks, c);
            (0..cards[c.index()])
                .into_par_iter()
                .map(|s| seqs.iter().map(|q| enumerate_paths(&table, s, q)).collect())
                .collect()
        })
        .collect();
    let table = position_table(model, masks);
    let pos_oracles: Vec<Vec<Option<Vec<f64>>>> =
        (0..kx * ky).into_par_iter().map(|j| seqs.iter().map(|q| enumerate_paths(&table, j, q)).collect()).collect();

    let starts: Vec<SymbolState> = (0..cards.iter().product::<usize>())
        .map(|mut i| {
            let mut s = SymbolState([0; CONCEPTS]);
            for c in Concept::ALL {
                s.set(c, i % cards[c.index()]);
                i /= cards[c.index()];
            }
            s
        })
        .collect();

    starts
        .par_iter()
        .map(|start| {
            let mut n = 0usize;
            let mut worst = 0.0f64;
            let mut dead_mismatch = 0usize;
            // Sequences are in breadth-first order, so every prefix is ready.
            let root = SymbolDistribution::point(start, cards);
            let mut done: Vec<Option<SymbolDistribution>> = Vec::with_capacity(seqs.len());
            for (q, seq) in seqs.iter().enumerate() {
                let prefix = match parents[q] {
                    None => Some(&root),
                    Some(i) => done[i].as_ref(),
                };
                let got = prefix.and_then(|d| match propagate(d, *seq.last().unwrap(), model, masks) {
                    Ok(d) => Some(d),
                    Err(Error::DeadDistribution { .. }) => None,
                    Err(e) => panic!("{e}"),
                });
                let j = start.get(Concept::PosX) * ky + start.get(Concept::PosY);
                let mut expected: Vec<Option<&Vec<f64>>> =
                    BLOCKS.iter().enumerate().map(|(b, c)| block_oracles[b][start.get(*c)][q].as_ref()).collect();
                expected.push(pos_oracles[j][q].as_ref());
                let oracle_alive = expected.iter().all(|e| e.is_some());
                match (&got, oracle_alive) {
                    (Some(d), true) => {
                        for (b, c) in BLOCKS.iter().enumerate() {
                            let m = d.block(*c).expect("block concept");
                            for (x, y) in m.iter().zip(expected[b].unwrap()) {
                                worst = worst.max((x - y).abs());
                            }
                        }
                        for (x, y) in d.position().iter().zip(expected[4].unwrap()) {
                            worst = worst.max((x - y).abs());
                        }
                        n += 1;
                    }
                    (None, false) => n += 1,
                    _ => dead_mismatch += 1,
                }
                done.push(got);
            }
            (n, worst, dead_mismatch)
        })
        .reduce(|| (0, 0.0, 0), |a, b| (a.0 + b.0, a.1.max(b.1), a.2 + b.2))
}

/// Model with random counts over every concept so that transitions are
/// genuinely stochastic and some actions fall under the threshold.
fn random_model(cards: [usize; CONCEPTS], seed: u64) -> (TransitionModel, SymbolMasks) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = TransitionModel::new(cards, 0.05);
    for _ in 0..3000 {
        let from = SymbolState(std::array::from_fn(|i| rng.random_range(0..cards[i]) as u8));
        let mut to = from;
        for c in Concept::ALL {
            if rng.random_bool(0.4) {
                to.set(c, rng.random_range(0..cards[c.index()]));
            }
        }
        let a = Action::ALL[rng.random_range(0..Action::COUNT)];
        let a = if rng.random_bool(0.5) { Action::MoveFront } else { a };
        model.record(&from, a, &to).expect("record");
    }
    let mut masks = SymbolMasks::all_valid(cards);
    masks.position.iter_mut().for_each(|v| *v = rng.random_bool(0.8));
    masks.dyer_position.iter_mut().for_each(|v| *v = rng.random_bool(0.3));
    for vals in masks.values.iter_mut() {
        vals.iter_mut().for_each(|v| *v = rng.random_bool(0.9));
    }
    masks.dyer_color = Some(rng.random_range(0..cards[Concept::Color.index()]));
    (model, masks)
}

fn criterion_5(level4: &Run) -> Outcome {
    let t0 = Instant::now();
    let p = &level4.pipeline;
    let env = EnvConfig::new(4, vec![Cell::new(1, 2)], Some(Dyer { cell: Cell::new(0, 4), color: 3 })).expect("env");
    let masks = SymbolMasks::from_env(&env, &p.codebook, &p.symbolizer);
    let (n_fit, worst_fit, dead_fit) = oracle_sweep(&p.model, &masks);
    let (rmodel, rmasks) = random_model([3, 3, 5, 4, 3, 2], 11);
    let (n_rand, worst_rand, dead_rand) = oracle_sweep(&rmodel, &rmasks);
    let elapsed = t0.elapsed();
    let worst = worst_fit.max(worst_rand);
    check(
        worst <= ORACLE_TOL && dead_fit + dead_rand == 0 && elapsed < Duration::from_secs(5),
        format!(
            "{} fitted + {} stochastic comparisons, max abs error {worst:.2e}, dead-state disagreements {}, {:.2}s",
            n_fit,
            n_rand,
            dead_fit + dead_rand,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6(level4: &Run) -> Outcome {
    let p = &level4.pipeline;
    let sym = |c, v| p.symbolizer.symbol_of_value(&p.codebook, c, v);
    let mut checked = 0usize;
    let mut accepted = Vec::new();
    for x in 0..GRID_WIDTH {
        for y in 0..GRID_HEIGHT {
            for a in [Action::MoveFront, Action::MoveBack, Action::MoveLeft, Action::MoveRight] {
                let (dx, dy) = a.displacement().unwrap();
                let (nx, ny) = (x as i8 + dx, y as i8 + dy);
                if (0..GRID_WIDTH as i8).contains(&nx) && (0..GRID_HEIGHT as i8).contains(&ny) {
                    continue;
                }
                for t in 0..8 {
                    for r in 0..4 {
                        for col in 0..6 {
                            for s in 0..4 {
                                let state = ObjectState {
                                    type_id: t,
                                    pos_x: x,
                                    pos_y: y,
                                    rotation: r * 90,
                                    color: col,
                                    size: s,
                                };
                                let symbols = SymbolState(Concept::ALL.map(|c| sym(c, c.value(&state)) as u8));
                                checked += 1;
                                if p.model.action_legal(&symbols, a) {
                                    accepted.push((x, y, a));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    accepted.dedup();
    check(
        checked > 0 && accepted.is_empty(),
        format!("{checked} boundary (state, off-grid action) pairs, {} accepted {accepted:?}", accepted.len()),
    )
}

fn criterion_7() -> Outcome {
    let ds = generate_dataset(4, SplitSizes::new(2000, 10, 10), SEED).expect("dataset");
    let mut lines = Vec::new();
    let mut pass = true;
    for (sigma, floor) in [(0.0, 1.0), (0.1 * MIN_SEP, 0.99)] {
        let (_, s) = fit(&ds, &FitConfig { sigma, ..FitConfig::default() }).expect("fit");
        let worst = s.purity.iter().cloned().fold(f64::INFINITY, f64::min);
        pass &= s.tokens >= 10_000 && worst >= floor;
        lines.push(format!("sigma {sigma}: min purity {worst:.4} over {} tokens", s.tokens));
    }
    check(pass, lines.join("; "))
}

fn criterion_8() -> Outcome {
    let cb = build_codebook(DEFAULT_DIM, 0, MIN_SEP).expect("codebook");
    let cards = cb.cardinalities();
    let mut lines = Vec::new();
    let mut pass = true;
    for (sigma, floor) in [(0.0, 1.0), (0.05 * MIN_SEP, 0.99)] {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let pairs: Vec<_> = (0..10_000)
            .map(|_| {
                let mut v: [usize; CONCEPTS] = std::array::from_fn(|i| rng.random_range(0..cards[i]));
                let before = state_of(v);
                let c = Concept::ALL[rng.random_range(0..CONCEPTS)];
                let k = cards[c.index()];
                v[c.index()] = (v[c.index()] + rng.random_range(1..k)) % k;
                let after = state_of(v);
                (encode(&before, &cb, sigma, &mut rng).unwrap(), encode(&after, &cb, sigma, &mut rng).unwrap(), c)
            })
            .collect();
        let acc = disentanglement_score(&pairs).expect("score");
        pass &= acc >= floor;
        lines.push(format!("sigma {sigma}: accuracy {acc:.4} over {} pairs", pairs.len()));
    }
    check(pass, lines.join("; "))
}

fn state_of(v: [usize; CONCEPTS]) -> ObjectState {
    ObjectState {
        type_id: v[0] as u8,
        pos_x: v[1] as u8,
        pos_y: v[2] as u8,
        rotation: v[3] as u16 * 90,
        color: v[4] as u8,
        size: v[5] as u8,
    }
}

fn criterion_9(level4: &Run) -> Outcome {
    let p = &level4.pipeline;
    let tasks: Vec<_> = level4.dataset.split(Split::Train).collect();
    let samples = sample_transitions(&tasks, &p.codebook).expect("samples");
    let report = interpretability_report(&p.maps, &p.codebook, &samples).expect("report");
    let expected = |a: Action| match a {
        Action::MoveFront | Action::MoveBack => Concept::PosY,
        Action::MoveLeft | Action::MoveRight => Concept::PosX,
        Action::RotateLeft | Action::RotateRight => Concept::Rotation,
        Action::ChangeColor => Concept::Color,
    };
    let got: Vec<String> = Action::ALL
        .iter()
        .map(|&a| format!("{}->{}", a.name(), report.dominant_concept(a).map_or("none", |c| c.name())))
        .collect();
    let hits = Action::ALL.iter().filter(|&&a| report.dominant_concept(a) == Some(expected(a))).count();
    check(hits == Action::COUNT, format!("{hits}/7 ({})", got.join(", ")))
}

fn criterion_10() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for level in 1..=4u8 {
        let seen = generate_dataset(level, DESK, SEED).expect("dataset");
        let unseen = make_unseen_object_split(&seen, &DEFAULT_HELD_OUT_TYPES).expect("split");
        let (p, _) = fit(&seen, &FitConfig::default()).expect("fit");
        let a = run_experiment(&seen, Some(&p), &experiment(Method::Symbolic, 0.0)).expect("eval");
        let b = run_experiment(&unseen, Some(&p), &experiment(Method::Symbolic, 0.0)).expect("eval");
        pass &= a.asacc_top1 == b.asacc_top1 && a.asacc_top5 == b.asacc_top5;
        lines.push(format!("L{level} object seen {:.1} unseen {:.1}", a.asacc_top1, b.asacc_top1));
    }
    for level in 1..=2u8 {
        let full = generate_dataset(level, DESK, SEED).expect("dataset");
        let held = make_unseen_task_split(level, DESK, SEED).expect("split");
        let (pf, _) = fit(&full, &FitConfig::default()).expect("fit");
        let (ph, _) = fit(&held, &FitConfig::default()).expect("fit");
        let a = run_experiment(&full, Some(&pf), &experiment(Method::Symbolic, 0.0)).expect("eval");
        let b = run_experiment(&held, Some(&ph), &experiment(Method::Symbolic, 0.0)).expect("eval");
        pass &= (a.asacc_top1 - b.asacc_top1).abs() <= 2.0;
        lines.push(format!("L{level} task full {:.1} held-out {:.1}", a.asacc_top1, b.asacc_top1));
    }
    check(pass, lines.join("; "))
}

fn criterion_11() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for sigma in [0.1 * MIN_SEP, 0.2 * MIN_SEP] {
        let run = run_level(3, DESK, sigma);
        let tok =
            run_experiment(&run.dataset, Some(&run.pipeline), &experiment(Method::TokenSpace, sigma)).expect("eval");
        pass &= tok.asacc_top1 <= run.symbolic.asacc_top1 && tok.asacc_top5 <= run.symbolic.asacc_top5;
        lines.push(format!("sigma {sigma}: symbolic {} vs token-space {}", rates(&run.symbolic), rates(&tok)));
    }
    check(pass, lines.join("; "))
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("read dir") {
            let path = e.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).expect("read"));
            }
        }
    }
    out
}

fn cli_pipeline(dir: &Path, jobs: &str) -> bool {
    let bin = env!("CARGO_BIN_EXE_ctplan");
    let art = dir.to_str().unwrap();
    let steps: [&[&str]; 4] = [
        &["gen", "--level", "3", "--train", "300", "--val", "10", "--test", "40", "--seed", "5"],
        &["fit", "--sigma", "0.1", "--kmeans-seed", "3"],
        &["eval", "--compare", "--sigma", "0.1", "--seed", "9"],
        &["report"],
    ];
    steps.iter().all(|args| {
        Command::new(bin)
            .args(*args)
            .args(["--jobs", jobs])
            .env("CTPLAN_ARTIFACTS", art)
            .output()
            .map(|o| o.status.success())
            .unwrap_or(false)
    })
}

fn criterion_12() -> Outcome {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    if !cli_pipeline(a.path(), "1") || !cli_pipeline(b.path(), "4") {
        return check(false, "pipeline command failed");
    }
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    check(
        fa.len() >= 14 && fa.keys().eq(fb.keys()) && differing.is_empty(),
        format!("{} files compared across --jobs 1 and --jobs 4, differing {differing:?}", fa.len()),
    )
}

fn main() -> ExitCode {
    // Accept and ignore libtest flags passed by `cargo test`.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filter.is_empty() && !filter.iter().any(|f| "acceptance".contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();

    let l1 = run_level(1, DESK, 0.0);
    let l2 = run_level(2, DESK, 0.0);
    results.push((
        1,
        "level-1/2 planning",
        check(
            [&l1, &l2].iter().all(|r| r.symbolic.asacc_top1 >= 99.0 && r.elapsed < Duration::from_secs(60)),
            format!(
                "L1 {} in {:.1}s, L2 {} in {:.1}s",
                rates(&l1.symbolic),
                l1.elapsed.as_secs_f64(),
                rates(&l2.symbolic),
                l2.elapsed.as_secs_f64()
            ),
        ),
    ));

    let l3 = run_level(3, DESK, 0.0);
    let l4 = run_level(4, DESK, 0.0);
    let l4n = run_level(4, DESK, 0.2 * MIN_SEP);
    let all = [&l1, &l2, &l3, &l4, &l4n];
    results.push((
        2,
        "level-3/4 planning",
        check(
            l3.symbolic.asacc_top1 >= 95.0
                && l4.symbolic.asacc_top1 >= 95.0
                && l4n.symbolic.asacc_top1 >= 60.0
                && all.iter().all(|r| r.symbolic.asacc_top5 >= r.symbolic.asacc_top1),
            format!("L3 {}, L4 {}, L4 at sigma 0.2 {}", rates(&l3.symbolic), rates(&l4.symbolic), rates(&l4n.symbolic)),
        ),
    ));

    let ases: Vec<f64> = all.iter().filter_map(|r| r.symbolic.ase).collect();
    let (lo, hi) = ases.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let per_task_over = all
        .iter()
        .flat_map(|r| &r.symbolic.records)
        .filter(|t| t.successes.first() == Some(&true) && t.plan_lengths[0] < t.gt_len)
        .count();
    results.push((
        3,
        "plan efficiency",
        check(
            ases.len() == all.len() && lo >= 0.95 && hi <= 1.0 && per_task_over == 0,
            format!(
                "ASE range [{lo:.4}, {hi:.4}] over {} runs, plans shorter than ground truth {per_task_over}",
                ases.len()
            ),
        ),
    ));

    let big = SplitSizes::new(10, 10, 2000);
    let mut chance = Vec::new();
    for level in [1u8, 4] {
        let ds = generate_dataset(level, big, SEED + 1).expect("dataset");
        chance.push(run_experiment(&ds, None, &experiment(Method::Chance, 0.0)).expect("chance"));
    }
    let success_fsd = all.iter().map(|r| r.symbolic.fsd_success_mean.unwrap_or(f64::NAN)).fold(0.0f64, f64::max);
    let success_fsd_exact = all.iter().all(|r| r.symbolic.fsd_success_mean == Some(0.0));
    results.push((
        4,
        "final-state distance and chance",
        check(
            success_fsd_exact
                && chance.iter().all(|c| c.fsd_mean >= 1.5)
                && chance[0].asacc_top1 <= 5.0
                && chance[1].asacc_top1 <= 1.0,
            format!(
                "success FSD max {success_fsd}; chance L1 top1 {:.2}% FSD {:.3}, L4 top1 {:.2}% FSD {:.3} over {} tasks each",
                chance[0].asacc_top1, chance[0].fsd_mean, chance[1].asacc_top1, chance[1].fsd_mean, chance[0].n_tasks
            ),
        ),
    ));

    results.push((5, "propagation oracle", criterion_5(&l4)));
    results.push((6, "boundary legality", criterion_6(&l4)));
    results.push((7, "symbol purity", criterion_7()));
    results.push((8, "changed-concept identification", criterion_8()));
    results.push((9, "displacement tables", criterion_9(&l4)));
    results.push((10, "generalization splits", criterion_10()));
    results.push((11, "symbolic versus token-space", criterion_11()));
    results.push((12, "determinism", criterion_12()));

    for run in all {
        assert!(run.summary.purity.iter().all(|&p| p > 0.0));
    }

    let mut failed = 0;
    for (n, name, o) in &results {
        println!("{} {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
