use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ctplan::concept::{encode, Concept, DEFAULT_DIM, DEFAULT_MIN_SEP};
use ctplan::env::{format_actions, Cell, Dyer, EnvConfig, ObjectState};
use ctplan::eval::{interpretability_report, run_experiment, sample_transitions, EvalReport, ExperimentConfig, Method};
use ctplan::mdp::{DEFAULT_L_MAX, DEFAULT_THRESH, DEFAULT_TOP_K};
use ctplan::pipeline::{codebook_covering, fit, FitConfig, Pipeline, Planner};
use ctplan::symbol::DEFAULT_RESTARTS;
use ctplan::taskgen::{
    generate_dataset, make_unseen_object_split, make_unseen_task_split, Dataset, Split, SplitSizes, Task,
    DEFAULT_HELD_OUT_TYPES,
};
use ctplan::transition::{rollout, ActionKey};
use ctplan::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_ARTIFACT: u8 = 2;
const EXIT_THRESHOLD: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "ctplan", version, about = "Concept-token planning toolkit")]
struct Cli {
    /// Worker threads for per-task parallelism (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a task dataset
    Gen(GenArgs),
    /// Fit codebook, symbolizer, transition counts and token maps
    Fit(FitArgs),
    /// Plan a single task
    Plan(PlanArgs),
    /// Evaluate planners on a dataset split
    Eval(EvalArgs),
    /// Emit per-action displacement tables of the fitted token maps
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Variant {
    Standard,
    UnseenObject,
    UnseenTask,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    level: u8,
    #[arg(long, default_value_t = 800)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    val: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "standard")]
    variant: Variant,
    /// Object types given to test tasks of the unseen-object variant
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_HELD_OUT_TYPES)]
    held_out_types: Vec<u8>,
    /// Output file (default: <artifacts>/dataset.jsonl)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "CTPLAN_ARTIFACTS", default_value = "artifacts")]
    artifacts: PathBuf,
}

#[derive(Args, Debug)]
struct CodebookArgs {
    /// Codebook seed
    #[arg(long = "codebook-seed", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_SEP)]
    min_sep: f64,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset file (default: <artifacts>/dataset.jsonl)
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, env = "CTPLAN_ARTIFACTS", default_value = "artifacts")]
    artifacts: PathBuf,
    #[command(flatten)]
    codebook: CodebookArgs,
    /// Token noise standard deviation for training encodings
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = DEFAULT_THRESH)]
    thresh: f64,
    #[arg(long, default_value_t = 0)]
    kmeans_seed: u64,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlannerArg {
    Symbolic,
    Token,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long, env = "CTPLAN_ARTIFACTS", default_value = "artifacts")]
    artifacts: PathBuf,
    /// Dataset holding the task (default: <artifacts>/dataset.jsonl)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Task id from the dataset
    #[arg(long, conflicts_with_all = ["init", "goal"])]
    task: Option<String>,
    /// Ad-hoc start state: type,x,y,rotation_degrees,color,size
    #[arg(long, requires = "goal")]
    init: Option<String>,
    /// Ad-hoc goal state: type,x,y,rotation_degrees,color,size
    #[arg(long, requires = "init")]
    goal: Option<String>,
    /// Level of the ad-hoc scene
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=4))]
    level: u8,
    /// Ad-hoc obstacles: x,y;x,y;...
    #[arg(long)]
    obstacles: Option<String>,
    /// Ad-hoc dyer: x,y,color
    #[arg(long)]
    dyer: Option<String>,
    #[arg(long, value_enum, default_value = "symbolic")]
    planner: PlannerArg,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    topk: usize,
    #[arg(long, default_value_t = DEFAULT_L_MAX)]
    lmax: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Baseline {
    Chance,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, env = "CTPLAN_ARTIFACTS", default_value = "artifacts")]
    artifacts: PathBuf,
    /// Dataset file (default: <artifacts>/dataset.jsonl)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Report directory (default: <artifacts>/reports)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    topk: usize,
    #[arg(long, default_value_t = DEFAULT_L_MAX)]
    lmax: usize,
    /// Also run the token-space planner and the chance baseline
    #[arg(long)]
    compare: bool,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Fail unless the artifacts were fit with this codebook seed
    #[arg(long)]
    codebook_seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    min_sep: Option<f64>,
    /// Minimum top-1 success rate in percent
    #[arg(long)]
    min_top1: Option<f64>,
    #[arg(long)]
    min_top5: Option<f64>,
    #[arg(long)]
    min_ase: Option<f64>,
    /// Maximum mean final-state distance over all tasks
    #[arg(long)]
    max_fsd: Option<f64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, env = "CTPLAN_ARTIFACTS", default_value = "artifacts")]
    artifacts: PathBuf,
    /// Dataset whose training transitions are sampled (default: <artifacts>/dataset.jsonl)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (default: <artifacts>/reports)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn dataset_path(data: &Option<PathBuf>, artifacts: &Path) -> PathBuf {
    data.clone().unwrap_or_else(|| artifacts.join("dataset.jsonl"))
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let counts = SplitSizes::new(a.train, a.val, a.test);
    let ds = match a.variant {
        Variant::Standard => generate_dataset(a.level, counts, a.seed)?,
        Variant::UnseenObject => {
            make_unseen_object_split(&generate_dataset(a.level, counts, a.seed)?, &a.held_out_types)?
        }
        Variant::UnseenTask => make_unseen_task_split(a.level, counts, a.seed)?,
    };
    let out = a.out.clone().unwrap_or_else(|| a.artifacts.join("dataset.jsonl"));
    ds.save(&out)?;
    let lens: Vec<usize> = ds.tasks.iter().map(|t| t.gt_actions.len()).collect();
    let mean = lens.iter().sum::<usize>() as f64 / lens.len().max(1) as f64;
    println!("wrote {} tasks to {}", ds.tasks.len(), out.display());
    println!("gt length mean {mean:.3} max {}", lens.iter().max().unwrap_or(&0));
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let ds = Dataset::load(&dataset_path(&a.data, &a.artifacts))?;
    let config = FitConfig {
        codebook_seed: a.codebook.seed,
        dim: a.codebook.dim,
        min_sep: a.codebook.min_sep,
        sigma: a.sigma,
        thresh: a.thresh,
        kmeans_seed: a.kmeans_seed,
        restarts: a.restarts,
    };
    let (p, summary) = fit(&ds, &config)?;
    p.save(&a.artifacts)?;
    println!("encoded {} tokens, {} transitions", summary.tokens, summary.triplets);
    for c in Concept::ALL {
        println!("purity {:<9} {:.4}", c.name(), summary.purity[c.index()]);
    }
    for (key, pairs, mse) in &summary.map_keys {
        println!("map {key:<16} pairs {pairs:>5} residual_mse {mse:.3e}");
    }
    println!("artifacts written to {}", a.artifacts.display());
    Ok(())
}

fn parse_state(s: &str) -> Result<ObjectState> {
    let v: Vec<u16> = s
        .split(',')
        .map(|p| p.trim().parse::<u16>().with_context(|| format!("bad state field {p:?}")))
        .collect::<Result<_>>()?;
    let [type_id, x, y, rotation, color, size] = v[..] else {
        bail!(Error::InvalidArgument(format!("state needs six fields, got {s:?}")));
    };
    Ok(ObjectState {
        type_id: type_id as u8,
        pos_x: x as u8,
        pos_y: y as u8,
        rotation,
        color: color as u8,
        size: size as u8,
    })
}

fn parse_u8s(s: &str) -> Result<Vec<u8>> {
    s.split(',').map(|p| p.trim().parse::<u8>().with_context(|| format!("bad field {p:?}"))).collect()
}

fn adhoc_task(a: &PlanArgs) -> Result<Task> {
    let init = parse_state(a.init.as_deref().expect("clap requires init"))?;
    let goal = parse_state(a.goal.as_deref().expect("clap requires goal"))?;
    let obstacles = match &a.obstacles {
        Some(s) if !s.is_empty() => s
            .split(';')
            .map(|c| match parse_u8s(c)?[..] {
                [x, y] => Ok(Cell::new(x, y)),
                _ => bail!(Error::InvalidArgument(format!("obstacle needs x,y, got {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let dyer = match &a.dyer {
        Some(s) => match parse_u8s(s)?[..] {
            [x, y, color] => Some(Dyer { cell: Cell::new(x, y), color }),
            _ => bail!(Error::InvalidArgument(format!("dyer needs x,y,color, got {s:?}"))),
        },
        None => None,
    };
    let env = EnvConfig::new(a.level, obstacles, dyer).map_err(Error::InvalidArgument)?;
    Ok(Task { task_id: "adhoc".into(), split: Split::Test, env, init, goal, gt_actions: Vec::new() })
}

fn cmd_plan(a: &PlanArgs) -> Result<()> {
    let p = Pipeline::load(&a.artifacts)?;
    let (task, index) = match &a.task {
        Some(id) => {
            let ds = Dataset::load(&dataset_path(&a.data, &a.artifacts))?;
            let index = ds
                .tasks
                .iter()
                .position(|t| &t.task_id == id)
                .ok_or_else(|| anyhow!(Error::InvalidArgument(format!("no task {id:?} in the dataset"))))?;
            (ds.tasks[index].clone(), index)
        }
        None if a.init.is_some() => (adhoc_task(a)?, 0),
        None => bail!(Error::InvalidArgument("give --task or --init/--goal".into())),
    };
    let cb = codebook_covering(&p.codebook, [&task])?;
    let (init, goal) = p.encode_task(&cb, &task, index, a.sigma, a.seed)?;
    let planner = match a.planner {
        PlannerArg::Symbolic => Planner::Symbolic,
        PlannerArg::Token => Planner::TokenSpace,
    };
    let r = p.plan_tokens(&cb, &task, &init, &goal, planner, a.topk, a.lmax)?;
    println!("task {}", task.task_id);
    if r.identity_mismatch {
        println!("warning: init and goal differ in type or size");
    }
    for (i, plan) in r.plans.iter().enumerate() {
        let shown = if plan.actions.is_empty() { "(empty plan)".to_string() } else { format_actions(&plan.actions) };
        println!("{}\tscore {:.6}\tlength {}\t{}", i + 1, plan.score, plan.actions.len(), shown);
    }
    if let Some(best) = r.best() {
        let dyer = task.env.dyer.map(|d| d.color);
        let keys: Vec<ActionKey> = best.actions.iter().map(|&a| ActionKey::in_scene(a, dyer)).collect();
        match rollout(&init, &keys, &p.maps) {
            Ok(steps) => {
                let last = steps.last().expect("rollout includes start");
                let decoded = cb.decode(last);
                let mut rng = ctplan::rng::stream(0, &[]);
                let goal_tokens = encode(&task.goal, &cb, 0.0, &mut rng)?;
                let gap = ctplan::transition::token_mse(last, &goal_tokens);
                println!(
                    "rollout {} steps, decoded final x={} y={} rotation={} color={}, mse to goal {gap:.4}",
                    steps.len() - 1,
                    decoded[Concept::PosX.index()],
                    decoded[Concept::PosY.index()],
                    decoded[Concept::Rotation.index()] * 90,
                    decoded[Concept::Color.index()],
                );
            }
            Err(e) => println!("rollout unavailable: {e}"),
        }
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<bool> {
    let p = Pipeline::load(&a.artifacts)?;
    let c = &p.record.config;
    p.check_codebook(
        a.codebook_seed.unwrap_or(c.codebook_seed),
        a.dim.unwrap_or(c.dim),
        a.min_sep.unwrap_or(c.min_sep),
    )?;
    let ds = Dataset::load(&dataset_path(&a.data, &a.artifacts))?;
    let out = a.out.clone().unwrap_or_else(|| a.artifacts.join("reports"));
    let base = ExperimentConfig {
        method: Method::Symbolic,
        split: a.split,
        sigma: a.sigma,
        top_k: a.topk,
        l_max: a.lmax,
        seed: a.seed,
    };
    let mut methods = vec![Method::Symbolic];
    if a.compare {
        methods.push(Method::TokenSpace);
    }
    if a.compare || a.baseline.is_some() {
        methods.push(Method::Chance);
    }
    let mut primary: Option<EvalReport> = None;
    for m in methods {
        let r = run_experiment(&ds, Some(&p), &ExperimentConfig { method: m, ..base.clone() })?;
        r.write(&out, m.name())?;
        println!("[{}]", m.name());
        print!("{}", r.summary());
        primary.get_or_insert(r);
    }
    std::fs::write(
        out.join("run.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "experiment": base,
            "fit": p.record,
            "dataset": { "level": ds.level, "seed": ds.seed, "kind": ds.kind },
        }))?,
    )?;
    println!("reports written to {}", out.display());

    let r = primary.expect("symbolic run");
    let mut ok = true;
    let mut gate = |name: &str, pass: bool, detail: String| {
        if !pass {
            eprintln!("threshold failed: {name} {detail}");
            ok = false;
        }
    };
    if let Some(v) = a.min_top1 {
        gate("top1", r.asacc_top1 >= v, format!("{:.2} < {v}", r.asacc_top1));
    }
    if let Some(v) = a.min_top5 {
        gate("top5", r.asacc_top5 >= v, format!("{:.2} < {v}", r.asacc_top5));
    }
    if let Some(v) = a.min_ase {
        gate("ase", r.ase.is_some_and(|x| x >= v), format!("{:?} < {v}", r.ase));
    }
    if let Some(v) = a.max_fsd {
        gate("fsd", r.fsd_mean <= v, format!("{:.4} > {v}", r.fsd_mean));
    }
    Ok(ok)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let p = Pipeline::load(&a.artifacts)?;
    let ds = Dataset::load(&dataset_path(&a.data, &a.artifacts))?;
    let tasks: Vec<&Task> = ds.split(Split::Train).collect();
    let r = interpretability_report(&p.maps, &p.codebook, &sample_transitions(&tasks, &p.codebook)?)?;
    let out = a.out.clone().unwrap_or_else(|| a.artifacts.join("reports"));
    r.write(&out)?;
    print!("{}", r.table_text());
    println!("tables written to {}", out.display());
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::MissingArtifact(_) | Error::SchemaMismatch(_) | Error::Parse { .. }) => EXIT_ARTIFACT,
        Some(Error::InvalidArgument(_) | Error::Unsupported(_)) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| true),
        Command::Fit(a) => cmd_fit(a).map(|_| true),
        Command::Plan(a) => cmd_plan(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_THRESHOLD),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
