//! Task and dataset generation.
//!
//! Tasks are rejection-sampled per level and labelled with a minimum-length
//! ground-truth plan found by breadth-first search over the joint
//! (position, rotation, color) state space.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::env::{
    apply_action, goal_reached, is_valid_state, Action, Cell, Dyer, EnvConfig, ObjectState, COLORS, GRID_HEIGHT,
    GRID_WIDTH, ROTATIONS, SEEN_TYPES, SIZES,
};
use crate::error::{Error, Result};
use crate::rng::{self, TAG_SPLIT, TAG_TASKGEN};

const MAX_ATTEMPTS: usize = 10_000;
const COLOR_CHANGE_PROB: f64 = 0.5;

pub const DATASET_SCHEMA: &str = "ctplan-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub task_id: String,
    pub split: Split,
    pub env: EnvConfig,
    pub init: ObjectState,
    pub goal: ObjectState,
    pub gt_actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    Standard,
    UnseenObject { held_out_types: Vec<u8> },
    UnseenTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        Self { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    fn split_of(&self, index: usize) -> Split {
        if index < self.train {
            Split::Train
        } else if index < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub level: u8,
    pub seed: u64,
    pub split_sizes: SplitSizes,
    pub kind: DatasetKind,
    pub tasks: Vec<Task>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(move |t| t.split == split)
    }

    pub fn task(&self, task_id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }
}

// Joint search state: position, rotation quarter-turns, color.
const SEARCH_STATES: usize = GRID_WIDTH as usize * GRID_HEIGHT as usize * ROTATIONS as usize * COLORS as usize;

fn search_index(s: &ObjectState) -> usize {
    ((s.cell().index() * ROTATIONS as usize) + (s.rotation / 90) as usize) * COLORS as usize + s.color as usize
}

/// Minimum-length plan from `init` to the goal's changeable concepts
/// (position, rotation, color). Ties are broken by the fixed action order.
pub fn oracle_shortest_plan(env: &EnvConfig, init: &ObjectState, goal: &ObjectState) -> Result<Vec<Action>> {
    if !is_valid_state(init, env) || !is_valid_state(goal, env) {
        return Err(Error::InvalidArgument("init and goal must be valid in the environment".into()));
    }
    let reached = |s: &ObjectState| goal_reached(s, goal, 4);
    if reached(init) {
        return Ok(Vec::new());
    }
    let mut parent: Vec<Option<(usize, Action)>> = vec![None; SEARCH_STATES];
    let mut states: Vec<Option<ObjectState>> = vec![None; SEARCH_STATES];
    let start = search_index(init);
    states[start] = Some(*init);
    let mut queue = VecDeque::from([*init]);
    while let Some(state) = queue.pop_front() {
        let from = search_index(&state);
        for action in Action::ALL {
            let Ok(next) = apply_action(&state, action, env) else {
                continue;
            };
            let idx = search_index(&next);
            if states[idx].is_some() {
                continue;
            }
            states[idx] = Some(next);
            parent[idx] = Some((from, action));
            if reached(&next) {
                let mut plan = Vec::new();
                let mut cur = idx;
                while let Some((prev, a)) = parent[cur] {
                    plan.push(a);
                    cur = prev;
                }
                plan.reverse();
                return Ok(plan);
            }
            queue.push_back(next);
        }
    }
    Err(Error::Unreachable)
}

fn free_cells_connected(env: &EnvConfig) -> bool {
    let free: Vec<Cell> = Cell::all().filter(|&c| env.is_free(c)).collect();
    let Some(&first) = free.first() else {
        return false;
    };
    let mut seen = BTreeSet::from([first]);
    let mut stack = vec![first];
    while let Some(c) = stack.pop() {
        for n in c.neighbors().filter(|&n| env.is_free(n)) {
            if seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == free.len()
}

fn sample_env<R: Rng>(level: u8, rng: &mut R) -> Option<EnvConfig> {
    let cells: Vec<Cell> = Cell::all().collect();
    let n_obstacles = if level >= 2 { rng.random_range(1..=3) } else { 0 };
    let mut chosen: Vec<Cell> = cells.choose_multiple(rng, n_obstacles + usize::from(level >= 3)).copied().collect();
    let dyer = (level >= 3)
        .then(|| Dyer { cell: chosen.pop().expect("dyer cell sampled"), color: rng.random_range(0..COLORS) });
    let env = EnvConfig::new(level, chosen, dyer).ok()?;
    if !free_cells_connected(&env) {
        return None;
    }
    if let Some(d) = env.dyer {
        if !d.cell.neighbors().any(|n| env.is_free(n)) {
            return None;
        }
    }
    Some(env)
}

/// Samples one task for `level`. Rejects empty plans, unreachable goals and
/// plans longer than the level's cap.
pub fn generate_task<R: Rng>(level: u8, rng: &mut R, task_id: String, split: Split) -> Result<Task> {
    if !(1..=4).contains(&level) {
        return Err(Error::InvalidArgument(format!("level must be in 1..=4, got {level}")));
    }
    for _ in 0..MAX_ATTEMPTS {
        let Some(env) = sample_env(level, rng) else {
            continue;
        };
        let free: Vec<Cell> = Cell::all().filter(|&c| env.is_free(c)).collect();
        let init_cell = *free.choose(rng).expect("free cells exist");
        let goal_cell = *free.choose(rng).expect("free cells exist");
        let rotation = rng.random_range(0..ROTATIONS) * 90;
        let goal_rotation = if level == 4 { rng.random_range(0..ROTATIONS) * 90 } else { rotation };
        let (color, goal_color) = match env.dyer {
            Some(d) if rng.random_bool(COLOR_CHANGE_PROB) => {
                let others: Vec<u8> = (0..COLORS).filter(|&c| c != d.color).collect();
                (*others.choose(rng).expect("several colors"), d.color)
            }
            _ => {
                let c = rng.random_range(0..COLORS);
                (c, c)
            }
        };
        let init = ObjectState {
            type_id: rng.random_range(0..SEEN_TYPES),
            pos_x: init_cell.x,
            pos_y: init_cell.y,
            rotation,
            color,
            size: rng.random_range(0..SIZES),
        };
        let goal =
            ObjectState { pos_x: goal_cell.x, pos_y: goal_cell.y, rotation: goal_rotation, color: goal_color, ..init };
        match oracle_shortest_plan(&env, &init, &goal) {
            Ok(plan) if !plan.is_empty() && plan.len() <= env.max_len => {
                return Ok(Task { task_id, split, env, init, goal, gt_actions: plan });
            }
            _ => continue,
        }
    }
    Err(Error::GenerationExhausted { level, attempts: MAX_ATTEMPTS })
}

fn task_id(level: u8, index: usize) -> String {
    format!("L{level}-{index:06}")
}

pub fn generate_dataset(level: u8, counts: SplitSizes, seed: u64) -> Result<Dataset> {
    if counts.train == 0 || counts.val == 0 || counts.test == 0 {
        return Err(Error::InvalidArgument("split counts must be positive".into()));
    }
    let tasks = (0..counts.total())
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, &[TAG_TASKGEN, level as u64, i as u64]);
            generate_task(level, &mut rng, task_id(level, i), counts.split_of(i))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { level, seed, split_sizes: counts, kind: DatasetKind::Standard, tasks })
}

/// Object types reserved for the test tasks of the unseen-object split.
pub const DEFAULT_HELD_OUT_TYPES: [u8; 4] = [SEEN_TYPES, SEEN_TYPES + 1, SEEN_TYPES + 2, SEEN_TYPES + 3];

/// Rewrites every test task to use one of `held_out_types`; train and
/// validation tasks are left untouched.
pub fn make_unseen_object_split(dataset: &Dataset, held_out_types: &[u8]) -> Result<Dataset> {
    if held_out_types.is_empty() {
        return Err(Error::InvalidArgument("held-out type set is empty".into()));
    }
    let held: BTreeSet<u8> = held_out_types.iter().copied().collect();
    if let Some(t) = dataset.split(Split::Train).find(|t| held.contains(&t.init.type_id)) {
        return Err(Error::InvalidArgument(format!(
            "held-out type {} appears in training task {}",
            t.init.type_id, t.task_id
        )));
    }
    let held: Vec<u8> = held.into_iter().collect();
    let tasks = dataset
        .tasks
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let mut task = task.clone();
            if task.split == Split::Test {
                let mut rng = rng::stream(dataset.seed, &[TAG_SPLIT, 0, i as u64]);
                let type_id = *held.choose(&mut rng).expect("non-empty");
                task.init.type_id = type_id;
                task.goal.type_id = type_id;
            }
            task
        })
        .collect();
    Ok(Dataset { kind: DatasetKind::UnseenObject { held_out_types: held }, tasks, ..dataset.clone() })
}

/// Action-type families whose plans make up the training data of the
/// unseen-task split.
pub const TRAIN_FAMILIES: [[Action; 2]; 2] =
    [[Action::MoveLeft, Action::MoveFront], [Action::MoveRight, Action::MoveBack]];
/// Action combinations reserved for test tasks of the unseen-task split.
pub const HELD_OUT_COMBINATIONS: [[Action; 2]; 2] =
    [[Action::MoveLeft, Action::MoveBack], [Action::MoveRight, Action::MoveFront]];

pub fn action_set(plan: &[Action]) -> BTreeSet<Action> {
    plan.iter().copied().collect()
}

pub fn fits_train_family(plan: &[Action]) -> bool {
    let set = action_set(plan);
    TRAIN_FAMILIES.iter().any(|fam| set.iter().all(|a| fam.contains(a)))
}

pub fn uses_held_out_combination(plan: &[Action]) -> bool {
    let set = action_set(plan);
    HELD_OUT_COMBINATIONS.iter().any(|combo| combo.iter().all(|a| set.contains(a)))
}

/// Builds a dataset whose train/val plans stay inside [`TRAIN_FAMILIES`]
/// and whose test plans use a [`HELD_OUT_COMBINATIONS`] pair.
pub fn make_unseen_task_split(level: u8, counts: SplitSizes, seed: u64) -> Result<Dataset> {
    if !(1..=2).contains(&level) {
        return Err(Error::Unsupported(format!("unseen-task splits exist for levels 1 and 2 only, got {level}")));
    }
    if counts.train == 0 || counts.val == 0 || counts.test == 0 {
        return Err(Error::InvalidArgument("split counts must be positive".into()));
    }
    let tasks = (0..counts.total())
        .into_par_iter()
        .map(|i| {
            let split = counts.split_of(i);
            for attempt in 0..MAX_ATTEMPTS as u64 {
                let mut rng = rng::stream(seed, &[TAG_SPLIT, 1, level as u64, i as u64, attempt]);
                let task = generate_task(level, &mut rng, task_id(level, i), split)?;
                let ok = match split {
                    Split::Test => uses_held_out_combination(&task.gt_actions),
                    _ => fits_train_family(&task.gt_actions),
                };
                if ok {
                    return Ok(task);
                }
            }
            Err(Error::GenerationExhausted { level, attempts: MAX_ATTEMPTS })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { level, seed, split_sizes: counts, kind: DatasetKind::UnseenTask, tasks })
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    level: u8,
    seed: u64,
    split_sizes: SplitSizes,
    #[serde(flatten)]
    kind: DatasetKind,
}

#[derive(Serialize, Deserialize)]
struct TaskRecord {
    task_id: String,
    level: u8,
    obstacles: Vec<[u8; 2]>,
    dyer: Option<[u8; 2]>,
    dyer_color: Option<u8>,
    #[serde(rename = "init.type")]
    init_type: u8,
    #[serde(rename = "init.x")]
    init_x: u8,
    #[serde(rename = "init.y")]
    init_y: u8,
    #[serde(rename = "init.rot")]
    init_rot: u16,
    #[serde(rename = "init.color")]
    init_color: u8,
    #[serde(rename = "init.size")]
    init_size: u8,
    #[serde(rename = "goal.type")]
    goal_type: u8,
    #[serde(rename = "goal.x")]
    goal_x: u8,
    #[serde(rename = "goal.y")]
    goal_y: u8,
    #[serde(rename = "goal.rot")]
    goal_rot: u16,
    #[serde(rename = "goal.color")]
    goal_color: u8,
    #[serde(rename = "goal.size")]
    goal_size: u8,
    gt_actions: Vec<Action>,
    split: Split,
}

impl From<&Task> for TaskRecord {
    fn from(t: &Task) -> Self {
        Self {
            task_id: t.task_id.clone(),
            level: t.env.level,
            obstacles: t.env.obstacles.iter().map(|c| [c.x, c.y]).collect(),
            dyer: t.env.dyer.map(|d| [d.cell.x, d.cell.y]),
            dyer_color: t.env.dyer.map(|d| d.color),
            init_type: t.init.type_id,
            init_x: t.init.pos_x,
            init_y: t.init.pos_y,
            init_rot: t.init.rotation,
            init_color: t.init.color,
            init_size: t.init.size,
            goal_type: t.goal.type_id,
            goal_x: t.goal.pos_x,
            goal_y: t.goal.pos_y,
            goal_rot: t.goal.rotation,
            goal_color: t.goal.color,
            goal_size: t.goal.size,
            gt_actions: t.gt_actions.clone(),
            split: t.split,
        }
    }
}

impl TryFrom<TaskRecord> for Task {
    type Error = Error;

    fn try_from(r: TaskRecord) -> Result<Self> {
        let bad = |m: String| Error::Parse { location: format!("task {}", r.task_id), message: m };
        let dyer = match (r.dyer, r.dyer_color) {
            (Some([x, y]), Some(color)) => Some(Dyer { cell: Cell::new(x, y), color }),
            (None, None) => None,
            _ => return Err(bad("dyer and dyer_color must both be present or absent".into())),
        };
        let obstacles = r.obstacles.iter().map(|&[x, y]| Cell::new(x, y)).collect();
        let env = EnvConfig::new(r.level, obstacles, dyer).map_err(bad)?;
        let state = |t, x, y, rot: u16, color, size| -> Result<ObjectState> {
            if !rot.is_multiple_of(90) || rot >= 360 {
                return Err(bad(format!("rotation {rot} is not a quarter turn")));
            }
            if color >= COLORS || size >= SIZES || x >= GRID_WIDTH || y >= GRID_HEIGHT {
                return Err(bad("concept value out of range".into()));
            }
            Ok(ObjectState { type_id: t, pos_x: x, pos_y: y, rotation: rot, color, size })
        };
        Ok(Task {
            init: state(r.init_type, r.init_x, r.init_y, r.init_rot, r.init_color, r.init_size)?,
            goal: state(r.goal_type, r.goal_x, r.goal_y, r.goal_rot, r.goal_color, r.goal_size)?,
            env,
            gt_actions: r.gt_actions,
            split: r.split,
            task_id: r.task_id,
        })
    }
}

impl Dataset {
    pub fn to_text(&self) -> Result<String> {
        let rows: Vec<TaskRecord> = self.tasks.iter().map(TaskRecord::from).collect();
        artifact::encode(DATASET_SCHEMA, DATASET_VERSION, &self.header(), &rows)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (h, rows): (DatasetHeader, Vec<TaskRecord>) = artifact::decode(DATASET_SCHEMA, DATASET_VERSION, text)?;
        Self::assemble(h, rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<TaskRecord> = self.tasks.iter().map(TaskRecord::from).collect();
        artifact::write(path, DATASET_SCHEMA, DATASET_VERSION, &self.header(), &rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, rows) = artifact::read(path, DATASET_SCHEMA, DATASET_VERSION)?;
        Self::assemble(h, rows)
    }

    fn header(&self) -> DatasetHeader {
        DatasetHeader { level: self.level, seed: self.seed, split_sizes: self.split_sizes, kind: self.kind.clone() }
    }

    fn assemble(h: DatasetHeader, rows: Vec<TaskRecord>) -> Result<Self> {
        let tasks = rows.into_iter().map(Task::try_from).collect::<Result<Vec<_>>>()?;
        if let Some(t) = tasks.iter().find(|t| t.env.level != h.level) {
            return Err(Error::SchemaMismatch(format!(
                "task {} has level {}, dataset level {}",
                t.task_id, t.env.level, h.level
            )));
        }
        let ids: BTreeSet<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
        if ids.len() != tasks.len() {
            return Err(Error::SchemaMismatch("duplicate task ids".into()));
        }
        Ok(Self { level: h.level, seed: h.seed, split_sizes: h.split_sizes, kind: h.kind, tasks })
    }
}
