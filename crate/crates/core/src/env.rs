//! Discrete workbench simulator.
//!
//! The workbench is a 3 x 5 grid. `move_front` increases `pos_y`, `move_right`
//! increases `pos_x`. Obstacles and the dyer occupy cells that the object may
//! never enter. Illegal actions are errors, never no-ops.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taskgen::Task;

pub const GRID_WIDTH: u8 = 3;
pub const GRID_HEIGHT: u8 = 5;
pub const ROTATIONS: u16 = 4;
pub const COLORS: u8 = 6;
pub const SIZES: u8 = 4;
/// Object types used for training data; unseen-object splits go beyond this.
pub const SEEN_TYPES: u8 = 8;

/// Maximum task length per difficulty level (index 0 is level 1).
pub const MAX_LEN: [usize; 4] = [6, 9, 15, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: u8,
    pub y: u8,
}

impl Cell {
    pub const fn new(x: u8, y: u8) -> Self {
        Self { x, y }
    }

    pub fn on_grid(self) -> bool {
        self.x < GRID_WIDTH && self.y < GRID_HEIGHT
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        (self.x.abs_diff(other.x) + self.y.abs_diff(other.y)) as u32
    }

    /// Row-major index into a `GRID_WIDTH * GRID_HEIGHT` array.
    pub fn index(self) -> usize {
        self.x as usize * GRID_HEIGHT as usize + self.y as usize
    }

    pub fn all() -> impl Iterator<Item = Cell> {
        (0..GRID_WIDTH).flat_map(|x| (0..GRID_HEIGHT).map(move |y| Cell::new(x, y)))
    }

    pub fn neighbors(self) -> impl Iterator<Item = Cell> {
        let (x, y) = (self.x as i16, self.y as i16);
        [(0, 1), (0, -1), (-1, 0), (1, 0)]
            .into_iter()
            .filter_map(move |(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                (nx >= 0 && ny >= 0).then(|| Cell::new(nx as u8, ny as u8))
            })
            .filter(|c| c.on_grid())
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Ground-truth concept values of the manipulated object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectState {
    pub type_id: u8,
    pub pos_x: u8,
    pub pos_y: u8,
    /// Degrees, a multiple of 90 in `[0, 360)`.
    pub rotation: u16,
    pub color: u8,
    pub size: u8,
}

impl ObjectState {
    pub fn cell(&self) -> Cell {
        Cell::new(self.pos_x, self.pos_y)
    }

    pub fn with_cell(mut self, cell: Cell) -> Self {
        self.pos_x = cell.x;
        self.pos_y = cell.y;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dyer {
    pub cell: Cell,
    pub color: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvConfig {
    pub level: u8,
    /// Sorted, duplicate free.
    pub obstacles: Vec<Cell>,
    pub dyer: Option<Dyer>,
    pub max_len: usize,
}

impl EnvConfig {
    /// Builds a config, checking the per-level layout rules.
    pub fn new(level: u8, mut obstacles: Vec<Cell>, dyer: Option<Dyer>) -> Result<Self, String> {
        if !(1..=4).contains(&level) {
            return Err(format!("level must be in 1..=4, got {level}"));
        }
        obstacles.sort();
        if obstacles.windows(2).any(|w| w[0] == w[1]) {
            return Err("duplicate obstacle cell".into());
        }
        if let Some(c) = obstacles.iter().find(|c| !c.on_grid()) {
            return Err(format!("obstacle {c} is off the grid"));
        }
        if level == 1 && !obstacles.is_empty() {
            return Err("level 1 has no obstacles".into());
        }
        match (level, dyer) {
            (1 | 2, Some(_)) => return Err(format!("level {level} has no dyer")),
            (3 | 4, None) => return Err(format!("level {level} requires a dyer")),
            (_, Some(d)) => {
                if !d.cell.on_grid() {
                    return Err(format!("dyer {} is off the grid", d.cell));
                }
                if d.color >= COLORS {
                    return Err(format!("dyer color {} out of range", d.color));
                }
                if obstacles.contains(&d.cell) {
                    return Err(format!("dyer shares cell {} with an obstacle", d.cell));
                }
            }
            _ => {}
        }
        Ok(Self { level, obstacles, dyer, max_len: MAX_LEN[level as usize - 1] })
    }

    /// True when the cell is on the grid and not occupied by an obstacle or the dyer.
    pub fn is_free(&self, cell: Cell) -> bool {
        cell.on_grid() && self.obstacles.binary_search(&cell).is_err() && self.dyer.is_none_or(|d| d.cell != cell)
    }

    pub fn is_dyer_adjacent(&self, cell: Cell) -> bool {
        self.dyer.is_some_and(|d| d.cell.manhattan(cell) == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    MoveFront,
    MoveBack,
    MoveLeft,
    MoveRight,
    RotateLeft,
    RotateRight,
    ChangeColor,
}

impl Action {
    /// All actions in the fixed tie-break order.
    pub const ALL: [Action; 7] = [
        Action::MoveFront,
        Action::MoveBack,
        Action::MoveLeft,
        Action::MoveRight,
        Action::RotateLeft,
        Action::RotateRight,
        Action::ChangeColor,
    ];
    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MoveFront => "move_front",
            Action::MoveBack => "move_back",
            Action::MoveLeft => "move_left",
            Action::MoveRight => "move_right",
            Action::RotateLeft => "rotate_left",
            Action::RotateRight => "rotate_right",
            Action::ChangeColor => "change_color",
        }
    }

    /// Grid displacement of a movement action.
    pub fn displacement(self) -> Option<(i8, i8)> {
        match self {
            Action::MoveFront => Some((0, 1)),
            Action::MoveBack => Some((0, -1)),
            Action::MoveLeft => Some((-1, 0)),
            Action::MoveRight => Some((1, 0)),
            _ => None,
        }
    }

    pub fn inverse(self) -> Option<Action> {
        match self {
            Action::MoveFront => Some(Action::MoveBack),
            Action::MoveBack => Some(Action::MoveFront),
            Action::MoveLeft => Some(Action::MoveRight),
            Action::MoveRight => Some(Action::MoveLeft),
            Action::RotateLeft => Some(Action::RotateRight),
            Action::RotateRight => Some(Action::RotateLeft),
            Action::ChangeColor => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| format!("unknown action `{s}`"))
    }
}

pub fn format_actions(actions: &[Action]) -> String {
    actions.iter().map(|a| a.name()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("move leaves the grid")]
    OutOfBounds,
    #[error("destination cell is occupied")]
    Collision,
    #[error("no dyer adjacent to the object")]
    DyerUnavailable,
    #[error("source state is not valid in this environment")]
    InvalidState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("action {action} at step {step}: {error}")]
pub struct SimulateError {
    pub step: usize,
    pub action: Action,
    pub error: ActionError,
    /// Last legal state before the failing action.
    pub last_state: ObjectState,
}

pub fn is_valid_state(state: &ObjectState, env: &EnvConfig) -> bool {
    env.is_free(state.cell())
}

pub fn apply_action(state: &ObjectState, action: Action, env: &EnvConfig) -> Result<ObjectState, ActionError> {
    if !is_valid_state(state, env) {
        return Err(ActionError::InvalidState);
    }
    let mut next = *state;
    match action {
        Action::RotateLeft => next.rotation = (state.rotation + 270) % 360,
        Action::RotateRight => next.rotation = (state.rotation + 90) % 360,
        Action::ChangeColor => match env.dyer {
            Some(d) if d.cell.manhattan(state.cell()) == 1 => next.color = d.color,
            _ => return Err(ActionError::DyerUnavailable),
        },
        _ => {
            let (dx, dy) = action.displacement().expect("movement action");
            let x = state.pos_x as i16 + dx as i16;
            let y = state.pos_y as i16 + dy as i16;
            if x < 0 || y < 0 || x >= GRID_WIDTH as i16 || y >= GRID_HEIGHT as i16 {
                return Err(ActionError::OutOfBounds);
            }
            let cell = Cell::new(x as u8, y as u8);
            if !env.is_free(cell) {
                return Err(ActionError::Collision);
            }
            next = next.with_cell(cell);
        }
    }
    Ok(next)
}

/// Replays `actions` from `init`, returning every visited state including `init`.
pub fn simulate(init: &ObjectState, actions: &[Action], env: &EnvConfig) -> Result<Vec<ObjectState>, SimulateError> {
    let mut trajectory = Vec::with_capacity(actions.len() + 1);
    trajectory.push(*init);
    let mut state = *init;
    for (step, &action) in actions.iter().enumerate() {
        state = apply_action(&state, action, env).map_err(|error| SimulateError {
            step,
            action,
            error,
            last_state: state,
        })?;
        trajectory.push(state);
    }
    Ok(trajectory)
}

/// True when `state` satisfies the goal under the level's success rules.
pub fn goal_reached(state: &ObjectState, goal: &ObjectState, level: u8) -> bool {
    state.pos_x == goal.pos_x
        && state.pos_y == goal.pos_y
        && state.color == goal.color
        && (level < 4 || state.rotation == goal.rotation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    None,
    IllegalAction,
    Collision,
    WrongFinalState,
}

impl FailureReason {
    pub fn name(self) -> &'static str {
        match self {
            FailureReason::None => "none",
            FailureReason::IllegalAction => "illegal_action",
            FailureReason::Collision => "collision",
            FailureReason::WrongFinalState => "wrong_final_state",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuccessReport {
    pub success: bool,
    pub failure_reason: FailureReason,
    /// Final state, or the last legal state when an action failed.
    pub final_state: ObjectState,
}

pub fn adjudicate(task: &Task, actions: &[Action]) -> SuccessReport {
    match simulate(&task.init, actions, &task.env) {
        Ok(trajectory) => {
            let final_state = *trajectory.last().expect("trajectory contains init");
            let success = goal_reached(&final_state, &task.goal, task.env.level);
            SuccessReport {
                success,
                failure_reason: if success { FailureReason::None } else { FailureReason::WrongFinalState },
                final_state,
            }
        }
        Err(e) => SuccessReport {
            success: false,
            failure_reason: match e.error {
                ActionError::Collision => FailureReason::Collision,
                _ => FailureReason::IllegalAction,
            },
            final_state: e.last_state,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(x: u8, y: u8) -> ObjectState {
        ObjectState { type_id: 2, pos_x: x, pos_y: y, rotation: 90, color: 1, size: 3 }
    }

    fn open() -> EnvConfig {
        EnvConfig::new(1, vec![], None).unwrap()
    }

    fn dyed(obstacles: Vec<Cell>) -> EnvConfig {
        EnvConfig::new(3, obstacles, Some(Dyer { cell: Cell::new(1, 2), color: 3 })).unwrap()
    }

    #[test]
    fn unit_moves() {
        let next = apply_action(&state(1, 1), Action::MoveFront, &open()).unwrap();
        assert_eq!(next.cell(), Cell::new(1, 2));
        assert_eq!(apply_action(&state(2, 0), Action::MoveRight, &open()), Err(ActionError::OutOfBounds));
        assert_eq!(apply_action(&state(0, 0), Action::MoveBack, &open()), Err(ActionError::OutOfBounds));
    }

    #[test]
    fn change_color_needs_adjacent_dyer() {
        let env = dyed(vec![]);
        let next = apply_action(&state(1, 1), Action::ChangeColor, &env).unwrap();
        assert_eq!(next.color, 3);
        assert_eq!(apply_action(&state(0, 0), Action::ChangeColor, &env), Err(ActionError::DyerUnavailable));
        assert_eq!(apply_action(&state(1, 1), Action::ChangeColor, &open()), Err(ActionError::DyerUnavailable));
        // Dyer cell itself blocks movement.
        assert_eq!(apply_action(&state(1, 1), Action::MoveFront, &env), Err(ActionError::Collision));
    }

    #[test]
    fn validity() {
        let env = EnvConfig::new(2, vec![Cell::new(1, 1)], None).unwrap();
        assert!(is_valid_state(&state(0, 0), &open()));
        assert!(!is_valid_state(&state(1, 1), &env));
        assert!(!is_valid_state(&state(3, 0), &open()));
    }

    #[test]
    fn config_rules() {
        assert!(EnvConfig::new(1, vec![Cell::new(0, 0)], None).is_err());
        assert!(EnvConfig::new(3, vec![], None).is_err());
        assert!(EnvConfig::new(2, vec![Cell::new(0, 0), Cell::new(0, 0)], None).is_err());
        assert!(EnvConfig::new(5, vec![], None).is_err());
        let d = Some(Dyer { cell: Cell::new(0, 0), color: 1 });
        assert!(EnvConfig::new(4, vec![Cell::new(0, 0)], d).is_err());
        let lens: Vec<_> = (1..=4)
            .map(|l| {
                let dyer = (l >= 3).then_some(Dyer { cell: Cell::new(2, 4), color: 0 });
                EnvConfig::new(l, vec![], dyer).unwrap().max_len
            })
            .collect();
        assert_eq!(lens, vec![6, 9, 15, 16]);
    }

    #[test]
    fn simulate_paths() {
        let env = open();
        assert_eq!(simulate(&state(0, 0), &[], &env).unwrap(), vec![state(0, 0)]);
        let traj = simulate(&state(0, 0), &[Action::MoveRight, Action::MoveLeft], &env).unwrap();
        let cells: Vec<_> = traj.iter().map(|s| s.cell()).collect();
        assert_eq!(cells, vec![Cell::new(0, 0), Cell::new(1, 0), Cell::new(0, 0)]);

        let blocked = EnvConfig::new(2, vec![Cell::new(2, 0)], None).unwrap();
        let err = simulate(&state(0, 0), &[Action::MoveRight, Action::MoveRight], &blocked).unwrap_err();
        assert_eq!(err.step, 1);
        assert_eq!(err.error, ActionError::Collision);
        assert_eq!(err.last_state.cell(), Cell::new(1, 0));
    }

    #[test]
    fn action_names_round_trip() {
        for a in Action::ALL {
            assert_eq!(a.name().parse::<Action>().unwrap(), a);
            assert_eq!(Action::from_index(a.index()), Some(a));
        }
        assert!("jump".parse::<Action>().is_err());
    }

    fn any_state() -> impl Strategy<Value = ObjectState> {
        (0..SEEN_TYPES, 0..GRID_WIDTH, 0..GRID_HEIGHT, 0..4u16, 0..COLORS, 0..SIZES).prop_map(|(t, x, y, r, c, s)| {
            ObjectState { type_id: t, pos_x: x, pos_y: y, rotation: r * 90, color: c, size: s }
        })
    }

    fn any_action() -> impl Strategy<Value = Action> {
        (0..Action::COUNT).prop_map(|i| Action::ALL[i])
    }

    proptest! {
        #[test]
        fn inverses_restore_state(s in any_state(), a in any_action()) {
            let env = dyed(vec![Cell::new(0, 4)]);
            prop_assume!(is_valid_state(&s, &env));
            if let (Some(inv), Ok(next)) = (a.inverse(), apply_action(&s, a, &env)) {
                prop_assert_eq!(apply_action(&next, inv, &env).unwrap(), s);
            }
        }

        #[test]
        fn identity_concepts_preserved(s in any_state(), a in any_action()) {
            let env = dyed(vec![]);
            prop_assume!(is_valid_state(&s, &env));
            if let Ok(next) = apply_action(&s, a, &env) {
                prop_assert_eq!(next.type_id, s.type_id);
                prop_assert_eq!(next.size, s.size);
                prop_assert!(next.rotation % 90 == 0 && next.rotation < 360);
            }
        }

        #[test]
        fn four_right_turns_are_identity(s in any_state()) {
            let env = open();
            let traj = simulate(&s, &[Action::RotateRight; 4], &env).unwrap();
            prop_assert_eq!(traj[4], s);
        }

        #[test]
        fn validity_ignores_rotation_and_color(s in any_state(), r in 0..4u16, c in 0..COLORS) {
            let env = dyed(vec![Cell::new(2, 2)]);
            let changed = ObjectState { rotation: r * 90, color: c, ..s };
            prop_assert_eq!(is_valid_state(&s, &env), is_valid_state(&changed, &env));
        }

        #[test]
        fn simulate_composes(s in any_state(),
                             a1 in proptest::collection::vec(any_action(), 0..5),
                             a2 in proptest::collection::vec(any_action(), 0..5)) {
            let env = dyed(vec![Cell::new(0, 1)]);
            prop_assume!(is_valid_state(&s, &env));
            let joined: Vec<_> = a1.iter().chain(&a2).copied().collect();
            let whole = simulate(&s, &joined, &env);
            match simulate(&s, &a1, &env) {
                Ok(first) => {
                    let second = simulate(first.last().unwrap(), &a2, &env);
                    match (whole, second) {
                        (Ok(w), Ok(sec)) => {
                            let mut stitched = first.clone();
                            stitched.extend_from_slice(&sec[1..]);
                            prop_assert_eq!(w, stitched);
                        }
                        (Err(w), Err(sec)) => prop_assert_eq!(w.step, sec.step + a1.len()),
                        _ => prop_assert!(false, "composition disagrees"),
                    }
                }
                Err(e) => prop_assert_eq!(whole.unwrap_err().step, e.step),
            }
        }
    }
}
