//! Symbol-level transition estimation and legality-checked planning.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::concept::{Concept, ConceptCodebook, CONCEPTS};
use crate::env::{Action, Cell, EnvConfig, GRID_HEIGHT, GRID_WIDTH};
use crate::error::{Error, Result};
use crate::symbol::{SymbolState, Symbolizer};

pub const DEFAULT_THRESH: f64 = 0.01;
pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_L_MAX: usize = 20;

pub const MODEL_SCHEMA: &str = "ctplan-transition-model";
pub const MODEL_VERSION: u32 = 1;

const A: usize = Action::COUNT;

/// Per-concept transition counts `N[a][from][to]` and action occurrence
/// counts `M[from][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    cards: [usize; CONCEPTS],
    counts: Vec<Vec<u64>>,
    occurrences: Vec<Vec<u64>>,
    pub thresh: f64,
    pub provenance: serde_json::Value,
}

impl TransitionModel {
    pub fn new(cards: [usize; CONCEPTS], thresh: f64) -> Self {
        Self {
            cards,
            counts: cards.iter().map(|&k| vec![0; A * k * k]).collect(),
            occurrences: cards.iter().map(|&k| vec![0; k * A]).collect(),
            thresh,
            provenance: serde_json::Value::Null,
        }
    }

    pub fn cardinality(&self, concept: Concept) -> usize {
        self.cards[concept.index()]
    }

    pub fn cardinalities(&self) -> [usize; CONCEPTS] {
        self.cards
    }

    fn check(&self, state: &SymbolState) -> Result<()> {
        for c in Concept::ALL {
            if state.get(c) >= self.cardinality(c) {
                return Err(Error::InvalidArgument(format!(
                    "{c} symbol {} outside cardinality {}",
                    state.get(c),
                    self.cardinality(c)
                )));
            }
        }
        Ok(())
    }

    pub fn record(&mut self, from: &SymbolState, action: Action, to: &SymbolState) -> Result<()> {
        self.check(from)?;
        self.check(to)?;
        let a = action.index();
        for c in Concept::ALL {
            let i = c.index();
            let k = self.cards[i];
            self.counts[i][(a * k + from.get(c)) * k + to.get(c)] += 1;
            self.occurrences[i][from.get(c) * A + a] += 1;
        }
        Ok(())
    }

    pub fn count(&self, concept: Concept, action: Action, from: usize, to: usize) -> u64 {
        let k = self.cardinality(concept);
        self.counts[concept.index()][(action.index() * k + from) * k + to]
    }

    pub fn occurrence(&self, concept: Concept, from: usize, action: Action) -> u64 {
        self.occurrences[concept.index()][from * A + action.index()]
    }

    fn row(&self, concept: Concept, action: Action, from: usize) -> &[u64] {
        let k = self.cardinality(concept);
        let start = (action.index() * k + from) * k;
        &self.counts[concept.index()][start..start + k]
    }

    /// Count row for (action, from) and its total, `None` when never observed.
    fn observed_row(&self, concept: Concept, action: Action, from: usize) -> Option<(&[u64], f64)> {
        let row = self.row(concept, action, from);
        let total: u64 = row.iter().sum();
        (total > 0).then_some((row, total as f64))
    }

    /// `Pr[to | action, from]`; zero when the row was never observed.
    pub fn transition_prob(&self, concept: Concept, action: Action, from: usize, to: usize) -> f64 {
        let row = self.row(concept, action, from);
        let total: u64 = row.iter().sum();
        if total == 0 {
            0.0
        } else {
            row[to] as f64 / total as f64
        }
    }

    /// `Pr[action | from]` for one concept.
    pub fn action_prob(&self, concept: Concept, from: usize, action: Action) -> f64 {
        let start = from * A;
        let row = &self.occurrences[concept.index()][start..start + A];
        let total: u64 = row.iter().sum();
        if total == 0 {
            0.0
        } else {
            row[action.index()] as f64 / total as f64
        }
    }

    pub fn concept_legal(&self, concept: Concept, from: usize, action: Action) -> bool {
        self.action_prob(concept, from, action) > self.thresh
    }

    /// True when every concept's symbol admits the action.
    pub fn action_legal(&self, state: &SymbolState, action: Action) -> bool {
        Concept::ALL.iter().all(|&c| self.concept_legal(c, state.get(c), action))
    }

    /// True when the action appears anywhere in the counts.
    pub fn observed(&self, action: Action) -> bool {
        self.occurrences[0].chunks(A).any(|row| row[action.index()] > 0)
    }

    /// Applies symbol permutations, `perms[c][old] = new`.
    pub fn relabel(&self, perms: &[Vec<usize>; CONCEPTS]) -> Self {
        let mut out = Self::new(self.cards, self.thresh);
        out.provenance = self.provenance.clone();
        for c in Concept::ALL {
            let i = c.index();
            let k = self.cards[i];
            let p = &perms[i];
            for a in 0..A {
                for from in 0..k {
                    for to in 0..k {
                        out.counts[i][(a * k + p[from]) * k + p[to]] = self.counts[i][(a * k + from) * k + to];
                    }
                    out.occurrences[i][p[from] * A + a] = self.occurrences[i][from * A + a];
                }
            }
        }
        out
    }
}

pub fn fit_transitions(
    triplets: &[(SymbolState, Action, SymbolState)],
    cards: [usize; CONCEPTS],
    thresh: f64,
) -> Result<TransitionModel> {
    if !(thresh > 0.0 && thresh < 1.0) {
        return Err(Error::InvalidArgument(format!("thresh must lie in (0, 1), got {thresh}")));
    }
    let mut model = TransitionModel::new(cards, thresh);
    for (from, action, to) in triplets {
        model.record(from, *action, to)?;
    }
    Ok(model)
}

/// Grid cells an object may occupy: on the grid and free of obstacles and the dyer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateMask {
    pub cells: [[bool; GRID_HEIGHT as usize]; GRID_WIDTH as usize],
}

impl StateMask {
    pub fn valid(&self, cell: Cell) -> bool {
        cell.on_grid() && self.cells[cell.x as usize][cell.y as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().flatten().filter(|&&v| v).count()
    }
}

pub fn state_mask(env: &EnvConfig) -> StateMask {
    let mut cells = [[false; GRID_HEIGHT as usize]; GRID_WIDTH as usize];
    for cell in Cell::all() {
        cells[cell.x as usize][cell.y as usize] = env.is_free(cell);
    }
    StateMask { cells }
}

/// Valid destination symbols for one task, in symbol space.
///
/// Position validity is kept on the joint (x, y) grid. `change_color`
/// additionally requires a dyer-adjacent position and forces the color
/// symbol to the dyer's.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolMasks {
    cards: [usize; CONCEPTS],
    pub position: Vec<bool>,
    pub values: Vec<Vec<bool>>,
    pub dyer_position: Vec<bool>,
    pub dyer_color: Option<usize>,
}

impl SymbolMasks {
    pub fn all_valid(cards: [usize; CONCEPTS]) -> Self {
        let joint = cards[Concept::PosX.index()] * cards[Concept::PosY.index()];
        Self {
            cards,
            position: vec![true; joint],
            values: cards.iter().map(|&k| vec![true; k]).collect(),
            dyer_position: vec![false; joint],
            dyer_color: None,
        }
    }

    /// Builds masks by mapping every concept value through `symbol`.
    pub fn from_env_mapped(
        env: &EnvConfig,
        cards: [usize; CONCEPTS],
        symbol: impl Fn(Concept, usize) -> usize,
    ) -> Self {
        let mut m = Self::all_valid(cards);
        m.position.iter_mut().for_each(|v| *v = false);
        let mask = state_mask(env);
        for cell in Cell::all() {
            let i = m.joint(symbol(Concept::PosX, cell.x as usize), symbol(Concept::PosY, cell.y as usize));
            if mask.valid(cell) {
                m.position[i] = true;
                if env.is_dyer_adjacent(cell) {
                    m.dyer_position[i] = true;
                }
            }
        }
        m.dyer_color = env.dyer.map(|d| symbol(Concept::Color, d.color as usize));
        m
    }

    /// Masks for symbols that equal concept values.
    pub fn from_env_values(env: &EnvConfig, cards: [usize; CONCEPTS]) -> Self {
        Self::from_env_mapped(env, cards, |_, v| v)
    }

    /// Masks in the symbolizer's symbol space, locating each value through
    /// its noiseless codebook centroid.
    pub fn from_env(env: &EnvConfig, codebook: &ConceptCodebook, symbolizer: &Symbolizer) -> Self {
        Self::from_env_mapped(env, symbolizer.cardinalities(), |c, v| symbolizer.symbol_of_value(codebook, c, v))
    }

    pub fn joint(&self, x: usize, y: usize) -> usize {
        x * self.cards[Concept::PosY.index()] + y
    }

    pub fn valid_position(&self, x: usize, y: usize) -> bool {
        self.position[self.joint(x, y)]
    }

    fn destination_position(&self, action: Action, joint: usize) -> bool {
        self.position[joint] && (action != Action::ChangeColor || self.dyer_position[joint])
    }

    fn destination_value(&self, action: Action, concept: Concept, symbol: usize) -> bool {
        self.values[concept.index()][symbol]
            && (action != Action::ChangeColor || concept != Concept::Color || self.dyer_color == Some(symbol))
    }

    pub fn relabel(&self, perms: &[Vec<usize>; CONCEPTS]) -> Self {
        let px = &perms[Concept::PosX.index()];
        let py = &perms[Concept::PosY.index()];
        let mut out = self.clone();
        for (x, &nx) in px.iter().enumerate() {
            for (y, &ny) in py.iter().enumerate() {
                let (from, to) = (self.joint(x, y), self.joint(nx, ny));
                out.position[to] = self.position[from];
                out.dyer_position[to] = self.dyer_position[from];
            }
        }
        for (i, p) in perms.iter().enumerate() {
            for (old, &new) in p.iter().enumerate() {
                out.values[i][new] = self.values[i][old];
            }
        }
        out.dyer_color = self.dyer_color.map(|c| perms[Concept::Color.index()][c]);
        out
    }
}

/// Per-concept symbol distributions, with position held jointly over (x, y).
/// Stored flat: the joint position block first, then one block per
/// remaining concept.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolDistribution {
    cards: [usize; CONCEPTS],
    data: Vec<f64>,
}

/// Concepts held as independent blocks; position is held jointly.
const BLOCKS: [Concept; 4] = [Concept::Type, Concept::Rotation, Concept::Color, Concept::Size];

fn position_len(cards: &[usize; CONCEPTS]) -> usize {
    cards[Concept::PosX.index()] * cards[Concept::PosY.index()]
}

fn block_range(cards: &[usize; CONCEPTS], concept: Concept) -> Range<usize> {
    let mut start = position_len(cards);
    for c in BLOCKS {
        let k = cards[c.index()];
        if c == concept {
            return start..start + k;
        }
        start += k;
    }
    unreachable!("position is not a block")
}

fn data_len(cards: &[usize; CONCEPTS]) -> usize {
    position_len(cards) + BLOCKS.iter().map(|c| cards[c.index()]).sum::<usize>()
}

impl SymbolDistribution {
    pub fn point(state: &SymbolState, cards: [usize; CONCEPTS]) -> Self {
        let mut data = vec![0.0; data_len(&cards)];
        data[state.get(Concept::PosX) * cards[Concept::PosY.index()] + state.get(Concept::PosY)] = 1.0;
        for c in BLOCKS {
            data[block_range(&cards, c).start + state.get(c)] = 1.0;
        }
        Self { cards, data }
    }

    /// Independent marginals; the joint position is their outer product.
    pub fn from_marginals(marginals: Vec<Vec<f64>>) -> Self {
        assert_eq!(marginals.len(), CONCEPTS);
        let cards: [usize; CONCEPTS] = std::array::from_fn(|i| marginals[i].len());
        let xs = &marginals[Concept::PosX.index()];
        let ys = &marginals[Concept::PosY.index()];
        let mut data: Vec<f64> = xs.iter().flat_map(|&px| ys.iter().map(move |&py| px * py)).collect();
        for c in BLOCKS {
            data.extend_from_slice(&marginals[c.index()]);
        }
        Self { cards, data }
    }

    pub fn cardinalities(&self) -> [usize; CONCEPTS] {
        self.cards
    }

    /// Joint (x, y) mass, indexed `x * ky + y`.
    pub fn position(&self) -> &[f64] {
        &self.data[..position_len(&self.cards)]
    }

    /// Mass of a non-position concept; `None` for the position axes, which
    /// are only held jointly.
    pub fn block(&self, concept: Concept) -> Option<&[f64]> {
        (!concept.is_position()).then(|| &self.data[block_range(&self.cards, concept)])
    }

    pub fn marginal(&self, concept: Concept) -> Vec<f64> {
        let kx = self.cards[Concept::PosX.index()];
        let ky = self.cards[Concept::PosY.index()];
        let position = self.position();
        match concept {
            Concept::PosX => (0..kx).map(|x| position[x * ky..(x + 1) * ky].iter().sum()).collect(),
            Concept::PosY => (0..ky).map(|y| (0..kx).map(|x| position[x * ky + y]).sum()).collect(),
            c => self.data[block_range(&self.cards, c)].to_vec(),
        }
    }

    /// Most likely symbol per concept (joint for position), lowest index on ties.
    pub fn argmax(&self) -> (SymbolState, f64) {
        let ky = self.cards[Concept::PosY.index()];
        let mut state = SymbolState([0; CONCEPTS]);
        let (j, pj) = argmax(self.position());
        state.set(Concept::PosX, j / ky);
        state.set(Concept::PosY, j % ky);
        let mut p = pj;
        for c in BLOCKS {
            let (i, pi) = argmax(&self.data[block_range(&self.cards, c)]);
            state.set(c, i);
            p *= pi;
        }
        (state, p)
    }
}

fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &p) in v.iter().enumerate() {
        if p > best.1 {
            best = (i, p);
        }
    }
    best
}

fn normalize(v: &mut [f64]) -> bool {
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return false;
    }
    v.iter_mut().for_each(|p| *p /= total);
    true
}

/// One reasoning step: drop sources where the action is illegal, push mass
/// through the transition counts, then drop invalid destinations and
/// renormalize.
pub fn propagate(
    dist: &SymbolDistribution,
    action: Action,
    model: &TransitionModel,
    masks: &SymbolMasks,
) -> Result<SymbolDistribution> {
    let cards = dist.cards;
    let dead = |concept| Error::DeadDistribution { concept, action };
    let mut data = vec![0.0; dist.data.len()];
    for c in BLOCKS {
        let range = block_range(&cards, c);
        let out = &mut data[range.clone()];
        for (from, &p) in dist.data[range].iter().enumerate() {
            if p == 0.0 || !model.concept_legal(c, from, action) {
                continue;
            }
            if let Some((row, total)) = model.observed_row(c, action, from) {
                for (o, &n) in out.iter_mut().zip(row) {
                    *o += p * (n as f64 / total);
                }
            }
        }
        for (to, o) in out.iter_mut().enumerate() {
            if !masks.destination_value(action, c, to) {
                *o = 0.0;
            }
        }
        if !normalize(out) {
            return Err(dead(c));
        }
    }

    let kx = cards[Concept::PosX.index()];
    let ky = cards[Concept::PosY.index()];
    let (position, _) = data.split_at_mut(kx * ky);
    for x in 0..kx {
        if !model.concept_legal(Concept::PosX, x, action) {
            continue;
        }
        let Some((row_x, total_x)) = model.observed_row(Concept::PosX, action, x) else { continue };
        for y in 0..ky {
            let p = dist.data[x * ky + y];
            if p == 0.0 || !model.concept_legal(Concept::PosY, y, action) {
                continue;
            }
            let Some((row_y, total_y)) = model.observed_row(Concept::PosY, action, y) else { continue };
            for (x2, &nx) in row_x.iter().enumerate().filter(|(_, &n)| n > 0) {
                let px = nx as f64 / total_x;
                for (y2, &ny) in row_y.iter().enumerate().filter(|(_, &n)| n > 0) {
                    position[x2 * ky + y2] += p * px * (ny as f64 / total_y);
                }
            }
        }
    }
    for (j, o) in position.iter_mut().enumerate() {
        if !masks.destination_position(action, j) {
            *o = 0.0;
        }
    }
    if !normalize(position) {
        return Err(dead(Concept::PosX));
    }
    Ok(SymbolDistribution { cards, data })
}

/// Most likely successor of a symbol state and the step's probability.
pub fn map_successor(
    model: &TransitionModel,
    masks: &SymbolMasks,
    state: &SymbolState,
    action: Action,
) -> Option<(SymbolState, f64)> {
    if !model.action_legal(state, action) {
        return None;
    }
    let dist = SymbolDistribution::point(state, model.cardinalities());
    propagate(&dist, action, model, masks).ok().map(|d| d.argmax())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPlan {
    pub actions: Vec<Action>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlanResult {
    /// Ranked by length ascending, then score descending.
    pub plans: Vec<ScoredPlan>,
    /// Set when init and goal disagree on concepts no action can change.
    pub identity_mismatch: bool,
}

impl PlanResult {
    pub fn best(&self) -> Option<&ScoredPlan> {
        self.plans.first()
    }
}

pub(crate) fn rank(a: &ScoredPlan, b: &ScoredPlan) -> std::cmp::Ordering {
    a.actions.len().cmp(&b.actions.len()).then(b.score.total_cmp(&a.score)).then_with(|| a.actions.cmp(&b.actions))
}

/// Breadth-first search over most-likely successor states, returning up to
/// `k` of the shortest action sequences that reach the goal. Each state is
/// kept on at most `k` partial paths.
pub fn plan(
    model: &TransitionModel,
    init: &SymbolState,
    goal: &SymbolState,
    masks: &SymbolMasks,
    k: usize,
    l_max: usize,
) -> Result<PlanResult> {
    let k = k.max(1);
    let identity_mismatch = !init.same_identity(goal);
    if init.matches_goal(goal) {
        return Ok(PlanResult { plans: vec![ScoredPlan { actions: Vec::new(), score: 1.0 }], identity_mismatch });
    }
    let mut kept: HashMap<SymbolState, usize> = HashMap::new();
    kept.insert(*init, 1);
    let mut layer = vec![(*init, ScoredPlan { actions: Vec::new(), score: 1.0 })];
    let mut found: Vec<ScoredPlan> = Vec::new();
    let mut cache: HashMap<(SymbolState, Action), Option<(SymbolState, f64)>> = HashMap::new();
    for _ in 0..l_max {
        let mut children = Vec::new();
        for (state, path) in &layer {
            for action in Action::ALL {
                let step = *cache.entry((*state, action)).or_insert_with(|| map_successor(model, masks, state, action));
                let Some((next, p)) = step else { continue };
                let mut actions = path.actions.clone();
                actions.push(action);
                children.push((next, ScoredPlan { actions, score: path.score * p }));
            }
        }
        children.sort_by(|a, b| rank(&a.1, &b.1));
        let mut next_layer = Vec::new();
        for (state, path) in children {
            if state.matches_goal(goal) {
                found.push(path);
                continue;
            }
            let n = kept.entry(state).or_insert(0);
            if *n < k {
                *n += 1;
                next_layer.push((state, path));
            }
        }
        if found.len() >= k || next_layer.is_empty() {
            break;
        }
        layer = next_layer;
    }
    if found.is_empty() {
        return Err(Error::NoPlanFound { l_max });
    }
    found.sort_by(rank);
    found.truncate(k);
    Ok(PlanResult { plans: found, identity_mismatch })
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    cardinalities: Vec<usize>,
    thresh: f64,
    config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelRow {
    Transition { concept: Concept, action: Action, from: usize, to: usize, count: u64 },
    Occurrence { concept: Concept, from: usize, action: Action, count: u64 },
}

impl TransitionModel {
    fn parts(&self) -> (ModelHeader, Vec<ModelRow>) {
        let mut rows = Vec::new();
        for c in Concept::ALL {
            let k = self.cardinality(c);
            for action in Action::ALL {
                for from in 0..k {
                    for to in 0..k {
                        let count = self.count(c, action, from, to);
                        if count > 0 {
                            rows.push(ModelRow::Transition { concept: c, action, from, to, count });
                        }
                    }
                }
            }
            for from in 0..k {
                for action in Action::ALL {
                    let count = self.occurrence(c, from, action);
                    if count > 0 {
                        rows.push(ModelRow::Occurrence { concept: c, from, action, count });
                    }
                }
            }
        }
        let header =
            ModelHeader { cardinalities: self.cards.to_vec(), thresh: self.thresh, config: self.provenance.clone() };
        (header, rows)
    }

    fn from_parts(h: ModelHeader, rows: Vec<ModelRow>) -> Result<Self> {
        let cards: [usize; CONCEPTS] =
            h.cardinalities.try_into().map_err(|_| Error::SchemaMismatch("model needs six cardinalities".into()))?;
        let mut m = Self::new(cards, h.thresh);
        m.provenance = h.config;
        let bad = |c: Concept| Error::SchemaMismatch(format!("model row for {c} out of range"));
        for row in rows {
            match row {
                ModelRow::Transition { concept, action, from, to, count } => {
                    let k = m.cardinality(concept);
                    if from >= k || to >= k {
                        return Err(bad(concept));
                    }
                    m.counts[concept.index()][(action.index() * k + from) * k + to] = count;
                }
                ModelRow::Occurrence { concept, from, action, count } => {
                    if from >= m.cardinality(concept) {
                        return Err(bad(concept));
                    }
                    m.occurrences[concept.index()][from * A + action.index()] = count;
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (h, rows) = self.parts();
        artifact::write(path, MODEL_SCHEMA, MODEL_VERSION, &h, &rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, rows) = artifact::read(path, MODEL_SCHEMA, MODEL_VERSION)?;
        Self::from_parts(h, rows)
    }

    pub fn to_text(&self) -> Result<String> {
        let (h, rows) = self.parts();
        artifact::encode(MODEL_SCHEMA, MODEL_VERSION, &h, &rows)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (h, rows) = artifact::decode(MODEL_SCHEMA, MODEL_VERSION, text)?;
        Self::from_parts(h, rows)
    }
}
