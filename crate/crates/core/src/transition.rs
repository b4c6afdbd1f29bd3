//! Per-action affine transition maps over concatenated concept tokens and
//! planning directly in token space.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::concept::{distance, Concept, ConceptTokens, CONCEPTS};
use crate::env::Action;
use crate::error::{Error, Result};
use crate::mdp::{rank, PlanResult, ScoredPlan, SymbolMasks};
use crate::symbol::{symbolize, SymbolState, Symbolizer};

pub const RIDGE: f64 = 1e-6;
pub const MIN_PAIRS: usize = 8;
/// Gram matrices with a smaller eigenvalue ratio are treated as singular.
const CONDITION_FLOOR: f64 = 1e-12;

pub const MAPS_SCHEMA: &str = "ctplan-transition-maps";
pub const MAPS_VERSION: u32 = 1;

/// Selects a map. `change_color` is keyed by the dyer's color since its
/// effect depends on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionKey {
    pub action: Action,
    pub dyer_color: Option<u8>,
}

impl ActionKey {
    pub fn plain(action: Action) -> Self {
        Self { action, dyer_color: None }
    }

    /// Key for `action` in a scene with the given dyer color.
    pub fn in_scene(action: Action, dyer_color: Option<u8>) -> Self {
        Self { action, dyer_color: if action == Action::ChangeColor { dyer_color } else { None } }
    }
}

impl fmt::Display for ActionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dyer_color {
            Some(c) => write!(f, "{}@{c}", self.action),
            None => write!(f, "{}", self.action),
        }
    }
}

impl FromStr for ActionKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once('@') {
            Some((a, c)) => Ok(Self {
                action: a.parse()?,
                dyer_color: Some(c.parse().map_err(|_| format!("bad dyer color in {s:?}"))?),
            }),
            None => Ok(Self::plain(s.parse()?)),
        }
    }
}

impl Serialize for ActionKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActionKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub pairs: usize,
    pub residual_mse: f64,
    pub ridge: bool,
}

impl AffineMap {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.matrix * DVector::from_column_slice(x) + &self.offset;
        v.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionTransitionMaps {
    pub dim: usize,
    maps: BTreeMap<ActionKey, AffineMap>,
    pub provenance: serde_json::Value,
}

impl ActionTransitionMaps {
    pub fn get(&self, key: &ActionKey) -> Option<&AffineMap> {
        self.maps.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &ActionKey> {
        self.maps.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ActionKey, &AffineMap)> {
        self.maps.iter()
    }
}

pub type PairSets = BTreeMap<ActionKey, Vec<(ConceptTokens, ConceptTokens)>>;

/// Least-squares affine fit per key, via the normal equations on centered
/// data. A small ridge is added when the system is underdetermined or the
/// Gram matrix is near singular.
pub fn fit_affine(pairs: &PairSets) -> Result<ActionTransitionMaps> {
    let mut dim = None;
    let mut maps = BTreeMap::new();
    for (key, set) in pairs {
        if set.len() < MIN_PAIRS {
            return Err(Error::InsufficientPairs { key: key.to_string(), pairs: set.len(), floor: MIN_PAIRS });
        }
        let d = set[0].0.dim();
        if *dim.get_or_insert(d) != d || set.iter().any(|(a, b)| a.dim() != d || b.dim() != d) {
            return Err(Error::InvalidArgument(format!("mixed token widths in pairs for {key}")));
        }
        maps.insert(*key, fit_one(set));
    }
    Ok(ActionTransitionMaps { dim: dim.unwrap_or(0), maps, provenance: serde_json::Value::Null })
}

fn fit_one(set: &[(ConceptTokens, ConceptTokens)]) -> AffineMap {
    let m = set.len();
    let n = set[0].0.as_flat().len();
    let x = DMatrix::from_fn(m, n, |i, j| set[i].0.as_flat()[j]);
    let y = DMatrix::from_fn(m, n, |i, j| set[i].1.as_flat()[j]);
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut xc = x.clone();
    let mut yc = y.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }
    let mut gram = xc.transpose() * &xc;
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let ridge = m < n + 1 || lo <= hi * CONDITION_FLOOR;
    if ridge {
        for i in 0..n {
            gram[(i, i)] += RIDGE;
        }
    }
    let rhs = xc.transpose() * &yc;
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.lu().solve(&rhs).unwrap_or_else(|| DMatrix::zeros(n, n)),
    };
    let matrix = w.transpose();
    let offset = y_mean.transpose() - &matrix * x_mean.transpose();
    let pred = &x * matrix.transpose();
    let mut sse = 0.0;
    for i in 0..m {
        for j in 0..n {
            let r = pred[(i, j)] + offset[j] - y[(i, j)];
            sse += r * r;
        }
    }
    AffineMap { matrix, offset, pairs: m, residual_mse: sse / (m * n) as f64, ridge }
}

pub fn transition(tokens: &ConceptTokens, key: &ActionKey, maps: &ActionTransitionMaps) -> Result<ConceptTokens> {
    let map = maps.get(key).ok_or_else(|| Error::UnknownAction { key: key.to_string(), step: None })?;
    Ok(ConceptTokens::from_flat(tokens.dim(), map.apply(tokens.as_flat())))
}

/// Applies `keys` in order, returning every intermediate token state
/// including the start.
pub fn rollout(tokens: &ConceptTokens, keys: &[ActionKey], maps: &ActionTransitionMaps) -> Result<Vec<ConceptTokens>> {
    let mut out = vec![tokens.clone()];
    for (step, key) in keys.iter().enumerate() {
        let next = transition(out.last().expect("nonempty"), key, maps).map_err(|e| match e {
            Error::UnknownAction { key, .. } => Error::UnknownAction { key, step: Some(step) },
            other => other,
        })?;
        out.push(next);
    }
    Ok(out)
}

/// Mean squared error over all token coordinates.
pub fn token_mse(pred: &ConceptTokens, truth: &ConceptTokens) -> f64 {
    let (a, b) = (pred.as_flat(), truth.as_flat());
    assert_eq!(a.len(), b.len(), "token widths differ");
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Goal radius per concept: half the smallest distance between that
/// concept's symbol centers.
pub fn goal_radii(symbolizer: &Symbolizer) -> [f64; CONCEPTS] {
    Concept::ALL.map(|c| 0.5 * symbolizer.center_separation(c))
}

fn goal_distance(tokens: &ConceptTokens, goal: &ConceptTokens, radii: &[f64; CONCEPTS]) -> Option<f64> {
    let mut total = 0.0;
    for c in Concept::CHANGEABLE {
        let d = distance(tokens.token(c), goal.token(c));
        if d > radii[c.index()] {
            return None;
        }
        total += d;
    }
    Some(total)
}

/// Breadth-first search that pushes tokens through the fitted maps without
/// consulting transition counts. Tokens are snapped to symbols only to key
/// the visited set and to check position validity and dyer adjacency.
/// Candidates are ranked by length, then by closeness to the goal tokens.
#[allow(clippy::too_many_arguments)]
pub fn plan_tokenspace(
    maps: &ActionTransitionMaps,
    init: &ConceptTokens,
    goal: &ConceptTokens,
    symbolizer: &Symbolizer,
    masks: &SymbolMasks,
    dyer_color: Option<u8>,
    k: usize,
    l_max: usize,
) -> Result<PlanResult> {
    let k = k.max(1);
    let radii = goal_radii(symbolizer);
    let init_sym = symbolize(init, symbolizer);
    let identity_mismatch = !init_sym.same_identity(&symbolize(goal, symbolizer));
    if let Some(d) = goal_distance(init, goal, &radii) {
        return Ok(PlanResult {
            plans: vec![ScoredPlan { actions: Vec::new(), score: (-d).exp() }],
            identity_mismatch,
        });
    }
    let keys: Vec<(Action, ActionKey)> = Action::ALL
        .iter()
        .map(|&a| (a, ActionKey::in_scene(a, dyer_color)))
        .filter(|(_, key)| maps.get(key).is_some())
        .collect();
    let mut kept: HashMap<SymbolState, usize> = HashMap::new();
    kept.insert(init_sym, 1);
    let mut layer: Vec<(ConceptTokens, SymbolState, Vec<Action>)> = vec![(init.clone(), init_sym, Vec::new())];
    let mut found = Vec::new();
    for _ in 0..l_max {
        let mut next_layer = Vec::new();
        for (tokens, sym, actions) in &layer {
            for (action, key) in &keys {
                if *action == Action::ChangeColor
                    && !masks.dyer_position[masks.joint(sym.get(Concept::PosX), sym.get(Concept::PosY))]
                {
                    continue;
                }
                let next = transition(tokens, key, maps)?;
                if !next.is_finite() {
                    continue;
                }
                let next_sym = symbolize(&next, symbolizer);
                if !masks.valid_position(next_sym.get(Concept::PosX), next_sym.get(Concept::PosY)) {
                    continue;
                }
                let mut path = actions.clone();
                path.push(*action);
                if let Some(d) = goal_distance(&next, goal, &radii) {
                    found.push(ScoredPlan { actions: path, score: (-d).exp() });
                    continue;
                }
                let n = kept.entry(next_sym).or_insert(0);
                if *n < k {
                    *n += 1;
                    next_layer.push((next, next_sym, path));
                }
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
struct MapsHeader {
    dim: usize,
    config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct MapRow {
    key: ActionKey,
    pairs: usize,
    residual_mse: f64,
    ridge: bool,
    /// Row-major.
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl ActionTransitionMaps {
    fn parts(&self) -> (MapsHeader, Vec<MapRow>) {
        let rows = self
            .maps
            .iter()
            .map(|(key, m)| MapRow {
                key: *key,
                pairs: m.pairs,
                residual_mse: m.residual_mse,
                ridge: m.ridge,
                matrix: m.matrix.transpose().iter().copied().collect(),
                offset: m.offset.iter().copied().collect(),
            })
            .collect();
        (MapsHeader { dim: self.dim, config: self.provenance.clone() }, rows)
    }

    fn from_parts(h: MapsHeader, rows: Vec<MapRow>) -> Result<Self> {
        let n = h.dim * CONCEPTS;
        let mut maps = BTreeMap::new();
        for row in rows {
            if row.matrix.len() != n * n || row.offset.len() != n {
                return Err(Error::SchemaMismatch(format!("map {} has the wrong shape", row.key)));
            }
            maps.insert(
                row.key,
                AffineMap {
                    matrix: DMatrix::from_row_slice(n, n, &row.matrix),
                    offset: DVector::from_vec(row.offset),
                    pairs: row.pairs,
                    residual_mse: row.residual_mse,
                    ridge: row.ridge,
                },
            );
        }
        Ok(Self { dim: h.dim, maps, provenance: h.config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (h, rows) = self.parts();
        artifact::write(path, MAPS_SCHEMA, MAPS_VERSION, &h, &rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, rows) = artifact::read(path, MAPS_SCHEMA, MAPS_VERSION)?;
        Self::from_parts(h, rows)
    }

    pub fn to_text(&self) -> Result<String> {
        let (h, rows) = self.parts();
        artifact::encode(MAPS_SCHEMA, MAPS_VERSION, &h, &rows)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (h, rows) = artifact::decode(MAPS_SCHEMA, MAPS_VERSION, text)?;
        Self::from_parts(h, rows)
    }
}
