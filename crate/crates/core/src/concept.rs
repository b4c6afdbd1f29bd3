//! Synthetic disentangled concept tokens.
//!
//! Each concept value owns a fixed random centroid; an object state encodes
//! to one token per concept, its centroid plus isotropic Gaussian noise.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::env::{ObjectState, COLORS, GRID_HEIGHT, GRID_WIDTH, ROTATIONS, SEEN_TYPES, SIZES};
use crate::error::{Error, Result};
use crate::rng::{self, TAG_CODEBOOK};

pub const CONCEPTS: usize = 6;
pub const DEFAULT_DIM: usize = 8;
pub const DEFAULT_MIN_SEP: f64 = 1.0;
const MAX_DRAWS: usize = 10_000;

pub const CODEBOOK_SCHEMA: &str = "ctplan-codebook";
pub const CODEBOOK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concept {
    Type,
    PosX,
    PosY,
    Rotation,
    Color,
    Size,
}

impl Concept {
    pub const ALL: [Concept; CONCEPTS] =
        [Concept::Type, Concept::PosX, Concept::PosY, Concept::Rotation, Concept::Color, Concept::Size];
    /// Concepts an action can change; goals are matched on these.
    pub const CHANGEABLE: [Concept; 4] = [Concept::PosX, Concept::PosY, Concept::Rotation, Concept::Color];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Concept::Type => "type",
            Concept::PosX => "pos_x",
            Concept::PosY => "pos_y",
            Concept::Rotation => "rotation",
            Concept::Color => "color",
            Concept::Size => "size",
        }
    }

    /// Discrete value of this concept in `state` (rotation in quarter turns).
    pub fn value(self, state: &ObjectState) -> usize {
        match self {
            Concept::Type => state.type_id as usize,
            Concept::PosX => state.pos_x as usize,
            Concept::PosY => state.pos_y as usize,
            Concept::Rotation => (state.rotation / 90) as usize,
            Concept::Color => state.color as usize,
            Concept::Size => state.size as usize,
        }
    }

    pub fn is_position(self) -> bool {
        matches!(self, Concept::PosX | Concept::PosY)
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Concept {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Concept::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| format!("unknown concept `{s}`"))
    }
}

/// Value-space sizes in [`Concept::ALL`] order, with the seen object types.
pub const DEFAULT_CARDINALITIES: [usize; CONCEPTS] = [
    SEEN_TYPES as usize,
    GRID_WIDTH as usize,
    GRID_HEIGHT as usize,
    ROTATIONS as usize,
    COLORS as usize,
    SIZES as usize,
];

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Six concept tokens of a common dimension, stored back to back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptTokens {
    dim: usize,
    data: Vec<f64>,
}

impl ConceptTokens {
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), CONCEPTS * dim, "token data length");
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token(&self, concept: Concept) -> &[f64] {
        let k = concept.index();
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn token_mut(&mut self, concept: Concept) -> &mut [f64] {
        let k = concept.index();
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    /// Concatenated tokens, length `6 * dim`.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptCodebook {
    pub dim: usize,
    pub seed: u64,
    pub min_sep: f64,
    /// `centroids[concept][value]`, each of length `dim`.
    centroids: Vec<Vec<Vec<f64>>>,
}

impl ConceptCodebook {
    pub fn cardinality(&self, concept: Concept) -> usize {
        self.centroids[concept.index()].len()
    }

    pub fn cardinalities(&self) -> [usize; CONCEPTS] {
        Concept::ALL.map(|c| self.cardinality(c))
    }

    pub fn centroid(&self, concept: Concept, value: usize) -> &[f64] {
        &self.centroids[concept.index()][value]
    }

    pub fn centroids(&self, concept: Concept) -> &[Vec<f64>] {
        &self.centroids[concept.index()]
    }

    /// Smallest pairwise centroid distance within `concept`.
    pub fn separation(&self, concept: Concept) -> f64 {
        let cs = self.centroids(concept);
        let mut best = f64::INFINITY;
        for i in 0..cs.len() {
            for j in i + 1..cs.len() {
                best = best.min(distance(&cs[i], &cs[j]));
            }
        }
        best
    }

    /// Value whose centroid is nearest to `token` (lowest value on ties).
    pub fn nearest_value(&self, concept: Concept, token: &[f64]) -> usize {
        nearest(self.centroids(concept), token)
    }

    /// Decodes every concept by nearest centroid.
    pub fn decode(&self, tokens: &ConceptTokens) -> [usize; CONCEPTS] {
        Concept::ALL.map(|c| self.nearest_value(c, tokens.token(c)))
    }

    fn push_centroid(&mut self, concept: Concept) -> Result<()> {
        let value = self.cardinality(concept);
        let mut rng = rng::stream(self.seed, &[TAG_CODEBOOK, concept.index() as u64, value as u64]);
        let existing = &self.centroids[concept.index()];
        for _ in 0..MAX_DRAWS {
            let candidate: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            if existing.iter().all(|c| distance(c, &candidate) >= self.min_sep) {
                self.centroids[concept.index()].push(candidate);
                return Ok(());
            }
        }
        Err(Error::SeparationUnachievable { concept, value, min_sep: self.min_sep, attempts: MAX_DRAWS })
    }
}

pub(crate) fn nearest(centers: &[Vec<f64>], token: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = squared_distance(c, token);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

pub fn build_codebook(dim: usize, seed: u64, min_sep: f64) -> Result<ConceptCodebook> {
    build_codebook_with(dim, seed, min_sep, DEFAULT_CARDINALITIES)
}

/// Builds a codebook with explicit cardinalities. Each centroid comes from
/// its own random stream, so a codebook built with more values of a concept
/// starts with exactly the centroids of a smaller one.
pub fn build_codebook_with(
    dim: usize,
    seed: u64,
    min_sep: f64,
    cardinalities: [usize; CONCEPTS],
) -> Result<ConceptCodebook> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("token dim must be >= 2, got {dim}")));
    }
    if !(min_sep >= 0.0 && min_sep.is_finite()) {
        return Err(Error::InvalidArgument(format!("min_sep must be >= 0, got {min_sep}")));
    }
    let mut cb = ConceptCodebook { dim, seed, min_sep, centroids: vec![Vec::new(); CONCEPTS] };
    for concept in Concept::ALL {
        for _ in 0..cardinalities[concept.index()] {
            cb.push_centroid(concept)?;
        }
    }
    Ok(cb)
}

/// Appends `new_values` object types; existing centroids are untouched.
pub fn extend_codebook(codebook: &ConceptCodebook, concept: Concept, new_values: usize) -> Result<ConceptCodebook> {
    if concept != Concept::Type {
        return Err(Error::Unsupported(format!("only the type concept can be extended, got {concept}")));
    }
    let mut cb = codebook.clone();
    for _ in 0..new_values {
        cb.push_centroid(concept)?;
    }
    Ok(cb)
}

pub fn encode<R: Rng>(
    state: &ObjectState,
    codebook: &ConceptCodebook,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<ConceptTokens> {
    let mut data = Vec::with_capacity(CONCEPTS * codebook.dim);
    for concept in Concept::ALL {
        let value = concept.value(state);
        let cardinality = codebook.cardinality(concept);
        if value >= cardinality {
            return Err(Error::UnknownValue { concept, value, cardinality });
        }
        data.extend_from_slice(codebook.centroid(concept, value));
    }
    if noise_sigma > 0.0 {
        for v in &mut data {
            *v += noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(ConceptTokens::from_flat(codebook.dim, data))
}

/// Per-concept l2 norm of the token difference.
pub fn token_differences(a: &ConceptTokens, b: &ConceptTokens) -> [f64; CONCEPTS] {
    Concept::ALL.map(|c| distance(a.token(c), b.token(c)))
}

/// Concept whose token moved the most between `a` and `b`; lowest index on ties.
pub fn changed_concept_index(a: &ConceptTokens, b: &ConceptTokens) -> Concept {
    let norms = token_differences(a, b);
    let mut best = 0;
    for k in 1..CONCEPTS {
        if norms[k] > norms[best] {
            best = k;
        }
    }
    Concept::ALL[best]
}

/// Fraction of pairs whose changed concept is identified correctly.
pub fn disentanglement_score(pairs: &[(ConceptTokens, ConceptTokens, Concept)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no token pairs to score".into()));
    }
    let hits = pairs.iter().filter(|(a, b, truth)| changed_concept_index(a, b) == *truth).count();
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Serialize, Deserialize)]
struct CodebookHeader {
    dim: usize,
    seed: u64,
    min_sep: f64,
    cardinalities: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CentroidRow {
    concept: Concept,
    value: usize,
    centroid: Vec<f64>,
}

impl ConceptCodebook {
    fn parts(&self) -> (CodebookHeader, Vec<CentroidRow>) {
        let header = CodebookHeader {
            dim: self.dim,
            seed: self.seed,
            min_sep: self.min_sep,
            cardinalities: self.cardinalities().to_vec(),
        };
        let rows = Concept::ALL
            .iter()
            .flat_map(|&concept| {
                self.centroids(concept).iter().enumerate().map(move |(value, c)| CentroidRow {
                    concept,
                    value,
                    centroid: c.clone(),
                })
            })
            .collect();
        (header, rows)
    }

    fn from_parts(h: CodebookHeader, rows: Vec<CentroidRow>) -> Result<Self> {
        if h.cardinalities.len() != CONCEPTS {
            return Err(Error::SchemaMismatch("codebook needs six cardinalities".into()));
        }
        let mut centroids = vec![Vec::new(); CONCEPTS];
        for row in rows {
            let slot = &mut centroids[row.concept.index()];
            if row.value != slot.len() || row.centroid.len() != h.dim {
                return Err(Error::SchemaMismatch(format!(
                    "codebook row {} {} out of order or wrong width",
                    row.concept, row.value
                )));
            }
            slot.push(row.centroid);
        }
        if centroids.iter().map(Vec::len).ne(h.cardinalities.iter().copied()) {
            return Err(Error::SchemaMismatch("codebook row count mismatch".into()));
        }
        Ok(Self { dim: h.dim, seed: h.seed, min_sep: h.min_sep, centroids })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (h, rows) = self.parts();
        artifact::write(path, CODEBOOK_SCHEMA, CODEBOOK_VERSION, &h, &rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, rows) = artifact::read(path, CODEBOOK_SCHEMA, CODEBOOK_VERSION)?;
        Self::from_parts(h, rows)
    }

    pub fn to_text(&self) -> Result<String> {
        let (h, rows) = self.parts();
        artifact::encode(CODEBOOK_SCHEMA, CODEBOOK_VERSION, &h, &rows)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (h, rows) = artifact::decode(CODEBOOK_SCHEMA, CODEBOOK_VERSION, text)?;
        Self::from_parts(h, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn base() -> ObjectState {
        ObjectState { type_id: 3, pos_x: 1, pos_y: 2, rotation: 180, color: 4, size: 1 }
    }

    fn random_state<R: Rng>(rng: &mut R) -> ObjectState {
        ObjectState {
            type_id: rng.random_range(0..SEEN_TYPES),
            pos_x: rng.random_range(0..GRID_WIDTH),
            pos_y: rng.random_range(0..GRID_HEIGHT),
            rotation: rng.random_range(0..ROTATIONS) * 90,
            color: rng.random_range(0..COLORS),
            size: rng.random_range(0..SIZES),
        }
    }

    /// Changes exactly one concept of `s` to a different value.
    fn perturb<R: Rng>(s: &ObjectState, concept: Concept, rng: &mut R) -> ObjectState {
        let mut t = *s;
        loop {
            match concept {
                Concept::Type => t.type_id = rng.random_range(0..SEEN_TYPES),
                Concept::PosX => t.pos_x = rng.random_range(0..GRID_WIDTH),
                Concept::PosY => t.pos_y = rng.random_range(0..GRID_HEIGHT),
                Concept::Rotation => t.rotation = rng.random_range(0..ROTATIONS) * 90,
                Concept::Color => t.color = rng.random_range(0..COLORS),
                Concept::Size => t.size = rng.random_range(0..SIZES),
            }
            if t != *s {
                return t;
            }
        }
    }

    #[test]
    fn codebook_is_deterministic_and_separated() {
        let a = build_codebook(8, 5, 1.0).unwrap();
        assert_eq!(a, build_codebook(8, 5, 1.0).unwrap());
        assert_ne!(a, build_codebook(8, 6, 1.0).unwrap());
        assert_eq!(a.cardinalities(), [8, 3, 5, 4, 6, 4]);
        let colors = a.centroids(Concept::Color);
        let mut pairs = 0;
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                assert!(distance(&colors[i], &colors[j]) >= 1.0);
                pairs += 1;
            }
        }
        assert_eq!(pairs, 15);
        assert!(build_codebook(4, 1, 0.0).is_ok());
        assert!(build_codebook(1, 1, 1.0).is_err());
        assert!(matches!(build_codebook(2, 1, 50.0), Err(Error::SeparationUnachievable { .. })));
    }

    #[test]
    fn extension_keeps_existing_centroids() {
        let cb = build_codebook(8, 2, 1.0).unwrap();
        let ext = extend_codebook(&cb, Concept::Type, 4).unwrap();
        assert_eq!(ext.cardinality(Concept::Type), 12);
        assert_eq!(&ext.centroids(Concept::Type)[..8], cb.centroids(Concept::Type));
        assert!(ext.separation(Concept::Type) >= 1.0);
        assert!(extend_codebook(&cb, Concept::Color, 1).is_err());

        let mut rng = stream(0, &[]);
        let unseen = ObjectState { type_id: 10, ..base() };
        assert!(matches!(encode(&unseen, &cb, 0.0, &mut rng), Err(Error::UnknownValue { .. })));
        let a = encode(&unseen, &ext, 0.0, &mut rng).unwrap();
        let b = encode(&base(), &ext, 0.0, &mut rng).unwrap();
        for c in Concept::ALL.into_iter().filter(|&c| c != Concept::Type) {
            assert_eq!(a.token(c), b.token(c));
        }
    }

    #[test]
    fn noiseless_encoding_is_the_centroid() {
        let cb = build_codebook(8, 1, 1.0).unwrap();
        let mut rng = stream(1, &[]);
        let t = encode(&base(), &cb, 0.0, &mut rng).unwrap();
        for c in Concept::ALL {
            assert_eq!(t.token(c), cb.centroid(c, c.value(&base())));
        }
        let recolored = ObjectState { color: 0, ..base() };
        let u = encode(&recolored, &cb, 0.0, &mut rng).unwrap();
        let diffs = token_differences(&t, &u);
        for c in Concept::ALL {
            assert_eq!(diffs[c.index()] > 0.0, c == Concept::Color);
        }
    }

    #[test]
    fn nearest_centroid_recovery_under_noise() {
        let cb = build_codebook(8, 3, 1.0).unwrap();
        let mut rng = stream(3, &[1]);
        let n = 10_000;
        let mut correct = 0;
        for _ in 0..n {
            let s = random_state(&mut rng);
            let t = encode(&s, &cb, 0.1 * cb.min_sep, &mut rng).unwrap();
            let decoded = cb.decode(&t);
            if Concept::ALL.iter().all(|&c| decoded[c.index()] == c.value(&s)) {
                correct += 1;
            }
        }
        assert!(correct as f64 / n as f64 >= 0.99, "{correct}/{n}");
    }

    #[test]
    fn changed_concept_identification() {
        let cb = build_codebook(8, 4, 1.0).unwrap();
        let mut rng = stream(4, &[]);
        let a = encode(&base(), &cb, 0.0, &mut rng).unwrap();
        let rotated = ObjectState { rotation: 90, ..base() };
        let b = encode(&rotated, &cb, 0.0, &mut rng).unwrap();
        assert_eq!(changed_concept_index(&a, &b), Concept::Rotation);
        assert_eq!(changed_concept_index(&b, &a), Concept::Rotation);
        assert_eq!(changed_concept_index(&a, &a), Concept::Type);

        let mut clean = Vec::new();
        let mut noisy = Vec::new();
        for i in 0..10_000 {
            let s = random_state(&mut rng);
            let concept = Concept::ALL[i % CONCEPTS];
            let t = perturb(&s, concept, &mut rng);
            clean.push((encode(&s, &cb, 0.0, &mut rng).unwrap(), encode(&t, &cb, 0.0, &mut rng).unwrap(), concept));
            noisy.push((encode(&s, &cb, 0.05, &mut rng).unwrap(), encode(&t, &cb, 0.05, &mut rng).unwrap(), concept));
        }
        assert_eq!(disentanglement_score(&clean).unwrap(), 1.0);
        assert!(disentanglement_score(&noisy).unwrap() >= 0.99);
        let mislabeled: Vec<_> =
            clean.iter().map(|(a, b, c)| (a.clone(), b.clone(), Concept::ALL[(c.index() + 1) % CONCEPTS])).collect();
        assert_eq!(disentanglement_score(&mislabeled).unwrap(), 0.0);
        assert!(disentanglement_score(&[]).is_err());
    }

    #[test]
    fn score_does_not_increase_with_noise() {
        let cb = build_codebook(8, 6, 1.0).unwrap();
        let mut last = f64::INFINITY;
        for (i, sigma) in [0.0, 0.1, 0.3, 0.6, 1.0].into_iter().enumerate() {
            let mut rng = stream(6, &[i as u64]);
            let pairs: Vec<_> = (0..10_000)
                .map(|j| {
                    let s = random_state(&mut rng);
                    let concept = Concept::ALL[j % CONCEPTS];
                    let t = perturb(&s, concept, &mut rng);
                    (encode(&s, &cb, sigma, &mut rng).unwrap(), encode(&t, &cb, sigma, &mut rng).unwrap(), concept)
                })
                .collect();
            let score = disentanglement_score(&pairs).unwrap();
            assert!(score <= last + 0.01, "sigma {sigma}: {score} > {last}");
            last = score;
        }
        assert!(last < 0.99);
    }

    #[test]
    fn codebook_file_round_trip() {
        let cb = extend_codebook(&build_codebook(8, 9, 1.0).unwrap(), Concept::Type, 2).unwrap();
        let text = cb.to_text().unwrap();
        assert_eq!(ConceptCodebook::from_text(&text).unwrap(), cb);
    }
}
