//! Symbol abstraction: per-concept K-means over concept tokens and
//! nearest-center symbol assignment.

use std::cmp::Ordering;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::concept::{nearest, Concept, ConceptCodebook, ConceptTokens, CONCEPTS};
use crate::env::ObjectState;
use crate::error::{Error, Result};
use crate::rng::{self, TAG_KMEANS};

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_ITERATIONS: usize = 300;
pub const CONVERGENCE_TOL: f64 = 1e-9;

pub const SYMBOLIZER_SCHEMA: &str = "ctplan-symbolizer";
pub const SYMBOLIZER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansFit {
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; lowest index on ties.
pub fn assign(token: &[f64], centers: &[Vec<f64>]) -> usize {
    nearest(centers, token)
}

fn kmeans_plus_plus<P: AsRef<[f64]>, R: Rng>(points: &[P], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].as_ref().to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p.as_ref(), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].as_ref().to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p.as_ref(), &c));
        }
        centers.push(c);
    }
    centers
}

/// One Lloyd run from the given centers. Returns the final fit and the
/// inertia observed after each assignment step.
fn lloyd<P: AsRef<[f64]>>(points: &[P], mut centers: Vec<Vec<f64>>) -> (KMeansFit, Vec<f64>) {
    let k = centers.len();
    let dim = centers[0].len();
    let mut labels = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut inertia = 0.0;
        for (label, p) in labels.iter_mut().zip(points) {
            *label = assign(p.as_ref(), &centers);
            inertia += sq_dist(p.as_ref(), &centers[*label]);
        }
        history.push(inertia);
        if iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&label, p) in labels.iter().zip(points) {
            counts[label] += 1;
            for (s, v) in sums[label].iter_mut().zip(p.as_ref()) {
                *s += v;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centers)
            .map(|((s, &n), old)| if n == 0 { old.clone() } else { s.into_iter().map(|v| v / n as f64).collect() })
            .collect();
        // Empty clusters take the point farthest from its current center.
        let mut taken = vec![false; points.len()];
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = labels
                .iter()
                .zip(points)
                .enumerate()
                .filter(|(i, _)| !taken[*i])
                .map(|(i, (&l, p))| (i, sq_dist(p.as_ref(), &centers[l])))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            if let Some((i, _)) = far {
                taken[i] = true;
                next[c] = points[i].as_ref().to_vec();
            }
        }
        let shift = centers.iter().zip(&next).map(|(a, b)| sq_dist(a, b).sqrt()).fold(0.0, f64::max);
        centers = next;
        if shift < CONVERGENCE_TOL {
            let inertia = points
                .iter()
                .map(|p| {
                    let p = p.as_ref();
                    sq_dist(p, &centers[assign(p, &centers)])
                })
                .sum();
            history.push(inertia);
            break;
        }
    }
    let inertia = *history.last().expect("at least one assignment");
    (KMeansFit { centers, inertia, iterations }, history)
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// K-means with k-means++ seeding and Lloyd iterations, keeping the lowest
/// inertia over `restarts` runs. Centers are returned in lexicographic order.
pub fn fit_kmeans<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64, restarts: usize) -> Result<KMeansFit> {
    if k == 0 || points.len() < k {
        return Err(Error::InsufficientPoints { k, points: points.len() });
    }
    let mut best: Option<KMeansFit> = None;
    for restart in 0..restarts.max(1) {
        let mut rng = rng::stream(seed, &[TAG_KMEANS, restart as u64]);
        let init = kmeans_plus_plus(points, k, &mut rng);
        let (fit, _) = lloyd(points, init);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    let mut best = best.expect("at least one restart");
    best.centers.sort_by(|a, b| lexicographic(a, b));
    Ok(best)
}

/// Six discrete symbols, one per concept, in [`Concept::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymbolState(pub [u8; CONCEPTS]);

impl SymbolState {
    /// Uses each concept's value as its symbol.
    pub fn from_values(state: &ObjectState) -> Self {
        SymbolState(Concept::ALL.map(|c| c.value(state) as u8))
    }

    pub fn get(&self, concept: Concept) -> usize {
        self.0[concept.index()] as usize
    }

    pub fn set(&mut self, concept: Concept, symbol: usize) {
        self.0[concept.index()] = symbol as u8;
    }

    /// Equality on the concepts actions can change.
    pub fn matches_goal(&self, goal: &SymbolState) -> bool {
        Concept::CHANGEABLE.iter().all(|&c| self.get(c) == goal.get(c))
    }

    /// Equality on type and size, which no action alters.
    pub fn same_identity(&self, other: &SymbolState) -> bool {
        self.get(Concept::Type) == other.get(Concept::Type) && self.get(Concept::Size) == other.get(Concept::Size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptFit {
    pub concept: Concept,
    pub iterations: usize,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Symbolizer {
    pub dim: usize,
    pub seed: u64,
    centers: Vec<Vec<Vec<f64>>>,
    pub fits: Vec<ConceptFit>,
    /// Resolved configuration of the run that produced this symbolizer.
    pub provenance: serde_json::Value,
}

impl Symbolizer {
    pub fn from_centers(dim: usize, seed: u64, centers: Vec<Vec<Vec<f64>>>) -> Self {
        assert_eq!(centers.len(), CONCEPTS);
        let fits = Concept::ALL.iter().map(|&concept| ConceptFit { concept, iterations: 0, inertia: 0.0 }).collect();
        Self { dim, seed, centers, fits, provenance: serde_json::Value::Null }
    }

    pub fn centers(&self, concept: Concept) -> &[Vec<f64>] {
        &self.centers[concept.index()]
    }

    pub fn cardinality(&self, concept: Concept) -> usize {
        self.centers[concept.index()].len()
    }

    pub fn cardinalities(&self) -> [usize; CONCEPTS] {
        Concept::ALL.map(|c| self.cardinality(c))
    }

    /// Symbol of a codebook value's centroid.
    pub fn symbol_of_value(&self, codebook: &ConceptCodebook, concept: Concept, value: usize) -> usize {
        assign(codebook.centroid(concept, value), self.centers(concept))
    }

    /// Smallest distance between two centers of `concept`.
    pub fn center_separation(&self, concept: Concept) -> f64 {
        let cs = self.centers(concept);
        let mut best = f64::INFINITY;
        for i in 0..cs.len() {
            for j in i + 1..cs.len() {
                best = best.min(sq_dist(&cs[i], &cs[j]).sqrt());
            }
        }
        best
    }
}

/// Fits one K-means per concept with `k` equal to the concept's cardinality.
pub fn fit_symbolizer(
    tokens: &[ConceptTokens],
    cardinalities: [usize; CONCEPTS],
    seed: u64,
    restarts: usize,
) -> Result<Symbolizer> {
    let first = tokens.first().ok_or(Error::InsufficientPoints { k: 1, points: 0 })?;
    let dim = first.dim();
    let fits = Concept::ALL
        .par_iter()
        .map(|&concept| {
            let points: Vec<&[f64]> = tokens.iter().map(|t| t.token(concept)).collect();
            let concept_seed = rng::derive_seed(seed, &[concept.index() as u64]);
            fit_kmeans(&points, cardinalities[concept.index()], concept_seed, restarts)
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = Concept::ALL
        .iter()
        .zip(&fits)
        .map(|(&concept, f)| ConceptFit { concept, iterations: f.iterations, inertia: f.inertia })
        .collect();
    Ok(Symbolizer {
        dim,
        seed,
        centers: fits.into_iter().map(|f| f.centers).collect(),
        fits: meta,
        provenance: serde_json::Value::Null,
    })
}

pub fn symbolize(tokens: &ConceptTokens, symbolizer: &Symbolizer) -> SymbolState {
    SymbolState(Concept::ALL.map(|c| assign(tokens.token(c), symbolizer.centers(c)) as u8))
}

/// Per-concept purity: each cluster is mapped to its majority true value and
/// the fraction of points whose mapped value equals the truth is reported.
pub fn purity(symbolizer: &Symbolizer, labeled: &[(ConceptTokens, ObjectState)]) -> Result<[f64; CONCEPTS]> {
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("purity needs labelled tokens".into()));
    }
    let mut out = [0.0; CONCEPTS];
    for concept in Concept::ALL {
        let k = symbolizer.cardinality(concept);
        let values = labeled.iter().map(|(_, s)| concept.value(s)).max().unwrap_or(0) + 1;
        let mut table = vec![vec![0usize; values]; k];
        for (tokens, state) in labeled {
            let cluster = assign(tokens.token(concept), symbolizer.centers(concept));
            table[cluster][concept.value(state)] += 1;
        }
        let majority: usize = table.iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum();
        out[concept.index()] = majority as f64 / labeled.len() as f64;
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SymbolizerHeader {
    dim: usize,
    seed: u64,
    cardinalities: Vec<usize>,
    fits: Vec<ConceptFit>,
    config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct CenterRow {
    concept: Concept,
    symbol: usize,
    center: Vec<f64>,
}

impl Symbolizer {
    fn parts(&self) -> (SymbolizerHeader, Vec<CenterRow>) {
        let header = SymbolizerHeader {
            dim: self.dim,
            seed: self.seed,
            cardinalities: self.cardinalities().to_vec(),
            fits: self.fits.clone(),
            config: self.provenance.clone(),
        };
        let rows = Concept::ALL
            .iter()
            .flat_map(|&concept| {
                self.centers(concept).iter().enumerate().map(move |(symbol, c)| CenterRow {
                    concept,
                    symbol,
                    center: c.clone(),
                })
            })
            .collect();
        (header, rows)
    }

    fn from_parts(h: SymbolizerHeader, rows: Vec<CenterRow>) -> Result<Self> {
        let mut centers = vec![Vec::new(); CONCEPTS];
        for row in rows {
            let slot = &mut centers[row.concept.index()];
            if row.symbol != slot.len() || row.center.len() != h.dim {
                return Err(Error::SchemaMismatch(format!(
                    "symbolizer row {} {} out of order or wrong width",
                    row.concept, row.symbol
                )));
            }
            slot.push(row.center);
        }
        if centers.iter().map(Vec::len).ne(h.cardinalities.iter().copied()) {
            return Err(Error::SchemaMismatch("symbolizer center count mismatch".into()));
        }
        Ok(Self { dim: h.dim, seed: h.seed, centers, fits: h.fits, provenance: h.config })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (h, rows) = self.parts();
        artifact::write(path, SYMBOLIZER_SCHEMA, SYMBOLIZER_VERSION, &h, &rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, rows) = artifact::read(path, SYMBOLIZER_SCHEMA, SYMBOLIZER_VERSION)?;
        Self::from_parts(h, rows)
    }

    pub fn to_text(&self) -> Result<String> {
        let (h, rows) = self.parts();
        artifact::encode(SYMBOLIZER_SCHEMA, SYMBOLIZER_VERSION, &h, &rows)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (h, rows) = artifact::decode(SYMBOLIZER_SCHEMA, SYMBOLIZER_VERSION, text)?;
        Self::from_parts(h, rows)
    }
}
