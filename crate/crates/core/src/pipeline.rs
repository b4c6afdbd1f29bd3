//! Fitting stages and artifact plumbing: codebook, symbolizer, transition
//! counts and token maps, fitted from a dataset's training split.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::concept::{
    build_codebook, encode, extend_codebook, Concept, ConceptCodebook, ConceptTokens, CONCEPTS, DEFAULT_DIM,
    DEFAULT_MIN_SEP,
};
use crate::env::{simulate, ObjectState};
use crate::error::{Error, Result};
use crate::mdp::{fit_transitions, plan, PlanResult, SymbolMasks, TransitionModel, DEFAULT_THRESH};
use crate::rng::{self, StreamRng, TAG_ENCODE_EVAL, TAG_ENCODE_TRAIN};
use crate::symbol::{fit_symbolizer, purity, symbolize, SymbolState, Symbolizer, DEFAULT_RESTARTS};
use crate::taskgen::{Dataset, Split, Task};
use crate::transition::{fit_affine, plan_tokenspace, ActionKey, ActionTransitionMaps, PairSets};

pub const CODEBOOK_FILE: &str = "codebook.jsonl";
pub const SYMBOLIZER_FILE: &str = "symbolizer.jsonl";
pub const MODEL_FILE: &str = "model.jsonl";
pub const MAPS_FILE: &str = "maps.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub codebook_seed: u64,
    pub dim: usize,
    pub min_sep: f64,
    /// Token noise standard deviation used when encoding training states.
    pub sigma: f64,
    pub thresh: f64,
    pub kmeans_seed: u64,
    pub restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            codebook_seed: 0,
            dim: DEFAULT_DIM,
            min_sep: DEFAULT_MIN_SEP,
            sigma: 0.0,
            thresh: DEFAULT_THRESH,
            kmeans_seed: 0,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

/// Full record of a fit, written into every artifact header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    #[serde(flatten)]
    pub config: FitConfig,
    pub dataset_level: u8,
    pub dataset_seed: u64,
    pub train_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub tokens: usize,
    pub triplets: usize,
    pub purity: [f64; CONCEPTS],
    pub map_keys: Vec<(String, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub record: FitRecord,
    pub codebook: ConceptCodebook,
    pub symbolizer: Symbolizer,
    pub model: TransitionModel,
    pub maps: ActionTransitionMaps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planner {
    Symbolic,
    TokenSpace,
}

/// Extends the codebook so every object type in `tasks` has a centroid.
pub fn codebook_covering<'a>(
    codebook: &ConceptCodebook,
    tasks: impl IntoIterator<Item = &'a Task>,
) -> Result<ConceptCodebook> {
    let needed = tasks.into_iter().flat_map(|t| [t.init.type_id, t.goal.type_id]).max().map_or(0, |t| t as usize + 1);
    let have = codebook.cardinality(Concept::Type);
    if needed > have {
        extend_codebook(codebook, Concept::Type, needed - have)
    } else {
        Ok(codebook.clone())
    }
}

fn encode_trajectory(
    task: &Task,
    cb: &ConceptCodebook,
    sigma: f64,
    rng: &mut StreamRng,
) -> Result<Vec<(ObjectState, ConceptTokens)>> {
    simulate(&task.init, &task.gt_actions, &task.env)?
        .into_iter()
        .map(|s| Ok((s, encode(&s, cb, sigma, rng)?)))
        .collect()
}

/// Runs every fitting stage on the training split.
pub fn fit(dataset: &Dataset, config: &FitConfig) -> Result<(Pipeline, FitSummary)> {
    let train: Vec<&Task> = dataset.split(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::InvalidArgument("dataset has no training tasks".into()));
    }
    let codebook = build_codebook(config.dim, config.codebook_seed, config.min_sep)?;
    let train_cb = codebook_covering(&codebook, train.iter().copied())?;
    let trajectories = train
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = rng::stream(config.codebook_seed, &[TAG_ENCODE_TRAIN, i as u64]);
            encode_trajectory(t, &train_cb, config.sigma, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let labelled: Vec<(ConceptTokens, ObjectState)> =
        trajectories.iter().flatten().map(|(s, t)| (t.clone(), *s)).collect();
    let tokens: Vec<ConceptTokens> = labelled.iter().map(|(t, _)| t.clone()).collect();
    let mut cards = [0; CONCEPTS];
    for c in Concept::ALL {
        let mut seen: Vec<usize> = labelled.iter().map(|(_, s)| c.value(s)).collect();
        seen.sort_unstable();
        seen.dedup();
        cards[c.index()] = seen.len();
    }
    let mut symbolizer = fit_symbolizer(&tokens, cards, config.kmeans_seed, config.restarts)?;

    let mut triplets = Vec::new();
    let mut pairs = PairSets::new();
    for (task, traj) in train.iter().zip(&trajectories) {
        let dyer = task.env.dyer.map(|d| d.color);
        for (w, &action) in traj.windows(2).zip(&task.gt_actions) {
            triplets.push((symbolize(&w[0].1, &symbolizer), action, symbolize(&w[1].1, &symbolizer)));
            pairs.entry(ActionKey::in_scene(action, dyer)).or_default().push((w[0].1.clone(), w[1].1.clone()));
        }
    }
    let mut model = fit_transitions(&triplets, symbolizer.cardinalities(), config.thresh)?;
    let mut maps = fit_affine(&pairs)?;

    let record = FitRecord {
        config: config.clone(),
        dataset_level: dataset.level,
        dataset_seed: dataset.seed,
        train_tasks: train.len(),
    };
    let provenance = serde_json::to_value(&record).expect("plain record");
    symbolizer.provenance = provenance.clone();
    model.provenance = provenance.clone();
    maps.provenance = provenance;

    let summary = FitSummary {
        tokens: tokens.len(),
        triplets: triplets.len(),
        purity: purity(&symbolizer, &labelled)?,
        map_keys: maps.iter().map(|(k, m)| (k.to_string(), m.pairs, m.residual_mse)).collect(),
    };
    Ok((Pipeline { record, codebook, symbolizer, model, maps }, summary))
}

pub fn artifact_paths(dir: &Path) -> [PathBuf; 4] {
    [CODEBOOK_FILE, SYMBOLIZER_FILE, MODEL_FILE, MAPS_FILE].map(|f| dir.join(f))
}

impl Pipeline {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let [cb, sym, model, maps] = artifact_paths(dir);
        self.codebook.save(&cb)?;
        self.symbolizer.save(&sym)?;
        self.model.save(&model)?;
        self.maps.save(&maps)
    }

    /// Loads all four artifacts and checks they come from the same fit.
    pub fn load(dir: &Path) -> Result<Self> {
        let [cb, sym, model, maps] = artifact_paths(dir);
        let codebook = ConceptCodebook::load(&cb)?;
        let symbolizer = Symbolizer::load(&sym)?;
        let model = TransitionModel::load(&model)?;
        let maps = ActionTransitionMaps::load(&maps)?;
        let record: FitRecord = serde_json::from_value(symbolizer.provenance.clone())
            .map_err(|e| Error::SchemaMismatch(format!("symbolizer fit record: {e}")))?;
        if model.provenance != symbolizer.provenance || maps.provenance != symbolizer.provenance {
            return Err(Error::SchemaMismatch("artifacts come from different fits".into()));
        }
        let p = Self { record, codebook, symbolizer, model, maps };
        p.check_codebook(p.codebook.seed, p.codebook.dim, p.codebook.min_sep)?;
        if p.symbolizer.cardinalities() != p.model.cardinalities() {
            return Err(Error::SchemaMismatch("symbolizer and model cardinalities differ".into()));
        }
        Ok(p)
    }

    /// Fails unless the fit used a codebook with these parameters.
    pub fn check_codebook(&self, seed: u64, dim: usize, min_sep: f64) -> Result<()> {
        let c = &self.record.config;
        if c.codebook_seed != seed || c.dim != dim || c.min_sep != min_sep {
            return Err(Error::SchemaMismatch(format!(
                "fit used codebook seed {} dim {} min_sep {}, requested seed {seed} dim {dim} min_sep {min_sep}",
                c.codebook_seed, c.dim, c.min_sep
            )));
        }
        Ok(())
    }

    /// Encodes a task's init and goal with noise from the task's own stream.
    pub fn encode_task(
        &self,
        codebook: &ConceptCodebook,
        task: &Task,
        index: usize,
        sigma: f64,
        seed: u64,
    ) -> Result<(ConceptTokens, ConceptTokens)> {
        let mut rng = rng::stream(seed, &[TAG_ENCODE_EVAL, index as u64]);
        Ok((encode(&task.init, codebook, sigma, &mut rng)?, encode(&task.goal, codebook, sigma, &mut rng)?))
    }

    pub fn symbols(&self, tokens: &ConceptTokens) -> SymbolState {
        symbolize(tokens, &self.symbolizer)
    }

    /// Plans one task from encoded init and goal tokens. `codebook` must
    /// cover the task's object type.
    #[allow(clippy::too_many_arguments)]
    pub fn plan_tokens(
        &self,
        codebook: &ConceptCodebook,
        task: &Task,
        init: &ConceptTokens,
        goal: &ConceptTokens,
        planner: Planner,
        k: usize,
        l_max: usize,
    ) -> Result<PlanResult> {
        let masks = SymbolMasks::from_env(&task.env, codebook, &self.symbolizer);
        match planner {
            Planner::Symbolic => plan(&self.model, &self.symbols(init), &self.symbols(goal), &masks, k, l_max),
            Planner::TokenSpace => plan_tokenspace(
                &self.maps,
                init,
                goal,
                &self.symbolizer,
                &masks,
                task.env.dyer.map(|d| d.color),
                k,
                l_max,
            ),
        }
    }
}
