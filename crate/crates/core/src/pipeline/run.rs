use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::autoencoder::{ae_train, AeModel};
use crate::baseline::baseline_scores;
use crate::embed::{add_noise_with_rng, embed_triplet, load_embeddings, EmbeddingTable};
use crate::error::{Error, Result};
use crate::flow::{flow_train, score_batch, FlowModel};
use crate::graphdata::{
    apply_synonyms, build_subgroups, filter_minor_objects, gen_synthetic, inject_ground_truth, load_dataset,
    load_stoplist, load_synonym_map, select_top_k, split_dataset, Dataset, SceneGraph, Subgroup, SynonymMap,
    SynthConfig, TripletId,
};
use crate::metrics::{aggregate, evaluate, EvalReport, SeedEval, TripletScores};
use crate::numerics::Matrix;

/// Stage tags mixed into the master seed.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stage {
    Synonyms = 1,
    Split = 2,
    Noise = 3,
    Autoencoder = 4,
    Flow = 5,
    Subgroups = 6,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for one stage (and scene index) derived from the master seed.
pub fn stage_seed(master: u64, stage: Stage, scene: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stage as u64) ^ scene as u64)
}

/// Which detectors a run trains and evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Detectors {
    pub flow: bool,
    pub baseline: bool,
}

impl Detectors {
    pub const BOTH: Detectors = Detectors {
        flow: true,
        baseline: true,
    };
    pub const BASELINE_ONLY: Detectors = Detectors {
        flow: false,
        baseline: true,
    };
}

/// Inputs shared by every seed: loaded once per run.
#[derive(Clone, Debug)]
pub struct Resources {
    pub datasets: Vec<Dataset>,
    pub embeddings: EmbeddingTable,
    pub stoplist: BTreeSet<String>,
    pub synonyms: SynonymMap,
}

impl Resources {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let mut datasets = Vec::new();
        if let Some(src) = &config.synthetic {
            let synth = SynthConfig::load(config.resolve(&src.config))?;
            datasets.push(gen_synthetic(&synth, src.seed)?);
        }
        for p in &config.datasets {
            datasets.push(load_dataset(config.resolve(p))?);
        }
        if !config.scenes.is_empty() {
            datasets.retain(|d| config.scenes.contains(&d.scene));
            if datasets.is_empty() {
                return Err(Error::Config(format!("none of the scenes {:?} was loaded", config.scenes)));
            }
        }
        let embeddings = load_embeddings(config.resolve(&config.embeddings))?;
        let stoplist = match &config.stoplist {
            Some(p) => load_stoplist(config.resolve(p))?,
            None => BTreeSet::new(),
        };
        let synonyms = match &config.synonyms.map {
            Some(p) => load_synonym_map(config.resolve(p))?,
            None => SynonymMap::indoor(),
        };
        Ok(Resources {
            datasets,
            embeddings,
            stoplist,
            synonyms,
        })
    }
}

/// Perturbation applied on top of the config for sweep points.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Perturbation {
    pub synonym_rate: f64,
    pub noise_sigma: f64,
}

impl Perturbation {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Perturbation {
            synonym_rate: config.synonyms.rate,
            noise_sigma: config.noise.sigma,
        }
    }
}

/// Per-scene results of one seed.
#[derive(Clone, Debug)]
pub struct SceneOutcome {
    /// Preprocessed dataset; triplet ids index into it.
    pub dataset: Dataset,
    pub subgroups: Vec<Subgroup>,
    pub flow_scores: Option<HashMap<TripletId, f64>>,
    pub flow_eval: Option<SeedEval>,
    pub baseline_eval: Option<SeedEval>,
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub scenes: Vec<SceneOutcome>,
    pub ae_losses: Vec<f64>,
    pub flow_losses: Vec<f64>,
    pub timings: BTreeMap<String, f64>,
}

/// A failed seed, tagged with the stage that failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub stage: String,
    pub message: String,
    pub validation: bool,
}

#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

trait Tag<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Tag<T> for Result<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

struct Timer(BTreeMap<String, f64>, Instant);

impl Timer {
    fn new() -> Self {
        Timer(BTreeMap::new(), Instant::now())
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        *self.0.entry(stage.to_owned()).or_default() += (now - self.1).as_secs_f64();
        self.1 = now;
    }
}

fn prepare(
    dataset: &Dataset,
    scene_idx: usize,
    resources: &Resources,
    config: &ExperimentConfig,
    perturb: Perturbation,
    seed: u64,
) -> Result<Dataset> {
    let d = apply_synonyms(
        dataset,
        &resources.synonyms,
        perturb.synonym_rate,
        stage_seed(seed, Stage::Synonyms, scene_idx),
    )?;
    let d = split_dataset(&d, config.train_fraction, stage_seed(seed, Stage::Split, scene_idx))?;
    d.try_map_graphs(|g| {
        let top = select_top_k(g, config.top_k);
        let kept = filter_minor_objects(&top, &resources.stoplist);
        inject_ground_truth(&SceneGraph {
            triplets: kept,
            ..g.clone()
        })
    })
}

fn embed_graphs<'a>(
    graphs: impl IntoIterator<Item = &'a SceneGraph>,
    resources: &Resources,
    config: &ExperimentConfig,
    sigma: f64,
    noise_rng: &mut ChaCha8Rng,
) -> Result<(Vec<TripletId>, Matrix)> {
    let width = config.aggregation.output_dim(resources.embeddings.dim());
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for g in graphs {
        for (index, t) in g.triplets.iter().enumerate() {
            let v = embed_triplet(&resources.embeddings, t, config.aggregation)?;
            let v = add_noise_with_rng(&v, sigma, noise_rng)?;
            values.extend(v.values);
            ids.push(TripletId {
                image_id: g.image_id.clone(),
                index,
            });
        }
    }
    let rows = ids.len();
    Ok((ids, Matrix::from_vec(rows, width, values)?))
}

/// Full pipeline for one master seed.
pub fn run_seed(
    config: &ExperimentConfig,
    resources: &Resources,
    seed: u64,
    perturb: Perturbation,
    detectors: Detectors,
) -> std::result::Result<SeedOutcome, StageError> {
    let mut timer = Timer::new();
    let prepared: Vec<Dataset> = resources
        .datasets
        .iter()
        .enumerate()
        .map(|(i, d)| prepare(d, i, resources, config, perturb, seed))
        .collect::<Result<_>>()
        .at("prepare")?;
    let subgroups: Vec<Vec<Subgroup>> = prepared
        .iter()
        .enumerate()
        .map(|(i, d)| build_subgroups(d, config.subgroup_size, stage_seed(seed, Stage::Subgroups, i)))
        .collect::<Result<_>>()
        .at("subgroups")?;
    timer.lap("prepare");

    let mut ae_losses = Vec::new();
    let mut flow_losses = Vec::new();
    let mut flow_scores: Vec<Option<HashMap<TripletId, f64>>> = vec![None; prepared.len()];
    if detectors.flow {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, Stage::Noise, 0));
        let train_graphs: Vec<&SceneGraph> = prepared
            .iter()
            .map(Dataset::train_graphs)
            .collect::<Result<Vec<_>>>()
            .at("prepare")?
            .into_iter()
            .flatten()
            .collect();
        let (_, train_x) =
            embed_graphs(train_graphs, resources, config, perturb.noise_sigma, &mut noise_rng).at("embed")?;
        timer.lap("embed");

        let ae: Option<AeModel> = if config.use_autoencoder {
            let out = ae_train(&train_x, &config.ae_train_config(), stage_seed(seed, Stage::Autoencoder, 0))
                .at("autoencoder")?;
            ae_losses = out.losses;
            Some(out.model)
        } else {
            None
        };
        let encode = |x: &Matrix| -> Result<Matrix> {
            match &ae {
                Some(m) => m.encode_batch(x),
                None => Ok(x.clone()),
            }
        };
        let train_z = encode(&train_x).at("encode")?;
        timer.lap("autoencoder");

        let flow_out = flow_train(&train_z, &config.flow, stage_seed(seed, Stage::Flow, 0)).at("flow")?;
        flow_losses = flow_out.losses;
        let flow: FlowModel = flow_out.model;
        timer.lap("flow");

        for (slot, d) in flow_scores.iter_mut().zip(&prepared) {
            let test = d.test_graphs().at("score")?;
            let (ids, x) = embed_graphs(test, resources, config, perturb.noise_sigma, &mut noise_rng).at("embed")?;
            if ids.is_empty() {
                return Err(Error::invalid(format!("scene {} has no test triplets", d.scene))).at("score");
            }
            let z = encode(&x).at("encode")?;
            let scores = score_batch(&flow, &z).at("score")?;
            let invalid = scores.iter().filter(|s| !s.valid).count();
            if invalid > 0 {
                log::warn!("seed {seed}, scene {}: {invalid} non-finite scores replaced", d.scene);
            }
            *slot = Some(ids.into_iter().zip(scores.into_iter().map(|s| s.score)).collect());
        }
        timer.lap("score");
    }

    let mut scenes = Vec::with_capacity(prepared.len());
    for ((dataset, groups), scores) in prepared.into_iter().zip(subgroups).zip(flow_scores) {
        let flow_eval = match &scores {
            Some(s) => Some(
                evaluate(seed, &TripletScores::Global(s.clone()), &dataset, &groups, config.k_range())
                    .at("evaluate")?,
            ),
            None => None,
        };
        let baseline_eval = if detectors.baseline {
            let b = baseline_scores(&dataset, &groups, config.baseline).at("baseline")?;
            Some(evaluate(seed, &b, &dataset, &groups, config.k_range()).at("evaluate")?)
        } else {
            None
        };
        scenes.push(SceneOutcome {
            dataset,
            subgroups: groups,
            flow_scores: scores,
            flow_eval,
            baseline_eval,
        });
    }
    timer.lap("evaluate");
    Ok(SeedOutcome {
        seed,
        scenes,
        ae_losses,
        flow_losses,
        timings: timer.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedTimings {
    pub seed: u64,
    pub seconds: BTreeMap<String, f64>,
}

/// Outcome of a multi-seed run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub label: String,
    /// One aggregated report per scene.
    pub flow: Vec<EvalReport>,
    pub baseline: Vec<EvalReport>,
    pub failures: Vec<SeedFailure>,
    pub timings: Vec<SeedTimings>,
}

impl RunRecord {
    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    /// Mean and std across seeds of the scene-averaged metric.
    pub fn summary(&self, baseline: bool, metric: Metric) -> Option<(f64, f64)> {
        let reports = if baseline { &self.baseline } else { &self.flow };
        let first = reports.first()?;
        let per_seed: Vec<f64> = (0..first.per_seed.len())
            .map(|i| {
                reports
                    .iter()
                    .map(|r| match metric {
                        Metric::Auroc => r.per_seed[i].auroc,
                        Metric::AucRecallK => r.per_seed[i].auc_recall_k,
                    })
                    .sum::<f64>()
                    / reports.len() as f64
            })
            .collect();
        if per_seed.is_empty() {
            return None;
        }
        Some(crate::metrics::mean_std(&per_seed))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Auroc,
    AucRecallK,
}

/// Runs every configured seed. A failing seed is recorded and skipped.
pub fn run_with(
    config: &ExperimentConfig,
    resources: &Resources,
    perturb: Perturbation,
    detectors: Detectors,
    label: &str,
) -> Result<RunRecord> {
    config.validate()?;
    let mut per_scene_flow: Vec<Vec<SeedEval>> = vec![Vec::new(); resources.datasets.len()];
    let mut per_scene_base: Vec<Vec<SeedEval>> = vec![Vec::new(); resources.datasets.len()];
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    for &seed in &config.seeds {
        match run_seed(config, resources, seed, perturb, detectors) {
            Ok(out) => {
                log::info!("{label}: seed {seed} done");
                for (i, s) in out.scenes.into_iter().enumerate() {
                    per_scene_flow[i].extend(s.flow_eval);
                    per_scene_base[i].extend(s.baseline_eval);
                }
                timings.push(SeedTimings {
                    seed,
                    seconds: out.timings,
                });
            }
            Err(StageError { stage, error }) => {
                log::error!("{label}: seed {seed} failed in {stage}: {error}");
                failures.push(SeedFailure {
                    seed,
                    stage: stage.to_owned(),
                    message: error.to_string(),
                    validation: error.is_validation(),
                });
            }
        }
    }
    let reports = |per_scene: Vec<Vec<SeedEval>>, name: &str| -> Vec<EvalReport> {
        resources
            .datasets
            .iter()
            .zip(per_scene)
            .filter(|(_, evals)| !evals.is_empty())
            .map(|(d, evals)| aggregate(&d.scene, name, evals))
            .collect()
    };
    Ok(RunRecord {
        config_hash: config.hash(),
        label: label.to_owned(),
        flow: reports(per_scene_flow, "flow"),
        baseline: reports(per_scene_base, "baseline"),
        failures,
        timings,
    })
}

/// Flow detector and counting baseline under the config's own perturbation settings.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    let resources = Resources::load(config)?;
    run_with(config, &resources, Perturbation::from_config(config), Detectors::BOTH, "run")
}

/// Counting baseline only; no training.
pub fn run_baseline(config: &ExperimentConfig) -> Result<RunRecord> {
    let resources = Resources::load(config)?;
    run_with(
        config,
        &resources,
        Perturbation::from_config(config),
        Detectors::BASELINE_ONLY,
        "baseline",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_seeds_are_distinct_and_stable() {
        let stages = [
            Stage::Synonyms,
            Stage::Split,
            Stage::Noise,
            Stage::Autoencoder,
            Stage::Flow,
            Stage::Subgroups,
        ];
        let mut seen = BTreeSet::new();
        for m in 0..5 {
            for s in stages {
                for scene in 0..3 {
                    assert!(seen.insert(stage_seed(m, s, scene)));
                }
            }
        }
        assert_eq!(stage_seed(7, Stage::Flow, 0), stage_seed(7, Stage::Flow, 0));
        // reference value of the splitmix64 finalizer
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }
}
