//! Counting baseline: a triplet is as anomalous as it is rare within its
//! subgroup's pool.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdata::{Dataset, SceneGraph, Subgroup, Triplet, TripletId, TripletKey};
use crate::metrics::TripletScores;

/// Lower bound on accumulated soft-count weight. Injected ground-truth
/// triplets carry confidence 0, which would otherwise divide by zero.
pub const SOFT_WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    #[default]
    Hard,
    Soft,
}

/// Occurrence weight of each key in one pool, grouped by (subject, object).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CountTable {
    weights: BTreeMap<(String, String), BTreeMap<String, f64>>,
}

impl CountTable {
    pub fn build<'a>(pool: impl IntoIterator<Item = &'a Triplet>, mode: CountMode) -> Self {
        let mut weights: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
        for t in pool {
            let w = match mode {
                CountMode::Hard => 1.0,
                CountMode::Soft => t.confidence,
            };
            *weights
                .entry((t.subject.clone(), t.object.clone()))
                .or_default()
                .entry(t.predicate.clone())
                .or_default() += w;
        }
        CountTable { weights }
    }

    pub fn weight(&self, key: &TripletKey) -> f64 {
        self.weights
            .get(&(key.subject.clone(), key.object.clone()))
            .and_then(|m| m.get(&key.predicate))
            .copied()
            .unwrap_or(0.0)
    }

    /// Total weight of a (subject, object) pair over all predicates.
    pub fn pair_weight(&self, subject: &str, object: &str) -> f64 {
        self.weights
            .get(&(subject.to_owned(), object.to_owned()))
            .map_or(0.0, |m| m.values().sum())
    }
}

fn inverse_weights(pool: &[&Triplet], mode: CountMode) -> Vec<f64> {
    let table = CountTable::build(pool.iter().copied(), mode);
    pool.iter()
        .map(|t| 1.0 / table.weight(&t.key()).max(SOFT_WEIGHT_FLOOR))
        .collect()
}

/// `1 / count` of each triplet's exact key within the pool.
pub fn count_scores(pool: &[&Triplet]) -> Vec<f64> {
    inverse_weights(pool, CountMode::Hard)
}

/// `1 / Σ confidence` over the pool's triplets sharing the key.
pub fn soft_count_scores(pool: &[&Triplet]) -> Vec<f64> {
    inverse_weights(pool, CountMode::Soft)
}

/// Scores every subgroup's pool independently.
pub fn baseline_scores(dataset: &Dataset, subgroups: &[Subgroup], mode: CountMode) -> Result<TripletScores> {
    let by_id: HashMap<&str, &SceneGraph> = dataset.graphs.iter().map(|g| (g.image_id.as_str(), g)).collect();
    let mut tables = Vec::with_capacity(subgroups.len());
    for group in subgroups {
        let mut ids = Vec::new();
        let mut pool = Vec::new();
        for image in group.members() {
            let g = by_id
                .get(image)
                .ok_or_else(|| Error::Contract(format!("subgroup references unknown image {image}")))?;
            for (index, t) in g.triplets.iter().enumerate() {
                ids.push(TripletId {
                    image_id: image.to_owned(),
                    index,
                });
                pool.push(t);
            }
        }
        let scores = inverse_weights(&pool, mode);
        tables.push(ids.into_iter().zip(scores).collect());
    }
    Ok(TripletScores::PerSubgroup(tables))
}
