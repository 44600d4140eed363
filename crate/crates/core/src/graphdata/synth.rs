//! Synthetic long-tail scene-graph generator.
//!
//! Normal triplet types are listed in rank order and drawn with Zipf weights
//! `1 / rank^s`. Each anomalous image holds exactly one triplet whose
//! (subject, object) pairing never occurs among the normal types.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prep::label_triplets;
use super::{Dataset, ImageLabel, SceneGraph, Triplet, TripletKey};
use crate::error::{Error, Result};

/// A block of triplet types: the cartesian product of its token lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletGroup {
    pub subjects: Vec<String>,
    pub predicates: Vec<String>,
    pub objects: Vec<String>,
}

impl TripletGroup {
    fn expand(&self) -> Vec<TripletKey> {
        let mut out = Vec::new();
        for s in &self.subjects {
            for p in &self.predicates {
                for o in &self.objects {
                    out.push(TripletKey::new(s, p, o));
                }
            }
        }
        out
    }
}

fn default_confidence_min() -> f64 {
    0.3
}

fn default_confidence_max() -> f64 {
    1.0
}

fn default_zipf() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scene: String,
    pub normal_images: usize,
    pub anomalous_images: usize,
    pub triplets_per_image: usize,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    #[serde(default = "default_confidence_min")]
    pub confidence_min: f64,
    #[serde(default = "default_confidence_max")]
    pub confidence_max: f64,
    /// Normal vocabulary, most frequent first.
    pub normal: Vec<TripletGroup>,
    pub anomalous: Vec<TripletGroup>,
}

impl SynthConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Distinct normal types in rank order.
    pub fn normal_types(&self) -> Vec<TripletKey> {
        dedup(self.normal.iter().flat_map(TripletGroup::expand))
    }

    pub fn anomalous_types(&self) -> Vec<TripletKey> {
        dedup(self.anomalous.iter().flat_map(TripletGroup::expand))
    }

    /// Normalized Zipf probability of each normal type.
    pub fn normal_weights(&self) -> Vec<(TripletKey, f64)> {
        let types = self.normal_types();
        let raw: Vec<f64> = (1..=types.len())
            .map(|r| (r as f64).powf(-self.zipf_exponent))
            .collect();
        let total: f64 = raw.iter().sum();
        types.into_iter().zip(raw.into_iter().map(|w| w / total)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let normal = self.normal_types();
        if normal.is_empty() {
            return Err(Error::Config("synthetic config has no normal triplet types".into()));
        }
        if self.triplets_per_image == 0 {
            return Err(Error::Config("triplets_per_image must be >= 1".into()));
        }
        if !(0.0 <= self.confidence_min
            && self.confidence_min <= self.confidence_max
            && self.confidence_max <= 1.0)
        {
            return Err(Error::Config(format!(
                "confidence range [{}, {}] not within [0, 1]",
                self.confidence_min, self.confidence_max
            )));
        }
        if !self.zipf_exponent.is_finite() || self.zipf_exponent < 0.0 {
            return Err(Error::Config(format!("invalid zipf exponent {}", self.zipf_exponent)));
        }
        let anomalous = self.anomalous_types();
        if self.anomalous_images > 0 && anomalous.is_empty() {
            return Err(Error::Config("anomalous images requested without anomalous types".into()));
        }
        let pairs: BTreeSet<(&str, &str)> = normal
            .iter()
            .map(|k| (k.subject.as_str(), k.object.as_str()))
            .collect();
        for k in &anomalous {
            if pairs.contains(&(k.subject.as_str(), k.object.as_str())) {
                return Err(Error::Config(format!(
                    "anomalous triplet {k} reuses the normal pairing ({}, {})",
                    k.subject, k.object
                )));
            }
        }
        for k in normal.iter().chain(&anomalous) {
            if [&k.subject, &k.predicate, &k.object].iter().any(|t| t.trim().is_empty()) {
                return Err(Error::Config("empty token in synthetic vocabulary".into()));
            }
        }
        Ok(())
    }
}

fn dedup(keys: impl Iterator<Item = TripletKey>) -> Vec<TripletKey> {
    let mut seen = BTreeSet::new();
    keys.filter(|k| seen.insert(k.clone())).collect()
}

pub fn gen_synthetic(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let weights = config.normal_weights();
    let anomalous = config.anomalous_types();
    let picker = WeightedIndex::new(weights.iter().map(|(_, w)| *w))
        .map_err(|e| Error::Config(format!("normal weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (config.confidence_min, config.confidence_max);
    let confidence = |rng: &mut ChaCha8Rng| if lo == hi { lo } else { rng.random_range(lo..=hi) };

    let mut graphs = Vec::with_capacity(config.normal_images + config.anomalous_images);
    for i in 0..config.normal_images + config.anomalous_images {
        let is_anomalous = i >= config.normal_images;
        let n_normal = config.triplets_per_image - usize::from(is_anomalous);
        let mut triplets: Vec<Triplet> = (0..n_normal)
            .map(|_| {
                let k = &weights[picker.sample(&mut rng)].0;
                Triplet::new(&k.subject, &k.predicate, &k.object, confidence(&mut rng))
            })
            .collect();
        let (label, ground_truth, image_id) = if is_anomalous {
            let k = &anomalous[rng.random_range(0..anomalous.len())];
            let pos = rng.random_range(0..=triplets.len());
            triplets.insert(
                pos,
                Triplet::new(&k.subject, &k.predicate, &k.object, confidence(&mut rng)),
            );
            (
                ImageLabel::Anomalous,
                vec![k.clone()],
                format!("{}_a{:03}", config.scene, i - config.normal_images),
            )
        } else {
            (ImageLabel::Normal, vec![], format!("{}_n{:03}", config.scene, i))
        };
        let mut g = SceneGraph {
            image_id,
            scene: config.scene.clone(),
            triplets,
            label,
            ground_truth,
        };
        label_triplets(&mut g);
        graphs.push(g);
    }
    Ok(Dataset::new(config.scene.clone(), graphs))
}
