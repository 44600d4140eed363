//! Scene-graph triplets: data model, ingestion, preprocessing, evaluation
//! subgroups, perturbations and a synthetic generator.

pub mod io;
pub mod perturb;
pub mod prep;
pub mod split;
pub mod synth;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, load_stoplist, load_synonym_map, parse_dataset, save_dataset};
pub use perturb::{apply_synonyms, SynonymMap};
pub use prep::{filter_minor_objects, inject_ground_truth, label_triplets, select_top_k};
pub use split::{build_subgroups, split_dataset, Subgroup};
pub use synth::{gen_synthetic, SynthConfig};

/// The token part of a triplet, used for ground-truth descriptors and counting.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletKey {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl TripletKey {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        TripletKey {
            subject: subject.to_owned(),
            predicate: predicate.to_owned(),
            object: object.to_owned(),
        }
    }
}

impl fmt::Display for TripletKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.subject, self.predicate, self.object)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub confidence: f64,
    /// Ground-truth anomaly indicator; `None` until labels are attached.
    pub anomaly_label: Option<bool>,
    /// Added from the ground truth rather than produced by the generator.
    pub injected: bool,
}

impl Triplet {
    pub fn new(subject: &str, predicate: &str, object: &str, confidence: f64) -> Self {
        Triplet {
            subject: subject.to_owned(),
            predicate: predicate.to_owned(),
            object: object.to_owned(),
            confidence,
            anomaly_label: None,
            injected: false,
        }
    }

    pub fn key(&self) -> TripletKey {
        TripletKey::new(&self.subject, &self.predicate, &self.object)
    }

    pub fn matches(&self, key: &TripletKey) -> bool {
        self.subject == key.subject && self.predicate == key.predicate && self.object == key.object
    }

    pub fn is_anomalous(&self) -> bool {
        self.anomaly_label == Some(true)
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        for (field, tok) in [
            ("subject", &self.subject),
            ("predicate", &self.predicate),
            ("object", &self.object),
        ] {
            if tok.trim().is_empty() {
                return Err((field, "empty token".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err((
                "confidence",
                format!("{} outside [0, 1] for {}", self.confidence, self.key()),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageLabel {
    Normal,
    Anomalous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub image_id: String,
    pub scene: String,
    pub triplets: Vec<Triplet>,
    pub label: ImageLabel,
    /// Valid phrasings of the anomaly; empty for normal images.
    pub ground_truth: Vec<TripletKey>,
}

impl SceneGraph {
    pub fn is_anomalous(&self) -> bool {
        self.label == ImageLabel::Anomalous
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub scene: String,
    pub graphs: Vec<SceneGraph>,
    /// Parallel to `graphs` once [`split_dataset`] has run.
    pub splits: Option<Vec<Split>>,
}

/// Identifies one triplet instance: the graph it belongs to and its position
/// in that graph after preprocessing.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletId {
    pub image_id: String,
    pub index: usize,
}

impl fmt::Display for TripletId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.image_id, self.index)
    }
}

impl Dataset {
    pub fn new(scene: impl Into<String>, graphs: Vec<SceneGraph>) -> Self {
        Dataset {
            scene: scene.into(),
            graphs,
            splits: None,
        }
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn split_of(&self, i: usize) -> Option<Split> {
        self.splits.as_ref().map(|s| s[i])
    }

    fn require_splits(&self) -> Result<&[Split]> {
        self.splits
            .as_deref()
            .ok_or_else(|| Error::Contract("dataset has not been split".into()))
    }

    pub fn train_graphs(&self) -> Result<Vec<&SceneGraph>> {
        let s = self.require_splits()?;
        Ok(self
            .graphs
            .iter()
            .zip(s)
            .filter(|(_, s)| **s == Split::Train)
            .map(|(g, _)| g)
            .collect())
    }

    pub fn test_graphs(&self) -> Result<Vec<&SceneGraph>> {
        let s = self.require_splits()?;
        Ok(self
            .graphs
            .iter()
            .zip(s)
            .filter(|(_, s)| **s == Split::Test)
            .map(|(g, _)| g)
            .collect())
    }

    pub fn normal_count(&self) -> usize {
        self.graphs.iter().filter(|g| !g.is_anomalous()).count()
    }

    pub fn anomalous_count(&self) -> usize {
        self.graphs.iter().filter(|g| g.is_anomalous()).count()
    }

    /// Applies `f` to every graph, keeping the split assignment.
    pub fn try_map_graphs<F>(&self, mut f: F) -> Result<Dataset>
    where
        F: FnMut(&SceneGraph) -> Result<SceneGraph>,
    {
        Ok(Dataset {
            scene: self.scene.clone(),
            graphs: self.graphs.iter().map(&mut f).collect::<Result<_>>()?,
            splits: self.splits.clone(),
        })
    }
}
