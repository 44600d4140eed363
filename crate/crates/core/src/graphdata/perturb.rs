use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::prep::label_triplets;
use super::{Dataset, TripletKey};
use crate::error::{Error, Result};

/// Token replacement table. Each token has at most one replacement and never
/// maps to itself.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SynonymMap {
    map: BTreeMap<String, String>,
}

impl SynonymMap {
    pub fn new<I, A, B>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (from, to) in pairs {
            let (from, to) = (from.into(), to.into());
            if from.is_empty() || to.is_empty() {
                return Err(Error::invalid("synonym map contains an empty token"));
            }
            if from == to {
                return Err(Error::invalid(format!("synonym map sends {from:?} to itself")));
            }
            if let Some(prev) = map.insert(from.clone(), to.clone()) {
                return Err(Error::invalid(format!(
                    "token {from:?} mapped twice ({prev:?} and {to:?})"
                )));
            }
        }
        Ok(SynonymMap { map })
    }

    /// The four indoor-scene substitutions used for the synonym-rate sweep.
    pub fn indoor() -> Self {
        SynonymMap::new([
            ("table", "surface"),
            ("chair", "stool"),
            ("laptop", "notebook"),
            ("plate", "dish"),
        ])
        .expect("static map is valid")
    }

    pub fn get(&self, token: &str) -> Option<&str> {
        self.map.get(token).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// Every descriptor obtainable from `key` by substituting a non-empty
    /// subset of its mapped slots.
    pub fn variants(&self, key: &TripletKey) -> Vec<TripletKey> {
        let slots = [&key.subject, &key.predicate, &key.object];
        let options: Vec<Vec<&str>> = slots
            .iter()
            .map(|tok| {
                let mut v = vec![tok.as_str()];
                if let Some(s) = self.get(tok) {
                    v.push(s);
                }
                v
            })
            .collect();
        let mut out = Vec::new();
        for s in &options[0] {
            for p in &options[1] {
                for o in &options[2] {
                    let k = TripletKey::new(s, p, o);
                    if &k != key {
                        out.push(k);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SynonymStats {
    /// Token occurrences that had a replacement available.
    pub eligible: usize,
    pub replaced: usize,
}

pub fn apply_synonyms(dataset: &Dataset, map: &SynonymMap, rate: f64, seed: u64) -> Result<Dataset> {
    apply_synonyms_with_stats(dataset, map, rate, seed).map(|(d, _)| d)
}

/// Replaces each mapped token occurrence independently with probability
/// `rate` and extends ground-truth lists with the substituted phrasings.
pub fn apply_synonyms_with_stats(
    dataset: &Dataset,
    map: &SynonymMap,
    rate: f64,
    seed: u64,
) -> Result<(Dataset, SynonymStats)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("synonym rate must be in [0, 1], got {rate}")));
    }
    let mut stats = SynonymStats::default();
    if rate == 0.0 || map.is_empty() {
        return Ok((dataset.clone(), stats));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    for graph in &mut out.graphs {
        for t in &mut graph.triplets {
            for slot in [&mut t.subject, &mut t.predicate, &mut t.object] {
                if let Some(rep) = map.get(slot) {
                    stats.eligible += 1;
                    if rng.random_bool(rate) {
                        *slot = rep.to_owned();
                        stats.replaced += 1;
                    }
                }
            }
        }
        let mut extended = graph.ground_truth.clone();
        for key in &graph.ground_truth {
            for v in map.variants(key) {
                if !extended.contains(&v) {
                    extended.push(v);
                }
            }
        }
        graph.ground_truth = extended;
        label_triplets(graph);
    }
    Ok((out, stats))
}
