//! Pretrained word vectors and triplet vectorization.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdata::{Triplet, TripletId};

/// Token → vector table with a single dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn from_pairs<I, S>(dim: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut t = EmbeddingTable::new(dim);
        for (tok, v) in pairs {
            t.insert(tok.into(), v)?;
        }
        Ok(t)
    }

    pub fn insert(&mut self, token: String, vector: Vec<f64>) -> Result<Option<Vec<f64>>> {
        if vector.len() != self.dim {
            return Err(Error::invalid(format!(
                "vector for {token:?} has {} components, table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("embedding for {token:?}")));
        }
        Ok(self.vectors.insert(token, vector))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }
}

/// Reads the plain-text layout `token c1 c2 ... cd`, one token per line.
/// Later duplicates replace earlier ones.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, &path.display().to_string())
}

pub fn parse_embeddings(text: &str, source: &str) -> Result<EmbeddingTable> {
    let line_err = |line: usize, reason: String| Error::Line {
        path: source.to_owned(),
        line,
        reason,
    };
    let mut table: Option<EmbeddingTable> = None;
    let mut duplicates = 0usize;
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|e| line_err(n + 1, format!("bad component {p:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(line_err(n + 1, format!("token {token:?} has no components")));
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
        if values.len() != t.dim {
            return Err(line_err(
                n + 1,
                format!("{} components, expected {}", values.len(), t.dim),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(line_err(n + 1, "non-finite component".into()));
        }
        if t.vectors.insert(token.to_owned(), values).is_some() {
            duplicates += 1;
            log::warn!("{source}:{}: duplicate token {token:?}, keeping the later vector", n + 1);
        }
    }
    if duplicates > 0 {
        log::warn!("{source}: {duplicates} duplicate tokens");
    }
    table.ok_or_else(|| Error::invalid(format!("{source}: no embedding vectors")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhraseVector {
    pub values: Vec<f64>,
    /// Words with no stored vector; they contribute zeros to the mean.
    pub oov_words: usize,
    pub all_oov: bool,
}

/// Component-wise mean of the word vectors of a whitespace-separated phrase.
pub fn embed_phrase(table: &EmbeddingTable, phrase: &str) -> Result<PhraseVector> {
    let words: Vec<&str> = phrase.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::invalid("cannot embed an empty phrase"));
    }
    let mut values = vec![0.0; table.dim];
    let mut oov = 0;
    for w in &words {
        match table.get(w) {
            Some(v) => values.iter_mut().zip(v).for_each(|(a, b)| *a += b),
            None => oov += 1,
        }
    }
    let n = words.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    let all_oov = oov == words.len();
    if all_oov {
        log::warn!("phrase {phrase:?} is entirely out of vocabulary");
    }
    Ok(PhraseVector {
        values,
        oov_words: oov,
        all_oov,
    })
}

/// How the three slot vectors are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `[predicate ‖ subject ‖ object]`
    Concat,
    Sum,
    /// Component-wise product.
    Mult,
    /// `[subject ‖ object]`
    NodeOnly,
}

impl Aggregation {
    pub fn output_dim(self, d: usize) -> usize {
        match self {
            Aggregation::Concat => 3 * d,
            Aggregation::Sum | Aggregation::Mult => d,
            Aggregation::NodeOnly => 2 * d,
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Aggregation::Concat),
            "sum" => Ok(Aggregation::Sum),
            "mult" => Ok(Aggregation::Mult),
            "node_only" => Ok(Aggregation::NodeOnly),
            other => Err(Error::invalid(format!("unknown aggregation mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletVector {
    pub values: Vec<f64>,
    pub mode: Aggregation,
    pub source: Option<TripletId>,
}

impl TripletVector {
    pub fn with_source(mut self, id: TripletId) -> Self {
        self.source = Some(id);
        self
    }
}

pub fn embed_triplet(table: &EmbeddingTable, triplet: &Triplet, mode: Aggregation) -> Result<TripletVector> {
    let p = embed_phrase(table, &triplet.predicate)?.values;
    let s = embed_phrase(table, &triplet.subject)?.values;
    let o = embed_phrase(table, &triplet.object)?.values;
    let values = match mode {
        Aggregation::Concat => [p, s, o].concat(),
        Aggregation::Sum => p.iter().zip(&s).zip(&o).map(|((a, b), c)| a + b + c).collect(),
        Aggregation::Mult => p.iter().zip(&s).zip(&o).map(|((a, b), c)| a * b * c).collect(),
        Aggregation::NodeOnly => [s, o].concat(),
    };
    Ok(TripletVector {
        values,
        mode,
        source: None,
    })
}

pub fn add_noise(vec: &TripletVector, sigma: f64, seed: u64) -> Result<TripletVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise_with_rng(vec, sigma, &mut rng)
}

/// Adds independent `N(0, sigma²)` noise to every component.
pub fn add_noise_with_rng<R: Rng + ?Sized>(vec: &TripletVector, sigma: f64, rng: &mut R) -> Result<TripletVector> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut out = vec.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    out.values.iter_mut().for_each(|v| *v += normal.sample(rng));
    Ok(out)
}
