//! Token vocabularies, the union vocabulary across backends and the
//! zero-fill projection of model-local distributions into it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize, Serializer};

use crate::{Error, Result};

/// Tolerance used when checking that a distribution sums to one.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// An ordered set of token strings with dense 0-based ids.
///
/// Serialized as a JSON array of token strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<String>", try_from = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary, rejecting duplicate tokens.
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate token {tok:?} in vocabulary"
                )));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Builds a vocabulary from a token stream, keeping first appearances.
    pub fn from_stream<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for tok in tokens {
            out.insert(tok.as_ref());
        }
        out
    }

    fn insert(&mut self, tok: &str) -> usize {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(tok.to_owned());
        self.index.insert(tok.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::new(tokens)
    }
}

/// Maps the local token ids of one backend onto unified ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Projection {
    pub model_id: usize,
    local_to_unified: Vec<usize>,
}

impl Projection {
    /// Rebuilds a projection from its index map; the map must be injective.
    pub fn from_indices(model_id: usize, local_to_unified: Vec<usize>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(local_to_unified.len());
        for &u in &local_to_unified {
            if !seen.insert(u) {
                return Err(Error::invalid(format!(
                    "projection for model {model_id} maps two local ids onto unified id {u}"
                )));
            }
        }
        Ok(Self {
            model_id,
            local_to_unified,
        })
    }

    pub fn local_size(&self) -> usize {
        self.local_to_unified.len()
    }

    pub fn unified_id(&self, local: usize) -> usize {
        self.local_to_unified[local]
    }

    pub fn indices(&self) -> &[usize] {
        &self.local_to_unified
    }

    pub fn is_identity(&self) -> bool {
        self.local_to_unified
            .iter()
            .enumerate()
            .all(|(i, &u)| i == u)
    }
}

impl Serialize for Projection {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.local_to_unified.serialize(s)
    }
}

/// A probability vector over some vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Validates entries are finite and non-negative and that they sum to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let dist = Self { probs };
        if !dist.is_normalized() {
            return Err(Error::invalid(format!(
                "distribution over {} tokens is not normalized (sum = {})",
                dist.probs.len(),
                dist.sum()
            )));
        }
        Ok(dist)
    }

    /// Wraps a vector without validation; check with [`is_normalized`](Self::is_normalized).
    pub fn from_raw(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn one_hot(n: usize, id: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[id] = 1.0;
        Self { probs }
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn prob(&self, id: usize) -> f64 {
        self.probs[id]
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn is_normalized(&self) -> bool {
        !self.probs.is_empty()
            && self.probs.iter().all(|p| p.is_finite() && *p >= 0.0)
            && (self.sum() - 1.0).abs() <= NORMALIZATION_TOL
    }

    /// Index of the most probable token; ties go to the lowest id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Rescales `p ↦ p^(1/T)` and renormalizes. `T = 1` returns the input unchanged.
    pub fn with_temperature(self, temperature: f64) -> Self {
        if temperature == 1.0 {
            return self;
        }
        let inv = 1.0 / temperature;
        let scaled: Vec<f64> = self.probs.iter().map(|p| p.powf(inv)).collect();
        let z: f64 = scaled.iter().sum();
        Self {
            probs: scaled.into_iter().map(|p| p / z).collect(),
        }
    }
}

/// Builds the union vocabulary in first-appearance order and one projection
/// per input vocabulary.
pub fn build_union(vocabs: &[Vocab]) -> Result<(Vocab, Vec<Projection>)> {
    if vocabs.is_empty() {
        return Err(Error::invalid("build_union needs at least one vocabulary"));
    }
    let mut unified = Vocab::from_stream(std::iter::empty::<&str>());
    let mut projections = Vec::with_capacity(vocabs.len());
    for (model_id, v) in vocabs.iter().enumerate() {
        let map = v.tokens().iter().map(|t| unified.insert(t)).collect();
        projections.push(Projection {
            model_id,
            local_to_unified: map,
        });
    }
    Ok((unified, projections))
}

/// Scatters a model-local distribution into the unified vocabulary.
/// Tokens the model does not know get probability zero.
pub fn project(
    dist: &TokenDistribution,
    proj: &Projection,
    unified_size: usize,
) -> Result<TokenDistribution> {
    if dist.vocab_size() != proj.local_size() {
        return Err(Error::invalid(format!(
            "distribution has {} entries but projection {} expects {}",
            dist.vocab_size(),
            proj.model_id,
            proj.local_size()
        )));
    }
    if let Some(&max) = proj.local_to_unified.iter().max() {
        if max >= unified_size {
            return Err(Error::invalid(format!(
                "projection {} targets id {max} outside unified size {unified_size}",
                proj.model_id
            )));
        }
    }
    let mut out = vec![0.0; unified_size];
    for (&p, &u) in dist.probs.iter().zip(&proj.local_to_unified) {
        out[u] = p;
    }
    Ok(TokenDistribution { probs: out })
}
