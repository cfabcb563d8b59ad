use std::collections::{BTreeMap, HashMap, HashSet};

use super::tokenize::tokenize;
use super::TopicError;

pub const DEFAULT_MAX_FEATURES: usize = 5000;

/// Fitted TF-IDF vocabulary: tokens ordered by descending document
/// frequency (ties lexicographic) with smoothed idf weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    idf: Vec<f64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from stored parts (used by the model file).
    pub fn from_parts(tokens: Vec<String>, idf: Vec<f64>) -> Result<Self, String> {
        if tokens.len() != idf.len() {
            return Err(format!("{} tokens but {} idf weights", tokens.len(), idf.len()));
        }
        if let Some(w) = idf.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(format!("idf weight {w} is not positive"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(format!("duplicate token '{t}'"));
            }
        }
        Ok(Self { tokens, idf, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn idf_weights(&self) -> &[f64] {
        &self.idf
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.index.get(token).map(|&i| self.idf[i])
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn transform(&self, text: &str) -> SparseVector {
        self.transform_tokens(&tokenize(text))
    }

    /// count × idf per in-vocabulary token, then L2-normalized. Text with
    /// no known token maps to the zero vector.
    pub fn transform_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> SparseVector {
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for t in tokens {
            if let Some(&i) = self.index.get(t.as_ref()) {
                *counts.entry(i).or_default() += 1;
            }
        }
        let mut indices = Vec::with_capacity(counts.len());
        let mut values = Vec::with_capacity(counts.len());
        for (i, c) in counts {
            indices.push(i as u32);
            values.push(f64::from(c) * self.idf[i]);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        SparseVector {
            indices,
            values,
            dim: self.tokens.len(),
        }
    }
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
    dim: usize,
}

impl SparseVector {
    pub fn new(dim: usize, entries: Vec<(u32, f64)>) -> Result<Self, TopicError> {
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            if (i as usize) >= dim || indices.last().is_some_and(|&last| last >= i) {
                return Err(TopicError::FeatureIndex {
                    index: i as usize,
                    size: dim,
                });
            }
            indices.push(i);
            values.push(v);
        }
        Ok(Self { indices, values, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Keeps the `max_features` tokens with the highest document frequency
/// (ties in lexicographic order); idf(t) = ln((1 + N) / (1 + df(t))) + 1.
pub fn fit_tfidf<S: AsRef<str>>(
    corpus: &[Vec<S>],
    max_features: usize,
) -> Result<Vocabulary, TopicError> {
    if corpus.is_empty() {
        return Err(TopicError::EmptyCorpus);
    }
    if max_features == 0 {
        return Err(TopicError::Config("max_features must be positive".into()));
    }
    let mut df: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        let unique: HashSet<&str> = doc.iter().map(AsRef::as_ref).collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = df.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_features);
    let n = corpus.len() as f64;
    let (tokens, idf): (Vec<String>, Vec<f64>) = ranked
        .into_iter()
        .map(|(t, d)| (t.to_owned(), ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
        .unzip();
    Vocabulary::from_parts(tokens, idf).map_err(TopicError::Config)
}
