//! Mapping free-form step text onto the admissible vocabulary by cosine similarity.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{ActionId, AdmissibleActionSet};
use crate::num::Score;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundingError {
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("cannot ground against an empty vocabulary")]
    EmptyIndex,
    #[error("embedding for {text:?} has zero or non-finite norm")]
    Degenerate { text: String },
    #[error("embedding dimension {got} differs from {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("no embedding available for {0:?}")]
    Missing(String),
    #[error("embedding transport error: {0}")]
    Transport(String),
    #[error("embedding cache error: {0}")]
    Cache(String),
}

/// Lowercase, trim, collapse whitespace, drop a leading list number and trailing punctuation.
pub fn normalize_text(text: &str) -> String {
    let collapsed = text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ");
    let mut s = collapsed.as_str();
    if let Some((head, rest)) = s.split_once(' ') {
        let digits = head.trim_end_matches(['.', ')']);
        if head.len() > digits.len() && !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
            s = rest;
        }
    }
    s.trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .trim_start_matches(|c: char| c == '-' || c == '*' || c == '"' || c == '\'' || c.is_whitespace())
        .to_string()
}

/// Source of text embeddings. Must return the same vector for the same text within a run.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GroundingError>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<P> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GroundingError> {
        (**self).embed(texts)
    }
}

/// Deterministic bag-of-words embedder for offline runs and tests.
///
/// Every word and adjacent word pair hashes to a fixed Gaussian direction; a text embeds to the
/// sum of its features, so texts sharing words land close together.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn feature(&self, key: &str, weight: f64, acc: &mut [f64]) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(key.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        for v in acc.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += weight * z;
        }
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let words = text.split_whitespace().collect::<Vec<_>>();
        for w in &words {
            self.feature(w, 1.0, &mut acc);
        }
        for pair in words.windows(2) {
            self.feature(&format!("{} {}", pair[0], pair[1]), 0.5, &mut acc);
        }
        acc
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(64, 0)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GroundingError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// One line of the embedding cache file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CachedVector {
    pub text: String,
    pub vector: Vec<f64>,
}

/// Embeddings keyed by normalized text, optionally backed by another provider.
///
/// Misses go to the backing provider and are appended to the cache file when one is set.
pub struct EmbeddingCache {
    vectors: RwLock<HashMap<String, Vec<f64>>>,
    backing: Option<Box<dyn EmbeddingProvider>>,
    path: Option<PathBuf>,
    write_lock: Mutex<()>,
}

impl EmbeddingCache {
    pub fn in_memory(entries: impl IntoIterator<Item = CachedVector>) -> Self {
        Self {
            vectors: RwLock::new(entries.into_iter().map(|e| (normalize_text(&e.text), e.vector)).collect()),
            backing: None,
            path: None,
            write_lock: Mutex::new(()),
        }
    }

    /// Opens (or starts) a cache file.
    pub fn open(path: &Path, backing: Option<Box<dyn EmbeddingProvider>>) -> Result<Self, GroundingError> {
        let mut entries = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| GroundingError::Cache(e.to_string()))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                entries.push(
                    serde_json::from_str::<CachedVector>(line)
                        .map_err(|e| GroundingError::Cache(format!("{}:{}: {e}", path.display(), i + 1)))?,
                );
            }
        }
        let mut cache = Self::in_memory(entries);
        cache.backing = backing;
        cache.path = Some(path.to_path_buf());
        Ok(cache)
    }

    /// Sets the provider consulted on misses.
    pub fn set_backing(&mut self, backing: Box<dyn EmbeddingProvider>) {
        self.backing = Some(backing);
    }

    pub fn len(&self) -> usize {
        self.vectors.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl EmbeddingProvider for EmbeddingCache {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GroundingError> {
        let keys = texts.iter().map(|t| normalize_text(t)).collect::<Vec<_>>();
        let missing = {
            let map = self.vectors.read().expect("cache lock");
            let mut m = keys.iter().filter(|k| !map.contains_key(*k)).cloned().collect::<Vec<_>>();
            m.sort();
            m.dedup();
            m
        };
        if !missing.is_empty() {
            let backing = self.backing.as_ref().ok_or_else(|| GroundingError::Missing(missing[0].clone()))?;
            let fresh = backing.embed(&missing)?;
            if fresh.len() != missing.len() {
                return Err(GroundingError::Transport(format!("asked for {} vectors, got {}", missing.len(), fresh.len())));
            }
            let _guard = self.write_lock.lock().expect("cache write lock");
            if let Some(path) = &self.path {
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| GroundingError::Cache(e.to_string()))?;
                for (text, vector) in missing.iter().zip(&fresh) {
                    let line = serde_json::to_string(&CachedVector { text: text.clone(), vector: vector.clone() })
                        .expect("vector serializes");
                    writeln!(f, "{line}").map_err(|e| GroundingError::Cache(e.to_string()))?;
                }
            }
            let mut map = self.vectors.write().expect("cache lock");
            for (text, vector) in missing.into_iter().zip(fresh) {
                map.insert(text, vector);
            }
        }
        let map = self.vectors.read().expect("cache lock");
        Ok(keys.iter().map(|k| map[k].clone()).collect())
    }
}

/// Client for an embedding service taking `{texts}` and returning `{vectors}`.
pub struct HttpEmbeddings {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl HttpEmbeddings {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self { agent, url: url.into(), api_key }
    }
}

impl EmbeddingProvider for HttpEmbeddings {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GroundingError> {
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(EmbedRequest { texts }).map_err(|e| GroundingError::Transport(e.to_string()))?;
        let body: EmbedResponse = resp.body_mut().read_json().map_err(|e| GroundingError::Transport(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(GroundingError::Transport(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                body.vectors.len()
            )));
        }
        Ok(body.vectors)
    }
}

fn unit<S: Score>(text: &str, v: &[f64]) -> Result<Vec<S>, GroundingError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(GroundingError::Degenerate { text: text.to_string() });
    }
    Ok(v.iter().map(|x| S::of(x / norm)).collect())
}

/// Unit-normalized embeddings of every admissible action, in vocabulary order.
#[derive(Clone, Debug, PartialEq)]
pub struct VocabularyIndex<S> {
    ids: Vec<ActionId>,
    vectors: Vec<Vec<S>>,
    dim: usize,
}

impl<S: Score> VocabularyIndex<S> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[ActionId] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<S>] {
        &self.vectors
    }
}

/// Embeds and normalizes every action description.
pub fn build_index<S: Score>(
    vocab: &AdmissibleActionSet,
    provider: &dyn EmbeddingProvider,
) -> Result<VocabularyIndex<S>, GroundingError> {
    let texts = vocab.iter().map(|(_, d)| normalize_text(d)).collect::<Vec<_>>();
    let raw = provider.embed(&texts)?;
    if raw.len() != texts.len() {
        return Err(GroundingError::Transport(format!("asked for {} vectors, got {}", texts.len(), raw.len())));
    }
    let dim = raw.first().map_or(0, Vec::len);
    let mut vectors = Vec::with_capacity(raw.len());
    for (text, v) in texts.iter().zip(&raw) {
        if v.len() != dim {
            return Err(GroundingError::Dimension { expected: dim, got: v.len() });
        }
        vectors.push(unit(text, v)?);
    }
    Ok(VocabularyIndex { ids: vocab.ids().collect(), vectors, dim })
}

/// Exhaustive cosine argmax of a unit query vector; ties go to the lowest id.
pub fn nearest<S: Score>(query: &[S], index: &VocabularyIndex<S>) -> Result<(ActionId, S), GroundingError> {
    if index.is_empty() {
        return Err(GroundingError::EmptyIndex);
    }
    if query.len() != index.dim {
        return Err(GroundingError::Dimension { expected: index.dim, got: query.len() });
    }
    let mut best: Option<(ActionId, S)> = None;
    for (id, v) in index.ids.iter().zip(&index.vectors) {
        let cos = v.iter().zip(query).map(|(a, b)| *a * *b).sum::<S>();
        let better = match best {
            None => true,
            Some((bid, bs)) => cos > bs || (cos == bs && *id < bid),
        };
        if better {
            best = Some((*id, cos));
        }
    }
    let (id, cos) = best.expect("index is non-empty");
    Ok((id, cos.max(-S::one()).min(S::one())))
}

/// Grounds free-form text against one vocabulary.
pub struct Grounder<S> {
    provider: Arc<dyn EmbeddingProvider>,
    actions: AdmissibleActionSet,
    index: VocabularyIndex<S>,
}

impl<S: Score> Grounder<S> {
    pub fn new(vocab: &AdmissibleActionSet, provider: Arc<dyn EmbeddingProvider>) -> Result<Self, GroundingError> {
        let index = build_index(vocab, provider.as_ref())?;
        Ok(Self { provider, actions: vocab.clone(), index })
    }

    pub fn actions(&self) -> &AdmissibleActionSet {
        &self.actions
    }

    pub fn index(&self) -> &VocabularyIndex<S> {
        &self.index
    }

    /// Returns the most similar admissible action and the cosine similarity (the mapping score).
    pub fn ground(&self, text: &str) -> Result<(ActionId, S), GroundingError> {
        let normalized = normalize_text(text);
        if normalized.is_empty() {
            return Err(GroundingError::EmptyText);
        }
        if self.index.is_empty() {
            return Err(GroundingError::EmptyIndex);
        }
        let raw = self.provider.embed(std::slice::from_ref(&normalized))?;
        let v = raw.into_iter().next().ok_or_else(|| GroundingError::Missing(normalized.clone()))?;
        nearest(&unit::<S>(&normalized, &v)?, &self.index)
    }
}
