//! Open-vocabulary semantic classifier head.
//!
//! Category embeddings come from a pluggable text-embedding provider through
//! a prompt template. Region features are scored against them with a
//! temperature-scaled cosine, turned into probabilities with a stabilized
//! softmax, and thresholded into pseudo-labels. The background score is
//! appended after the category scores.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotations::Vocabulary;
use crate::error::{Error, Result};
use crate::geometry::BoxAny;
use crate::rng;

/// Default temperature; optimized in log space during training.
pub const TAU_INIT: f64 = 0.07;

const NORM_EPS: f64 = 1e-12;

/// Unit-norm embedding for one category name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticEmbedding {
    pub name: String,
    pub vector: Vec<f64>,
}

/// Maps text to a d-dimensional vector, deterministically.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Deterministic synthetic provider: a seeded hash of the text selects a
/// pseudorandom Gaussian vector. Stands in for a frozen text encoder.
#[derive(Debug, Clone)]
pub struct HashProvider {
    pub dim: usize,
    pub seed: u64,
}

impl HashProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashProvider { dim, seed }
    }
}

impl EmbeddingProvider for HashProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut key = self.seed;
        for chunk in text.as_bytes().chunks(8) {
            let mut word = [0u8; 8];
            word[..chunk.len()].copy_from_slice(chunk);
            key = rng::mix(&[key, u64::from_le_bytes(word), chunk.len() as u64]);
        }
        let mut r = rng::stream(&[key, 0x7E57]);
        Ok((0..self.dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
    }
}

/// Provider backed by an embeddings file, keyed by the exact text.
#[derive(Debug, Clone)]
pub struct FileProvider {
    dim: usize,
    entries: Vec<SemanticEmbedding>,
}

impl FileProvider {
    pub fn from_embeddings(entries: Vec<SemanticEmbedding>) -> Result<Self> {
        let dim = entries
            .first()
            .map(|e| e.vector.len())
            .ok_or_else(|| Error::Classifier("empty embedding set".into()))?;
        Ok(FileProvider { dim, entries })
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.entries
            .iter()
            .find(|e| e.name == text)
            .map(|e| e.vector.clone())
            .ok_or_else(|| Error::Classifier(format!("no stored embedding for {text:?}")))
    }
}

/// The four prompt templates compared in the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PromptTemplate {
    /// "[category]"
    Name,
    /// "a [category]"
    Article,
    /// "a satellite photo of [category]"
    SatellitePhoto,
    /// "a photo of [category]"
    #[default]
    Photo,
}

impl PromptTemplate {
    pub fn fill(&self, category: &str) -> String {
        match self {
            PromptTemplate::Name => category.to_string(),
            PromptTemplate::Article => format!("a {category}"),
            PromptTemplate::SatellitePhoto => format!("a satellite photo of {category}"),
            PromptTemplate::Photo => format!("a photo of {category}"),
        }
    }
}

/// Background scoring mode for the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Background {
    /// Fixed all-zero embedding: the background score is exactly 0.
    Zero,
    /// Mean of the category embeddings, re-normalized.
    NormalizedMean,
    /// A trainable vector, optimized together with the student.
    Learnable(Vec<f64>),
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !n.is_finite() || n < NORM_EPS {
        return Err(Error::Classifier("cannot normalize a near-zero vector".into()));
    }
    // Bit-exact no-op on already-unit vectors, so stored embeddings survive
    // re-normalization unchanged.
    if (n - 1.0).abs() < 1e-12 {
        return Ok(v.to_vec());
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Build one unit embedding per category, in vocabulary order.
pub fn build_embeddings(
    provider: &dyn EmbeddingProvider,
    vocab: &Vocabulary,
    template: PromptTemplate,
) -> Result<Vec<SemanticEmbedding>> {
    vocab
        .names()
        .iter()
        .map(|name| {
            let raw = provider
                .embed(&template.fill(name))
                .map_err(|e| Error::Classifier(format!("provider failed for {name:?}: {e}")))?;
            Ok(SemanticEmbedding {
                name: name.clone(),
                vector: normalized(&raw)?,
            })
        })
        .collect()
}

/// Cosine classifier over category embeddings plus a background slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub embeddings: Vec<SemanticEmbedding>,
    pub log_tau: f64,
    pub background: Background,
}

impl ClassifierHead {
    pub fn new(embeddings: Vec<SemanticEmbedding>, tau: f64, background: Background) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::Classifier("head needs at least one category".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::Classifier(format!("temperature must be positive, got {tau}")));
        }
        let dim = embeddings[0].vector.len();
        for e in &embeddings {
            if e.vector.len() != dim {
                return Err(Error::Classifier(format!(
                    "embedding dim mismatch for {:?}: {} vs {}",
                    e.name,
                    e.vector.len(),
                    dim
                )));
            }
        }
        if let Background::Learnable(v) = &background {
            if v.len() != dim {
                return Err(Error::Classifier("background vector dim mismatch".into()));
            }
        }
        Ok(ClassifierHead {
            embeddings,
            log_tau: tau.ln(),
            background,
        })
    }

    pub fn build(
        provider: &dyn EmbeddingProvider,
        vocab: &Vocabulary,
        template: PromptTemplate,
        tau: f64,
        background: Background,
    ) -> Result<Self> {
        ClassifierHead::new(build_embeddings(provider, vocab, template)?, tau, background)
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].vector.len()
    }

    pub fn n_categories(&self) -> usize {
        self.embeddings.len()
    }

    /// Index of the background slot in score/probability vectors.
    pub fn background_index(&self) -> usize {
        self.embeddings.len()
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    /// Mean-of-embeddings background vector, re-normalized.
    pub fn normalized_mean_vector(&self) -> Result<Vec<f64>> {
        let dim = self.dim();
        let mut mean = vec![0.0; dim];
        for e in &self.embeddings {
            for (m, x) in mean.iter_mut().zip(&e.vector) {
                *m += x / self.embeddings.len() as f64;
            }
        }
        normalized(&mean)
    }

    /// Temperature-scaled cosine scores per category, background appended.
    ///
    /// Errors on a zero-norm region feature.
    pub fn similarity(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Classifier(format!(
                "feature dim {} does not match head dim {}",
                v.len(),
                self.dim()
            )));
        }
        let vn = norm(v);
        if !vn.is_finite() || vn < NORM_EPS {
            return Err(Error::Classifier("zero-norm region feature".into()));
        }
        let tau = self.tau();
        let mut scores = Vec::with_capacity(self.embeddings.len() + 1);
        for e in &self.embeddings {
            let dot: f64 = v.iter().zip(&e.vector).map(|(a, b)| a * b).sum();
            scores.push(dot / (tau * vn * norm(&e.vector)));
        }
        let bg = match &self.background {
            Background::Zero => 0.0,
            Background::NormalizedMean => {
                let m = self.normalized_mean_vector()?;
                let dot: f64 = v.iter().zip(&m).map(|(a, b)| a * b).sum();
                dot / (tau * vn)
            }
            Background::Learnable(b) => {
                let bn = norm(b);
                if bn < NORM_EPS {
                    0.0
                } else {
                    let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
                    dot / (tau * vn * bn)
                }
            }
        };
        scores.push(bg);
        Ok(scores)
    }
}

/// Numerically stabilized softmax.
pub fn predict_probs(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// A region that survived probability thresholding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoDetection {
    pub bbox: BoxAny,
    pub category_id: usize,
    pub score: f64,
}

/// Keep regions whose argmax probability is a category (not background) and
/// at least `p0`. The threshold is inclusive. Argmax ties resolve to the
/// lowest index, so a category beats the trailing background slot on a tie.
pub fn filter_pseudo_labels(
    candidates: &[(BoxAny, Vec<f64>)],
    background_index: usize,
    p0: f64,
) -> Vec<PseudoDetection> {
    let mut kept = Vec::new();
    for (bbox, probs) in candidates {
        let mut argmax = 0;
        for j in 1..probs.len() {
            if probs[j] > probs[argmax] {
                argmax = j;
            }
        }
        let pmax = probs[argmax];
        if argmax != background_index && pmax >= p0 {
            kept.push(PseudoDetection {
                bbox: *bbox,
                category_id: argmax,
                score: pmax,
            });
        }
    }
    kept
}

/// Write embeddings in the text exchange format: a `dim=<d>` header then one
/// `<name> <d floats>` line per category. Floats use the shortest
/// representation that round-trips bit-exactly.
pub fn write_embeddings(embeddings: &[SemanticEmbedding]) -> Result<String> {
    let dim = embeddings
        .first()
        .map(|e| e.vector.len())
        .ok_or_else(|| Error::Classifier("nothing to write".into()))?;
    let mut out = format!("dim={dim}\n");
    for e in embeddings {
        out.push_str(&e.name);
        for x in &e.vector {
            out.push(' ');
            out.push_str(&format!("{x}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parse the embeddings exchange format.
pub fn read_embeddings(text: &str) -> Result<Vec<SemanticEmbedding>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Classifier("empty embeddings file".into()))?;
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| Error::Classifier(format!("bad header {header:?}")))?;
    let mut out = Vec::new();
    for (idx, line) in lines {
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| Error::Classifier(format!("line {}: missing name", idx + 1)))?
            .to_string();
        let vector: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|e| Error::Classifier(format!("line {}: {e}", idx + 1)))
            })
            .collect::<Result<_>>()?;
        if vector.len() != dim {
            return Err(Error::Classifier(format!(
                "line {}: expected {dim} values, found {}",
                idx + 1,
                vector.len()
            )));
        }
        out.push(SemanticEmbedding { name, vector });
    }
    Ok(out)
}
