//! Per-document text statistics used by the filtration defenses.
//!
//! The central quantity is the frequency density of a document with respect
//! to a query/answer pair: the summed in-document frequencies of the word
//! types the document shares (semantically) with the pair, divided by the
//! document's unique-word count. Adversarial passages crafted to parrot a
//! target question and steer its answer concentrate exactly those words, so
//! their density sits well above that of ordinary prose. The companion
//! statistics — perplexity and joint log probability of a smaller model's
//! per-document answer, plus the raw shared-frequency sum — feed the
//! learned filter.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embed::{Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::models::GenerationResult;

/// Ordered list of lowercase word tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenList(Vec<String>);

impl TokenList {
    /// Builds a token list from pre-split words, rejecting empty tokens and
    /// tokens containing whitespace.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        for t in &tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!("invalid token \"{t}\"")));
            }
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Distinct word types, in lexical order.
    pub fn types(&self) -> BTreeSet<&str> {
        self.0.iter().map(String::as_str).collect()
    }

    /// Owned variant of [`types`](Self::types).
    pub fn types_owned(&self) -> BTreeSet<String> {
        self.0.iter().cloned().collect()
    }

    /// Occurrence count per word type.
    pub fn counts(&self) -> BTreeMap<&str, u64> {
        let mut counts = BTreeMap::new();
        for t in &self.0 {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

/// Lowercases, strips punctuation to separators, and splits on whitespace.
///
/// Every character that is not alphanumeric acts as a separator. No
/// stemming, no stopword removal: question words copied verbatim into an
/// adversarial text are part of the signal.
pub fn tokenize(text: &str) -> TokenList {
    let lowered = text.to_lowercase();
    let tokens: Vec<String> = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    TokenList(tokens)
}

/// Word-similarity settings for shared-word matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    /// Two word types count as shared when their embedding cosine exceeds
    /// this (strictly). Exact string equality always qualifies.
    pub threshold: f64,
    /// Identifier of the word embedder the threshold was calibrated for.
    pub word_embedder_id: String,
}

impl SimilarityConfig {
    pub fn new(threshold: f64, word_embedder_id: &str) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidConfig(format!(
                "similarity threshold {threshold} outside [0, 1]"
            )));
        }
        Ok(Self {
            threshold,
            word_embedder_id: word_embedder_id.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig(format!(
                "similarity threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Word types of `doc` that are semantically shared with `qa`.
///
/// A doc type `w` qualifies when it equals some `qa` type, or when the
/// cosine similarity of the word embeddings strictly exceeds
/// `cfg.threshold`. Cosine is clamped to [-1, 1], so a threshold of 1.0
/// admits exact matches only.
pub fn semantic_common_words(
    qa: &TokenList,
    doc: &TokenList,
    cfg: &SimilarityConfig,
    embedder: &dyn Embedder,
) -> Result<BTreeSet<String>> {
    cfg.validate()?;
    let qa_types = qa.types();
    let doc_types = doc.types();

    let mut qa_vectors: Vec<(&str, EmbeddingVector)> = Vec::new();
    let mut common = BTreeSet::new();

    for w in doc_types {
        if qa_types.contains(w) {
            common.insert(w.to_string());
            continue;
        }
        if cfg.threshold >= 1.0 {
            continue;
        }
        if qa_vectors.is_empty() && !qa_types.is_empty() {
            for u in &qa_types {
                qa_vectors.push((u, embedder.embed(u)?));
            }
        }
        let wv = embedder.embed(w)?;
        for (_, uv) in &qa_vectors {
            if uv.cosine(&wv) > cfg.threshold {
                common.insert(w.to_string());
                break;
            }
        }
    }
    Ok(common)
}

/// Shared-frequency sum and unique-word count for one (query, answer, doc)
/// triple, computed from a single tokenization pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DensityParts {
    pub shared_freq_sum: u64,
    pub unique_words: usize,
    pub common_words: BTreeSet<String>,
}

impl DensityParts {
    pub fn freq_density(&self) -> f64 {
        self.shared_freq_sum as f64 / self.unique_words as f64
    }
}

pub fn density_parts(
    query: &str,
    slm_answer: &str,
    doc_text: &str,
    cfg: &SimilarityConfig,
    embedder: &dyn Embedder,
) -> Result<DensityParts> {
    let doc = tokenize(doc_text);
    if doc.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let qa = tokenize(&format!("{query} {slm_answer}"));
    let common = semantic_common_words(&qa, &doc, cfg, embedder)?;
    let counts = doc.counts();
    let shared_freq_sum: u64 = common
        .iter()
        .map(|w| counts.get(w.as_str()).copied().unwrap_or(0))
        .sum();
    Ok(DensityParts {
        shared_freq_sum,
        unique_words: counts.len(),
        common_words: common,
    })
}

/// Frequency density of `doc` with respect to the query and the answer a
/// smaller model produced for it.
///
/// Numerator: total occurrences in `doc` of the word types shared with
/// query ⊕ answer. Denominator: the document's unique-word count. The
/// numerator counts tokens while the denominator counts types, so values
/// above 1.0 are legitimate and deliberately not clamped.
pub fn freq_density(
    query: &str,
    slm_answer: &str,
    doc_text: &str,
    cfg: &SimilarityConfig,
    embedder: &dyn Embedder,
) -> Result<f64> {
    Ok(density_parts(query, slm_answer, doc_text, cfg, embedder)?.freq_density())
}

/// exp of the mean negative token log-probability.
pub fn perplexity(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::EmptyLogprobs);
    }
    let mean = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok((-mean).exp())
}

/// Sum of token log-probabilities.
pub fn joint_logprob(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::EmptyLogprobs);
    }
    Ok(token_logprobs.iter().sum())
}

/// The four per-document statistics fed to the filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub freq_density: f64,
    pub perplexity: f64,
    pub joint_logprob: f64,
    pub shared_freq_sum: u64,
}

impl FeatureVector {
    /// Ordered feature names, matching [`as_array`](Self::as_array).
    pub const NAMES: [&'static str; 4] = [
        "freq_density",
        "perplexity",
        "joint_logprob",
        "shared_freq_sum",
    ];

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.freq_density,
            self.perplexity,
            self.joint_logprob,
            self.shared_freq_sum as f64,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.freq_density.is_finite()
            && self.perplexity.is_finite()
            && self.joint_logprob.is_finite();
        if !finite {
            return Err(Error::InvalidConfig(
                "feature vector has non-finite fields".into(),
            ));
        }
        if self.freq_density < 0.0 || self.perplexity <= 0.0 || self.joint_logprob > 0.0 {
            return Err(Error::InvalidConfig(
                "feature vector fields out of range".into(),
            ));
        }
        Ok(())
    }
}

/// Computes all four statistics for one retrieved document, consistently:
/// the density and the shared-frequency sum come from the same common-word
/// set, and perplexity/joint log probability from the same answer tokens.
pub fn feature_vector(
    query: &str,
    doc: &Document,
    slm_result: &GenerationResult,
    cfg: &SimilarityConfig,
    embedder: &dyn Embedder,
) -> Result<FeatureVector> {
    let logprobs = slm_result
        .token_logprobs()
        .ok_or(Error::LogprobsUnavailable)?;
    let parts = density_parts(query, &slm_result.text, &doc.text, cfg, embedder)?;
    let fv = FeatureVector {
        freq_density: parts.freq_density(),
        perplexity: perplexity(logprobs)?,
        joint_logprob: joint_logprob(logprobs)?,
        shared_freq_sum: parts.shared_freq_sum,
    };
    fv.validate()?;
    Ok(fv)
}
