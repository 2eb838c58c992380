//! Similarity-threshold filtering of image–text pairs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{CuratedPair, EmbeddingMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl FilterConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&threshold) {
            return Err(Error::invalid(format!("threshold {threshold} outside [-1, 1]")));
        }
        Ok(FilterConfig { threshold })
    }

    /// Boundary inclusive.
    pub fn keeps(&self, similarity: f64) -> bool {
        similarity >= self.threshold
    }
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Embedding lookup for pairs: media rows keyed by media id, text rows keyed
/// by the supervision text itself.
#[derive(Debug)]
pub struct PairEmbeddings<'a> {
    media: &'a EmbeddingMatrix,
    text: &'a EmbeddingMatrix,
    media_index: HashMap<&'a str, usize>,
    text_index: HashMap<&'a str, usize>,
}

fn index_of(m: &EmbeddingMatrix) -> Result<HashMap<&str, usize>> {
    let ids = m
        .ids()
        .ok_or_else(|| Error::invalid("embedding file has no ids"))?;
    Ok(ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect())
}

impl<'a> PairEmbeddings<'a> {
    pub fn new(media: &'a EmbeddingMatrix, text: &'a EmbeddingMatrix) -> Result<Self> {
        if media.dim() != text.dim() {
            return Err(Error::DimMismatch {
                expected: media.dim(),
                actual: text.dim(),
            });
        }
        Ok(PairEmbeddings {
            media,
            text,
            media_index: index_of(media)?,
            text_index: index_of(text)?,
        })
    }

    pub fn similarity(&self, pair: &CuratedPair) -> Result<f64> {
        let mi = *self
            .media_index
            .get(pair.media_id.as_str())
            .ok_or_else(|| Error::MissingEmbedding(pair.media_id.clone()))?;
        let ti = *self
            .text_index
            .get(pair.text.as_str())
            .ok_or_else(|| Error::MissingEmbedding(pair.text.clone()))?;
        cosine_similarity(self.media.row(mi), self.text.row(ti))
    }
}

/// Stored similarity, else computed from embeddings.
pub fn resolve_similarity(pair: &CuratedPair, embeddings: Option<&PairEmbeddings<'_>>) -> Result<f64> {
    match (pair.similarity, embeddings) {
        (Some(s), _) => Ok(s),
        (None, Some(e)) => e.similarity(pair),
        (None, None) => Err(Error::MissingSimilarity(pair.media_id.clone())),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub kept: usize,
    pub dropped: usize,
    pub threshold: f64,
}

impl FilterSummary {
    pub fn new(threshold: f64) -> Self {
        FilterSummary {
            kept: 0,
            dropped: 0,
            threshold,
        }
    }

    pub fn record(&mut self, kept: bool) {
        if kept {
            self.kept += 1;
        } else {
            self.dropped += 1;
        }
    }

    /// Counters add; the threshold must match.
    pub fn merge(&mut self, other: &FilterSummary) {
        debug_assert_eq!(self.threshold, other.threshold);
        self.kept += other.kept;
        self.dropped += other.dropped;
    }
}

/// Decide one pair; a kept pair comes back annotated with its similarity.
pub fn filter_one(
    mut pair: CuratedPair,
    embeddings: Option<&PairEmbeddings<'_>>,
    cfg: &FilterConfig,
) -> Result<Option<CuratedPair>> {
    let s = resolve_similarity(&pair, embeddings)?;
    if cfg.keeps(s) {
        pair.similarity = Some(s);
        Ok(Some(pair))
    } else {
        Ok(None)
    }
}

/// Order-preserving filter over a pair stream.
pub fn filter_pairs<I>(
    pairs: I,
    embeddings: Option<&PairEmbeddings<'_>>,
    cfg: &FilterConfig,
) -> Result<(Vec<CuratedPair>, FilterSummary)>
where
    I: IntoIterator<Item = CuratedPair>,
{
    let mut summary = FilterSummary::new(cfg.threshold);
    let mut kept = Vec::new();
    for p in pairs {
        let decided = filter_one(p, embeddings, cfg)?;
        summary.record(decided.is_some());
        kept.extend(decided);
    }
    Ok((kept, summary))
}
