use rayon::prelude::*;

use super::codebook::{Codebook, Scheme, SemanticId};
use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};

fn check_input(cb: &Codebook, x: &[f32]) -> Result<()> {
    if cb.scheme() == Scheme::Product && !x.len().is_multiple_of(cb.levels()) {
        return Err(Error::IndivisibleDim {
            dim: x.len(),
            chunks: cb.levels(),
        });
    }
    if x.len() != cb.input_dim() {
        return Err(Error::DimMismatch {
            expected: cb.input_dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt()
}

/// Per-level codeword norms, computed once per encode call.
fn level_norms(cb: &Codebook) -> Vec<Vec<f64>> {
    (0..cb.levels())
        .map(|l| cb.level_codewords(l).chunks_exact(cb.dim()).map(norm).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualEncoding {
    pub id: SemanticId,
    /// Residual norm after each level; the last entry is the reconstruction error.
    pub residual_norms: Vec<f64>,
}

fn best_cosine(r: &[f64], r_norm: f64, table: &[f32], norms: &[f64], dim: usize) -> usize {
    if r_norm == 0.0 {
        return 0;
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, (c, &cn)) in table.chunks_exact(dim).zip(norms).enumerate() {
        if cn == 0.0 {
            continue;
        }
        let dot: f64 = r.iter().zip(c).map(|(&a, &b)| a * b as f64).sum();
        let score = dot / (r_norm * cn);
        if score > best.1 {
            best = (i, score);
        }
    }
    best.0
}

/// Walks the levels, returning the id, per-level residual norms and (when
/// `keep` is set) the residual fed into each level.
fn rq_walk(cb: &Codebook, norms: &[Vec<f64>], x: &[f32], keep: bool) -> (ResidualEncoding, Vec<Vec<f64>>) {
    let mut r: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let mut codes = Vec::with_capacity(cb.levels());
    let mut residual_norms = Vec::with_capacity(cb.levels());
    let mut inputs = Vec::new();
    let mut r_norm = r.iter().map(|a| a * a).sum::<f64>().sqrt();
    for (level, level_norms) in norms.iter().enumerate().take(cb.levels()) {
        if keep {
            inputs.push(r.clone());
        }
        let idx = best_cosine(&r, r_norm, cb.level_codewords(level), level_norms, cb.dim());
        for (a, &c) in r.iter_mut().zip(cb.codeword(level, idx)) {
            *a -= c as f64;
        }
        r_norm = r.iter().map(|a| a * a).sum::<f64>().sqrt();
        codes.push(idx);
        residual_norms.push(r_norm);
    }
    let enc = ResidualEncoding {
        id: SemanticId {
            scheme: Scheme::Residual,
            codes,
        },
        residual_norms,
    };
    (enc, inputs)
}

/// K-level residual quantization: each level picks the codeword with the
/// highest cosine similarity to the current residual and subtracts it.
/// A zero residual takes index 0; zero codewords never win against a
/// nonzero one.
pub fn rq_encode(x: &[f32], cb: &Codebook) -> Result<ResidualEncoding> {
    if cb.scheme() != Scheme::Residual {
        return Err(Error::invalid("rq_encode needs a residual codebook"));
    }
    check_input(cb, x)?;
    Ok(rq_walk(cb, &level_norms(cb), x, false).0)
}

pub(crate) fn rq_encode_with_inputs(
    x: &[f32],
    cb: &Codebook,
    norms: &[Vec<f64>],
) -> (ResidualEncoding, Vec<Vec<f64>>) {
    rq_walk(cb, norms, x, true)
}

pub(crate) fn codeword_norms(cb: &Codebook) -> Vec<Vec<f64>> {
    level_norms(cb)
}

/// Sum of the selected codewords.
pub fn rq_decode(id: &SemanticId, cb: &Codebook) -> Result<Vec<f32>> {
    if cb.scheme() != Scheme::Residual {
        return Err(Error::invalid("rq_decode needs a residual codebook"));
    }
    cb.check_id(id)?;
    let mut out = vec![0.0f64; cb.dim()];
    for (level, &idx) in id.codes.iter().enumerate() {
        for (a, &c) in out.iter_mut().zip(cb.codeword(level, idx)) {
            *a += c as f64;
        }
    }
    Ok(out.into_iter().map(|v| v as f32).collect())
}

pub(crate) fn nearest(chunk: &[f32], table: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in table.chunks_exact(dim).enumerate() {
        let d2: f64 = chunk
            .iter()
            .zip(c)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

/// Product quantization: chunk k goes to its nearest codeword in table k by
/// Euclidean distance, ties to the lower index.
pub fn pq_encode(x: &[f32], cb: &Codebook) -> Result<SemanticId> {
    if cb.scheme() != Scheme::Product {
        return Err(Error::invalid("pq_encode needs a product codebook"));
    }
    check_input(cb, x)?;
    let codes = x
        .chunks_exact(cb.dim())
        .enumerate()
        .map(|(level, chunk)| nearest(chunk, cb.level_codewords(level), cb.dim()).0)
        .collect();
    Ok(SemanticId {
        scheme: Scheme::Product,
        codes,
    })
}

/// Concatenation of the selected codewords.
pub fn pq_decode(id: &SemanticId, cb: &Codebook) -> Result<Vec<f32>> {
    if cb.scheme() != Scheme::Product {
        return Err(Error::invalid("pq_decode needs a product codebook"));
    }
    cb.check_id(id)?;
    Ok(id
        .codes
        .iter()
        .enumerate()
        .flat_map(|(level, &idx)| cb.codeword(level, idx).iter().copied())
        .collect())
}

pub fn encode(x: &[f32], cb: &Codebook) -> Result<SemanticId> {
    match cb.scheme() {
        Scheme::Residual => rq_encode(x, cb).map(|e| e.id),
        Scheme::Product => pq_encode(x, cb),
    }
}

pub fn decode(id: &SemanticId, cb: &Codebook) -> Result<Vec<f32>> {
    match cb.scheme() {
        Scheme::Residual => rq_decode(id, cb),
        Scheme::Product => pq_decode(id, cb),
    }
}

/// Encode every row, in parallel; output order follows the rows.
pub fn encode_batch(data: &EmbeddingMatrix, cb: &Codebook) -> Result<Vec<SemanticId>> {
    if data.dim() != cb.input_dim() {
        return Err(Error::DimMismatch {
            expected: cb.input_dim(),
            actual: data.dim(),
        });
    }
    match cb.scheme() {
        Scheme::Residual => {
            let norms = level_norms(cb);
            Ok(data
                .values()
                .par_chunks_exact(data.dim())
                .map(|x| rq_walk(cb, &norms, x, false).0.id)
                .collect())
        }
        Scheme::Product => data
            .values()
            .par_chunks_exact(data.dim())
            .map(|x| pq_encode(x, cb))
            .collect(),
    }
}

/// Mean squared reconstruction error `mean ||x - decode(encode(x))||^2`.
pub fn reconstruction_mse(data: &EmbeddingMatrix, cb: &Codebook) -> Result<f64> {
    let ids = encode_batch(data, cb)?;
    if ids.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = ids
        .par_iter()
        .zip(data.values().par_chunks_exact(data.dim()))
        .map(|(id, x)| {
            let xh = decode(id, cb).expect("codes from encode are in range");
            x.iter().zip(&xh).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / ids.len() as f64)
}
