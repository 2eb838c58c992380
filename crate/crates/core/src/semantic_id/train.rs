use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codebook::{Codebook, Scheme, SemanticId, DEFAULT_DEAD_FRACTION, DEFAULT_GAMMA};
use super::quantize::{codeword_norms, nearest, rq_encode_with_inputs};
use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub levels: usize,
    pub entries: usize,
    pub iters: usize,
    pub gamma: f64,
    pub dead_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(scheme: Scheme, levels: usize, entries: usize) -> Self {
        TrainConfig {
            scheme,
            levels,
            entries,
            iters: 20,
            gamma: DEFAULT_GAMMA,
            dead_fraction: DEFAULT_DEAD_FRACTION,
            seed: 0,
        }
    }
}

fn column_chunk(data: &EmbeddingMatrix, k: usize, width: usize) -> Result<EmbeddingMatrix> {
    let values = data
        .rows()
        .flat_map(|r| r[k * width..(k + 1) * width].iter().copied())
        .collect();
    EmbeddingMatrix::new(width, values, None)
}

fn to_matrix(dim: usize, rows: &[Vec<f64>]) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::new(dim, rows.iter().flatten().map(|&v| v as f32).collect(), None)
}

/// Codewords drawn from `entries` distinct seeded rows, per level (residual:
/// later levels draw from nonzero residuals of the levels before) or per
/// chunk (product). EMA state starts at N = 1, m = codeword.
pub fn init_codebook(data: &EmbeddingMatrix, cfg: &TrainConfig) -> Result<Codebook> {
    let (levels, entries) = (cfg.levels, cfg.entries);
    if levels == 0 || entries == 0 {
        return Err(Error::invalid("levels and entries must be positive"));
    }
    if data.count() < entries {
        return Err(Error::TooFewSamples {
            count: data.count(),
            needed: entries,
        });
    }
    let mut rng = stream_rng(cfg.seed, 0);
    let width = match cfg.scheme {
        Scheme::Residual => data.dim(),
        Scheme::Product => {
            if !data.dim().is_multiple_of(levels) {
                return Err(Error::IndivisibleDim {
                    dim: data.dim(),
                    chunks: levels,
                });
            }
            data.dim() / levels
        }
    };
    let mut cb = Codebook::zeros(cfg.scheme, levels, entries, width)?
        .with_gamma(cfg.gamma)?
        .with_dead_fraction(cfg.dead_fraction)?;

    match cfg.scheme {
        Scheme::Product => {
            for k in 0..levels {
                for (i, row) in sample(&mut rng, data.count(), entries).into_iter().enumerate() {
                    let chunk = &data.row(row)[k * width..(k + 1) * width];
                    cb.set_codeword(k, i, chunk);
                }
            }
        }
        Scheme::Residual => {
            for (i, row) in sample(&mut rng, data.count(), entries).into_iter().enumerate() {
                cb.set_codeword(0, i, data.row(row));
            }
            for k in 1..levels {
                let norms = codeword_norms(&cb);
                let residuals: Vec<Vec<f64>> = data
                    .values()
                    .par_chunks_exact(width)
                    .map(|x| rq_encode_with_inputs(x, &cb, &norms).1.swap_remove(k))
                    .collect();
                let mut pool: Vec<usize> = (0..residuals.len())
                    .filter(|&i| residuals[i].iter().any(|&v| v != 0.0))
                    .collect();
                if pool.len() < entries {
                    pool = (0..residuals.len()).collect();
                }
                for (i, j) in sample(&mut rng, pool.len(), entries).into_iter().enumerate() {
                    let v: Vec<f32> = residuals[pool[j]].iter().map(|&a| a as f32).collect();
                    cb.set_codeword(k, i, &v);
                }
            }
        }
    }
    Ok(cb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Codes assigned this step, under the codebook before the update.
    pub ids: Vec<SemanticId>,
    /// Mean squared reconstruction error of those assignments.
    pub mse: f64,
    pub reinitialized: usize,
}

/// Assign / EMA-update loop over a fixed data matrix.
#[derive(Debug)]
pub struct Trainer<'a> {
    cb: Codebook,
    data: &'a EmbeddingMatrix,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(cb: Codebook, data: &'a EmbeddingMatrix, seed: u64) -> Result<Self> {
        if data.dim() != cb.input_dim() {
            return Err(Error::DimMismatch {
                expected: cb.input_dim(),
                actual: data.dim(),
            });
        }
        Ok(Trainer {
            cb,
            data,
            rng: stream_rng(seed, 1),
        })
    }

    pub fn codebook(&self) -> &Codebook {
        &self.cb
    }

    pub fn into_codebook(self) -> Codebook {
        self.cb
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let data = self.data;
        let n = data.count();
        let (levels, width) = (self.cb.levels(), self.cb.dim());
        let mut ids = Vec::with_capacity(n);
        let mut sq_err = Vec::with_capacity(n);
        // per level: the vectors that level quantized, and their codes
        let mut batches: Vec<EmbeddingMatrix> = Vec::with_capacity(levels);
        let mut assignments: Vec<Vec<usize>> = vec![Vec::with_capacity(n); levels];

        match self.cb.scheme() {
            Scheme::Residual => {
                let norms = codeword_norms(&self.cb);
                let cb = &self.cb;
                let walked: Vec<_> = data
                    .values()
                    .par_chunks_exact(width)
                    .map(|x| rq_encode_with_inputs(x, cb, &norms))
                    .collect();
                let mut inputs: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n); levels];
                for (enc, level_inputs) in walked {
                    let last = *enc.residual_norms.last().expect("levels > 0");
                    sq_err.push(last * last);
                    for (k, v) in level_inputs.into_iter().enumerate() {
                        inputs[k].push(v);
                        assignments[k].push(enc.id.codes[k]);
                    }
                    ids.push(enc.id);
                }
                for level_inputs in &inputs {
                    batches.push(to_matrix(width, level_inputs)?);
                }
            }
            Scheme::Product => {
                let cb = &self.cb;
                let per_row: Vec<(Vec<usize>, f64)> = data
                    .values()
                    .par_chunks_exact(data.dim())
                    .map(|x| {
                        let mut err = 0.0;
                        let codes = x
                            .chunks_exact(width)
                            .enumerate()
                            .map(|(k, chunk)| {
                                let (i, d2) = nearest(chunk, cb.level_codewords(k), width);
                                err += d2;
                                i
                            })
                            .collect();
                        (codes, err)
                    })
                    .collect();
                for (codes, err) in per_row {
                    for (k, &c) in codes.iter().enumerate() {
                        assignments[k].push(c);
                    }
                    sq_err.push(err);
                    ids.push(SemanticId {
                        scheme: Scheme::Product,
                        codes,
                    });
                }
                for k in 0..levels {
                    batches.push(column_chunk(data, k, width)?);
                }
            }
        }

        let mut reinitialized = 0;
        for (k, (batch, assigned)) in batches.iter().zip(&assignments).enumerate() {
            reinitialized += self.cb.ema_update(k, batch, assigned, &mut self.rng)?;
        }
        let mse = if n == 0 {
            0.0
        } else {
            sq_err.iter().sum::<f64>() / n as f64
        };
        Ok(StepReport {
            ids,
            mse,
            reinitialized,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub codebook: Codebook,
    /// Mean squared reconstruction error at the assignment step of each iteration.
    pub mse_trace: Vec<f64>,
    pub reinitialized: usize,
}

pub fn train_codebooks(data: &EmbeddingMatrix, cfg: &TrainConfig) -> Result<TrainReport> {
    let cb = init_codebook(data, cfg)?;
    let mut trainer = Trainer::new(cb, data, cfg.seed)?;
    let mut mse_trace = Vec::with_capacity(cfg.iters);
    let mut reinitialized = 0;
    for _ in 0..cfg.iters {
        let step = trainer.step()?;
        mse_trace.push(step.mse);
        reinitialized += step.reinitialized;
    }
    Ok(TrainReport {
        codebook: trainer.into_codebook(),
        mse_trace,
        reinitialized,
    })
}
