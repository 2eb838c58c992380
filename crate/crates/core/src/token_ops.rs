//! Array procedures around a vision transformer: CLS-attention token
//! selection, keep-rate token budgets, encoder cost comparison, MAE masks and
//! patch-target normalization, aspect-preserving resize geometry, and
//! progressive resolution schedules.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::corpus::Modality;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

// Products like 100 * 0.7 land a hair under the integer in binary; nudge
// before flooring so exact decimal products floor to themselves.
const FLOOR_SLACK: f64 = 1e-9;

fn check_keep_rate(keep_rate: f64) -> Result<()> {
    if keep_rate > 0.0 && keep_rate <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("keep rate {keep_rate} outside (0, 1]")))
    }
}

/// `max(1, floor(n * keep_rate))`.
pub fn kept_count(n: usize, keep_rate: f64) -> usize {
    ((n as f64 * keep_rate + FLOOR_SLACK).floor() as usize).max(1)
}

/// Indices of the `max(1, floor(n * keep_rate))` most attended patch tokens,
/// ascending. Equal weights prefer the lower index.
pub fn evit_select(cls_attention: &[f32], keep_rate: f64) -> Result<Vec<usize>> {
    check_keep_rate(keep_rate)?;
    if cls_attention.is_empty() {
        return Err(Error::invalid("empty attention vector"));
    }
    if let Some((index, &value)) = cls_attention
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::NegativeAttention { index, value });
    }
    let k = kept_count(cls_attention.len(), keep_rate);
    let mut idx: Vec<usize> = (0..cls_attention.len()).collect();
    let by_rank = |&a: &usize, &b: &usize| {
        cls_attention[b]
            .total_cmp(&cls_attention[a])
            .then(a.cmp(&b))
    };
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, by_rank);
        idx.truncate(k);
    }
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeepRatePlan {
    pub base_tokens: usize,
    pub keep_rate: f64,
    pub prune_layers: Vec<usize>,
    pub depth: usize,
}

impl KeepRatePlan {
    /// Three prune layers at `depth * {1/4, 1/2, 3/4}`, rounded down. Shallow
    /// stacks where these coincide get fewer prune layers.
    pub fn new(base_tokens: usize, keep_rate: f64, depth: usize) -> Result<Self> {
        let mut layers = vec![depth / 4, depth / 2, depth * 3 / 4];
        layers.dedup();
        Self::with_layers(base_tokens, keep_rate, depth, layers)
    }

    pub fn with_layers(base_tokens: usize, keep_rate: f64, depth: usize, prune_layers: Vec<usize>) -> Result<Self> {
        check_keep_rate(keep_rate)?;
        if base_tokens == 0 || depth == 0 {
            return Err(Error::invalid("base_tokens and depth must be positive"));
        }
        if prune_layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("prune layers must be strictly increasing"));
        }
        if prune_layers.last().is_some_and(|&l| l >= depth) {
            return Err(Error::invalid(format!("prune layer outside depth {depth}")));
        }
        Ok(KeepRatePlan {
            base_tokens,
            keep_rate,
            prune_layers,
            depth,
        })
    }
}

/// Patch tokens for a square input: `(resolution / patch)^2`.
pub fn patch_grid_tokens(resolution: usize, patch: usize) -> usize {
    let side = resolution / patch;
    side * side
}

/// Token count leaving each layer; prune layers apply
/// `count <- max(1, floor(count * keep_rate))`.
pub fn prune_token_counts(plan: &KeepRatePlan) -> Vec<usize> {
    let mut count = plan.base_tokens;
    let mut prunes = plan.prune_layers.iter().peekable();
    (0..plan.depth)
        .map(|layer| {
            if prunes.next_if_eq(&&layer).is_some() {
                count = kept_count(count, plan.keep_rate);
            }
            count
        })
        .collect()
}

/// Token counts after each prune, starting with the base count.
pub fn prune_stages(plan: &KeepRatePlan) -> Vec<usize> {
    let mut out = vec![plan.base_tokens];
    for _ in &plan.prune_layers {
        out.push(kept_count(*out.last().expect("nonempty"), plan.keep_rate));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub token_reduction_pct: f64,
    pub pixel_area_reduction_pct: f64,
    pub product_reduction_pct: f64,
    pub speedup: f64,
}

/// Compare a proposed encoder config `(res_a, tok_a)` against a baseline
/// `(res_b, tok_b)` by tokens, pixel area and their product.
pub fn cost_summary(res_a: u64, tok_a: u64, res_b: u64, tok_b: u64) -> Result<CostSummary> {
    if res_a == 0 || tok_a == 0 || res_b == 0 || tok_b == 0 {
        return Err(Error::invalid("cost inputs must be positive"));
    }
    let token_ratio = tok_a as f64 / tok_b as f64;
    let area_ratio = (res_a as f64 * res_a as f64) / (res_b as f64 * res_b as f64);
    let product_ratio = (tok_a as f64 * res_a as f64 * res_a as f64) / (tok_b as f64 * res_b as f64 * res_b as f64);
    Ok(CostSummary {
        token_reduction_pct: 100.0 * (1.0 - token_ratio),
        pixel_area_reduction_pct: 100.0 * (1.0 - area_ratio),
        product_reduction_pct: 100.0 * (1.0 - product_ratio),
        speedup: 1.0 / product_ratio,
    })
}

/// Masking ratio as an exact fraction: 3/4 for images, 9/10 for video.
pub fn mask_ratio(modality: Modality) -> (u64, u64) {
    match modality {
        Modality::Image => (3, 4),
        Modality::Video => (9, 10),
    }
}

/// `round(ratio * n)` with halves rounded up, in integer arithmetic.
pub fn masked_count(num_patches: usize, modality: Modality) -> usize {
    let (num, den) = mask_ratio(modality);
    ((2 * num * num_patches as u64 + den) / (2 * den)) as usize
}

/// Uniform random mask (true = hidden) with exactly `masked_count` entries.
pub fn mae_mask(num_patches: usize, modality: Modality, seed: u64) -> Result<Vec<bool>> {
    if num_patches == 0 {
        return Err(Error::invalid("num_patches must be positive"));
    }
    let k = masked_count(num_patches, modality);
    let mut rng = stream_rng(seed, 0);
    let mut mask = vec![false; num_patches];
    for i in sample(&mut rng, num_patches, k) {
        mask[i] = true;
    }
    Ok(mask)
}

pub const PATCH_NORM_EPS: f64 = 1e-6;

/// `(x - mean) / max(std, eps)` with the population standard deviation.
pub fn normalize_patch_targets(values: &[f32]) -> Vec<f32> {
    if values.is_empty() {
        return Vec::new();
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(PATCH_NORM_EPS);
    values.iter().map(|&v| ((v as f64 - mean) / std) as f32).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AspectFit {
    pub scale: f64,
    pub resized_w: u32,
    pub resized_h: u32,
    pub pad_left: u32,
    pub pad_top: u32,
    pub target: u32,
}

/// Scale the longer side to `target`, keep the aspect ratio, and center the
/// result on a black `target x target` canvas.
pub fn aspect_fit(w: u32, h: u32, target: u32) -> Result<AspectFit> {
    if w == 0 || h == 0 || target == 0 {
        return Err(Error::invalid("dimensions must be positive"));
    }
    let scale = target as f64 / w.max(h) as f64;
    let fit = |side: u32, is_long: bool| -> u32 {
        if is_long {
            target
        } else {
            ((side as f64 * scale).round() as u32).clamp(1, target)
        }
    };
    let resized_w = fit(w, w >= h);
    let resized_h = fit(h, h >= w);
    Ok(AspectFit {
        scale,
        resized_w,
        resized_h,
        pad_left: (target - resized_w) / 2,
        pad_top: (target - resized_h) / 2,
        target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub resolution: u32,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionSchedule {
    stages: Vec<Stage>,
    total_iters: u64,
    /// Exclusive end iteration of each stage.
    ends: Vec<u64>,
}

pub const DEFAULT_RESOLUTIONS: [u32; 5] = [98, 154, 224, 336, 448];

impl ResolutionSchedule {
    pub fn new(stages: Vec<Stage>, total_iters: u64) -> Result<Self> {
        if stages.is_empty() || total_iters == 0 {
            return Err(Error::invalid("schedule needs stages and a positive iteration count"));
        }
        if stages.windows(2).any(|w| w[0].resolution >= w[1].resolution) {
            return Err(Error::invalid("resolutions must be strictly increasing"));
        }
        if stages.iter().any(|s| s.fraction.is_nan() || s.fraction <= 0.0) {
            return Err(Error::invalid("stage fractions must be positive"));
        }
        let sum: f64 = stages.iter().map(|s| s.fraction).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("stage fractions sum to {sum}, not 1")));
        }
        let mut cum = 0.0;
        let mut ends: Vec<u64> = stages
            .iter()
            .map(|s| {
                cum += s.fraction;
                (cum * total_iters as f64).round() as u64
            })
            .collect();
        *ends.last_mut().expect("nonempty") = total_iters;
        Ok(ResolutionSchedule {
            stages,
            total_iters,
            ends,
        })
    }

    /// Equal-length stages over the given resolutions.
    pub fn equal(resolutions: &[u32], total_iters: u64) -> Result<Self> {
        let f = 1.0 / resolutions.len().max(1) as f64;
        let stages = resolutions
            .iter()
            .map(|&resolution| Stage { resolution, fraction: f })
            .collect();
        Self::new(stages, total_iters)
    }

    pub fn default_progressive(total_iters: u64) -> Result<Self> {
        Self::equal(&DEFAULT_RESOLUTIONS, total_iters)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn total_iters(&self) -> u64 {
        self.total_iters
    }

    /// `(resolution, start, end)` per stage, end exclusive.
    pub fn intervals(&self) -> Vec<(u32, u64, u64)> {
        let mut start = 0;
        self.stages
            .iter()
            .zip(&self.ends)
            .map(|(s, &end)| {
                let iv = (s.resolution, start, end);
                start = end;
                iv
            })
            .collect()
    }

    pub fn resolution_at(&self, iteration: u64) -> Result<u32> {
        if iteration >= self.total_iters {
            return Err(Error::IterationOutOfRange {
                iteration,
                total: self.total_iters,
            });
        }
        let i = self.ends.partition_point(|&end| end <= iteration);
        Ok(self.stages[i].resolution)
    }
}
