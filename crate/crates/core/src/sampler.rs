//! Multi-modal batch scheduling.
//!
//! Every batch holds one modality. Three schedules are modeled:
//!
//! - `AlternateThenImageOnly`: I, V, I, V, ... and image-only once the
//!   videos run out; the epoch ends when the images run out.
//! - `AlternateVideoRepeats`: strict alternation, the video stream wraps
//!   around until the images run out.
//! - `Probabilistic`: each step draws image with probability
//!   `(N_I/B_I) / (N_I/B_I + N_V/B_V)`; a draw that lands on an exhausted
//!   modality falls through to the other one. The epoch ends when both are
//!   exhausted, after exactly `ceil(N_I/B_I) + ceil(N_V/B_V)` steps.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Modality;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    AlternateThenImageOnly,
    AlternateVideoRepeats,
    Probabilistic,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::AlternateThenImageOnly,
        Strategy::AlternateVideoRepeats,
        Strategy::Probabilistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::AlternateThenImageOnly => "alternate_then_image_only",
            Strategy::AlternateVideoRepeats => "alternate_video_repeats",
            Strategy::Probabilistic => "probabilistic",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_image: u64,
    pub n_video: u64,
    pub b_image: u64,
    pub b_video: u64,
    pub strategy: Strategy,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_image", self.n_image),
            ("n_video", self.n_video),
            ("b_image", self.b_image),
            ("b_video", self.b_video),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// `ceil(N_I / B_I)`; a trailing partial batch counts.
    pub fn image_batches(&self) -> u64 {
        self.n_image.div_ceil(self.b_image)
    }

    pub fn video_batches(&self) -> u64 {
        self.n_video.div_ceil(self.b_video)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingProbs {
    pub p_image: f64,
    pub p_video: f64,
    /// `p_image : p_video` in lowest terms.
    pub ratio: (u128, u128),
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `P_I : P_V = N_I/B_I : N_V/B_V`, evaluated as the integer ratio
/// `N_I*B_V : N_V*B_I` before the single final division.
pub fn compute_probs(cfg: &SamplerConfig) -> Result<SamplingProbs> {
    cfg.validate()?;
    let img = cfg.n_image as u128 * cfg.b_video as u128;
    let vid = cfg.n_video as u128 * cfg.b_image as u128;
    let g = gcd(img, vid);
    let (img, vid) = (img / g, vid / g);
    let p_image = img as f64 / (img + vid) as f64;
    Ok(SamplingProbs {
        p_image,
        p_video: vid as f64 / (img + vid) as f64,
        ratio: (img, vid),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub modality: Modality,
    /// Batch index within its modality's stream (wraps for repeated video).
    pub index: u64,
    pub repeat: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Draw {
    Batch(Batch),
    EpochComplete,
}

#[derive(Debug, Clone)]
pub struct BatchSampler {
    cfg: SamplerConfig,
    p_image: f64,
    image_total: u64,
    video_total: u64,
    image_done: u64,
    video_done: u64,
    video_cursor: u64,
    image_turn: bool,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(cfg: SamplerConfig) -> Result<Self> {
        let probs = compute_probs(&cfg)?;
        Ok(BatchSampler {
            cfg,
            p_image: probs.p_image,
            image_total: cfg.image_batches(),
            video_total: cfg.video_batches(),
            image_done: 0,
            video_done: 0,
            video_cursor: 0,
            image_turn: true,
            rng: stream_rng(cfg.seed, 0),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    fn images_left(&self) -> bool {
        self.image_done < self.image_total
    }

    fn videos_left(&self) -> bool {
        self.video_done < self.video_total
    }

    fn emit_image(&mut self) -> Draw {
        let b = Batch {
            modality: Modality::Image,
            index: self.image_done,
            repeat: false,
        };
        self.image_done += 1;
        Draw::Batch(b)
    }

    fn emit_video(&mut self) -> Draw {
        let b = Batch {
            modality: Modality::Video,
            index: self.video_cursor % self.video_total,
            repeat: self.video_cursor >= self.video_total,
        };
        self.video_cursor += 1;
        self.video_done = self.video_done.max(self.video_cursor.min(self.video_total));
        Draw::Batch(b)
    }

    pub fn next_batch(&mut self) -> Draw {
        match self.cfg.strategy {
            Strategy::Probabilistic => {
                if !self.images_left() && !self.videos_left() {
                    return Draw::EpochComplete;
                }
                let want_image = self.rng.random::<f64>() < self.p_image;
                if (want_image && self.images_left()) || !self.videos_left() {
                    self.emit_image()
                } else {
                    self.emit_video()
                }
            }
            Strategy::AlternateThenImageOnly => {
                // the video slot after the last image batch is still served
                if !self.image_turn && self.videos_left() {
                    self.image_turn = true;
                    self.emit_video()
                } else if self.images_left() {
                    self.image_turn = false;
                    self.emit_image()
                } else {
                    Draw::EpochComplete
                }
            }
            Strategy::AlternateVideoRepeats => {
                if self.image_turn {
                    if !self.images_left() {
                        return Draw::EpochComplete;
                    }
                    self.image_turn = false;
                    self.emit_image()
                } else {
                    self.image_turn = true;
                    self.emit_video()
                }
            }
        }
    }
}

impl Iterator for BatchSampler {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        match self.next_batch() {
            Draw::Batch(b) => Some(b),
            Draw::EpochComplete => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerModality {
    pub image: u64,
    pub video: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub modality: Modality,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureStats {
    pub strategy: Strategy,
    pub total_batches: u64,
    pub image_batches: u64,
    pub video_batches: u64,
    pub repeated_video_batches: u64,
    pub max_consecutive_run: PerModality,
    /// Step (1-based) at which each modality's last fresh batch was
    /// emitted; `total_batches` if it never ran out within the epoch.
    pub exhausted_at: PerModality,
    pub exhaustion_gap: f64,
    pub terminal_run: Option<Run>,
    pub p_image_target: f64,
    pub p_image_realized: f64,
}

pub fn simulate_epoch(cfg: &SamplerConfig) -> Result<ExposureStats> {
    let mut sampler = BatchSampler::new(*cfg)?;
    let (image_total, video_total) = (sampler.image_total, sampler.video_total);
    let mut counts = PerModality::default();
    let mut max_run = PerModality::default();
    let mut exhausted: (Option<u64>, Option<u64>) = (None, None);
    let mut repeats = 0u64;
    let mut run: Option<Run> = None;
    let mut step = 0u64;

    for b in sampler.by_ref() {
        step += 1;
        match b.modality {
            Modality::Image => {
                counts.image += 1;
                if counts.image == image_total {
                    exhausted.0 = Some(step);
                }
            }
            Modality::Video => {
                counts.video += 1;
                if b.repeat {
                    repeats += 1;
                } else if b.index + 1 == video_total {
                    exhausted.1 = Some(step);
                }
            }
        }
        run = match run {
            Some(r) if r.modality == b.modality => Some(Run {
                length: r.length + 1,
                ..r
            }),
            _ => Some(Run {
                modality: b.modality,
                length: 1,
            }),
        };
        let r = run.expect("set above");
        let slot = match r.modality {
            Modality::Image => &mut max_run.image,
            Modality::Video => &mut max_run.video,
        };
        *slot = (*slot).max(r.length);
    }

    let total = step;
    let exhausted_at = PerModality {
        image: exhausted.0.unwrap_or(total),
        video: exhausted.1.unwrap_or(total),
    };
    let gap = if total == 0 {
        0.0
    } else {
        exhausted_at.image.abs_diff(exhausted_at.video) as f64 / total as f64
    };
    Ok(ExposureStats {
        strategy: cfg.strategy,
        total_batches: total,
        image_batches: counts.image,
        video_batches: counts.video,
        repeated_video_batches: repeats,
        max_consecutive_run: max_run,
        exhausted_at,
        exhaustion_gap: gap,
        terminal_run: run,
        p_image_target: sampler.p_image,
        p_image_realized: if total == 0 { 0.0 } else { counts.image as f64 / total as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn cfg(ni: u64, nv: u64, strategy: Strategy) -> SamplerConfig {
        SamplerConfig {
            n_image: ni,
            n_video: nv,
            b_image: 1,
            b_video: 1,
            strategy,
            seed: 7,
        }
    }

    fn letters(c: SamplerConfig) -> String {
        BatchSampler::new(c)
            .unwrap()
            .map(|b| match b.modality {
                Modality::Image => 'I',
                Modality::Video => 'V',
            })
            .collect()
    }

    #[test]
    fn five_to_four_ratio() {
        let c = SamplerConfig {
            n_image: 5_000_000_000,
            b_image: 64,
            n_video: 2_000_000_000,
            b_video: 32,
            strategy: Strategy::Probabilistic,
            seed: 0,
        };
        let p = compute_probs(&c).unwrap();
        assert_eq!(p.ratio, (5, 4));
        assert_eq!(p.p_image, 5.0 / 9.0);
        assert_eq!(p.p_video, 4.0 / 9.0);
    }

    #[test]
    fn symmetric_and_three_to_one() {
        let p = compute_probs(&cfg(10, 10, Strategy::Probabilistic)).unwrap();
        assert_eq!((p.p_image, p.p_video), (0.5, 0.5));
        let p = compute_probs(&cfg(3, 1, Strategy::Probabilistic)).unwrap();
        assert_eq!((p.p_image, p.p_video), (0.75, 0.25));
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(compute_probs(&cfg(0, 1, Strategy::Probabilistic)).is_err());
    }

    #[test]
    fn alternation_sequences() {
        assert_eq!(letters(cfg(4, 2, Strategy::AlternateVideoRepeats)), "IVIVIVIV");
        let idx: Vec<u64> = BatchSampler::new(cfg(4, 2, Strategy::AlternateVideoRepeats))
            .unwrap()
            .filter(|b| b.modality == Modality::Video)
            .map(|b| b.index)
            .collect();
        assert_eq!(idx, [0, 1, 0, 1]);
        assert_eq!(letters(cfg(4, 2, Strategy::AlternateThenImageOnly)), "IVIVII");
    }

    #[test]
    fn certain_image_draws() {
        // p_image = 1 is unreachable with positive counts; a huge ratio gets
        // the same behavior until the images are gone
        let c = SamplerConfig {
            n_image: 5,
            n_video: 1,
            b_image: 1,
            b_video: u64::MAX,
            strategy: Strategy::Probabilistic,
            seed: 1,
        };
        let mut s = BatchSampler::new(c).unwrap();
        s.p_image = 1.0;
        assert_eq!(s.by_ref().map(|b| b.modality).take(5).collect::<Vec<_>>(), [Modality::Image; 5]);
        assert_eq!(s.next_batch(), Draw::Batch(Batch { modality: Modality::Video, index: 0, repeat: false }));
        assert_eq!(s.next_batch(), Draw::EpochComplete);
        assert_eq!(s.next_batch(), Draw::EpochComplete);
    }

    #[test]
    fn image_only_tail() {
        let s = simulate_epoch(&cfg(100, 10, Strategy::AlternateThenImageOnly)).unwrap();
        assert_eq!(s.terminal_run, Some(Run { modality: Modality::Image, length: 90 }));
        assert!(s.max_consecutive_run.image as f64 >= 0.9 * (100 - 10) as f64);
    }

    #[test]
    fn two_batch_epoch() {
        for st in Strategy::ALL {
            let s = simulate_epoch(&cfg(1, 1, st)).unwrap();
            assert_eq!(s.total_batches, 2, "{st}");
            assert!(s.exhaustion_gap <= 0.5);
        }
    }

    #[test]
    fn partial_batches_count() {
        let c = SamplerConfig { n_image: 10, b_image: 3, n_video: 5, b_video: 5, strategy: Strategy::Probabilistic, seed: 2 };
        let s = simulate_epoch(&c).unwrap();
        assert_eq!((s.image_batches, s.video_batches, s.total_batches), (4, 1, 5));
    }

    #[test]
    fn balanced_probabilistic_small() {
        let mut gaps = Vec::new();
        for seed in 0..100 {
            let c = SamplerConfig { seed, ..cfg(1000, 1000, Strategy::Probabilistic) };
            let s = simulate_epoch(&c).unwrap();
            assert!((s.p_image_realized - 0.5).abs() <= 0.05);
            gaps.push(s.exhaustion_gap);
        }
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!(mean <= 0.05, "mean gap {mean}");
    }

    #[test]
    fn strategy_names_parse() {
        for st in Strategy::ALL {
            assert_eq!(st.name().parse::<Strategy>().unwrap(), st);
            assert_eq!(st.name().replace('_', "-").parse::<Strategy>().unwrap(), st);
        }
        assert!("round_robin".parse::<Strategy>().is_err());
    }

    proptest! {
        #[test]
        fn conservation(ni in 1u64..400, nv in 1u64..400, bi in 1u64..9, bv in 1u64..9, seed in any::<u64>()) {
            for strategy in Strategy::ALL {
                let c = SamplerConfig { n_image: ni, n_video: nv, b_image: bi, b_video: bv, strategy, seed };
                let s = simulate_epoch(&c).unwrap();
                prop_assert_eq!(s.image_batches + s.video_batches, s.total_batches);
                prop_assert!((0.0..=1.0).contains(&s.exhaustion_gap));
                prop_assert_eq!(s.image_batches, c.image_batches());
                match strategy {
                    Strategy::Probabilistic => {
                        prop_assert_eq!(s.video_batches, c.video_batches());
                        prop_assert_eq!(s.total_batches, c.image_batches() + c.video_batches());
                    }
                    Strategy::AlternateThenImageOnly => {
                        if c.image_batches() >= c.video_batches() {
                            prop_assert_eq!(s.video_batches, c.video_batches());
                        } else {
                            prop_assert!(s.video_batches <= c.video_batches());
                        }
                    }
                    Strategy::AlternateVideoRepeats => {
                        prop_assert!(s.video_batches >= c.video_batches().min(c.image_batches()));
                        prop_assert_eq!(s.video_batches, c.image_batches());
                    }
                }
            }
        }

        #[test]
        fn deterministic(seed in any::<u64>()) {
            let c = SamplerConfig { seed, ..cfg(50, 30, Strategy::Probabilistic) };
            let a: Vec<Batch> = BatchSampler::new(c).unwrap().collect();
            let b: Vec<Batch> = BatchSampler::new(c).unwrap().collect();
            prop_assert_eq!(a, b);
        }
    }
}
