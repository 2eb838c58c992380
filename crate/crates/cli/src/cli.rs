use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::stages::*;

/// Curation and tokenization tools for image/video-text corpora.
#[derive(Debug, Parser)]
#[command(name = "vlkit", version)]
pub struct Cli {
    /// Worker threads (0 = one per core)
    #[arg(long, global = true, env = "VLKIT_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Default seed for stages that take one
    #[arg(long, global = true, env = "VLKIT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean captions into one pair per sentence
    Clean(CleanArgs),
    /// Load and validate a concept lexicon or hashtag map
    LexiconCheck(LexiconCheckArgs),
    /// Map hashtags to canonical concepts
    Canonize(CanonizeArgs),
    /// Build pairs from canonical hashtags
    Pairs(PairsArgs),
    /// Count concept or unigram frequencies
    Count(CountArgs),
    /// Reweight and resample pairs toward a flatter concept distribution
    Balance(BalanceArgs),
    /// Drop pairs below a similarity threshold
    Filter(FilterArgs),
    /// Simulate one epoch of the image/video batch sampler
    SampleSim(SampleSimArgs),
    /// Progressive resolution schedule
    Schedule(ScheduleArgs),
    /// Compare resolution/token cost of two configurations
    Cost(CostArgs),
    /// Draw a masked-autoencoder patch mask
    Mask(MaskArgs),
    /// Aspect-preserving resize and pad geometry
    Aspect(AspectArgs),
    /// Train residual or product codebooks on embeddings
    TrainCodebook(TrainCodebookArgs),
    /// Encode embeddings into semantic ids
    TokenizeIds(TokenizeIdsArgs),
    /// PCA and/or int8 compression of embeddings
    Compress(CompressArgs),
    /// Run a TOML pipeline config
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    pub config: PathBuf,
    /// Validate and print the execution order without running
    #[arg(long)]
    pub dry_run: bool,
}
