//! Data-side machinery for web-scale vision-language pre-training.
//!
//! Everything here runs around the network rather than inside it: corpus
//! record IO, caption cleaning, concept lexicons and hashtag
//! canonicalization, long-tail resampling, similarity filtering, multi-modal
//! batch scheduling, token-budget arithmetic, and embedding compression
//! (PCA, int8, residual/product-quantized semantic IDs).

pub mod balance;
pub mod caption;
pub mod corpus;
pub mod error;
pub mod filter;
pub mod lexicon;
pub mod sampler;
pub mod semantic_id;
pub mod token_ops;

mod emoji;
mod rng;

pub use error::{Error, Result};
