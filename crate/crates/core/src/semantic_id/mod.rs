//! Semantic IDs for embeddings: residual (RQ) and product (PQ) quantization
//! over EMA-maintained codebooks, plus PCA projection and int8 compression.

mod codebook;
mod compress;
mod quantize;
mod train;

pub use codebook::{Codebook, Scheme, SemanticId, DEFAULT_DEAD_FRACTION, DEFAULT_GAMMA, EMA_EPS};
pub use compress::{
    int8_dequantize, int8_quantize, pca_project, read_int8, read_int8_from, write_int8, write_int8_to, Int8Matrix,
    Int8Vector, PcaModel, XFQ8_MAGIC, XFQ8_VERSION,
};
pub use quantize::{
    decode, encode, encode_batch, pq_decode, pq_encode, reconstruction_mse, rq_decode, rq_encode, ResidualEncoding,
};
pub use train::{init_codebook, train_codebooks, StepReport, TrainConfig, TrainReport, Trainer};
