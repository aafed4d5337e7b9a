//! Text-conditioned autoregressive model over the unified token vocabulary.

mod model;
mod sample;
mod text;

pub use model::{
    check_well_formed, train_lm, Generated, LMConfig, LanguageModel, LmExample, LmTrainOptions, TextEncoding,
};
pub use sample::{top_k_distribution, SamplerConfig};
pub use text::{normalize_lyric, text_vocab_size, tokenize_lyric};
