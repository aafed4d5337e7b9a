//! Motion representation and the part-wise vector-quantized codecs.

mod codebook;
mod codec;
mod sequence;
mod tokenizer;

pub use codebook::{nearest, Codebook};
pub use codec::{
    max_code_share, smooth, train_codec, untrained_codec, utilization, windows, CodebookInit, CodecConfig, CodecInput,
    Normalizer, PartCodec, TrainLog, TrainOptions,
};
pub use sequence::{MotionSequence, Part, PartTokenSeq, BODY, EXPRESSION, FRAME_DIM, HAND, JAW, LAYOUT, TRANSLATION};
pub use tokenizer::{ablate_single_vs_split, ablation_table, AblationRow, MotionTokenizer};
