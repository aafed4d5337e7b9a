//! Dense tensors, tape-based reverse-mode differentiation, the layer set used
//! by the codecs and the language model, Adam, and the checkpoint container.

mod checkpoint;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, DType, FORMAT_VERSION, MAGIC};
pub(crate) use graph::{gelu_value, LN_EPS};
pub use graph::{softmax_in_place, ConvGeom, Gradients, Graph, Var};
pub use layers::{
    Activation, Conv1d, ConvTranspose1d, Dense, Embedding, Layer, LayerNorm, SelfAttention, TransformerBlock,
};
pub use optim::{adam_step, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// Seeded generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
