//! Byte-level decoder-only transformer with arbitrary attention masks,
//! explicit position ids and an incremental KV cache.

mod cache;
mod config;
mod mask;
mod transformer;
mod weights;

pub use cache::{KvCache, KvDelta};
pub use config::ModelConfig;
pub use mask::{causal_mask, AttentionMask};
pub(crate) use transformer::{backward, forward_packed, PackedBatch};
pub use transformer::{forward, forward_causal, greedy_next, top_k, ForwardOutput};
pub use weights::{init_model, LayerWeights, TransformerWeights, INIT_STD};
