//! Instance embedding, global-vector cross-attention pooling and the gated
//! attention baseline.

mod bag;
mod config;
mod footprint;
mod forward;
mod layers;
mod params;

pub use bag::Bag;
pub use config::{default_embed_dim, Architecture, AttentionMode, ModelConfig};
pub use footprint::{footprint, Footprint};
pub use forward::{forward, measured_macs, ForwardOutput, Mode};
pub use layers::{
    abmil_pool, ffn_embed, mhca, segment_means, self_attention, token_attention, CrossAttentionOutput,
};
pub use params::{
    Aggregator, AttentionWeights, FeedForward, GatedAttention, GlobalAggregator, LayerNorm, Linear, ModelParams,
    Weights,
};

pub(crate) use forward::build_forward;
