use alloc::format;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Learnable global vectors queried by cross-attention over instances.
    DgrMil,
    /// Gated attention pooling baseline.
    AbMil,
}

/// How an instance self-attention layer is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    Exact,
    /// Landmark approximation with the given number of contiguous segments.
    Nystrom { landmarks: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Instance feature width D.
    pub input_dim: usize,
    /// Embedding width L.
    pub embed_dim: usize,
    /// Number of global vectors K (the token row comes on top).
    pub num_globals: usize,
    pub num_heads: usize,
    /// Dropout probability after the FFN hidden activation, training mode only.
    pub dropout: f64,
    /// Hidden width A of the gated attention baseline.
    pub gated_hidden: usize,
    /// Bags with more instances than this use Nyström instance self-attention.
    pub nystrom_threshold: usize,
    pub landmarks: usize,
}

impl ModelConfig {
    pub const DEFAULT_HEADS: usize = 8;
    pub const DEFAULT_GLOBALS: usize = 5;
    pub const DEFAULT_DROPOUT: f64 = 0.15;
    pub const DEFAULT_NYSTROM_THRESHOLD: usize = 2048;
    pub const DEFAULT_LANDMARKS: usize = 64;

    pub fn new(input_dim: usize, embed_dim: usize, num_globals: usize, num_heads: usize) -> Self {
        ModelConfig {
            architecture: Architecture::DgrMil,
            input_dim,
            embed_dim,
            num_globals,
            num_heads,
            dropout: Self::DEFAULT_DROPOUT,
            gated_hidden: (embed_dim / 2).max(1),
            nystrom_threshold: Self::DEFAULT_NYSTROM_THRESHOLD,
            landmarks: Self::DEFAULT_LANDMARKS,
        }
    }

    /// Defaults for a feature width: L = 512 for D ≥ 1024, 256 for D ≥ 512, else 128.
    pub fn for_input_dim(input_dim: usize) -> Self {
        Self::new(input_dim, default_embed_dim(input_dim), Self::DEFAULT_GLOBALS, Self::DEFAULT_HEADS)
    }

    pub fn with_architecture(mut self, architecture: Architecture) -> Self {
        self.architecture = architecture;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads.max(1)
    }

    /// Attention mode used for a bag of `n` instances.
    pub fn instance_attention_mode(&self, n: usize) -> AttentionMode {
        if n > self.nystrom_threshold {
            AttentionMode::Nystrom { landmarks: self.landmarks.min(n) }
        } else {
            AttentionMode::Exact
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.input_dim == 0 || self.embed_dim == 0 {
            return fail(format!("input_dim ({}) and embed_dim ({}) must be positive", self.input_dim, self.embed_dim));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match self.architecture {
            Architecture::DgrMil => {
                if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
                    return fail(format!(
                        "embed_dim {} not divisible by num_heads {}",
                        self.embed_dim, self.num_heads
                    ));
                }
                if self.num_globals == 0 {
                    return fail("num_globals must be at least 1".into());
                }
                if self.landmarks == 0 {
                    return fail("landmarks must be at least 1".into());
                }
            }
            Architecture::AbMil => {
                if self.gated_hidden == 0 {
                    return fail("gated_hidden must be positive".into());
                }
            }
        }
        Ok(())
    }
}

pub fn default_embed_dim(input_dim: usize) -> usize {
    if input_dim >= 1024 {
        512
    } else if input_dim >= 512 {
        256
    } else {
        128
    }
}
