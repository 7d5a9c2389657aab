use alloc::vec::Vec;

use super::config::{Architecture, AttentionMode, ModelConfig};

/// Closed-form model size and multiply-accumulate cost for a bag of `n` instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Footprint {
    pub params: u64,
    pub macs: u64,
    /// Per-stage MAC counts, in pipeline order, summing to `macs`.
    pub stages: Vec<(&'static str, u64)>,
}

impl Footprint {
    pub fn stage(&self, name: &str) -> Option<u64> {
        self.stages.iter().find(|(s, _)| *s == name).map(|&(_, v)| v)
    }
}

/// Counts only matrix products; element-wise work is excluded.
pub fn footprint(config: &ModelConfig, n: usize) -> Footprint {
    let d = config.input_dim as u64;
    let l = config.embed_dim as u64;
    let n64 = n as u64;
    let ffn_params = |input: u64| input * l + l + l * l + l;
    let classifier_params = 2 * l + 2;
    let mut stages = Vec::new();
    stages.push(("ffn_instance", n64 * d * l + n64 * l * l));
    let params = match config.architecture {
        Architecture::AbMil => {
            let a = config.gated_hidden as u64;
            stages.push(("gated_attention", 2 * n64 * l * a + n64 * a + n64 * l));
            ffn_params(d) + 2 * l * a + a + classifier_params
        }
        Architecture::DgrMil => {
            let k1 = config.num_globals as u64 + 1;
            let attention_params = 4 * l * l;
            let norm_params = 2 * l;
            let sa = match config.instance_attention_mode(n) {
                AttentionMode::Exact => 4 * n64 * l * l + 2 * n64 * n64 * l,
                AttentionMode::Nystrom { landmarks } => {
                    let m = landmarks as u64;
                    4 * n64 * l * l + 6 * m * n64 * l + 2 * m * m * l
                }
            };
            stages.push(("instance_attention", sa));
            stages.push(("ffn_global", 2 * k1 * l * l));
            stages.push(("global_attention", 4 * k1 * l * l + 2 * k1 * k1 * l));
            stages.push(("cross_projections", 2 * k1 * l * l));
            stages.push(("cross_attention", 2 * n64 * l * l + 2 * k1 * n64 * l));
            ffn_params(d) + k1 * l + ffn_params(l) + 3 * attention_params + 3 * norm_params + classifier_params
        }
    };
    stages.push(("classifier", 2 * l));
    let macs = stages.iter().map(|&(_, v)| v).sum();
    Footprint { params, macs, stages }
}
