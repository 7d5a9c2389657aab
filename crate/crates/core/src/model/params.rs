use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Architecture, ModelConfig};
use crate::error::Result;
use crate::numerics::Matrix;

/// Declares a parameter group generic over its leaf type, so the same layout
/// holds weights (`Matrix`), graph handles (`Var`) and gradients.
macro_rules! param_group {
    (
        $(#[$meta:meta])*
        $name:ident { leaves: [$($leaf:ident),* $(,)?], children: [$($child:ident: $child_ty:ident),* $(,)?] }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<T> {
            $(pub $leaf: T,)*
            $(pub $child: $child_ty<T>,)*
        }

        impl<T> $name<T> {
            pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> $name<U> {
                $name { $($leaf: f(&self.$leaf),)* $($child: self.$child.map(f),)* }
            }

            pub fn for_each<'a>(&'a self, f: &mut impl FnMut(&'a T)) {
                $(f(&self.$leaf);)*
                $(self.$child.for_each(f);)*
            }

            pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut T)) {
                $(f(&mut self.$leaf);)*
                $(self.$child.for_each_mut(f);)*
            }

            pub fn names(&self, prefix: &str, out: &mut Vec<String>) {
                $(out.push(format!("{prefix}{}", stringify!($leaf)));)*
                $(self.$child.names(&format!("{prefix}{}.", stringify!($child)), out);)*
            }
        }
    };
}

param_group! {
    /// Affine map `x·weight + bias`; weight is in x out, bias 1 x out.
    Linear { leaves: [weight, bias], children: [] }
}

param_group! {
    /// Two affine layers with a ReLU (and dropout in training) in between.
    FeedForward { leaves: [], children: [hidden: Linear, output: Linear] }
}

param_group! {
    /// Multi-head attention projections, each L x L. Head `h` uses columns
    /// `h·L/H .. (h+1)·L/H` of `query`, `key` and `value`.
    AttentionWeights { leaves: [query, key, value, output], children: [] }
}

param_group! {
    LayerNorm { leaves: [gain, bias], children: [] }
}

param_group! {
    /// Gated attention pooling: `v`, `u` are L x A, `w` is A x 1.
    GatedAttention { leaves: [v, u, w], children: [] }
}

param_group! {
    /// Global vectors and the attention stack that queries instances with them.
    GlobalAggregator {
        leaves: [globals],
        children: [
            ffn_global: FeedForward,
            instance_norm: LayerNorm,
            instance_attention: AttentionWeights,
            global_norm: LayerNorm,
            global_attention: AttentionWeights,
            cross_attention: AttentionWeights,
            cross_norm: LayerNorm,
        ]
    }
}

/// Pooling stage between instance embedding and classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum Aggregator<T> {
    Global(GlobalAggregator<T>),
    Gated(GatedAttention<T>),
}

impl<T> Aggregator<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Aggregator<U> {
        match self {
            Aggregator::Global(a) => Aggregator::Global(a.map(f)),
            Aggregator::Gated(a) => Aggregator::Gated(a.map(f)),
        }
    }

    pub fn for_each<'a>(&'a self, f: &mut impl FnMut(&'a T)) {
        match self {
            Aggregator::Global(a) => a.for_each(f),
            Aggregator::Gated(a) => a.for_each(f),
        }
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut T)) {
        match self {
            Aggregator::Global(a) => a.for_each_mut(f),
            Aggregator::Gated(a) => a.for_each_mut(f),
        }
    }

    pub fn names(&self, prefix: &str, out: &mut Vec<String>) {
        match self {
            Aggregator::Global(a) => a.names(&format!("{prefix}global."), out),
            Aggregator::Gated(a) => a.names(&format!("{prefix}gated."), out),
        }
    }
}

/// Every learnable tensor of a model, in a fixed traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub ffn_instance: FeedForward<T>,
    pub aggregator: Aggregator<T>,
    pub classifier: Linear<T>,
}

impl<T> Weights<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Weights<U> {
        Weights {
            ffn_instance: self.ffn_instance.map(f),
            aggregator: self.aggregator.map(f),
            classifier: self.classifier.map(f),
        }
    }

    pub fn for_each<'a>(&'a self, f: &mut impl FnMut(&'a T)) {
        self.ffn_instance.for_each(f);
        self.aggregator.for_each(f);
        self.classifier.for_each(f);
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut T)) {
        self.ffn_instance.for_each_mut(f);
        self.aggregator.for_each_mut(f);
        self.classifier.for_each_mut(f);
    }

    /// Dotted tensor names in traversal order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.ffn_instance.names("ffn_instance.", &mut out);
        self.aggregator.names("", &mut out);
        self.classifier.names("classifier.", &mut out);
        out
    }

    pub fn leaves(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.for_each(&mut |t| out.push(t));
        out
    }
}

/// A model configuration together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights<Matrix>,
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.input_dim;
        let l = config.embed_dim;
        let weights = Weights {
            ffn_instance: feed_forward(&mut rng, d, l),
            aggregator: match config.architecture {
                Architecture::DgrMil => Aggregator::Global(GlobalAggregator {
                    globals: xavier(&mut rng, config.num_globals + 1, l),
                    ffn_global: feed_forward(&mut rng, l, l),
                    instance_norm: layer_norm(l),
                    instance_attention: attention(&mut rng, l),
                    global_norm: layer_norm(l),
                    global_attention: attention(&mut rng, l),
                    cross_attention: attention(&mut rng, l),
                    cross_norm: layer_norm(l),
                }),
                Architecture::AbMil => {
                    let a = config.gated_hidden;
                    Aggregator::Gated(GatedAttention {
                        v: xavier(&mut rng, l, a),
                        u: xavier(&mut rng, l, a),
                        w: xavier(&mut rng, a, 1),
                    })
                }
            },
            classifier: linear(&mut rng, l, 2),
        };
        Ok(ModelParams { config, weights })
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.weights.for_each(&mut |m: &Matrix| n += m.len());
        n
    }

    pub fn global_aggregator(&self) -> Option<&GlobalAggregator<Matrix>> {
        match &self.weights.aggregator {
            Aggregator::Global(a) => Some(a),
            Aggregator::Gated(_) => None,
        }
    }
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    if fan_in + fan_out == 0 {
        return Matrix::zeros(fan_in, fan_out);
    }
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound))
}

fn linear(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Linear<Matrix> {
    Linear { weight: xavier(rng, fan_in, fan_out), bias: Matrix::zeros(1, fan_out) }
}

fn feed_forward(rng: &mut ChaCha8Rng, input: usize, width: usize) -> FeedForward<Matrix> {
    FeedForward { hidden: linear(rng, input, width), output: linear(rng, width, width) }
}

fn attention(rng: &mut ChaCha8Rng, l: usize) -> AttentionWeights<Matrix> {
    AttentionWeights {
        query: xavier(rng, l, l),
        key: xavier(rng, l, l),
        value: xavier(rng, l, l),
        output: xavier(rng, l, l),
    }
}

fn layer_norm(l: usize) -> LayerNorm<Matrix> {
    LayerNorm { gain: Matrix::filled(1, l, 1.0), bias: Matrix::zeros(1, l) }
}
