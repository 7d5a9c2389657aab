use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::bag::Bag;
use super::layers::{self, Dropout};
use super::params::{Aggregator, ModelParams, Weights};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, Var};

/// Forward-pass mode. Dropout is sampled from the supplied generator in training.
pub enum Mode<'r> {
    Train(&'r mut ChaCha8Rng),
    Eval,
}

impl<'r> Mode<'r> {
    fn dropout(&mut self, rate: f64) -> Dropout<'_> {
        match self {
            Mode::Train(rng) => Some((&mut **rng, rate)),
            Mode::Eval => None,
        }
    }
}

/// Named intermediate products of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: [f64; 2],
    /// Classifier input: the token row after cross-attention (the pooled
    /// vector for the gated baseline).
    pub token_embedding: Vec<f64>,
    /// Rows 1..=K of the globals after their FFN (K x L; 0 x L for the baseline).
    pub global_embeddings: Matrix,
    /// Instances after their FFN (n x L).
    pub instance_embeddings: Matrix,
    /// Per head, the token row's attention over instances (one entry for the baseline).
    pub attention_scores: Vec<Vec<f64>>,
    /// Per head, the full (K+1) x n cross-attention matrix; empty for the baseline.
    pub cross_attention: Vec<Matrix>,
}

impl ForwardOutput {
    /// Softmax probability of the positive class.
    pub fn positive_probability(&self) -> f64 {
        let [a, b] = self.logits;
        1.0 / (1.0 + libm::exp(a - b))
    }

    /// Predicted label; equal logits predict positive.
    pub fn predicted_label(&self) -> u8 {
        u8::from(self.logits[1] >= self.logits[0])
    }
}

/// Graph handles of a forward pass built for training.
pub(crate) struct GraphForward {
    pub logits: Var,
    /// K x L, rows 1..=K of the embedded globals; `None` for the baseline.
    pub globals: Option<Var>,
    pub instances: Var,
    pub token: Var,
    pub cross_attention: Vec<Var>,
    pub gated_weights: Option<Var>,
}

fn check_bag(bag: &Bag, config: &ModelConfig) -> Result<()> {
    if bag.feature_dim() != config.input_dim {
        return Err(Error::Config(format!(
            "bag {} has {} features, model expects {}",
            bag.id,
            bag.feature_dim(),
            config.input_dim
        )));
    }
    if bag.is_empty() {
        return Err(Error::Data(format!("bag {} is empty", bag.id)));
    }
    Ok(())
}

pub(crate) fn build_forward(
    g: &mut Graph,
    features: &Matrix,
    w: &Weights<Var>,
    config: &ModelConfig,
    mode: &mut Mode<'_>,
) -> Result<GraphForward> {
    let x_in = g.constant(features.clone());
    let x = layers::feed_forward(g, x_in, &w.ffn_instance, mode.dropout(config.dropout))?;
    match &w.aggregator {
        Aggregator::Gated(p) => {
            let (pooled, weights) = layers::gated_pool(g, x, p)?;
            let logits = layers::linear(g, pooled, &w.classifier)?;
            Ok(GraphForward {
                logits,
                globals: None,
                instances: x,
                token: pooled,
                cross_attention: Vec::new(),
                gated_weights: Some(weights),
            })
        }
        Aggregator::Global(p) => {
            let heads = config.num_heads;
            let n = g.value(x).rows();
            let normed = layers::layer_norm(g, x, &p.instance_norm)?;
            let sa = layers::self_attention_graph(
                g,
                normed,
                &p.instance_attention,
                heads,
                config.instance_attention_mode(n),
            )?;
            let x1 = g.add(x, sa)?;

            let gf = layers::feed_forward(g, p.globals, &p.ffn_global, mode.dropout(config.dropout))?;
            let globals = g.slice_rows(gf, 1, config.num_globals)?;
            let normed = layers::layer_norm(g, gf, &p.global_norm)?;
            let sa = layers::attention(g, normed, normed, &p.global_attention, heads)?.output;
            let g1 = g.add(gf, sa)?;

            let cross = layers::attention(g, g1, x1, &p.cross_attention, heads)?;
            let c = g.add(g1, cross.output)?;
            let c = layers::layer_norm(g, c, &p.cross_norm)?;
            let token = g.slice_rows(c, 0, 1)?;
            let logits = layers::linear(g, token, &w.classifier)?;
            Ok(GraphForward {
                logits,
                globals: Some(globals),
                instances: x,
                token,
                cross_attention: cross.probs,
                gated_weights: None,
            })
        }
    }
}

/// Runs the model on one bag.
pub fn forward(bag: &Bag, params: &ModelParams, mut mode: Mode<'_>) -> Result<ForwardOutput> {
    check_bag(bag, &params.config)?;
    let mut g = Graph::new();
    let w = params.weights.map(&mut |m: &Matrix| g.constant(m.clone()));
    let out = build_forward(&mut g, &bag.features, &w, &params.config, &mut mode)?;
    Ok(read_output(&g, &out))
}

fn read_output(g: &Graph, out: &GraphForward) -> ForwardOutput {
    let l = g.value(out.instances).cols();
    let logits = g.value(out.logits).as_slice();
    let cross_attention: Vec<Matrix> = out.cross_attention.iter().map(|&a| g.value(a).clone()).collect();
    let attention_scores = match out.gated_weights {
        Some(w) => alloc::vec![g.value(w).as_slice().to_vec()],
        None => cross_attention.iter().map(|a| a.row(0).to_vec()).collect(),
    };
    ForwardOutput {
        logits: [logits[0], logits[1]],
        token_embedding: g.value(out.token).as_slice().to_vec(),
        global_embeddings: out.globals.map_or_else(|| Matrix::zeros(0, l), |v| g.value(v).clone()),
        instance_embeddings: g.value(out.instances).clone(),
        attention_scores,
        cross_attention,
    }
}

/// Multiply-accumulate count recorded by the graph for an eval-mode forward pass.
pub fn measured_macs(bag: &Bag, params: &ModelParams) -> Result<u64> {
    check_bag(bag, &params.config)?;
    let mut g = Graph::new();
    let w = params.weights.map(&mut |m: &Matrix| g.constant(m.clone()));
    build_forward(&mut g, &bag.features, &w, &params.config, &mut Mode::Eval)?;
    Ok(g.macs())
}
