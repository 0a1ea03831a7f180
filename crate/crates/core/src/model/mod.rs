//! Neural inference of per-edge damping factors and neighbor weights.
//!
//! Each call encodes the latest messages into per-edge hidden vectors with two
//! GRUs, embeds a message-augmented copy of the factor graph with stacked GAT
//! layers, and scores pairs of function-nodes around every variable with a
//! multi-head attention module.

mod params;
mod plan;

use serde::{Deserialize, Serialize};

pub use params::{AttentionHead, BoundModel, ModelParameters};
pub use plan::{head_mean, AugmentedGraph, ModelPlan, StepOutput};

use crate::bp_engine::{BpError, HyperParams, MessageSet};
use crate::diff::{DiffError, Tape, Tensor};
use crate::factor_graph::FactorGraph;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("edge {edge} has domain {domain}, wider than the message width {width}")]
    DomainTooWide {
        edge: usize,
        domain: usize,
        width: usize,
    },
    #[error("encoder state has {actual} rows per direction, graph has {expected} edges")]
    StateShape { expected: usize, actual: usize },
    #[error("embeddings have shape {actual:?}, expected {expected:?}")]
    EmbeddingShape {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Bp(#[from] BpError),
}

/// Which hyperparameters the model is allowed to vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Per-edge damping and per-edge neighbor weights.
    #[default]
    Full,
    /// Per-edge damping, uniform weights.
    HeterLambda,
    /// One damping factor shared by all edges, uniform weights.
    HomoLambda,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// GRU hidden width `q`.
    pub hidden: usize,
    /// Messages are zero-padded to this many entries before encoding.
    pub msg_width: usize,
    pub gat_layers: usize,
    pub gat_heads: usize,
    pub gat_channels: usize,
    pub attn_heads: usize,
    /// Width of the query and key projections in each attention head.
    pub attn_width: usize,
    pub mode: Mode,
    pub score_slope: f64,
    pub output_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            msg_width: 0,
            gat_layers: 4,
            gat_heads: 4,
            gat_channels: 8,
            attn_heads: 4,
            attn_width: 8,
            mode: Mode::Full,
            score_slope: 0.2,
            output_slope: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn new(msg_width: usize) -> Self {
        Self {
            msg_width,
            ..Self::default()
        }
    }

    /// Smallest sensible network: one GAT layer, one head everywhere, width 2.
    pub fn tiny(msg_width: usize) -> Self {
        Self {
            hidden: 2,
            msg_width,
            gat_layers: 1,
            gat_heads: 1,
            gat_channels: 2,
            attn_heads: 1,
            attn_width: 2,
            ..Self::default()
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Width of the function-node embeddings fed to the attention module.
    pub fn embed_width(&self) -> usize {
        self.gat_channels
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [
            ("hidden", self.hidden),
            ("msg_width", self.msg_width),
            ("gat_layers", self.gat_layers),
            ("gat_heads", self.gat_heads),
            ("gat_channels", self.gat_channels),
            ("attn_heads", self.attn_heads),
            ("attn_width", self.attn_width),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        for (name, slope) in [
            ("score_slope", self.score_slope),
            ("output_slope", self.output_slope),
        ] {
            if !slope.is_finite() {
                return Err(ModelError::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// GRU hidden vectors for both message directions, one row per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub h_v2f: Tensor,
    pub h_f2v: Tensor,
}

impl EncoderState {
    pub fn zeros(num_edges: usize, hidden: usize) -> Self {
        Self {
            h_v2f: Tensor::zeros(num_edges, hidden),
            h_f2v: Tensor::zeros(num_edges, hidden),
        }
    }

    fn check(&self, num_edges: usize) -> Result<(), ModelError> {
        for t in [&self.h_v2f, &self.h_f2v] {
            if t.rows() != num_edges {
                return Err(ModelError::StateShape {
                    expected: num_edges,
                    actual: t.rows(),
                });
            }
        }
        Ok(())
    }
}

/// Advances both GRUs by one step on the given messages.
pub fn encode_messages(
    params: &ModelParameters,
    graph: &FactorGraph,
    state: &EncoderState,
    msgs: &MessageSet,
) -> Result<EncoderState, ModelError> {
    let plan = ModelPlan::new(graph, params.config())?;
    state.check(graph.num_edges())?;
    let mut tape = Tape::new();
    let model = params.bind(&mut tape);
    let h_v2f = tape.constant(state.h_v2f.clone());
    let h_f2v = tape.constant(state.h_f2v.clone());
    let v2f = tape.constant(flatten(&msgs.v2f));
    let f2v = tape.constant(flatten(&msgs.f2v));
    let (a, b) = plan.encode(&mut tape, &model, h_v2f, h_f2v, v2f, f2v)?;
    Ok(EncoderState {
        h_v2f: tape.value(a).clone(),
        h_f2v: tape.value(b).clone(),
    })
}

/// Final-layer embedding of every function-node, one row per function.
pub fn embed_graph(
    params: &ModelParameters,
    aug: &AugmentedGraph,
    state: &EncoderState,
) -> Result<Tensor, ModelError> {
    state.check(aug.num_edges())?;
    let mut tape = Tape::new();
    let model = params.bind(&mut tape);
    let h_v2f = tape.constant(state.h_v2f.clone());
    let h_f2v = tape.constant(state.h_f2v.clone());
    let emb = plan::embed(&mut tape, &model, params.config(), aug, h_v2f, h_f2v)?;
    Ok(tape.value(emb).clone())
}

/// Damping factors and neighbor weights from function-node embeddings.
pub fn infer_hyperparams(
    params: &ModelParameters,
    embeddings: &Tensor,
    graph: &FactorGraph,
) -> Result<HyperParams, ModelError> {
    let plan = ModelPlan::new(graph, params.config())?;
    let expected = (graph.num_functions(), params.config().embed_width());
    if embeddings.shape() != expected {
        return Err(ModelError::EmbeddingShape {
            expected,
            actual: embeddings.shape(),
        });
    }
    let mut tape = Tape::new();
    let model = params.bind(&mut tape);
    let emb = tape.constant(embeddings.clone());
    let (lambda, weights) = plan.infer(&mut tape, &model, emb)?;
    Ok(plan.hyperparams(tape.value(lambda), tape.value(weights)))
}

/// One full model call: encode, embed, infer.
pub fn model_step(
    params: &ModelParameters,
    state: &EncoderState,
    msgs: &MessageSet,
    graph: &FactorGraph,
) -> Result<(HyperParams, EncoderState), ModelError> {
    let plan = ModelPlan::new(graph, params.config())?;
    state.check(graph.num_edges())?;
    let mut tape = Tape::new();
    let model = params.bind(&mut tape);
    let h_v2f = tape.constant(state.h_v2f.clone());
    let h_f2v = tape.constant(state.h_f2v.clone());
    let v2f = tape.constant(flatten(&msgs.v2f));
    let f2v = tape.constant(flatten(&msgs.f2v));
    let out = plan.step(&mut tape, &model, h_v2f, h_f2v, v2f, f2v)?;
    let hp = plan.hyperparams(tape.value(out.lambda), tape.value(out.weights));
    let state = EncoderState {
        h_v2f: tape.value(out.h_v2f).clone(),
        h_f2v: tape.value(out.h_f2v).clone(),
    };
    Ok((hp, state))
}

fn flatten(msgs: &[Vec<f64>]) -> Tensor {
    Tensor::column(msgs.iter().flatten().copied().collect())
}
