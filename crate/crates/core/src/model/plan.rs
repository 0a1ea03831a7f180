use std::sync::Arc;

use super::{BoundModel, Mode, ModelConfig, ModelError};
use crate::bp_engine::HyperParams;
use crate::diff::{gat_layer, gru_cell, Adjacency, Tape, Tensor, Var};
use crate::factor_graph::FactorGraph;

/// The factor graph plus one node per directed message.
///
/// Node ids: variables first, then functions, then variable-to-function
/// message nodes, then function-to-variable message nodes. Edges run
/// `x → m(x→f) → f` and `f → m(f→x) → x`; every node also attends to itself.
#[derive(Debug, Clone)]
pub struct AugmentedGraph {
    num_variables: usize,
    num_functions: usize,
    num_edges: usize,
    adjacency: Adjacency,
}

impl AugmentedGraph {
    pub fn new(graph: &FactorGraph) -> Self {
        let (n, f, r) = (
            graph.num_variables(),
            graph.num_functions(),
            graph.num_edges(),
        );
        let mut links = Vec::with_capacity(4 * r);
        for (e, edge) in graph.edges().iter().enumerate() {
            let (x, func) = (edge.var, n + edge.function);
            let (down, up) = (n + f + e, n + f + r + e);
            links.extend([(x, down), (down, func), (func, up), (up, x)]);
        }
        Self {
            num_variables: n,
            num_functions: f,
            num_edges: r,
            adjacency: Adjacency::with_self_loops(n + f + 2 * r, &links),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_variables + self.num_functions + 2 * self.num_edges
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn variable_node(&self, var: usize) -> usize {
        var
    }

    pub fn function_node(&self, function: usize) -> usize {
        self.num_variables + function
    }

    pub fn v2f_node(&self, edge: usize) -> usize {
        self.num_variables + self.num_functions + edge
    }

    pub fn f2v_node(&self, edge: usize) -> usize {
        self.num_variables + self.num_functions + self.num_edges + edge
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }
}

/// Index plan for running the model on one graph.
#[derive(Debug, Clone)]
pub struct ModelPlan {
    config: ModelConfig,
    aug: AugmentedGraph,
    num_edges: usize,
    /// `r * msg_width` rows into `messages ++ [0]`.
    pad_index: Arc<[usize]>,
    weight_owner: Arc<[usize]>,
    weight_query: Arc<[usize]>,
    weight_key: Arc<[usize]>,
    weight_offset: Vec<usize>,
    edge_function: Arc<[usize]>,
    /// `1 / (|N_i| - 1)` per edge and head, zero for degree one.
    inv_others: Tensor,
    uniform: Tensor,
}

/// Tape handles produced by one model call.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub h_v2f: Var,
    pub h_f2v: Var,
    /// `edges x 1`.
    pub lambda: Var,
    /// Flat neighbor weights in [`HyperParams`] order.
    pub weights: Var,
}

impl ModelPlan {
    pub fn new(graph: &FactorGraph, config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let r = graph.num_edges();
        let width = config.msg_width;
        let mut offset = 0;
        let num_entries: usize = (0..r).map(|e| graph.edge_domain(e)).sum();
        let mut pad_index = Vec::with_capacity(r * width);
        for e in 0..r {
            let domain = graph.edge_domain(e);
            if domain > width {
                return Err(ModelError::DomainTooWide {
                    edge: e,
                    domain,
                    width,
                });
            }
            pad_index.extend((0..width).map(|k| if k < domain { offset + k } else { num_entries }));
            offset += domain;
        }

        let (mut owner, mut query, mut key) = (Vec::new(), Vec::new(), Vec::new());
        let mut weight_offset = Vec::with_capacity(r + 1);
        let mut uniform = Vec::new();
        let mut inv_others = Vec::with_capacity(r * config.attn_heads);
        for (e, edge) in graph.edges().iter().enumerate() {
            weight_offset.push(owner.len());
            let others = graph.degree(edge.var) - 1;
            for &m in graph.var_edges(edge.var).iter().filter(|&&m| m != e) {
                owner.push(e);
                query.push(edge.function);
                key.push(graph.edge(m).function);
                uniform.push(1.0 / others as f64);
            }
            let inv = if others == 0 {
                0.0
            } else {
                1.0 / others as f64
            };
            inv_others.extend(std::iter::repeat_n(inv, config.attn_heads));
        }
        weight_offset.push(owner.len());

        Ok(Self {
            config: *config,
            aug: AugmentedGraph::new(graph),
            num_edges: r,
            pad_index: pad_index.into(),
            weight_owner: owner.into(),
            weight_query: query.into(),
            weight_key: key.into(),
            weight_offset,
            edge_function: graph.edges().iter().map(|e| e.function).collect(),
            inv_others: Tensor::from_vec(r, config.attn_heads, inv_others)?,
            uniform: Tensor::column(uniform),
        })
    }

    pub fn augmented(&self) -> &AugmentedGraph {
        &self.aug
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Reshapes a flat message column into zero-padded rows, one per edge.
    fn pad(&self, tape: &mut Tape, msgs: Var) -> Result<Var, ModelError> {
        let zero = tape.constant(Tensor::scalar(0.0));
        let col = tape.concat_rows(msgs, zero)?;
        let rows = tape.gather_rows(col, self.pad_index.clone())?;
        Ok(tape.reshape(rows, self.num_edges, self.config.msg_width)?)
    }

    /// One GRU step per direction. Messages are flat columns.
    pub fn encode(
        &self,
        tape: &mut Tape,
        model: &BoundModel,
        h_v2f: Var,
        h_f2v: Var,
        v2f: Var,
        f2v: Var,
    ) -> Result<(Var, Var), ModelError> {
        let x = self.pad(tape, v2f)?;
        let a = gru_cell(tape, &model.phi1, h_v2f, x)?;
        let x = self.pad(tape, f2v)?;
        let b = gru_cell(tape, &model.phi2, h_f2v, x)?;
        Ok((a, b))
    }

    /// Pairwise scores, damping factors and neighbor weights from
    /// function-node embeddings (`functions x embed_width`).
    pub fn infer(
        &self,
        tape: &mut Tape,
        model: &BoundModel,
        emb: Var,
    ) -> Result<(Var, Var), ModelError> {
        let dk = self.config.attn_width;
        let first: Arc<[usize]> = (0..dk).collect();
        let second: Arc<[usize]> = (dk..2 * dk).collect();
        let mut query = None;
        let mut key = None;
        for &(w1, w2, w3) in &model.zeta {
            let w1a = tape.gather_rows(w1, first.clone())?;
            let w1b = tape.gather_rows(w1, second.clone())?;
            let qp = tape.matmul(emb, w2)?;
            let q = tape.matmul(qp, w1a)?;
            let kp = tape.matmul(emb, w3)?;
            let k = tape.matmul(kp, w1b)?;
            query = Some(match query {
                None => q,
                Some(acc) => tape.concat_cols(acc, q)?,
            });
            key = Some(match key {
                None => k,
                Some(acc) => tape.concat_cols(acc, k)?,
            });
        }
        let (query, key) = (
            query.expect("at least one head"),
            key.expect("at least one head"),
        );

        let pq = tape.gather_rows(query, self.weight_query.clone())?;
        let pk = tape.gather_rows(key, self.weight_key.clone())?;
        let pre = tape.add(pq, pk)?;
        let pair = tape.sigmoid(pre);
        let sq = tape.gather_rows(query, self.edge_function.clone())?;
        let sk = tape.gather_rows(key, self.edge_function.clone())?;
        let pre = tape.add(sq, sk)?;
        let own = tape.sigmoid(pre);

        let total = tape.segment_sum(pair, self.weight_owner.clone(), self.num_edges)?;
        let inv = tape.constant(self.inv_others.clone());
        let mean_others = tape.mul(total, inv)?;
        let margin = tape.sub(own, mean_others)?;
        let lambda_heads = tape.sigmoid(margin);
        let mut lambda = head_mean(tape, lambda_heads)?;

        let weights = match self.config.mode {
            Mode::Full => {
                let w = tape.segment_softmax(pair, self.weight_owner.clone(), self.num_edges)?;
                head_mean(tape, w)?
            }
            Mode::HeterLambda | Mode::HomoLambda => tape.constant(self.uniform.clone()),
        };
        if self.config.mode == Mode::HomoLambda && self.num_edges > 0 {
            let mean = tape.mean(lambda);
            lambda = tape.broadcast_rows(mean, self.num_edges)?;
        }
        Ok((lambda, weights))
    }

    /// Encode, embed and infer in one go.
    pub fn step(
        &self,
        tape: &mut Tape,
        model: &BoundModel,
        h_v2f: Var,
        h_f2v: Var,
        v2f: Var,
        f2v: Var,
    ) -> Result<StepOutput, ModelError> {
        let (h_v2f, h_f2v) = self.encode(tape, model, h_v2f, h_f2v, v2f, f2v)?;
        let emb = embed(tape, model, &self.config, &self.aug, h_v2f, h_f2v)?;
        let (lambda, weights) = self.infer(tape, model, emb)?;
        Ok(StepOutput {
            h_v2f,
            h_f2v,
            lambda,
            weights,
        })
    }

    /// Converts flat outputs into per-edge hyperparameters.
    pub fn hyperparams(&self, lambda: &Tensor, weights: &Tensor) -> HyperParams {
        HyperParams {
            lambda: lambda.data().to_vec(),
            weights: (0..self.num_edges)
                .map(|e| weights.data()[self.weight_offset[e]..self.weight_offset[e + 1]].to_vec())
                .collect(),
        }
    }
}

/// Runs the GAT stack over the augmented graph and keeps the function rows.
pub(super) fn embed(
    tape: &mut Tape,
    model: &BoundModel,
    config: &ModelConfig,
    aug: &AugmentedGraph,
    h_v2f: Var,
    h_f2v: Var,
) -> Result<Var, ModelError> {
    let vars = tape.broadcast_rows(model.var_embed, aug.num_variables)?;
    let funcs = tape.broadcast_rows(model.func_embed, aug.num_functions)?;
    let mut x = tape.stack_rows(&[vars, funcs, h_v2f, h_f2v])?;
    for (layer, cfg) in &model.psi {
        x = gat_layer(tape, layer, cfg, x, &aug.adjacency)?.features;
    }
    debug_assert_eq!(tape.shape(x).1, config.embed_width());
    let rows: Arc<[usize]> = (0..aug.num_functions)
        .map(|f| aug.function_node(f))
        .collect();
    Ok(tape.gather_rows(x, rows)?)
}

/// Averages the columns of `x` (one column per head).
pub fn head_mean(tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
    let heads = tape.shape(x).1;
    let avg = tape.constant(Tensor::column(vec![1.0 / heads as f64; heads]));
    Ok(tape.matmul(x, avg)?)
}
