//! Gated recurrent cell and graph-attention layer built from tape ops.

use std::sync::Arc;

use rand::Rng;

use super::{DiffError, ParamId, ParameterStore, Tape, Tensor, Var};

/// Parameter ids of one GRU: input maps `W` (`in x q`), recurrent maps `U`
/// (`q x q`) and biases (`1 x q`) for the update gate, reset gate and candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

/// [`GruParams`] bound to a tape.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

impl GruParams {
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut add = |name: &str, rows: usize, cols: usize, fan_in: usize| {
            store.add_uniform(format!("{prefix}.{name}"), rows, cols, fan_in, rng)
        };
        Self {
            w_z: add("w_z", input, hidden, input),
            u_z: add("u_z", hidden, hidden, hidden),
            b_z: add("b_z", 1, hidden, hidden),
            w_r: add("w_r", input, hidden, input),
            u_r: add("u_r", hidden, hidden, hidden),
            b_r: add("b_r", 1, hidden, hidden),
            w_h: add("w_h", input, hidden, input),
            u_h: add("u_h", hidden, hidden, hidden),
            b_h: add("b_h", 1, hidden, hidden),
        }
    }

    pub fn ids(&self) -> [ParamId; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h,
            self.b_h,
        ]
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> GruVars {
        GruVars {
            w_z: tape.param(store, self.w_z),
            u_z: tape.param(store, self.u_z),
            b_z: tape.param(store, self.b_z),
            w_r: tape.param(store, self.w_r),
            u_r: tape.param(store, self.u_r),
            b_r: tape.param(store, self.b_r),
            w_h: tape.param(store, self.w_h),
            u_h: tape.param(store, self.u_h),
            b_h: tape.param(store, self.b_h),
        }
    }
}

fn affine(tape: &mut Tape, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var, DiffError> {
    let n = tape.shape(x).0;
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let s = tape.add(xw, hu)?;
    let bias = tape.broadcast_rows(b, n)?;
    tape.add(s, bias)
}

/// One GRU step over a batch of rows:
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// h~ = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
pub fn gru_cell(tape: &mut Tape, p: &GruVars, h: Var, x: Var) -> Result<Var, DiffError> {
    if tape.shape(h).0 != tape.shape(x).0 {
        return Err(DiffError::Shape {
            op: "gru_cell",
            detail: format!(
                "hidden {:?} and input {:?} disagree on batch size",
                tape.shape(h),
                tape.shape(x)
            ),
        });
    }
    let z_pre = affine(tape, x, p.w_z, h, p.u_z, p.b_z)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = affine(tape, x, p.w_r, h, p.u_r, p.b_r)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h)?;
    let c_pre = affine(tape, x, p.w_h, rh, p.u_h, p.b_h)?;
    let candidate = tape.tanh(c_pre);
    let keep = tape.one_minus(z);
    let old = tape.mul(keep, h)?;
    let new = tape.mul(z, candidate)?;
    tape.add(old, new)
}

/// Directed adjacency for attention: node `dst[k]` attends to node `src[k]`.
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub num_nodes: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
}

impl Adjacency {
    /// Builds an adjacency from `(src, dst)` pairs and adds a self-loop on
    /// every node so each softmax has at least one term.
    pub fn with_self_loops(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut src: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let mut dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
        src.extend(0..num_nodes);
        dst.extend(0..num_nodes);
        Self {
            num_nodes,
            src: src.into(),
            dst: dst.into(),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatConfig {
    pub heads: usize,
    pub channels: usize,
    /// Concatenate heads (`heads * channels` outputs) or average them (`channels`).
    pub concat: bool,
    /// Negative slope inside the attention scorer.
    pub score_slope: f64,
    /// Negative slope of the output activation.
    pub output_slope: f64,
}

impl GatConfig {
    pub fn output_width(&self) -> usize {
        if self.concat {
            self.heads * self.channels
        } else {
            self.channels
        }
    }
}

/// `W` (`in x heads*channels`) and the two halves of the additive scorer,
/// each `1 x heads*channels`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatParams {
    pub w: ParamId,
    pub att_src: ParamId,
    pub att_dst: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct GatVars {
    pub w: Var,
    pub att_src: Var,
    pub att_dst: Var,
}

impl GatParams {
    pub fn new(
        store: &mut ParameterStore,
        prefix: &str,
        input: usize,
        cfg: &GatConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let width = cfg.heads * cfg.channels;
        Self {
            w: store.add_uniform(format!("{prefix}.w"), input, width, input, rng),
            att_src: store.add_uniform(format!("{prefix}.att_src"), 1, width, cfg.channels, rng),
            att_dst: store.add_uniform(format!("{prefix}.att_dst"), 1, width, cfg.channels, rng),
        }
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.w, self.att_src, self.att_dst]
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParameterStore) -> GatVars {
        GatVars {
            w: tape.param(store, self.w),
            att_src: tape.param(store, self.att_src),
            att_dst: tape.param(store, self.att_dst),
        }
    }
}

/// Layer output plus the attention coefficients (`edges x heads`).
#[derive(Debug, Clone, Copy)]
pub struct GatOutput {
    pub features: Var,
    pub attention: Var,
}

/// Graph attention layer:
///
/// ```text
/// s_ij  = LeakyReLU(a_dst · W e_i + a_src · W e_j)       per head
/// α_ij  = softmax_j∈N(i) s_ij
/// e_i'  = LeakyReLU(Σ_j α_ij W e_j)                       heads concatenated or averaged
/// ```
pub fn gat_layer(
    tape: &mut Tape,
    p: &GatVars,
    cfg: &GatConfig,
    x: Var,
    adj: &Adjacency,
) -> Result<GatOutput, DiffError> {
    let n = tape.shape(x).0;
    if n != adj.num_nodes {
        return Err(DiffError::Shape {
            op: "gat_layer",
            detail: format!("{n} feature rows for {} nodes", adj.num_nodes),
        });
    }
    let (heads, channels) = (cfg.heads, cfg.channels);
    let width = heads * channels;
    if tape.shape(p.w).1 != width {
        return Err(DiffError::Shape {
            op: "gat_layer",
            detail: format!(
                "weight {:?} does not produce {heads} heads of {channels} channels",
                tape.shape(p.w)
            ),
        });
    }
    let xw = tape.matmul(x, p.w)?;

    // per-head block sum: (width x heads)
    let mut block = Tensor::zeros(width, heads);
    for c in 0..width {
        block.data_mut()[c * heads + c / channels] = 1.0;
    }
    let block = tape.constant(block);
    let score = |tape: &mut Tape, att: Var| -> Result<Var, DiffError> {
        let a = tape.broadcast_rows(att, n)?;
        let weighted = tape.mul(xw, a)?;
        tape.matmul(weighted, block)
    };
    let s_src = score(tape, p.att_src)?;
    let s_dst = score(tape, p.att_dst)?;
    let from_src = tape.gather_rows(s_src, adj.src.clone())?;
    let from_dst = tape.gather_rows(s_dst, adj.dst.clone())?;
    let raw = tape.add(from_dst, from_src)?;
    let scores = tape.leaky_relu(raw, cfg.score_slope);
    let attention = tape.segment_softmax(scores, adj.dst.clone(), n)?;

    let head_of_col: Arc<[usize]> = (0..width).map(|c| c / channels).collect();
    let alpha = tape.gather_cols(attention, head_of_col)?;
    let neighbor = tape.gather_rows(xw, adj.src.clone())?;
    let weighted = tape.mul(neighbor, alpha)?;
    let mut agg = tape.segment_sum(weighted, adj.dst.clone(), n)?;
    if !cfg.concat {
        let mut mean = Tensor::zeros(width, channels);
        for c in 0..width {
            mean.data_mut()[c * channels + c % channels] = 1.0 / heads as f64;
        }
        let mean = tape.constant(mean);
        agg = tape.matmul(agg, mean)?;
    }
    let features = tape.leaky_relu(agg, cfg.output_slope);
    Ok(GatOutput {
        features,
        attention,
    })
}
