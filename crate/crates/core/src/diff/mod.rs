//! Minimal reverse-mode differentiation: dense tensors, a recording tape,
//! recurrent and graph-attention building blocks, and Adam.

mod nn;
mod params;
mod tape;
mod tensor;

pub use nn::{
    gat_layer, gru_cell, Adjacency, GatConfig, GatOutput, GatParams, GatVars, GruParams, GruVars,
};
pub use params::{ParamId, ParameterStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tape::{Gradients, ParamGrads, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward needs a scalar root, got a {rows}x{cols} tensor")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("no gradient for parameter {0}")]
    MissingGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Central-difference gradient of `f` with respect to every entry of `x`.
pub fn finite_difference(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe);
        probe.data_mut()[k] = orig - h;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        grad.data_mut()[k] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests;
