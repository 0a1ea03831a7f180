//! Synchronous min-sum message passing.
//!
//! One iteration composes every variable-to-function message from the previous
//! iteration's messages, then recomputes every function-to-variable message from
//! the fresh variable-to-function messages. Both half-steps are Jacobi sweeps:
//! no edge reads a value written in the same sweep, so results do not depend
//! on edge order.
//!
//! Variable-to-function messages are shifted so their minimum entry is zero.
//! Function-to-variable messages are left as computed.

mod messages;
pub mod tape;

pub use messages::{BeliefTable, HyperParams, MessageSet};

use crate::factor_graph::{Assignment, CopInstance, FactorGraph};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BpError {
    #[error("hyperparameters cover {actual} edges, graph has {expected}")]
    EdgeCount { expected: usize, actual: usize },
    #[error("edge {edge}: weight vector has {actual} entries, expected {expected}")]
    WeightLength {
        edge: usize,
        expected: usize,
        actual: usize,
    },
    #[error("edge {edge}: damping factor {value} outside [0, 1]")]
    LambdaOutOfRange { edge: usize, value: f64 },
    #[error("damping factor {0} outside (0, 1]")]
    InvalidDamping(f64),
    #[error("edge {edge}: neighbor weight {value} outside [0, 1]")]
    WeightOutOfRange { edge: usize, value: f64 },
    #[error("edge {edge}: weights sum to {sum}, expected 1")]
    WeightSum { edge: usize, sum: f64 },
    #[error("non-finite value in {what} on edge {edge}")]
    NonFinite { what: &'static str, edge: usize },
    #[error("message shape mismatch on edge {edge}: {left} vs {right} entries")]
    ShapeMismatch {
        edge: usize,
        left: usize,
        right: usize,
    },
}

fn check_finite(what: &'static str, msgs: &[Vec<f64>]) -> Result<(), BpError> {
    match msgs.iter().position(|m| m.iter().any(|x| !x.is_finite())) {
        Some(edge) => Err(BpError::NonFinite { what, edge }),
        None => Ok(()),
    }
}

fn check_shapes(graph: &FactorGraph, prev: &MessageSet) -> Result<(), BpError> {
    let r = graph.num_edges();
    for msgs in [&prev.v2f, &prev.f2v] {
        if msgs.len() != r {
            return Err(BpError::EdgeCount {
                expected: r,
                actual: msgs.len(),
            });
        }
        for (edge, m) in msgs.iter().enumerate() {
            if m.len() != graph.edge_domain(edge) {
                return Err(BpError::ShapeMismatch {
                    edge,
                    left: m.len(),
                    right: graph.edge_domain(edge),
                });
            }
        }
    }
    check_finite("variable-to-function messages", &prev.v2f)?;
    check_finite("function-to-variable messages", &prev.f2v)
}

/// Subtracts each message's minimum entry.
pub fn normalize(msgs: &mut [Vec<f64>]) {
    for m in msgs {
        let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
        if lo.is_finite() {
            m.iter_mut().for_each(|x| *x -= lo);
        }
    }
}

/// Weighted damped composition, before normalization:
/// `λ·prev + (1-λ)(|N_i|-1) Σ_m w_m μ_{m→i}` over the other neighbors `m`.
pub fn v2f_compose(
    graph: &FactorGraph,
    prev: &MessageSet,
    hp: &HyperParams,
) -> Result<Vec<Vec<f64>>, BpError> {
    check_shapes(graph, prev)?;
    hp.validate(graph)?;
    let out = graph
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            let lambda = hp.lambda[e];
            let others = graph.var_edges(edge.var).len() - 1;
            let scale = (1.0 - lambda) * others as f64;
            let mut acc = vec![0.0; graph.edge_domain(e)];
            let incoming = graph.var_edges(edge.var).iter().filter(|&&m| m != e);
            for (&w, &m) in hp.weights[e].iter().zip(incoming) {
                for (a, &mu) in acc.iter_mut().zip(&prev.f2v[m]) {
                    *a += w * mu;
                }
            }
            acc.iter()
                .zip(&prev.v2f[e])
                .map(|(&s, &old)| lambda * old + scale * s)
                .collect()
        })
        .collect();
    Ok(out)
}

/// [`v2f_compose`] followed by min-subtraction.
pub fn v2f_step(
    graph: &FactorGraph,
    prev: &MessageSet,
    hp: &HyperParams,
) -> Result<Vec<Vec<f64>>, BpError> {
    let mut out = v2f_compose(graph, prev, hp)?;
    normalize(&mut out);
    Ok(out)
}

/// Plain min-sum composition: the sum of the other incoming messages.
pub fn v2f_compose_vanilla(
    graph: &FactorGraph,
    prev: &MessageSet,
) -> Result<Vec<Vec<f64>>, BpError> {
    check_shapes(graph, prev)?;
    Ok(graph
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| sum_others(graph, prev, e, edge.var))
        .collect())
}

pub fn v2f_step_vanilla(graph: &FactorGraph, prev: &MessageSet) -> Result<Vec<Vec<f64>>, BpError> {
    let mut out = v2f_compose_vanilla(graph, prev)?;
    normalize(&mut out);
    Ok(out)
}

/// Homogeneous damping: `λ·prev + (1-λ)·Σ μ_{m→i}`.
pub fn v2f_compose_damped(
    graph: &FactorGraph,
    prev: &MessageSet,
    lambda: f64,
) -> Result<Vec<Vec<f64>>, BpError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(BpError::InvalidDamping(lambda));
    }
    check_shapes(graph, prev)?;
    Ok(graph
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            sum_others(graph, prev, e, edge.var)
                .into_iter()
                .zip(&prev.v2f[e])
                .map(|(s, &old)| lambda * old + (1.0 - lambda) * s)
                .collect()
        })
        .collect())
}

pub fn v2f_step_damped(
    graph: &FactorGraph,
    prev: &MessageSet,
    lambda: f64,
) -> Result<Vec<Vec<f64>>, BpError> {
    let mut out = v2f_compose_damped(graph, prev, lambda)?;
    normalize(&mut out);
    Ok(out)
}

fn sum_others(graph: &FactorGraph, prev: &MessageSet, e: usize, var: usize) -> Vec<f64> {
    let mut acc = vec![0.0; graph.domain(var)];
    for &m in graph.var_edges(var).iter().filter(|&&m| m != e) {
        for (a, &mu) in acc.iter_mut().zip(&prev.f2v[m]) {
            *a += mu;
        }
    }
    acc
}

/// Function-to-variable messages: for each target value, the minimum over the
/// other scope variables of the cost plus their incoming messages.
pub fn f2v_step(
    graph: &FactorGraph,
    instance: &CopInstance,
    v2f: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, BpError> {
    if v2f.len() != graph.num_edges() {
        return Err(BpError::EdgeCount {
            expected: graph.num_edges(),
            actual: v2f.len(),
        });
    }
    check_finite("variable-to-function messages", v2f)?;
    let mut out: Vec<Vec<f64>> = (0..graph.num_edges())
        .map(|e| vec![f64::INFINITY; graph.edge_domain(e)])
        .collect();
    let mut values = Vec::new();
    for (function, f) in instance.functions().iter().enumerate() {
        let edges = graph.function_edges(function);
        let dims: Vec<usize> = f.scope.iter().map(|&v| instance.domain(v)).collect();
        values.clear();
        values.resize(dims.len(), 0usize);
        for &cost in &f.table {
            for (slot, &target) in edges.iter().enumerate() {
                let mut cand = cost;
                for (j, &e) in edges.iter().enumerate() {
                    if j != slot {
                        cand += v2f[e][values[j]];
                    }
                }
                let best = &mut out[target][values[slot]];
                if cand < *best {
                    *best = cand;
                }
            }
            // row-major odometer
            for pos in (0..dims.len()).rev() {
                values[pos] += 1;
                if values[pos] < dims[pos] {
                    break;
                }
                values[pos] = 0;
            }
        }
    }
    check_finite("function-to-variable messages", &out)?;
    Ok(out)
}

/// Per-variable sum of incoming function-to-variable messages.
pub fn beliefs(graph: &FactorGraph, f2v: &[Vec<f64>]) -> BeliefTable {
    BeliefTable(
        (0..graph.num_variables())
            .map(|var| {
                let mut b = vec![0.0; graph.domain(var)];
                for &e in graph.var_edges(var) {
                    for (acc, &mu) in b.iter_mut().zip(&f2v[e]) {
                        *acc += mu;
                    }
                }
                b
            })
            .collect(),
    )
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

/// Minimum-belief value per variable.
pub fn decide(beliefs: &BeliefTable) -> Assignment {
    Assignment(beliefs.0.iter().map(|b| argmin(b)).collect())
}

/// True iff every entry of both message directions moved by at most `eps`.
pub fn converged(curr: &MessageSet, prev: &MessageSet, eps: f64) -> Result<bool, BpError> {
    let mut max_delta: f64 = 0.0;
    for (a, b) in [(&curr.v2f, &prev.v2f), (&curr.f2v, &prev.f2v)] {
        if a.len() != b.len() {
            return Err(BpError::EdgeCount {
                expected: b.len(),
                actual: a.len(),
            });
        }
        for (edge, (x, y)) in a.iter().zip(b).enumerate() {
            if x.len() != y.len() {
                return Err(BpError::ShapeMismatch {
                    edge,
                    left: x.len(),
                    right: y.len(),
                });
            }
            for (p, q) in x.iter().zip(y) {
                max_delta = max_delta.max((p - q).abs());
            }
        }
    }
    Ok(max_delta <= eps)
}

/// Message update rule for the non-learned solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Damping {
    None,
    Constant(f64),
}

/// One full synchronous iteration with a fixed update rule.
pub fn iterate(
    graph: &FactorGraph,
    instance: &CopInstance,
    prev: &MessageSet,
    damping: Damping,
) -> Result<MessageSet, BpError> {
    let v2f = match damping {
        Damping::None => v2f_step_vanilla(graph, prev)?,
        Damping::Constant(lambda) => v2f_step_damped(graph, prev, lambda)?,
    };
    let f2v = f2v_step(graph, instance, &v2f)?;
    Ok(MessageSet {
        v2f,
        f2v,
        iteration: prev.iteration + 1,
    })
}

/// One full synchronous iteration with per-edge hyperparameters.
pub fn iterate_weighted(
    graph: &FactorGraph,
    instance: &CopInstance,
    prev: &MessageSet,
    hp: &HyperParams,
) -> Result<MessageSet, BpError> {
    let v2f = v2f_step(graph, prev, hp)?;
    let f2v = f2v_step(graph, instance, &v2f)?;
    Ok(MessageSet {
        v2f,
        f2v,
        iteration: prev.iteration + 1,
    })
}
