use serde::{Deserialize, Serialize};

use super::BpError;
use crate::factor_graph::FactorGraph;

/// Messages on every edge in both directions. Entry `e` of either vector
/// belongs to graph edge `e` and has the length of that edge's variable domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageSet {
    pub v2f: Vec<Vec<f64>>,
    pub f2v: Vec<Vec<f64>>,
    pub iteration: usize,
}

impl MessageSet {
    pub fn zeros(graph: &FactorGraph) -> Self {
        let zeros: Vec<Vec<f64>> = (0..graph.num_edges())
            .map(|e| vec![0.0; graph.edge_domain(e)])
            .collect();
        Self {
            v2f: zeros.clone(),
            f2v: zeros,
            iteration: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v2f
            .iter()
            .chain(&self.f2v)
            .flatten()
            .all(|x| x.is_finite())
    }
}

/// Per-edge damping factors and neighbor weights for one iteration.
///
/// `weights[e]` for edge `e = (i, l)` lists one weight per other edge of
/// variable `i`, in the order of [`FactorGraph::var_edges`] with `e` removed.
/// Degree-one variables get an empty vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub lambda: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

impl HyperParams {
    /// Constant damping and uniform weights `1 / (|N_i| - 1)`.
    pub fn uniform(graph: &FactorGraph, lambda: f64) -> Self {
        let weights = graph
            .edges()
            .iter()
            .map(|edge| {
                let others = graph.degree(edge.var) - 1;
                vec![1.0 / others as f64; others]
            })
            .collect();
        Self {
            lambda: vec![lambda; graph.num_edges()],
            weights,
        }
    }

    /// Checks coverage, ranges, and that each weight vector sums to 1 within 1e-6.
    pub fn validate(&self, graph: &FactorGraph) -> Result<(), BpError> {
        let r = graph.num_edges();
        for len in [self.lambda.len(), self.weights.len()] {
            if len != r {
                return Err(BpError::EdgeCount {
                    expected: r,
                    actual: len,
                });
            }
        }
        for (edge, (&lambda, w)) in self.lambda.iter().zip(&self.weights).enumerate() {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(BpError::LambdaOutOfRange {
                    edge,
                    value: lambda,
                });
            }
            let expected = graph.degree(graph.edge(edge).var) - 1;
            if w.len() != expected {
                return Err(BpError::WeightLength {
                    edge,
                    expected,
                    actual: w.len(),
                });
            }
            if let Some(&value) = w.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(BpError::WeightOutOfRange { edge, value });
            }
            let sum: f64 = w.iter().sum();
            if expected > 0 && (sum - 1.0).abs() > 1e-6 {
                return Err(BpError::WeightSum { edge, sum });
            }
        }
        Ok(())
    }
}

/// Per-variable beliefs: the sum of incoming function-to-variable messages.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefTable(pub Vec<Vec<f64>>);
