//! Exhaustive ground truth for small instances.
//!
//! Both routines walk joint assignments depth-first in lexicographic order
//! (variable 0 slowest). A function's cost is added as soon as the last
//! variable of its scope is fixed.

use crate::factor_graph::{Assignment, CopInstance};

/// Default limit on the number of joint assignments.
pub const DEFAULT_CAP: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("search space of {size} assignments exceeds the cap of {cap}")]
    TooLarge { size: u128, cap: u128 },
    #[error("expected {expected} probability vectors, got {actual}")]
    ProbCount { expected: usize, actual: usize },
    #[error("variable {var}: {actual} probabilities for a domain of {expected}")]
    ProbLength {
        var: usize,
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub assignment: Assignment,
    pub cost: f64,
    /// Number of joint assignments visited.
    pub enumerated: u64,
}

/// Exact minimum with the default cap. Ties go to the lexicographically
/// smallest assignment.
pub fn solve_exact(instance: &CopInstance) -> Result<OracleResult, OracleError> {
    solve_exact_with_cap(instance, DEFAULT_CAP)
}

pub fn solve_exact_with_cap(
    instance: &CopInstance,
    cap: u128,
) -> Result<OracleResult, OracleError> {
    let walk = Walk::new(instance, cap)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut enumerated = 0u64;
    walk.run(|values, cost| {
        enumerated += 1;
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, values.to_vec()));
        }
    });
    let (_, values) = best.expect("an instance has at least one assignment");
    let cost = instance.total_cost_unchecked(&values);
    Ok(OracleResult {
        assignment: Assignment(values),
        cost,
        enumerated,
    })
}

/// Expected total cost when variable `i` takes value `τ` with probability
/// `probs[i][τ]`, independently.
pub fn enumerate_expected_cost(
    instance: &CopInstance,
    probs: &[Vec<f64>],
) -> Result<f64, OracleError> {
    enumerate_expected_cost_with_cap(instance, probs, DEFAULT_CAP)
}

pub fn enumerate_expected_cost_with_cap(
    instance: &CopInstance,
    probs: &[Vec<f64>],
    cap: u128,
) -> Result<f64, OracleError> {
    if probs.len() != instance.num_variables() {
        return Err(OracleError::ProbCount {
            expected: instance.num_variables(),
            actual: probs.len(),
        });
    }
    for (var, p) in probs.iter().enumerate() {
        if p.len() != instance.domain(var) {
            return Err(OracleError::ProbLength {
                var,
                expected: instance.domain(var),
                actual: p.len(),
            });
        }
    }
    let walk = Walk::new(instance, cap)?;
    let mut total = 0.0;
    walk.run(|values, cost| {
        let weight: f64 = values.iter().zip(probs).map(|(&v, p)| p[v]).product();
        total += weight * cost;
    });
    Ok(total)
}

struct Walk<'a> {
    instance: &'a CopInstance,
    /// Functions whose highest scope variable is `i`.
    closing: Vec<Vec<usize>>,
    constant: f64,
}

impl<'a> Walk<'a> {
    fn new(instance: &'a CopInstance, cap: u128) -> Result<Self, OracleError> {
        let size = instance.search_space();
        if size > cap {
            return Err(OracleError::TooLarge { size, cap });
        }
        let mut closing = vec![Vec::new(); instance.num_variables()];
        let mut constant = 0.0;
        for (l, f) in instance.functions().iter().enumerate() {
            match f.scope.iter().max() {
                Some(&last) => closing[last].push(l),
                None => constant += f.table[0],
            }
        }
        Ok(Self {
            instance,
            closing,
            constant,
        })
    }

    fn run(&self, mut visit: impl FnMut(&[usize], f64)) {
        let mut values = vec![0; self.instance.num_variables()];
        self.descend(0, self.constant, &mut values, &mut visit);
    }

    fn descend(
        &self,
        var: usize,
        partial: f64,
        values: &mut [usize],
        visit: &mut impl FnMut(&[usize], f64),
    ) {
        if var == values.len() {
            visit(values, partial);
            return;
        }
        for value in 0..self.instance.domain(var) {
            values[var] = value;
            let mut cost = partial;
            for &l in &self.closing[var] {
                cost += self.instance.function(l).table[self.instance.table_index(l, values)];
            }
            self.descend(var + 1, cost, values, visit);
        }
    }
}
