use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::InstanceError;

/// A cost function over an ordered scope. The table is dense and row-major in
/// scope order: the last scope variable varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CostFunction {
    pub scope: Vec<usize>,
    pub table: Vec<f64>,
}

impl CostFunction {
    pub fn new(scope: Vec<usize>, table: Vec<f64>) -> Self {
        Self { scope, table }
    }

    pub fn arity(&self) -> usize {
        self.scope.len()
    }

    /// Largest minus smallest table entry.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .table
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| {
                (lo.min(c), hi.max(c))
            });
        if self.table.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

/// Provenance recorded alongside an instance; carried through the file format.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceMeta {
    pub family: String,
    pub params: BTreeMap<String, f64>,
    pub seed: Option<u64>,
}

impl InstanceMeta {
    pub fn custom() -> Self {
        Self {
            family: "custom".to_string(),
            ..Self::default()
        }
    }
}

/// A constraint optimization problem: finite-domain variables `0..n` and a list
/// of cost functions whose sum is to be minimized.
#[derive(Debug, Clone, PartialEq)]
pub struct CopInstance {
    domains: Vec<usize>,
    functions: Vec<CostFunction>,
    pub meta: InstanceMeta,
}

/// A complete assignment: one value index per variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(pub Vec<usize>);

impl Assignment {
    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl CopInstance {
    /// Builds and validates an instance.
    pub fn new(
        domains: Vec<usize>,
        functions: Vec<CostFunction>,
        meta: InstanceMeta,
    ) -> Result<Self, InstanceError> {
        let instance = Self {
            domains,
            functions,
            meta,
        };
        instance.validate()?;
        Ok(instance)
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        for (var, &d) in self.domains.iter().enumerate() {
            if d == 0 {
                return Err(InstanceError::EmptyDomain { var });
            }
        }
        for (index, f) in self.functions.iter().enumerate() {
            let mut expected = 1usize;
            for (pos, &var) in f.scope.iter().enumerate() {
                let Some(&d) = self.domains.get(var) else {
                    return Err(InstanceError::UnknownVariable {
                        function: index,
                        var,
                    });
                };
                if f.scope[..pos].contains(&var) {
                    return Err(InstanceError::DuplicateScopeVariable {
                        function: index,
                        var,
                    });
                }
                expected = expected
                    .checked_mul(d)
                    .ok_or(InstanceError::TableTooLarge { function: index })?;
            }
            if f.table.len() != expected {
                return Err(InstanceError::TableLength {
                    function: index,
                    expected,
                    actual: f.table.len(),
                });
            }
            if let Some(entry) = f.table.iter().position(|c| !c.is_finite()) {
                return Err(InstanceError::NonFiniteCost {
                    function: index,
                    entry,
                });
            }
        }
        Ok(())
    }

    pub fn num_variables(&self) -> usize {
        self.domains.len()
    }

    pub fn num_functions(&self) -> usize {
        self.functions.len()
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn domain(&self, var: usize) -> usize {
        self.domains[var]
    }

    pub fn max_domain(&self) -> usize {
        self.domains.iter().copied().max().unwrap_or(0)
    }

    pub fn functions(&self) -> &[CostFunction] {
        &self.functions
    }

    pub fn function(&self, index: usize) -> &CostFunction {
        &self.functions[index]
    }

    /// Number of joint assignments, saturating at `u128::MAX`.
    pub fn search_space(&self) -> u128 {
        self.domains
            .iter()
            .fold(1u128, |acc, &d| acc.saturating_mul(d as u128))
    }

    /// Row-major strides of a function's table.
    pub fn strides(&self, function: usize) -> Vec<usize> {
        let scope = &self.functions[function].scope;
        let mut strides = vec![1; scope.len()];
        for pos in (0..scope.len().saturating_sub(1)).rev() {
            strides[pos] = strides[pos + 1] * self.domains[scope[pos + 1]];
        }
        strides
    }

    /// Table index of the projection of `values` onto a function's scope.
    pub fn table_index(&self, function: usize, values: &[usize]) -> usize {
        let scope = &self.functions[function].scope;
        scope
            .iter()
            .fold(0, |idx, &var| idx * self.domains[var] + values[var])
    }

    pub fn check_assignment(&self, a: &Assignment) -> Result<(), InstanceError> {
        if a.len() != self.domains.len() {
            return Err(InstanceError::IncompleteAssignment {
                expected: self.domains.len(),
                actual: a.len(),
            });
        }
        for (var, (&value, &domain)) in a.0.iter().zip(&self.domains).enumerate() {
            if value >= domain {
                return Err(InstanceError::ValueOutOfRange { var, value, domain });
            }
        }
        Ok(())
    }

    /// Sum of every function evaluated on the projection of `a`.
    pub fn total_cost(&self, a: &Assignment) -> Result<f64, InstanceError> {
        self.check_assignment(a)?;
        Ok(self.total_cost_unchecked(&a.0))
    }

    pub(crate) fn total_cost_unchecked(&self, values: &[usize]) -> f64 {
        (0..self.functions.len())
            .map(|f| self.functions[f].table[self.table_index(f, values)])
            .sum()
    }

    /// Replaces every function by two copies scaled by `rho` and `1 - rho`.
    /// Copies of function `l` land at indices `2l` and `2l + 1`.
    pub fn split_scfg(&self, rho: f64) -> Result<CopInstance, InstanceError> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(InstanceError::InvalidSplitRatio(rho));
        }
        let functions = self
            .functions
            .iter()
            .flat_map(|f| {
                let a =
                    CostFunction::new(f.scope.clone(), f.table.iter().map(|c| rho * c).collect());
                let b = CostFunction::new(
                    f.scope.clone(),
                    f.table.iter().map(|c| (1.0 - rho) * c).collect(),
                );
                [a, b]
            })
            .collect();
        let mut meta = self.meta.clone();
        meta.params.insert("scfg_rho".to_string(), rho);
        Ok(CopInstance {
            domains: self.domains.clone(),
            functions,
            meta,
        })
    }
}
