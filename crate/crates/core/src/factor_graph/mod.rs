//! COP instances, their factor graphs, benchmark generators and the on-disk
//! instance format.

mod format;
mod generators;
mod graph;
mod instance;

pub use format::{deserialize, serialize, FormatError, FORMAT_VERSION};
pub use generators::{
    gen_random_cop, gen_random_tree, gen_scale_free, gen_small_world, gen_wgcp, generate, Family,
    GeneratorConfig,
};
pub use graph::{Edge, FactorGraph};
pub use instance::{Assignment, CopInstance, CostFunction, InstanceMeta};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InstanceError {
    #[error("variable {var} has an empty domain")]
    EmptyDomain { var: usize },
    #[error("function {function} references unknown variable {var}")]
    UnknownVariable { function: usize, var: usize },
    #[error("function {function} lists variable {var} twice in its scope")]
    DuplicateScopeVariable { function: usize, var: usize },
    #[error("function {function} table has {actual} entries, expected {expected}")]
    TableLength {
        function: usize,
        expected: usize,
        actual: usize,
    },
    #[error("function {function} table is too large to index")]
    TableTooLarge { function: usize },
    #[error("function {function} has a non-finite cost at entry {entry}")]
    NonFiniteCost { function: usize, entry: usize },
    #[error("assignment covers {actual} variables, expected {expected}")]
    IncompleteAssignment { expected: usize, actual: usize },
    #[error("value {value} of variable {var} is outside its domain of size {domain}")]
    ValueOutOfRange {
        var: usize,
        value: usize,
        domain: usize,
    },
    #[error("split ratio must lie in (0, 1), got {0}")]
    InvalidSplitRatio(f64),
    #[error("invalid generator configuration: {0}")]
    InvalidGenerator(String),
}
