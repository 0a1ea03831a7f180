//! Instance file format.
//!
//! A single JSON document:
//!
//! ```text
//! {
//!   "version": 1,
//!   "domains": [5, 5, 5],
//!   "functions": [
//!     {"scope": [0, 1], "table": [1.0000000000000000e0, ...]},
//!     ...
//!   ],
//!   "meta": {"family": "wgcp", "params": {"p1": 2.5000000000000000e-1}, "seed": 7}
//! }
//! ```
//!
//! Tables are row-major in scope order. Costs are written in scientific
//! notation with 17 significant digits, which round-trips every `f64` exactly.
//! The writer emits one function per line so files diff cleanly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Deserialize;

use super::{CopInstance, CostFunction, InstanceError, InstanceMeta};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("malformed instance document: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("unsupported instance format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("invalid instance: {0}")]
    Invalid(#[from] InstanceError),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    version: u32,
    domains: Vec<usize>,
    functions: Vec<FunctionDoc>,
    #[serde(default)]
    meta: Option<MetaDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionDoc {
    scope: Vec<usize>,
    table: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaDoc {
    family: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    #[serde(default)]
    seed: Option<u64>,
}

fn push_cost(out: &mut String, c: f64) {
    write!(out, "{c:.16e}").expect("writing to a String cannot fail");
}

fn push_usizes(out: &mut String, xs: &[usize]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write!(out, "{x}").expect("writing to a String cannot fail");
    }
    out.push(']');
}

/// Renders an instance as a deterministic text document.
pub fn serialize(instance: &CopInstance) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"version\": {FORMAT_VERSION},");
    out.push_str("  \"domains\": ");
    push_usizes(&mut out, instance.domains());
    out.push_str(",\n  \"functions\": [");
    for (i, f) in instance.functions().iter().enumerate() {
        out.push_str(if i == 0 { "\n    " } else { ",\n    " });
        out.push_str("{\"scope\": ");
        push_usizes(&mut out, &f.scope);
        out.push_str(", \"table\": [");
        for (j, &c) in f.table.iter().enumerate() {
            if j > 0 {
                out.push_str(", ");
            }
            push_cost(&mut out, c);
        }
        out.push_str("]}");
    }
    if instance.num_functions() > 0 {
        out.push_str("\n  ");
    }
    out.push_str("],\n  \"meta\": {\"family\": ");
    let meta = &instance.meta;
    out.push_str(&serde_json::to_string(&meta.family).expect("string serialization"));
    out.push_str(", \"params\": {");
    for (i, (key, value)) in meta.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&serde_json::to_string(key).expect("string serialization"));
        out.push_str(": ");
        push_cost(&mut out, *value);
    }
    out.push_str("}, \"seed\": ");
    match meta.seed {
        Some(seed) => {
            let _ = write!(out, "{seed}");
        }
        None => out.push_str("null"),
    }
    out.push_str("}\n}\n");
    out
}

/// Parses and validates an instance document.
pub fn deserialize(text: &str) -> Result<CopInstance, FormatError> {
    let doc: InstanceDoc = serde_json::from_str(text)?;
    if doc.version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(doc.version));
    }
    let functions = doc
        .functions
        .into_iter()
        .map(|f| CostFunction::new(f.scope, f.table))
        .collect();
    let meta = doc
        .meta
        .map(|m| InstanceMeta {
            family: m.family,
            params: m.params,
            seed: m.seed,
        })
        .unwrap_or_else(InstanceMeta::custom);
    Ok(CopInstance::new(doc.domains, functions, meta)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_graph::{gen_wgcp, GeneratorConfig};

    #[test]
    fn wgcp_round_trip() {
        let inst = gen_wgcp(&GeneratorConfig::wgcp(25, 0.3, 17)).unwrap();
        let text = serialize(&inst);
        assert_eq!(deserialize(&text).unwrap(), inst);
        assert_eq!(serialize(&deserialize(&text).unwrap()), text);
    }

    #[test]
    fn empty_function_list_round_trips() {
        let inst = CopInstance::new(vec![2, 3], vec![], InstanceMeta::custom()).unwrap();
        let text = serialize(&inst);
        assert_eq!(deserialize(&text).unwrap(), inst);
    }

    #[test]
    fn costs_use_seventeen_digits() {
        let inst = CopInstance::new(
            vec![2],
            vec![CostFunction::new(vec![0], vec![0.1, 1.0 / 3.0])],
            InstanceMeta::custom(),
        )
        .unwrap();
        let text = serialize(&inst);
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert!(text.contains("3.3333333333333331e-1"), "{text}");
        let back = deserialize(&text).unwrap();
        assert_eq!(
            back.function(0).table[1].to_bits(),
            (1.0f64 / 3.0).to_bits()
        );
    }

    #[test]
    fn corrupt_scope_names_function() {
        let text = r#"{"version": 1, "domains": [2, 2],
            "functions": [{"scope": [0, 1], "table": [0, 0, 0, 0]},
                          {"scope": [0, 7], "table": [0, 0, 0, 0]}]}"#;
        let err = deserialize(text).unwrap_err();
        assert!(matches!(
            err,
            FormatError::Invalid(InstanceError::UnknownVariable {
                function: 1,
                var: 7
            })
        ));
        assert!(err.to_string().contains("function 1"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = deserialize("{\"version\": 1,\n \"domains\": [2,, 2]}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(matches!(
            deserialize(r#"{"version": 9, "domains": [], "functions": []}"#),
            Err(FormatError::UnsupportedVersion(9))
        ));
    }
}
