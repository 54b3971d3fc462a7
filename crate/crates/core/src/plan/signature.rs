//! Structural equivalence of plans, ignoring attribute values.
//!
//! Two plans with the same signature have isomorphic trees with identical
//! operator kinds at every position, which means the same wiring of neural
//! units. The trainer groups batches by signature so each group shares one
//! circuit shape.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::plan::PlanNode;

/// Canonical string form of a plan's shape, e.g.
/// `hash-join(seq-scan,hash(seq-scan))`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StructureSignature(String);

impl StructureSignature {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StructureSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Computes the signature of the tree rooted at `node`.
pub fn structure_signature(node: &PlanNode) -> StructureSignature {
    let mut s = String::new();
    write_signature(node, &mut s);
    StructureSignature(s)
}

fn write_signature(node: &PlanNode, out: &mut String) {
    out.push_str(&node.kind);
    if !node.children.is_empty() {
        out.push('(');
        for (i, c) in node.children.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write_signature(c, out);
        }
        out.push(')');
    }
}
