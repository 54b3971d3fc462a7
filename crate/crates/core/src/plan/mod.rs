//! Query plan trees and their sources: `EXPLAIN (FORMAT JSON)` documents,
//! the native corpus format, and the synthetic workload generator.

pub mod corpus;
pub mod explain;
pub mod schema;
pub mod signature;
pub mod synth;

pub use corpus::{read_corpus, write_corpus, Corpus, CorpusHeader};
pub use explain::{parse_explain_json, ExplainOptions};
pub use schema::{AttrSpec, EncodingSpec, KindSchema, PlanSchema};
pub use signature::{structure_signature, StructureSignature};
pub use synth::{synth_generate, KindCoeffs, SynthConfig};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One operator attribute value as found in a plan document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Num(f64),
    Bool(bool),
    Text(String),
    NumVec(Vec<f64>),
}

impl AttrValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            AttrValue::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AttrValue::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttrValue::Text(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_num_vec(&self) -> Option<&[f64]> {
        match self {
            AttrValue::NumVec(v) => Some(v),
            _ => None,
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            AttrValue::Num(v) => v.is_finite(),
            AttrValue::NumVec(v) => v.iter().all(|x| x.is_finite()),
            _ => true,
        }
    }
}

/// One operator instance in a plan tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    /// Canonical operator kind name (e.g. `seq-scan`, `hash-join`).
    pub kind: String,
    /// Attribute map; keys are canonical attribute names.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, AttrValue>,
    /// Observed *inclusive* latency in seconds (the operator plus its whole
    /// subtree), when the plan was executed.
    #[serde(
        default,
        rename = "latency_s",
        skip_serializing_if = "Option::is_none"
    )]
    pub observed_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<PlanNode>,
}

impl PlanNode {
    pub fn new(kind: impl Into<String>) -> Self {
        PlanNode {
            kind: kind.into(),
            attrs: BTreeMap::new(),
            observed_latency: None,
            children: Vec::new(),
        }
    }

    pub fn attr(&self, name: &str) -> Option<&AttrValue> {
        self.attrs.get(name)
    }

    /// Numeric attribute, or `None` if missing or of another type.
    pub fn num_attr(&self, name: &str) -> Option<f64> {
        self.attrs.get(name).and_then(AttrValue::as_num)
    }

    /// Nodes in this subtree, including this one.
    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(PlanNode::node_count).sum::<usize>()
    }

    /// Depth-first pre-order walk: a node precedes its children, children in
    /// order. This is the canonical node ordering everywhere in the crate.
    pub fn preorder(&self) -> Vec<&PlanNode> {
        let mut out = Vec::with_capacity(self.node_count());
        self.collect_preorder(&mut out);
        out
    }

    fn collect_preorder<'a>(&'a self, out: &mut Vec<&'a PlanNode>) {
        out.push(self);
        for c in &self.children {
            c.collect_preorder(out);
        }
    }

    /// Pre-order walk paired with "root.0.1"-style index paths for error
    /// reporting.
    pub fn preorder_paths(&self) -> Vec<(String, &PlanNode)> {
        let mut out = Vec::with_capacity(self.node_count());
        self.collect_paths("root".to_string(), &mut out);
        out
    }

    fn collect_paths<'a>(&'a self, path: String, out: &mut Vec<(String, &'a PlanNode)>) {
        out.push((path.clone(), self));
        for (i, c) in self.children.iter().enumerate() {
            c.collect_paths(format!("{path}.{i}"), out);
        }
    }

    /// True when every node in the subtree carries an observed latency.
    pub fn fully_labeled(&self) -> bool {
        self.observed_latency.is_some() && self.children.iter().all(PlanNode::fully_labeled)
    }

    /// Structural and value sanity checks against a schema: known kinds,
    /// child counts within the kind's arity, finite attributes, and
    /// non-negative finite latencies.
    pub fn validate(&self, schema: &PlanSchema) -> Result<()> {
        for (path, node) in self.preorder_paths() {
            let ks = schema.kind(&node.kind).ok_or_else(|| {
                Error::Schema(format!("unknown operator kind {:?} at {path}", node.kind))
            })?;
            if node.children.len() > ks.max_arity {
                return Err(Error::Schema(format!(
                    "{} children at {path} exceed max arity {} of kind {:?}",
                    node.children.len(),
                    ks.max_arity,
                    node.kind
                )));
            }
            if let Some(l) = node.observed_latency {
                if !(l.is_finite() && l >= 0.0) {
                    return Err(Error::Schema(format!(
                        "latency {l} at {path} must be finite and non-negative"
                    )));
                }
            }
            for (name, value) in &node.attrs {
                if !value.is_finite() {
                    return Err(Error::Schema(format!(
                        "attribute {name:?} at {path} is non-finite"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A whole plan with its identity and optional workload template tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTree {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    pub root: PlanNode,
}

impl PlanTree {
    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn signature(&self) -> StructureSignature {
        structure_signature(&self.root)
    }

    /// Root (whole-plan) latency, if observed.
    pub fn root_latency(&self) -> Option<f64> {
        self.root.observed_latency
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn leaf(kind: &str, latency: f64) -> PlanNode {
        let mut n = PlanNode::new(kind);
        n.observed_latency = Some(latency);
        n
    }

    #[test]
    fn preorder_is_parent_then_children_in_order() {
        let mut root = PlanNode::new("hash-join");
        root.children.push(leaf("seq-scan", 1.0));
        root.children.push(leaf("index-scan", 2.0));
        let order: Vec<&str> = root.preorder().iter().map(|n| n.kind.as_str()).collect();
        assert_eq!(order, ["hash-join", "seq-scan", "index-scan"]);
        assert_eq!(root.node_count(), 3);
    }

    #[test]
    fn paths_name_child_positions() {
        let mut root = PlanNode::new("hash-join");
        let mut sort = PlanNode::new("sort");
        sort.children.push(PlanNode::new("seq-scan"));
        root.children.push(sort);
        root.children.push(PlanNode::new("index-scan"));
        let paths: Vec<String> = root.preorder_paths().into_iter().map(|(p, _)| p).collect();
        assert_eq!(paths, ["root", "root.0", "root.0.0", "root.1"]);
    }

    #[test]
    fn fully_labeled_requires_every_node() {
        let mut root = leaf("sort", 2.0);
        root.children.push(leaf("seq-scan", 1.0));
        assert!(root.fully_labeled());
        root.children[0].observed_latency = None;
        assert!(!root.fully_labeled());
    }

    #[test]
    fn attr_value_json_shapes() {
        let mut attrs: BTreeMap<String, AttrValue> = BTreeMap::new();
        attrs.insert("plan-rows".into(), AttrValue::Num(1000.0));
        attrs.insert("join-type".into(), AttrValue::Text("inner".into()));
        attrs.insert("parallel".into(), AttrValue::Bool(true));
        attrs.insert("attr-mins".into(), AttrValue::NumVec(vec![1.0, 2.0]));
        let json = serde_json::to_string(&attrs).unwrap();
        let back: BTreeMap<String, AttrValue> = serde_json::from_str(&json).unwrap();
        assert_eq!(attrs, back);
        assert_eq!(back["parallel"], AttrValue::Bool(true));
        assert_eq!(back["plan-rows"], AttrValue::Num(1000.0));
    }
}
