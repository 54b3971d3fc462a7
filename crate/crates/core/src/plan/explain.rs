//! Ingest for `EXPLAIN (FORMAT JSON)` documents.
//!
//! Accepts a single document, a top-level array of documents, or several
//! whitespace/newline-separated documents in one string. Node types and
//! attribute keys are mapped to the canonical schema names; execution
//! timings (`Actual Total Time`, milliseconds, inclusive of the subtree)
//! become `observed_latency` in seconds when present.

use serde_json::Value;

use crate::error::{Error, Result};
use crate::plan::{AttrValue, PlanNode, PlanSchema, PlanTree};

#[derive(Debug, Clone)]
pub struct ExplainOptions {
    /// Reject unknown node types instead of mapping them to the schema's
    /// fallback kind.
    pub strict: bool,
    /// Prefix for generated plan ids (`{prefix}-{index}`).
    pub id_prefix: String,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            strict: false,
            id_prefix: "explain".into(),
        }
    }
}

/// Parses every EXPLAIN document found in `text`.
pub fn parse_explain_json(
    text: &str,
    schema: &PlanSchema,
    options: &ExplainOptions,
) -> Result<Vec<PlanTree>> {
    let mut docs = Vec::new();
    for (vi, value) in serde_json::Deserializer::from_str(text)
        .into_iter::<Value>()
        .enumerate()
    {
        let value = value.map_err(|e| Error::Parse {
            path: format!("$[{vi}]"),
            detail: e.to_string(),
        })?;
        match value {
            Value::Array(items) => docs.extend(items),
            other => docs.push(other),
        }
    }
    if docs.is_empty() {
        return Err(Error::Parse {
            path: "$".into(),
            detail: "no JSON documents found".into(),
        });
    }
    let mut trees = Vec::with_capacity(docs.len());
    for (i, doc) in docs.iter().enumerate() {
        let path = format!("$[{i}]");
        let plan = doc.get("Plan").ok_or_else(|| Error::Parse {
            path: path.clone(),
            detail: "document has no \"Plan\" key".into(),
        })?;
        let root = convert_node(plan, &format!("{path}.Plan"), schema, options)?;
        let tree = PlanTree {
            id: format!("{}-{}", options.id_prefix, i),
            template: None,
            root,
        };
        tree.root.validate(schema)?;
        trees.push(tree);
    }
    Ok(trees)
}

fn convert_node(
    value: &Value,
    path: &str,
    schema: &PlanSchema,
    options: &ExplainOptions,
) -> Result<PlanNode> {
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        path: path.into(),
        detail: "plan node is not a JSON object".into(),
    })?;
    let node_type = obj
        .get("Node Type")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Parse {
            path: path.into(),
            detail: "missing \"Node Type\"".into(),
        })?;
    let kind = match canonical_kind(node_type) {
        Some(k) => k.to_string(),
        None => {
            if options.strict {
                return Err(Error::Parse {
                    path: path.into(),
                    detail: format!("unknown node type {node_type:?}"),
                });
            }
            schema.fallback_kind.clone().ok_or_else(|| Error::Parse {
                path: path.into(),
                detail: format!("unknown node type {node_type:?} and schema has no fallback"),
            })?
        }
    };

    let mut node = PlanNode::new(kind);
    for (key, raw) in obj {
        let key_path = || format!("{path}.{key}");
        match key.as_str() {
            "Plan Width" => put_num(&mut node, "plan-width", raw, key_path)?,
            "Plan Rows" => put_num(&mut node, "plan-rows", raw, key_path)?,
            "Plan Buffers" => put_num(&mut node, "plan-buffers", raw, key_path)?,
            "Estimated I/Os" => put_num(&mut node, "estimated-ios", raw, key_path)?,
            "Total Cost" => put_num(&mut node, "total-cost", raw, key_path)?,
            "Hash Buckets" => put_num(&mut node, "hash-buckets", raw, key_path)?,
            "Join Type" => put_lower(&mut node, "join-type", raw, key_path)?,
            "Parent Relationship" => {
                let text = expect_str(raw, key_path)?;
                let mapped = match text {
                    "SubPlan" | "InitPlan" => "subquery".to_string(),
                    other => other.to_ascii_lowercase(),
                };
                node.attrs
                    .insert("parent-relationship".into(), AttrValue::Text(mapped));
            }
            "Strategy" => put_lower(&mut node, "strategy", raw, key_path)?,
            "Sort Method" => put_text(&mut node, "sort-method", raw, key_path)?,
            "Hash Algorithm" => put_text(&mut node, "hash-algorithm", raw, key_path)?,
            "Relation Name" => put_text(&mut node, "relation-name", raw, key_path)?,
            "Index Name" => put_text(&mut node, "index-name", raw, key_path)?,
            "Operator" => put_text(&mut node, "operator", raw, key_path)?,
            "Sort Key" => {
                // emitted as an array of key expressions
                let joined = match raw {
                    Value::Array(items) => items
                        .iter()
                        .map(|v| v.as_str().map(str::to_string).ok_or(()))
                        .collect::<std::result::Result<Vec<_>, ()>>()
                        .map(|v| v.join(", "))
                        .map_err(|_| Error::Parse {
                            path: key_path(),
                            detail: "sort key array holds a non-string".into(),
                        })?,
                    Value::String(s) => s.clone(),
                    _ => {
                        return Err(Error::Parse {
                            path: key_path(),
                            detail: "sort key is neither array nor string".into(),
                        })
                    }
                };
                node.attrs.insert("sort-key".into(), AttrValue::Text(joined));
            }
            "Scan Direction" => {
                let text = expect_str(raw, key_path)?;
                node.attrs.insert(
                    "scan-direction".into(),
                    AttrValue::Bool(!text.eq_ignore_ascii_case("backward")),
                );
            }
            "Partial Mode" => {
                let text = expect_str(raw, key_path)?;
                node.attrs.insert(
                    "partial-mode".into(),
                    AttrValue::Bool(!text.eq_ignore_ascii_case("simple")),
                );
            }
            "Attribute Mins" => put_num_vec(&mut node, "attr-mins", raw, key_path)?,
            "Attribute Medians" => put_num_vec(&mut node, "attr-medians", raw, key_path)?,
            "Attribute Maxs" => put_num_vec(&mut node, "attr-maxs", raw, key_path)?,
            "Actual Total Time" => {
                let ms = expect_num(raw, key_path)?;
                node.observed_latency = Some(ms / 1000.0);
            }
            "Plans" => {} // handled below, in order
            _ => {}       // unmapped keys are ignored
        }
    }

    if let Some(plans) = obj.get("Plans") {
        let items = plans.as_array().ok_or_else(|| Error::Parse {
            path: format!("{path}.Plans"),
            detail: "\"Plans\" is not an array".into(),
        })?;
        for (ci, child) in items.iter().enumerate() {
            let child_path = format!("{path}.Plans[{ci}]");
            node.children
                .push(convert_node(child, &child_path, schema, options)?);
        }
    }
    Ok(node)
}

/// Canonical kind for a raw `Node Type`, or `None` if unrecognized.
pub fn canonical_kind(node_type: &str) -> Option<&'static str> {
    Some(match node_type {
        "Seq Scan" | "Sequential Scan" => "seq-scan",
        "Index Scan" | "Index Only Scan" => "index-scan",
        "Sort" | "Incremental Sort" => "sort",
        "Hash" => "hash",
        "Hash Join" => "hash-join",
        "Merge Join" => "merge-join",
        "Nested Loop" => "nested-loop-join",
        "Aggregate" | "GroupAggregate" | "HashAggregate" | "Group" => "aggregate",
        "Filter" => "filter",
        _ => return None,
    })
}

fn expect_num(raw: &Value, path: impl Fn() -> String) -> Result<f64> {
    raw.as_f64()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            path: path(),
            detail: format!("expected a finite number, got {raw}"),
        })
}

fn expect_str<'v>(raw: &'v Value, path: impl Fn() -> String) -> Result<&'v str> {
    raw.as_str().ok_or_else(|| Error::Parse {
        path: path(),
        detail: format!("expected a string, got {raw}"),
    })
}

fn put_num(
    node: &mut PlanNode,
    name: &str,
    raw: &Value,
    path: impl Fn() -> String,
) -> Result<()> {
    let v = expect_num(raw, path)?;
    node.attrs.insert(name.into(), AttrValue::Num(v));
    Ok(())
}

fn put_text(
    node: &mut PlanNode,
    name: &str,
    raw: &Value,
    path: impl Fn() -> String,
) -> Result<()> {
    let v = expect_str(raw, path)?;
    node.attrs.insert(name.into(), AttrValue::Text(v.into()));
    Ok(())
}

fn put_lower(
    node: &mut PlanNode,
    name: &str,
    raw: &Value,
    path: impl Fn() -> String,
) -> Result<()> {
    let v = expect_str(raw, path)?;
    node.attrs
        .insert(name.into(), AttrValue::Text(v.to_ascii_lowercase()));
    Ok(())
}

fn put_num_vec(
    node: &mut PlanNode,
    name: &str,
    raw: &Value,
    path: impl Fn() -> String,
) -> Result<()> {
    let items = raw.as_array().ok_or_else(|| Error::Parse {
        path: path(),
        detail: "expected an array of numbers".into(),
    })?;
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        out.push(item.as_f64().filter(|v| v.is_finite()).ok_or_else(|| {
            Error::Parse {
                path: path(),
                detail: format!("expected a finite number, got {item}"),
            }
        })?);
    }
    node.attrs.insert(name.into(), AttrValue::NumVec(out));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> PlanSchema {
        PlanSchema::default()
    }

    const SINGLE: &str = r#"[{
        "Plan": {
            "Node Type": "Seq Scan",
            "Relation Name": "orders",
            "Plan Rows": 1000,
            "Plan Width": 8,
            "Total Cost": 15.0,
            "Actual Total Time": 12.5
        },
        "Execution Time": 12.9
    }]"#;

    #[test]
    fn parses_a_single_scan_with_timing() {
        let trees = parse_explain_json(SINGLE, &schema(), &ExplainOptions::default()).unwrap();
        assert_eq!(trees.len(), 1);
        let root = &trees[0].root;
        assert_eq!(root.kind, "seq-scan");
        assert_eq!(root.num_attr("plan-rows"), Some(1000.0));
        assert_eq!(
            root.attr("relation-name").unwrap().as_text(),
            Some("orders")
        );
        // 12.5 ms -> 0.0125 s
        assert_eq!(root.observed_latency, Some(0.0125));
        assert!(root.children.is_empty());
    }

    #[test]
    fn parses_nested_join_and_lowercases_categories() {
        let text = r#"[{
            "Plan": {
                "Node Type": "Hash Join",
                "Join Type": "Inner",
                "Total Cost": 100.0,
                "Plan Rows": 50,
                "Plans": [
                    {"Node Type": "Seq Scan", "Relation Name": "a", "Parent Relationship": "Outer", "Plan Rows": 10},
                    {"Node Type": "Hash", "Parent Relationship": "Inner", "Plan Rows": 40,
                     "Plans": [{"Node Type": "Seq Scan", "Relation Name": "b", "Plan Rows": 40}]}
                ]
            }
        }]"#;
        let trees = parse_explain_json(text, &schema(), &ExplainOptions::default()).unwrap();
        let root = &trees[0].root;
        assert_eq!(root.kind, "hash-join");
        assert_eq!(root.attr("join-type").unwrap().as_text(), Some("inner"));
        assert_eq!(root.children.len(), 2);
        assert_eq!(root.children[0].kind, "seq-scan");
        assert_eq!(root.children[1].kind, "hash");
        assert_eq!(root.children[1].children[0].kind, "seq-scan");
        assert_eq!(
            root.children[0].attr("parent-relationship").unwrap().as_text(),
            Some("outer")
        );
        // no ANALYZE data anywhere
        assert!(!root.fully_labeled());
    }

    #[test]
    fn unknown_node_type_goes_to_fallback_when_lenient() {
        let text = r#"[{"Plan": {"Node Type": "Gather", "Total Cost": 5.0,
            "Plans": [{"Node Type": "Seq Scan", "Plan Rows": 1}]}}]"#;
        let lenient = parse_explain_json(text, &schema(), &ExplainOptions::default()).unwrap();
        assert_eq!(lenient[0].root.kind, "other");

        let strict = ExplainOptions {
            strict: true,
            ..ExplainOptions::default()
        };
        let err = parse_explain_json(text, &schema(), &strict).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        assert!(err.to_string().contains("Gather"));
    }

    #[test]
    fn malformed_json_reports_a_parse_error() {
        let err =
            parse_explain_json("{\"Plan\": ", &schema(), &ExplainOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn missing_plan_key_is_an_error_with_path() {
        let err = parse_explain_json(r#"[{"Query": 1}]"#, &schema(), &ExplainOptions::default())
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("$[0]"), "{msg}");
        assert!(msg.contains("Plan"), "{msg}");
    }

    #[test]
    fn sort_keys_join_and_scan_direction_becomes_flag() {
        let text = r#"[{
            "Plan": {
                "Node Type": "Sort",
                "Sort Key": ["a.x", "a.y DESC"],
                "Plans": [{
                    "Node Type": "Index Scan",
                    "Index Name": "a_pk",
                    "Scan Direction": "Backward",
                    "Attribute Mins": [1, 5],
                    "Plan Rows": 9
                }]
            }
        }]"#;
        let trees = parse_explain_json(text, &schema(), &ExplainOptions::default()).unwrap();
        let sort = &trees[0].root;
        assert_eq!(sort.attr("sort-key").unwrap().as_text(), Some("a.x, a.y DESC"));
        let scan = &sort.children[0];
        assert_eq!(scan.attr("scan-direction").unwrap().as_bool(), Some(false));
        assert_eq!(
            scan.attr("attr-mins").unwrap().as_num_vec(),
            Some(&[1.0, 5.0][..])
        );
    }

    #[test]
    fn newline_delimited_documents_all_parse() {
        let two = format!("{SINGLE}\n{SINGLE}");
        let trees = parse_explain_json(&two, &schema(), &ExplainOptions::default()).unwrap();
        assert_eq!(trees.len(), 2);
        assert_ne!(trees[0].id, trees[1].id);
    }
}
