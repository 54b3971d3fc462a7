//! Operator schemas: which attributes each operator kind carries and how
//! each attribute is encoded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How one attribute turns into numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EncodingSpec {
    /// Single whitened value.
    Numeric,
    /// 0/1 flag.
    Boolean,
    /// One-hot over a vocabulary. `categories` lists values known up front
    /// (kept first, in declared order); values observed during fitting are
    /// appended, and one extra slot always stands for "unknown".
    OneHot { categories: Vec<String> },
    /// Fixed-length vector of whitened values (e.g. per-column statistics).
    NumericVec { len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrSpec {
    pub name: String,
    pub encoding: EncodingSpec,
}

impl AttrSpec {
    fn new(name: &str, encoding: EncodingSpec) -> Self {
        AttrSpec {
            name: name.to_string(),
            encoding,
        }
    }
}

/// Schema entry for one operator kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSchema {
    pub kind: String,
    /// Largest child count an instance of this kind may have.
    pub max_arity: usize,
    pub attrs: Vec<AttrSpec>,
}

/// The full operator schema a model is built against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSchema {
    pub kinds: Vec<KindSchema>,
    /// Kind that absorbs operators the ingest layer does not recognize
    /// (when lenient parsing is on).
    pub fallback_kind: Option<String>,
}

impl PlanSchema {
    pub fn kind(&self, name: &str) -> Option<&KindSchema> {
        self.kinds.iter().find(|k| k.kind == name)
    }

    pub fn kind_names(&self) -> impl Iterator<Item = &str> {
        self.kinds.iter().map(|k| k.kind.as_str())
    }

    /// Internal consistency: unique kind and attribute names, unique one-hot
    /// categories, an existing fallback kind.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for ks in &self.kinds {
            if !seen.insert(ks.kind.as_str()) {
                return Err(Error::Schema(format!("duplicate kind {:?}", ks.kind)));
            }
            let mut attr_seen = std::collections::BTreeSet::new();
            for a in &ks.attrs {
                if !attr_seen.insert(a.name.as_str()) {
                    return Err(Error::Schema(format!(
                        "duplicate attribute {:?} on kind {:?}",
                        a.name, ks.kind
                    )));
                }
                if let EncodingSpec::OneHot { categories } = &a.encoding {
                    let mut cat_seen = std::collections::BTreeSet::new();
                    for c in categories {
                        if !cat_seen.insert(c.as_str()) {
                            return Err(Error::Schema(format!(
                                "duplicate category {c:?} in {:?}.{:?}",
                                ks.kind, a.name
                            )));
                        }
                    }
                }
            }
        }
        if let Some(fb) = &self.fallback_kind {
            if self.kind(fb).is_none() {
                return Err(Error::Schema(format!(
                    "fallback kind {fb:?} is not declared"
                )));
            }
        }
        Ok(())
    }
}

/// Number of per-relation statistic slots (per-column minimum / median /
/// maximum vectors) in the default schema.
pub const DEFAULT_STAT_SLOTS: usize = 3;

fn common_attrs() -> Vec<AttrSpec> {
    vec![
        AttrSpec::new("plan-width", EncodingSpec::Numeric),
        AttrSpec::new("plan-rows", EncodingSpec::Numeric),
        AttrSpec::new("plan-buffers", EncodingSpec::Numeric),
        AttrSpec::new("estimated-ios", EncodingSpec::Numeric),
        AttrSpec::new("total-cost", EncodingSpec::Numeric),
    ]
}

fn with_common(extra: Vec<AttrSpec>) -> Vec<AttrSpec> {
    let mut attrs = common_attrs();
    attrs.extend(extra);
    attrs
}

fn stat_vectors() -> Vec<AttrSpec> {
    ["attr-mins", "attr-medians", "attr-maxs"]
        .iter()
        .map(|n| {
            AttrSpec::new(
                n,
                EncodingSpec::NumericVec {
                    len: DEFAULT_STAT_SLOTS,
                },
            )
        })
        .collect()
}

fn open_vocab() -> EncodingSpec {
    EncodingSpec::OneHot { categories: vec![] }
}

impl Default for PlanSchema {
    /// The stock relational operator schema. Every kind shares the
    /// optimizer estimates (width, rows, buffers, I/Os, cost); scans add
    /// relation identity and per-column statistics, joins add join type and
    /// parent relationship, and so on.
    fn default() -> Self {
        let join_attrs = || {
            with_common(vec![
                AttrSpec::new(
                    "join-type",
                    EncodingSpec::OneHot {
                        categories: ["semi", "inner", "anti", "full"]
                            .map(String::from)
                            .to_vec(),
                    },
                ),
                AttrSpec::new(
                    "parent-relationship",
                    EncodingSpec::OneHot {
                        categories: ["inner", "outer", "subquery"].map(String::from).to_vec(),
                    },
                ),
            ])
        };
        let kinds = vec![
            KindSchema {
                kind: "seq-scan".into(),
                max_arity: 0,
                attrs: with_common(
                    std::iter::once(AttrSpec::new("relation-name", open_vocab()))
                        .chain(stat_vectors())
                        .collect(),
                ),
            },
            KindSchema {
                kind: "index-scan".into(),
                max_arity: 0,
                attrs: with_common(
                    vec![
                        AttrSpec::new("relation-name", open_vocab()),
                        AttrSpec::new("index-name", open_vocab()),
                        AttrSpec::new("scan-direction", EncodingSpec::Boolean),
                    ]
                    .into_iter()
                    .chain(stat_vectors())
                    .collect(),
                ),
            },
            KindSchema {
                kind: "filter".into(),
                max_arity: 1,
                attrs: common_attrs(),
            },
            KindSchema {
                kind: "sort".into(),
                max_arity: 1,
                attrs: with_common(vec![
                    AttrSpec::new("sort-key", open_vocab()),
                    AttrSpec::new("sort-method", open_vocab()),
                ]),
            },
            KindSchema {
                kind: "hash".into(),
                max_arity: 1,
                attrs: with_common(vec![
                    AttrSpec::new("hash-buckets", EncodingSpec::Numeric),
                    AttrSpec::new("hash-algorithm", open_vocab()),
                ]),
            },
            KindSchema {
                kind: "aggregate".into(),
                max_arity: 1,
                attrs: with_common(vec![
                    AttrSpec::new(
                        "strategy",
                        EncodingSpec::OneHot {
                            categories: ["plain", "sorted", "hashed"].map(String::from).to_vec(),
                        },
                    ),
                    AttrSpec::new("partial-mode", EncodingSpec::Boolean),
                    AttrSpec::new("operator", open_vocab()),
                ]),
            },
            KindSchema {
                kind: "nested-loop-join".into(),
                max_arity: 2,
                attrs: join_attrs(),
            },
            KindSchema {
                kind: "hash-join".into(),
                max_arity: 2,
                attrs: join_attrs(),
            },
            KindSchema {
                kind: "merge-join".into(),
                max_arity: 2,
                attrs: join_attrs(),
            },
            KindSchema {
                kind: "other".into(),
                max_arity: 4,
                attrs: common_attrs(),
            },
        ];
        PlanSchema {
            kinds,
            fallback_kind: Some("other".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_is_consistent() {
        let s = PlanSchema::default();
        s.validate().unwrap();
        assert!(s.kind("hash-join").is_some());
        assert_eq!(s.kind("seq-scan").unwrap().max_arity, 0);
        assert_eq!(s.kind("hash-join").unwrap().max_arity, 2);
        assert!(s.kind("no-such-kind").is_none());
    }

    #[test]
    fn join_type_declares_the_stock_categories_in_order() {
        let s = PlanSchema::default();
        let join = s.kind("hash-join").unwrap();
        let jt = join.attrs.iter().find(|a| a.name == "join-type").unwrap();
        match &jt.encoding {
            EncodingSpec::OneHot { categories } => {
                assert_eq!(categories, &["semi", "inner", "anti", "full"]);
            }
            other => panic!("unexpected encoding {other:?}"),
        }
    }

    #[test]
    fn duplicate_kind_fails_validation() {
        let mut s = PlanSchema::default();
        let dup = s.kinds[0].clone();
        s.kinds.push(dup);
        assert!(s.validate().is_err());
    }

    #[test]
    fn missing_fallback_fails_validation() {
        let mut s = PlanSchema::default();
        s.fallback_kind = Some("ghost".into());
        assert!(s.validate().is_err());
    }
}
