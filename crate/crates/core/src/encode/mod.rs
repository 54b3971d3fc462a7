//! Fitted feature encoders.
//!
//! An encoder is fit once over a training corpus and then maps any operator
//! node of a known kind to a fixed-width numeric vector:
//!
//! * numeric attributes are whitened with the population mean and standard
//!   deviation observed during fitting (constant columns keep a unit
//!   standard deviation so they encode to zero instead of exploding);
//! * booleans become 0/1;
//! * categorical attributes become one-hot vectors over a vocabulary of the
//!   schema-declared categories (in declared order) followed by values
//!   observed during fitting (sorted), plus one trailing slot for values
//!   never seen until encoding time;
//! * fixed-length numeric vectors are whitened per slot.
//!
//! Missing values encode to zero in every slot they would have occupied.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::plan::{AttrValue, EncodingSpec, PlanNode, PlanSchema, PlanTree};

/// Relative floor below which a fitted standard deviation is treated as
/// zero (the column is constant up to rounding) and clamped to 1.
const STD_CLAMP_REL: f64 = 1e-12;

/// One attribute's fitted encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum FittedEncoding {
    Numeric {
        mean: f64,
        std: f64,
    },
    Boolean,
    OneHot {
        /// Known values; one extra implicit slot catches everything else.
        vocab: Vec<String>,
    },
    NumericVec {
        len: usize,
        means: Vec<f64>,
        stds: Vec<f64>,
    },
}

impl FittedEncoding {
    pub fn width(&self) -> usize {
        match self {
            FittedEncoding::Numeric { .. } => 1,
            FittedEncoding::Boolean => 1,
            FittedEncoding::OneHot { vocab } => vocab.len() + 1,
            FittedEncoding::NumericVec { len, .. } => *len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrEncoder {
    pub name: String,
    pub encoding: FittedEncoding,
}

/// Fitted encoder for one operator kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindEncoder {
    pub kind: String,
    pub max_arity: usize,
    pub attrs: Vec<AttrEncoder>,
    /// Total encoded width (sum of attribute widths).
    pub width: usize,
}

impl KindEncoder {
    /// Slot offset of an attribute within this kind's feature vector.
    pub fn attr_offset(&self, name: &str) -> Option<(usize, &FittedEncoding)> {
        let mut offset = 0;
        for a in &self.attrs {
            if a.name == name {
                return Some((offset, &a.encoding));
            }
            offset += a.encoding.width();
        }
        None
    }
}

/// Fitted feature encoder covering every kind of its schema. Kinds that
/// never occurred in the fitting corpus carry neutral statistics (mean 0,
/// std 1, empty vocabularies) so the encoder stays closed under the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    /// Sorted by kind name.
    pub kinds: Vec<KindEncoder>,
}

impl FeatureEncoder {
    /// Fits an encoder over every node of every tree.
    pub fn fit(trees: &[PlanTree], schema: &PlanSchema) -> Result<Self> {
        schema.validate()?;
        if trees.is_empty() {
            return Err(Error::Usage("cannot fit an encoder on an empty corpus".into()));
        }
        // (kind, attr) -> observed values
        let mut observed: BTreeMap<(&str, &str), Vec<&AttrValue>> = BTreeMap::new();
        for tree in trees {
            for node in tree.root.preorder() {
                let ks = schema.kind(&node.kind).ok_or_else(|| {
                    Error::Encoding(format!(
                        "corpus kind {:?} (plan {}) is not in the schema",
                        node.kind, tree.id
                    ))
                })?;
                for spec in &ks.attrs {
                    if let Some(v) = node.attrs.get(&spec.name) {
                        observed
                            .entry((ks.kind.as_str(), spec.name.as_str()))
                            .or_default()
                            .push(v);
                    }
                }
            }
        }

        let mut kind_names: Vec<&str> = schema.kind_names().collect();
        kind_names.sort_unstable();
        let mut kinds = Vec::with_capacity(kind_names.len());
        for name in kind_names {
            let ks = schema.kind(name).expect("listed above");
            let mut attrs = Vec::with_capacity(ks.attrs.len());
            for spec in &ks.attrs {
                let values = observed
                    .get(&(name, spec.name.as_str()))
                    .map(Vec::as_slice)
                    .unwrap_or(&[]);
                let encoding = fit_attr(name, &spec.name, &spec.encoding, values)?;
                attrs.push(AttrEncoder {
                    name: spec.name.clone(),
                    encoding,
                });
            }
            let width = attrs.iter().map(|a| a.encoding.width()).sum();
            kinds.push(KindEncoder {
                kind: name.to_string(),
                max_arity: ks.max_arity,
                attrs,
                width,
            });
        }
        Ok(FeatureEncoder { kinds })
    }

    pub fn kind(&self, name: &str) -> Option<&KindEncoder> {
        self.kinds
            .binary_search_by(|k| k.kind.as_str().cmp(name))
            .ok()
            .map(|i| &self.kinds[i])
    }

    /// Encoded feature width of a kind.
    pub fn feature_width(&self, kind: &str) -> Result<usize> {
        self.kind(kind)
            .map(|k| k.width)
            .ok_or_else(|| Error::Encoding(format!("unknown kind {kind:?}")))
    }

    /// Encodes one node's attributes into its kind's feature vector.
    pub fn encode(&self, node: &PlanNode) -> Result<Vec<f64>> {
        let ke = self
            .kind(&node.kind)
            .ok_or_else(|| Error::Encoding(format!("unknown kind {:?}", node.kind)))?;
        let mut out = Vec::with_capacity(ke.width);
        for a in &ke.attrs {
            encode_attr(&ke.kind, a, node.attrs.get(&a.name), &mut out)?;
        }
        debug_assert_eq!(out.len(), ke.width);
        Ok(out)
    }
}

fn type_err(kind: &str, attr: &str, expected: &str, got: &AttrValue) -> Error {
    Error::Encoding(format!(
        "attribute {attr:?} of kind {kind:?} expects {expected}, got {got:?}"
    ))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= STD_CLAMP_REL * mean.abs().max(1.0) {
        (mean, 1.0)
    } else {
        (mean, std)
    }
}

fn fit_attr(
    kind: &str,
    attr: &str,
    spec: &EncodingSpec,
    values: &[&AttrValue],
) -> Result<FittedEncoding> {
    match spec {
        EncodingSpec::Numeric => {
            let mut nums = Vec::with_capacity(values.len());
            for v in values {
                nums.push(v.as_num().ok_or_else(|| type_err(kind, attr, "a number", v))?);
            }
            let (mean, std) = if nums.is_empty() {
                (0.0, 1.0)
            } else {
                mean_std(&nums)
            };
            Ok(FittedEncoding::Numeric { mean, std })
        }
        EncodingSpec::Boolean => {
            for v in values {
                v.as_bool().ok_or_else(|| type_err(kind, attr, "a boolean", v))?;
            }
            Ok(FittedEncoding::Boolean)
        }
        EncodingSpec::OneHot { categories } => {
            let declared: BTreeSet<&str> = categories.iter().map(String::as_str).collect();
            let mut extra: BTreeSet<&str> = BTreeSet::new();
            for v in values {
                let text = v.as_text().ok_or_else(|| type_err(kind, attr, "a string", v))?;
                if !declared.contains(text) {
                    extra.insert(text);
                }
            }
            let mut vocab = categories.clone();
            vocab.extend(extra.into_iter().map(String::from));
            Ok(FittedEncoding::OneHot { vocab })
        }
        EncodingSpec::NumericVec { len } => {
            let mut slots: Vec<Vec<f64>> = vec![Vec::new(); *len];
            for v in values {
                let vec = v
                    .as_num_vec()
                    .ok_or_else(|| type_err(kind, attr, "a numeric vector", v))?;
                for (i, x) in vec.iter().take(*len).enumerate() {
                    slots[i].push(*x);
                }
            }
            let mut means = Vec::with_capacity(*len);
            let mut stds = Vec::with_capacity(*len);
            for slot in &slots {
                let (m, s) = if slot.is_empty() {
                    (0.0, 1.0)
                } else {
                    mean_std(slot)
                };
                means.push(m);
                stds.push(s);
            }
            Ok(FittedEncoding::NumericVec {
                len: *len,
                means,
                stds,
            })
        }
    }
}

fn encode_attr(
    kind: &str,
    a: &AttrEncoder,
    value: Option<&AttrValue>,
    out: &mut Vec<f64>,
) -> Result<()> {
    match (&a.encoding, value) {
        (FittedEncoding::Numeric { .. }, None) => out.push(0.0),
        (FittedEncoding::Numeric { mean, std }, Some(v)) => {
            let x = v
                .as_num()
                .ok_or_else(|| type_err(kind, &a.name, "a number", v))?;
            out.push((x - mean) / std);
        }
        (FittedEncoding::Boolean, None) => out.push(0.0),
        (FittedEncoding::Boolean, Some(v)) => {
            let b = v
                .as_bool()
                .ok_or_else(|| type_err(kind, &a.name, "a boolean", v))?;
            out.push(if b { 1.0 } else { 0.0 });
        }
        (FittedEncoding::OneHot { vocab }, None) => {
            out.extend(std::iter::repeat(0.0).take(vocab.len() + 1));
        }
        (FittedEncoding::OneHot { vocab }, Some(v)) => {
            let text = v
                .as_text()
                .ok_or_else(|| type_err(kind, &a.name, "a string", v))?;
            let hit = vocab.iter().position(|c| c == text).unwrap_or(vocab.len());
            for i in 0..=vocab.len() {
                out.push(if i == hit { 1.0 } else { 0.0 });
            }
        }
        (FittedEncoding::NumericVec { len, .. }, None) => {
            out.extend(std::iter::repeat(0.0).take(*len));
        }
        (
            FittedEncoding::NumericVec { len, means, stds },
            Some(v),
        ) => {
            let vec = v
                .as_num_vec()
                .ok_or_else(|| type_err(kind, &a.name, "a numeric vector", v))?;
            for i in 0..*len {
                match vec.get(i) {
                    Some(x) => out.push((x - means[i]) / stds[i]),
                    None => out.push(0.0),
                }
            }
        }
    }
    Ok(())
}

pub const ENCODER_FORMAT: &str = "qppnet-encoder";
pub const ENCODER_VERSION: u32 = 1;

/// On-disk wrapper around a fitted encoder, with provenance fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderFile {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_sha256: Option<String>,
    pub encoder: FeatureEncoder,
}

impl EncoderFile {
    pub fn new(encoder: FeatureEncoder) -> Self {
        EncoderFile {
            format: ENCODER_FORMAT.into(),
            version: ENCODER_VERSION,
            tool_version: None,
            corpus_sha256: None,
            encoder,
        }
    }

    /// Canonical serialized form; hashing and writing both use these bytes,
    /// so a file's hash can be recomputed from its contents alone.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("encoder serialization");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: EncoderFile = serde_json::from_str(text)
            .map_err(|e| Error::Artifact(format!("bad encoder file: {e}")))?;
        if file.format != ENCODER_FORMAT {
            return Err(Error::Artifact(format!(
                "not an encoder file (format {:?})",
                file.format
            )));
        }
        if file.version != ENCODER_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported encoder version {} (expected {ENCODER_VERSION})",
                file.version
            )));
        }
        Ok(file)
    }

    /// SHA-256 (hex) of the canonical serialized form.
    pub fn sha256_hex(&self) -> String {
        sha256_hex(self.to_json_string().as_bytes())
    }
}

/// Hex-encoded SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::schema::{AttrSpec, KindSchema};

    fn tree_of(nodes: Vec<PlanNode>) -> Vec<PlanTree> {
        nodes
            .into_iter()
            .enumerate()
            .map(|(i, root)| PlanTree {
                id: format!("p{i}"),
                template: None,
                root,
            })
            .collect()
    }

    fn scan(rows: f64) -> PlanNode {
        let mut n = PlanNode::new("seq-scan");
        n.attrs.insert("plan-rows".into(), AttrValue::Num(rows));
        n
    }

    #[test]
    fn whitens_with_population_statistics() {
        let schema = PlanSchema::default();
        let trees = tree_of(vec![scan(1.0), scan(2.0), scan(3.0)]);
        let enc = FeatureEncoder::fit(&trees, &schema).unwrap();
        let ke = enc.kind("seq-scan").unwrap();
        let (offset, fitted) = ke.attr_offset("plan-rows").unwrap();
        match fitted {
            FittedEncoding::Numeric { mean, std } => {
                assert!((mean - 2.0).abs() < 1e-12);
                assert!((std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        let v = enc.encode(&scan(1.0)).unwrap();
        assert!((v[offset] - (-1.224744871391589)).abs() < 1e-9);
        let v = enc.encode(&scan(2.0)).unwrap();
        assert!(v[offset].abs() < 1e-12);
        let v = enc.encode(&scan(3.0)).unwrap();
        assert!((v[offset] - 1.224744871391589).abs() < 1e-9);
    }

    #[test]
    fn constant_columns_clamp_to_unit_std_and_encode_to_zero() {
        let schema = PlanSchema::default();
        let trees = tree_of(vec![scan(7.0), scan(7.0), scan(7.0)]);
        let enc = FeatureEncoder::fit(&trees, &schema).unwrap();
        let ke = enc.kind("seq-scan").unwrap();
        let (offset, fitted) = ke.attr_offset("plan-rows").unwrap();
        match fitted {
            FittedEncoding::Numeric { std, .. } => assert_eq!(*std, 1.0),
            other => panic!("unexpected {other:?}"),
        }
        let v = enc.encode(&scan(7.0)).unwrap();
        assert_eq!(v[offset], 0.0);
    }

    #[test]
    fn declared_vocabulary_keeps_its_order_with_unknown_slot_last() {
        let schema = PlanSchema::default();
        let mut join = PlanNode::new("hash-join");
        join.attrs
            .insert("join-type".into(), AttrValue::Text("inner".into()));
        join.children.push(scan(1.0));
        join.children.push(scan(2.0));
        let enc = FeatureEncoder::fit(&tree_of(vec![join.clone()]), &schema).unwrap();
        let ke = enc.kind("hash-join").unwrap();
        let (offset, fitted) = ke.attr_offset("join-type").unwrap();
        match fitted {
            FittedEncoding::OneHot { vocab } => {
                assert_eq!(vocab, &["semi", "inner", "anti", "full"]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let v = enc.encode(&join).unwrap();
        assert_eq!(&v[offset..offset + 5], &[0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn open_vocabulary_collects_observed_values_and_catches_unseen_ones() {
        // a schema whose join-type declares no categories up front
        let schema = PlanSchema {
            kinds: vec![KindSchema {
                kind: "join".into(),
                max_arity: 2,
                attrs: vec![AttrSpec {
                    name: "join-type".into(),
                    encoding: EncodingSpec::OneHot { categories: vec![] },
                }],
            }],
            fallback_kind: None,
        };
        let mut join = PlanNode::new("join");
        join.attrs
            .insert("join-type".into(), AttrValue::Text("inner".into()));
        let enc = FeatureEncoder::fit(&tree_of(vec![join.clone()]), &schema).unwrap();
        assert_eq!(enc.feature_width("join").unwrap(), 2);
        assert_eq!(enc.encode(&join).unwrap(), vec![1.0, 0.0]);

        join.attrs
            .insert("join-type".into(), AttrValue::Text("cross".into()));
        assert_eq!(enc.encode(&join).unwrap(), vec![0.0, 1.0]);

        join.attrs.remove("join-type");
        assert_eq!(enc.encode(&join).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn missing_values_encode_to_zero_everywhere() {
        let schema = PlanSchema::default();
        let trees = tree_of(vec![scan(10.0), scan(20.0)]);
        let enc = FeatureEncoder::fit(&trees, &schema).unwrap();
        let bare = PlanNode::new("seq-scan");
        let v = enc.encode(&bare).unwrap();
        assert_eq!(v.len(), enc.feature_width("seq-scan").unwrap());
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn numeric_vectors_whiten_per_slot_and_pad_missing_slots() {
        let schema = PlanSchema::default();
        let mut a = scan(1.0);
        a.attrs
            .insert("attr-mins".into(), AttrValue::NumVec(vec![1.0, 10.0, 5.0]));
        let mut b = scan(2.0);
        b.attrs
            .insert("attr-mins".into(), AttrValue::NumVec(vec![3.0, 30.0])); // slot 2 absent
        let enc = FeatureEncoder::fit(&tree_of(vec![a.clone(), b.clone()]), &schema).unwrap();
        let ke = enc.kind("seq-scan").unwrap();
        let (offset, fitted) = ke.attr_offset("attr-mins").unwrap();
        match fitted {
            FittedEncoding::NumericVec { means, stds, .. } => {
                assert_eq!(means, &[2.0, 20.0, 5.0]);
                assert_eq!(stds[0], 1.0); // population std of {1,3}
                assert_eq!(stds[1], 10.0);
                assert_eq!(stds[2], 1.0); // single value -> clamped
            }
            other => panic!("unexpected {other:?}"),
        }
        let va = enc.encode(&a).unwrap();
        assert_eq!(&va[offset..offset + 3], &[-1.0, -1.0, 0.0]);
        let vb = enc.encode(&b).unwrap();
        assert_eq!(&vb[offset..offset + 3], &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_corpus_is_a_usage_error() {
        let schema = PlanSchema::default();
        assert!(matches!(
            FeatureEncoder::fit(&[], &schema),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn encoding_an_unknown_kind_fails() {
        let schema = PlanSchema::default();
        let enc = FeatureEncoder::fit(&tree_of(vec![scan(1.0)]), &schema).unwrap();
        let err = enc.encode(&PlanNode::new("quantum-scan")).unwrap_err();
        assert!(matches!(err, Error::Encoding(_)), "{err}");
    }

    #[test]
    fn type_mismatch_names_kind_and_attribute() {
        let schema = PlanSchema::default();
        let mut bad = scan(1.0);
        bad.attrs
            .insert("plan-rows".into(), AttrValue::Text("many".into()));
        let err = FeatureEncoder::fit(&tree_of(vec![bad]), &schema).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("plan-rows") && msg.contains("seq-scan"), "{msg}");
    }

    #[test]
    fn covers_kinds_never_seen_in_the_corpus() {
        let schema = PlanSchema::default();
        let enc = FeatureEncoder::fit(&tree_of(vec![scan(5.0)]), &schema).unwrap();
        // merge-join never occurred, but the encoder still covers it
        let width = enc.feature_width("merge-join").unwrap();
        assert!(width > 0);
        let mut join = PlanNode::new("merge-join");
        join.attrs
            .insert("plan-rows".into(), AttrValue::Num(3.0));
        let v = enc.encode(&join).unwrap();
        assert_eq!(v.len(), width);
    }

    #[test]
    fn encoder_file_round_trips_and_hash_is_stable() {
        let schema = PlanSchema::default();
        let enc = FeatureEncoder::fit(&tree_of(vec![scan(1.0), scan(4.0)]), &schema).unwrap();
        let file = EncoderFile::new(enc);
        let text = file.to_json_string();
        let back = EncoderFile::from_json_str(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.sha256_hex(), file.sha256_hex());
        assert_eq!(file.sha256_hex().len(), 64);
        // rewriting produces the identical byte stream
        assert_eq!(back.to_json_string(), text);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(EncoderFile::from_json_str("{\"format\":\"x\",\"version\":1,\"encoder\":{\"kinds\":[]}}").is_err());
        assert!(EncoderFile::from_json_str("not json").is_err());
    }
}
