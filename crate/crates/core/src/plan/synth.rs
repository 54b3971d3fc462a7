//! Synthetic workload generator.
//!
//! Plans are drawn from a small set of randomly built *templates* (fixed
//! tree shape, operator kinds, and categorical attributes); each generated
//! plan re-jitters the numeric attributes, so structurally identical plans
//! still cover a range of cardinalities. Latencies follow a closed-form
//! recipe, bottom-up and inclusive:
//!
//! * leaf: `a_kind * rows + c_kind`
//! * internal: `sum(child inclusive) + b_kind * rows_out + c_kind`, plus a
//!   `j_kind * rows_left * rows_right` interaction on two-input operators
//! * finally the inclusive value is perturbed multiplicatively with
//!   lognormal measurement noise `exp(sigma * z)`, `z ~ N(0,1)`.
//!
//! Every node also carries a synthetic optimizer cost (`total-cost`) built
//! from *different* per-kind coefficients and without the interaction term,
//! so cost tracks latency imperfectly — the way real optimizer estimates do.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::corpus::{Corpus, CorpusHeader};
use crate::plan::{AttrValue, PlanNode, PlanSchema, PlanTree};

/// Latency and cost coefficients for one operator kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindCoeffs {
    /// Seconds per output row.
    pub per_row: f64,
    /// Fixed seconds per invocation.
    pub constant: f64,
    /// Seconds per (left rows x right rows) on two-input operators.
    pub join_factor: f64,
    /// Synthetic optimizer cost units per output row.
    pub cost_per_row: f64,
    /// Synthetic optimizer fixed cost.
    pub cost_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub plan_count: usize,
    pub template_count: usize,
    /// Tree depth in levels, inclusive; depth 1 is a single leaf.
    pub depth_range: (usize, usize),
    /// Desired child count for internal nodes, clipped to each kind's arity.
    pub fanout_range: (usize, usize),
    /// Leaf base cardinality, drawn log-uniformly.
    pub rows_range: (f64, f64),
    /// Lognormal noise scale on observed latencies (0 disables noise).
    pub noise_sigma: f64,
    pub seed: u64,
    pub leaf_kinds: Vec<String>,
    pub internal_kinds: Vec<String>,
    pub coeffs: BTreeMap<String, KindCoeffs>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut coeffs = BTreeMap::new();
        let c = |per_row, constant, join_factor, cost_per_row, cost_constant| KindCoeffs {
            per_row,
            constant,
            join_factor,
            cost_per_row,
            cost_constant,
        };
        coeffs.insert("seq-scan".into(), c(2.0e-6, 0.005, 0.0, 1.0, 50.0));
        // the synthetic optimizer is too optimistic about index scans
        coeffs.insert("index-scan".into(), c(4.0e-6, 0.002, 0.0, 0.5, 20.0));
        coeffs.insert("filter".into(), c(0.5e-6, 0.001, 0.0, 0.1, 5.0));
        coeffs.insert("sort".into(), c(3.0e-6, 0.004, 0.0, 2.0, 20.0));
        coeffs.insert("hash".into(), c(1.5e-6, 0.003, 0.0, 1.0, 10.0));
        coeffs.insert("aggregate".into(), c(1.0e-6, 0.002, 0.0, 0.5, 10.0));
        coeffs.insert("hash-join".into(), c(2.5e-6, 0.005, 1.2e-9, 1.5, 30.0));
        coeffs.insert("merge-join".into(), c(2.0e-6, 0.004, 0.6e-9, 1.2, 30.0));
        // nested loops degrade on large inputs; the cost model misses that
        // entirely because it has no input-product term
        coeffs.insert("nested-loop-join".into(), c(1.0e-6, 0.003, 4.0e-9, 1.0, 20.0));
        coeffs.insert("other".into(), c(1.0e-6, 0.002, 0.0, 1.0, 10.0));
        SynthConfig {
            plan_count: 100,
            template_count: 10,
            depth_range: (1, 3),
            fanout_range: (1, 2),
            rows_range: (2.0e3, 5.0e4),
            noise_sigma: 0.1,
            seed: 42,
            leaf_kinds: vec!["seq-scan".into(), "index-scan".into()],
            internal_kinds: vec![
                "hash-join".into(),
                "merge-join".into(),
                "nested-loop-join".into(),
                "sort".into(),
                "aggregate".into(),
                "filter".into(),
            ],
            coeffs,
        }
    }
}

impl SynthConfig {
    fn validate(&self, schema: &PlanSchema) -> Result<()> {
        // plan_count == 0 is allowed and yields an empty corpus
        if self.plan_count > 0 && self.template_count == 0 {
            return Err(Error::Usage("template_count must be at least 1".into()));
        }
        let (dlo, dhi) = self.depth_range;
        if dlo == 0 || dlo > dhi {
            return Err(Error::Usage(format!(
                "depth_range ({dlo}, {dhi}) must satisfy 1 <= lo <= hi"
            )));
        }
        let (flo, fhi) = self.fanout_range;
        if flo == 0 || flo > fhi {
            return Err(Error::Usage(format!(
                "fanout_range ({flo}, {fhi}) must satisfy 1 <= lo <= hi"
            )));
        }
        let (rlo, rhi) = self.rows_range;
        if !(rlo > 0.0 && rlo <= rhi && rhi.is_finite()) {
            return Err(Error::Usage(format!(
                "rows_range ({rlo}, {rhi}) must satisfy 0 < lo <= hi"
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Usage(format!(
                "noise_sigma must be finite and non-negative, got {}",
                self.noise_sigma
            )));
        }
        if self.leaf_kinds.is_empty() || self.internal_kinds.is_empty() {
            return Err(Error::Usage(
                "leaf_kinds and internal_kinds must be non-empty".into(),
            ));
        }
        for k in self.leaf_kinds.iter().chain(&self.internal_kinds) {
            let ks = schema
                .kind(k)
                .ok_or_else(|| Error::Usage(format!("kind {k:?} is not in the schema")))?;
            if self.internal_kinds.contains(k) && ks.max_arity == 0 {
                return Err(Error::Usage(format!(
                    "internal kind {k:?} cannot take children"
                )));
            }
            let co = self
                .coeffs
                .get(k)
                .ok_or_else(|| Error::Usage(format!("no coefficients for kind {k:?}")))?;
            for v in [
                co.per_row,
                co.constant,
                co.join_factor,
                co.cost_per_row,
                co.cost_constant,
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Usage(format!(
                        "coefficients for {k:?} must be finite and non-negative"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Noise-free inclusive latency of a leaf: `per_row * rows + constant`.
pub fn leaf_latency(coeffs: &KindCoeffs, rows: f64) -> f64 {
    coeffs.per_row * rows + coeffs.constant
}

/// Noise-free *own* (exclusive) latency of an internal node. The input
/// product term applies only when the node has exactly two inputs.
pub fn internal_own_latency(coeffs: &KindCoeffs, rows_out: f64, child_rows: &[f64]) -> f64 {
    let mut own = coeffs.per_row * rows_out + coeffs.constant;
    if let [left, right] = child_rows {
        own += coeffs.join_factor * left * right;
    }
    own
}

struct TemplateNode {
    kind: String,
    base_rows: f64, // leaves only
    width: f64,
    reduce: f64, // internal: output rows as a fraction of input rows
    buf_per_row: f64,
    ios_per_row: f64,
    cats: BTreeMap<String, AttrValue>,
    children: Vec<TemplateNode>,
}

const RELATIONS: [&str; 8] = [
    "lineitem", "orders", "customer", "part", "supplier", "nation", "region", "partsupp",
];
const SORT_METHODS: [&str; 3] = ["quicksort", "external-merge", "top-n"];
const AGG_OPERATORS: [&str; 5] = ["sum", "avg", "count", "min", "max"];
const JOIN_TYPES: [&str; 4] = ["inner", "inner", "semi", "full"]; // inner twice: most common

fn build_template(
    config: &SynthConfig,
    schema: &PlanSchema,
    rng: &mut ChaCha8Rng,
    levels_left: usize,
) -> TemplateNode {
    let leaf = levels_left <= 1;
    let kind = if leaf {
        config.leaf_kinds.choose(rng).unwrap().clone()
    } else {
        config.internal_kinds.choose(rng).unwrap().clone()
    };
    let max_arity = schema.kind(&kind).map(|k| k.max_arity).unwrap_or(0);

    let mut cats = BTreeMap::new();
    let (lo, hi) = config.rows_range;
    let base_rows = (rng.random_range(lo.ln()..=hi.ln())).exp();
    match kind.as_str() {
        "seq-scan" | "index-scan" => {
            let rel = *RELATIONS.choose(rng).unwrap();
            cats.insert("relation-name".into(), AttrValue::Text(rel.into()));
            if kind == "index-scan" {
                cats.insert("index-name".into(), AttrValue::Text(format!("{rel}_pkey")));
                cats.insert("scan-direction".into(), AttrValue::Bool(rng.random_bool(0.8)));
            }
        }
        "sort" => {
            let rel = *RELATIONS.choose(rng).unwrap();
            cats.insert("sort-key".into(), AttrValue::Text(format!("{rel}.k1")));
            cats.insert(
                "sort-method".into(),
                AttrValue::Text((*SORT_METHODS.choose(rng).unwrap()).into()),
            );
        }
        "aggregate" => {
            cats.insert(
                "strategy".into(),
                AttrValue::Text(
                    (*["plain", "sorted", "hashed"].choose(rng).unwrap()).into(),
                ),
            );
            cats.insert("partial-mode".into(), AttrValue::Bool(rng.random_bool(0.2)));
            cats.insert(
                "operator".into(),
                AttrValue::Text((*AGG_OPERATORS.choose(rng).unwrap()).into()),
            );
        }
        "hash-join" | "merge-join" | "nested-loop-join" => {
            cats.insert(
                "join-type".into(),
                AttrValue::Text((*JOIN_TYPES.choose(rng).unwrap()).into()),
            );
        }
        _ => {}
    }

    let reduce = match kind.as_str() {
        "aggregate" => rng.random_range(0.01..0.2),
        "filter" => rng.random_range(0.2..0.9),
        "hash-join" | "merge-join" | "nested-loop-join" => rng.random_range(0.3..1.2),
        _ => 1.0,
    };

    let mut node = TemplateNode {
        kind,
        base_rows,
        width: rng.random_range(4..=64) as f64,
        reduce,
        buf_per_row: rng.random_range(0.01..0.1),
        ios_per_row: rng.random_range(0.001..0.02),
        cats,
        children: Vec::new(),
    };
    if !leaf {
        let (flo, fhi) = config.fanout_range;
        let wanted = rng.random_range(flo..=fhi);
        let n_children = wanted.clamp(1, max_arity.max(1));
        for _ in 0..n_children {
            node.children
                .push(build_template(config, schema, rng, levels_left - 1));
        }
    }
    node
}

/// Instantiates one plan from a template: jitters leaf cardinalities,
/// recomputes derived rows/costs bottom-up, computes noise-free inclusive
/// latencies, then applies per-node lognormal observation noise.
/// Returns the root node; `(rows, cost, latency)` bubble up the recursion.
fn instantiate(
    template: &TemplateNode,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> (PlanNode, f64, f64, f64) {
    let coeffs = &config.coeffs[&template.kind];
    let mut node = PlanNode::new(template.kind.clone());
    node.attrs.extend(template.cats.clone());

    let mut child_rows = Vec::with_capacity(template.children.len());
    let mut child_cost = 0.0;
    let mut child_latency = 0.0;
    for child in &template.children {
        let (cn, rows, cost, lat) = instantiate(child, config, rng);
        child_rows.push(rows);
        child_cost += cost;
        child_latency += lat;
        node.children.push(cn);
    }

    let rows = if template.children.is_empty() {
        // log-uniform jitter of the template's base cardinality
        let jitter = rng.random_range((0.5f64).ln()..(2.0f64).ln()).exp();
        (template.base_rows * jitter).max(1.0).round()
    } else if child_rows.len() == 2 {
        (child_rows[0].max(child_rows[1]) * template.reduce).max(1.0).round()
    } else {
        (child_rows[0] * template.reduce).max(1.0).round()
    };

    let (cost, latency) = if template.children.is_empty() {
        (
            coeffs.cost_per_row * rows + coeffs.cost_constant,
            leaf_latency(coeffs, rows),
        )
    } else {
        (
            child_cost + coeffs.cost_per_row * rows + coeffs.cost_constant,
            child_latency + internal_own_latency(coeffs, rows, &child_rows),
        )
    };

    node.attrs.insert("plan-rows".into(), AttrValue::Num(rows));
    node.attrs
        .insert("plan-width".into(), AttrValue::Num(template.width));
    node.attrs.insert(
        "plan-buffers".into(),
        AttrValue::Num((rows * template.buf_per_row).ceil()),
    );
    node.attrs.insert(
        "estimated-ios".into(),
        AttrValue::Num((rows * template.ios_per_row).ceil()),
    );
    node.attrs
        .insert("total-cost".into(), AttrValue::Num(round6(cost)));
    if template.kind == "hash" {
        node.attrs.insert(
            "hash-buckets".into(),
            AttrValue::Num(rows.max(1.0).log2().ceil().exp2()),
        );
    }
    if template.kind == "seq-scan" || template.kind == "index-scan" {
        let spread = rows.max(2.0);
        let mins: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..10.0)).collect();
        let maxs: Vec<f64> = mins
            .iter()
            .map(|m| m + spread * rng.random_range(0.5..1.5))
            .collect();
        let medians: Vec<f64> = mins
            .iter()
            .zip(&maxs)
            .map(|(lo, hi)| (lo + hi) / 2.0 * rng.random_range(0.8..1.2))
            .collect();
        node.attrs
            .insert("attr-mins".into(), AttrValue::NumVec(round6v(mins)));
        node.attrs
            .insert("attr-medians".into(), AttrValue::NumVec(round6v(medians)));
        node.attrs
            .insert("attr-maxs".into(), AttrValue::NumVec(round6v(maxs)));
    }

    let observed = if config.noise_sigma > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        latency * (config.noise_sigma * z).exp()
    } else {
        latency
    };
    node.observed_latency = Some(round9(observed));

    (node, rows, cost, latency)
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn round6v(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(round6).collect()
}

fn round9(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

/// Generates a fully labeled corpus. The same config always produces the
/// same corpus, byte for byte.
pub fn synth_generate(config: &SynthConfig, schema: &PlanSchema) -> Result<Corpus> {
    schema.validate()?;
    config.validate(schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let templates: Vec<TemplateNode> = (0..config.template_count)
        .map(|_| {
            let depth = rng.random_range(config.depth_range.0..=config.depth_range.1);
            build_template(config, schema, &mut rng, depth)
        })
        .collect();

    let mut trees = Vec::with_capacity(config.plan_count);
    for i in 0..config.plan_count {
        let ti = rng.random_range(0..templates.len());
        let (root, _, _, _) = instantiate(&templates[ti], config, &mut rng);
        let tree = PlanTree {
            id: format!("plan-{i:06}"),
            template: Some(format!("t{ti:03}")),
            root,
        };
        tree.root.validate(schema)?;
        trees.push(tree);
    }

    let mut header = CorpusHeader::new("synth");
    header.seed = Some(config.seed);
    Ok(Corpus::new(header, trees))
}
