//! Structure-grouped batch training.
//!
//! The loss is the mean squared error over *operators*, not plans: every
//! node's predicted latency (element 0 of its unit output) is compared with
//! its observed inclusive latency, so internal operators supervise the
//! network directly instead of only through the plan root. Reported losses
//! are the square root of that mean (RMSE), in seconds.
//!
//! Because a node's output is computed once and shared between its own loss
//! term and its parent's input, the whole tree costs exactly one unit
//! application per node ([`tree_loss_cached`]); recomputing each subtree
//! from scratch would cost the sum of all subtree sizes.
//!
//! Batches are partitioned into structure groups (identical tree shape and
//! operator kinds). Each group contributes the gradient of its own mean
//! loss, and group gradients combine weighted by size:
//!
//! `grad = sum(w_g * grad_g) / sum(w_g)`
//!
//! With operator-count weights this telescopes into exactly the gradient of
//! the flat batch loss; plan-count weights instead give every plan equal
//! say regardless of its size.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GradientSet, NodeId};
use crate::net::{build_circuit, predict_latency, PlanCircuit, QppModel};
use crate::plan::{Corpus, PlanTree, StructureSignature};

/// How held-out plans are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoldoutSpec {
    /// Hold out this fraction of plans, chosen uniformly. 0 disables.
    RandomFraction(f64),
    /// Hold out all plans of this fraction of templates. 0 disables.
    TemplateFraction(f64),
    /// Hold out all plans of exactly this many templates.
    TemplateCount(usize),
}

impl Default for HoldoutSpec {
    fn default() -> Self {
        HoldoutSpec::RandomFraction(0.1)
    }
}

/// How structure groups are weighted when their gradients combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupWeighting {
    /// Weight by operators in the group; reproduces the flat batch
    /// gradient exactly.
    OperatorCount,
    /// Weight by plans in the group; big plans stop dominating, at the
    /// price of no longer matching the flat gradient.
    PlanCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub holdout: HoldoutSpec,
    pub weighting: GroupWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            momentum: 0.9,
            epochs: 200,
            batch_size: 256,
            seed: 0,
            holdout: HoldoutSpec::default(),
            weighting: GroupWeighting::OperatorCount,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Usage(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Usage(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be at least 1".into()));
        }
        match self.holdout {
            HoldoutSpec::RandomFraction(f) | HoldoutSpec::TemplateFraction(f) => {
                if !(0.0..1.0).contains(&f) {
                    return Err(Error::Usage(format!(
                        "holdout fraction must lie in [0, 1), got {f}"
                    )));
                }
            }
            HoldoutSpec::TemplateCount(_) => {}
        }
        Ok(())
    }
}

/// Plans sharing one tree shape (and therefore one circuit wiring).
#[derive(Debug)]
pub struct StructureGroup<'a> {
    pub signature: StructureSignature,
    pub trees: Vec<&'a PlanTree>,
    pub plan_count: usize,
    pub operator_count: usize,
}

/// Partitions `trees` into structure groups, sorted by signature.
pub fn group_by_structure<'a>(trees: &[&'a PlanTree]) -> Vec<StructureGroup<'a>> {
    let mut map: std::collections::BTreeMap<StructureSignature, Vec<&'a PlanTree>> =
        std::collections::BTreeMap::new();
    for t in trees {
        map.entry(t.signature()).or_default().push(t);
    }
    map.into_iter()
        .map(|(signature, trees)| {
            let plan_count = trees.len();
            let operator_count = trees.iter().map(|t| t.node_count()).sum();
            StructureGroup {
                signature,
                trees,
                plan_count,
                operator_count,
            }
        })
        .collect()
}

/// A tree compiled together with its loss: one circuit, one squared-error
/// term per node, summed into a scalar root.
pub struct TreeLoss<'p> {
    pub circuit: PlanCircuit<'p>,
    sse_node: NodeId,
    /// Sum of squared per-operator errors (seconds squared).
    pub sse: f64,
    pub operator_count: usize,
}

impl<'p> TreeLoss<'p> {
    /// Gradient of the summed squared error w.r.t. every model parameter.
    pub fn backward(&self) -> Result<GradientSet> {
        self.circuit.graph.backward(self.sse_node)
    }
}

/// Builds the cached loss for one fully labeled tree: the plan circuit is
/// evaluated once (one unit application per node) and every node's latency
/// element is tapped out of the shared outputs.
pub fn tree_loss_cached<'p>(model: &'p QppModel, tree: &PlanTree) -> Result<TreeLoss<'p>> {
    let nodes = tree.root.preorder_paths();
    for (path, node) in &nodes {
        if node.observed_latency.is_none() {
            return Err(Error::TrainingData(format!(
                "plan {} has no observed latency at {path}",
                tree.id
            )));
        }
    }
    let mut circuit = build_circuit(model, &tree.root)?;
    let mut terms = Vec::with_capacity(nodes.len());
    for (out, (_, node)) in circuit.outputs.clone().iter().zip(&nodes) {
        let lat = circuit.graph.slice(*out, 0, 1)?;
        let target = circuit
            .graph
            .input(vec![node.observed_latency.expect("checked above")])?;
        let diff = circuit.graph.sub(lat, target)?;
        terms.push(circuit.graph.square(diff));
    }
    let sse_node = circuit.graph.sum(&terms)?;
    let sse = circuit.graph.value(sse_node)[0];
    Ok(TreeLoss {
        circuit,
        sse_node,
        sse,
        operator_count: nodes.len(),
    })
}

/// Root-mean-squared per-operator error over a set of labeled trees.
pub fn full_loss(model: &QppModel, trees: &[&PlanTree]) -> Result<f64> {
    if trees.is_empty() {
        return Err(Error::Usage("full_loss over an empty set of plans".into()));
    }
    let parts: Result<Vec<(f64, usize)>> = trees
        .par_iter()
        .map(|t| tree_loss_cached(model, t).map(|l| (l.sse, l.operator_count)))
        .collect();
    let parts = parts?;
    let (sse, ops) = parts
        .iter()
        .fold((0.0, 0usize), |(s, n), (ls, ln)| (s + ls, n + ln));
    Ok((sse / ops as f64).sqrt())
}

/// Result of one grouped gradient computation.
pub struct GroupedGradient {
    /// Weighted combination of per-group mean-loss gradients.
    pub grads: GradientSet,
    /// Flat batch mean squared error (for reporting).
    pub mse: f64,
    pub operator_count: usize,
    pub group_count: usize,
}

/// Computes the batch gradient: per group, the gradient of the group's mean
/// squared operator error; across groups, a weighted average.
///
/// Groups evaluate in parallel against the shared read-only parameters;
/// the final reduction always runs in signature order, so the result is
/// deterministic regardless of thread scheduling.
pub fn grouped_gradient(
    model: &QppModel,
    batch: &[&PlanTree],
    weighting: GroupWeighting,
) -> Result<GroupedGradient> {
    if batch.is_empty() {
        return Err(Error::Usage("gradient of an empty batch".into()));
    }
    let groups = group_by_structure(batch);
    let per_group: Result<Vec<(GradientSet, f64, usize, usize)>> = groups
        .par_iter()
        .map(|g| {
            let mut local = GradientSet::zeros_like(model.params());
            let mut sse = 0.0;
            let mut ops = 0usize;
            for tree in &g.trees {
                let loss = tree_loss_cached(model, tree)?;
                local.scaled_add(&loss.backward()?, 1.0)?;
                sse += loss.sse;
                ops += loss.operator_count;
            }
            Ok((local, sse, ops, g.plan_count))
        })
        .collect();
    let per_group = per_group?;

    let mut combined = GradientSet::zeros_like(model.params());
    let mut total_weight = 0.0;
    let mut total_sse = 0.0;
    let mut total_ops = 0usize;
    for (mut local, sse, ops, plans) in per_group {
        // gradient of this group's mean squared operator error
        local.scale(1.0 / ops as f64);
        let w = match weighting {
            GroupWeighting::OperatorCount => ops as f64,
            GroupWeighting::PlanCount => plans as f64,
        };
        combined.scaled_add(&local, w)?;
        total_weight += w;
        total_sse += sse;
        total_ops += ops;
    }
    combined.scale(1.0 / total_weight);
    Ok(GroupedGradient {
        grads: combined,
        mse: total_sse / total_ops as f64,
        operator_count: total_ops,
        group_count: groups.len(),
    })
}

/// Splits a corpus into (train, held-out) slices. Deterministic per seed;
/// both slices preserve corpus order.
pub fn holdout_split<'a>(
    trees: &'a [PlanTree],
    spec: &HoldoutSpec,
    seed: u64,
) -> Result<(Vec<&'a PlanTree>, Vec<&'a PlanTree>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    match *spec {
        HoldoutSpec::RandomFraction(f) => {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Usage(format!(
                    "holdout fraction must lie in [0, 1), got {f}"
                )));
            }
            let n_test = ((trees.len() as f64) * f).round() as usize;
            if n_test >= trees.len() && n_test > 0 {
                return Err(Error::Usage(format!(
                    "holding out {n_test} of {} plans leaves nothing to train on",
                    trees.len()
                )));
            }
            let mut indices: Vec<usize> = (0..trees.len()).collect();
            indices.shuffle(&mut rng);
            let mut test_idx: Vec<usize> = indices[..n_test].to_vec();
            test_idx.sort_unstable();
            let mut is_test = vec![false; trees.len()];
            for i in &test_idx {
                is_test[*i] = true;
            }
            let train = trees
                .iter()
                .enumerate()
                .filter(|(i, _)| !is_test[*i])
                .map(|(_, t)| t)
                .collect();
            let test = test_idx.iter().map(|i| &trees[*i]).collect();
            Ok((train, test))
        }
        HoldoutSpec::TemplateFraction(f) => {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Usage(format!(
                    "holdout fraction must lie in [0, 1), got {f}"
                )));
            }
            let templates = distinct_templates(trees)?;
            let count = ((templates.len() as f64) * f).round() as usize;
            split_by_templates(trees, templates, count, &mut rng)
        }
        HoldoutSpec::TemplateCount(count) => {
            let templates = distinct_templates(trees)?;
            split_by_templates(trees, templates, count, &mut rng)
        }
    }
}

fn distinct_templates(trees: &[PlanTree]) -> Result<Vec<&str>> {
    let mut set = std::collections::BTreeSet::new();
    for t in trees {
        let tmpl = t.template.as_deref().ok_or_else(|| {
            Error::TrainingData(format!(
                "plan {} has no template tag; template holdout needs one on every plan",
                t.id
            ))
        })?;
        set.insert(tmpl);
    }
    Ok(set.into_iter().collect())
}

fn split_by_templates<'a>(
    trees: &'a [PlanTree],
    mut templates: Vec<&str>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<&'a PlanTree>, Vec<&'a PlanTree>)> {
    if count == 0 {
        return Ok((trees.iter().collect(), Vec::new()));
    }
    if count >= templates.len() {
        return Err(Error::Usage(format!(
            "cannot hold out {count} of {} templates",
            templates.len()
        )));
    }
    templates.shuffle(rng);
    let held: std::collections::BTreeSet<&str> = templates[..count].iter().copied().collect();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for t in trees {
        if held.contains(t.template.as_deref().expect("checked in distinct_templates")) {
            test.push(t);
        } else {
            train.push(t);
        }
    }
    Ok((train, test))
}

/// Per-epoch progress record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// RMSE over every operator of the training plans, in seconds.
    pub train_rmse: f64,
    /// Mean absolute error of root predictions on the held-out plans.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_mae: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_count: usize,
    pub test_count: usize,
    pub epochs: Vec<EpochStats>,
}

/// Trains the model in place with SGD + momentum over shuffled
/// structure-grouped batches. `on_epoch` fires after every epoch with that
/// epoch's statistics.
pub fn train(
    model: &mut QppModel,
    corpus: &Corpus,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    config.validate()?;
    if corpus.trees.is_empty() {
        return Err(Error::Usage("training corpus is empty".into()));
    }
    if !corpus.fully_labeled() {
        return Err(Error::TrainingData(
            "training corpus is not fully labeled; every node needs an observed latency".into(),
        ));
    }
    let (train_set, test_set) = holdout_split(&corpus.trees, &config.holdout, config.seed)?;
    if train_set.is_empty() {
        return Err(Error::Usage("holdout left no plans to train on".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport {
        train_count: train_set.len(),
        test_count: test_set.len(),
        epochs: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PlanTree> = chunk.iter().map(|i| train_set[*i]).collect();
            let grad = grouped_gradient(model, &batch, config.weighting)?;
            model.params_mut().accumulate(&grad.grads)?;
            model
                .params_mut()
                .sgd_step(config.lr, config.momentum)
                .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
        }
        let train_rmse = full_loss(model, &train_set)?;
        if !train_rmse.is_finite() {
            return Err(Error::Training(format!(
                "loss diverged to {train_rmse} at epoch {epoch}"
            )));
        }
        let test_mae = if test_set.is_empty() {
            None
        } else {
            let mut total = 0.0;
            for t in &test_set {
                let actual = t.root_latency().expect("corpus fully labeled");
                total += (predict_latency(model, &t.root)? - actual).abs();
            }
            Some(total / test_set.len() as f64)
        };
        let stats = EpochStats {
            epoch,
            train_rmse,
            test_mae,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}
