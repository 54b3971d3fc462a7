//! Shared fixtures and oracles for the acceptance runner.

use qppnet::encode::FeatureEncoder;
use qppnet::net::{evaluate_plan, Hyperparams, QppModel};
use qppnet::plan::{synth_generate, Corpus, PlanNode, PlanSchema, PlanTree, SynthConfig};
use qppnet::train::tree_loss_cached;

/// Labeled synthetic corpus for the structural criteria (small and fast).
pub fn small_corpus(seed: u64, plans: usize) -> Corpus {
    let config = SynthConfig {
        plan_count: plans,
        template_count: 8,
        noise_sigma: 0.1,
        seed,
        ..SynthConfig::default()
    };
    synth_generate(&config, &PlanSchema::default()).expect("synthetic corpus")
}

/// Compact model fitted to a corpus, for criteria that exercise structure
/// rather than accuracy.
pub fn small_model(corpus: &Corpus, seed: u64) -> QppModel {
    let encoder =
        FeatureEncoder::fit(&corpus.trees, &PlanSchema::default()).expect("fit encoder");
    let hyper = Hyperparams {
        hidden_layers: 2,
        hidden_width: 8,
        data_width: 4,
        seed,
    };
    QppModel::init(encoder, hyper).expect("init model")
}

/// Oracle for the caching criterion: recompute every node's prediction
/// with a fresh circuit per subtree. Returns (sse, forward invocations);
/// invocations total the sizes of all subtrees.
pub fn naive_tree_loss(model: &QppModel, tree: &PlanTree) -> (f64, usize) {
    let mut sse = 0.0;
    let mut invocations = 0;
    for node in tree.root.preorder() {
        let outputs = evaluate_plan(model, node).expect("naive forward");
        invocations += outputs.len();
        let target = node.observed_latency.expect("labeled corpus");
        let diff = outputs[0].latency - target;
        sse += diff * diff;
    }
    (sse, invocations)
}

/// Pre-order structure table: `(subtree_size, parent_index)` per node.
pub fn preorder_structure(root: &PlanNode) -> Vec<(usize, Option<usize>)> {
    fn walk(
        node: &PlanNode,
        parent: Option<usize>,
        out: &mut Vec<(usize, Option<usize>)>,
    ) -> usize {
        let index = out.len();
        out.push((0, parent));
        let mut size = 1;
        for child in &node.children {
            size += walk(child, Some(index), out);
        }
        out[index].0 = size;
        size
    }
    let mut out = Vec::new();
    walk(root, None, &mut out);
    out
}

/// Mutable access to the node at a pre-order index.
pub fn node_at_mut(root: &mut PlanNode, index: usize) -> &mut PlanNode {
    fn walk<'a>(node: &'a mut PlanNode, remaining: &mut usize) -> Option<&'a mut PlanNode> {
        if *remaining == 0 {
            return Some(node);
        }
        *remaining -= 1;
        for child in &mut node.children {
            if let Some(found) = walk(child, remaining) {
                return Some(found);
            }
        }
        None
    }
    let mut remaining = index;
    walk(root, &mut remaining).expect("pre-order index in range")
}

/// Central-difference gradient of a tree's summed squared error with
/// respect to every model parameter, in parameter-store order.
pub fn numeric_tree_grads(model: &mut QppModel, tree: &PlanTree, h: f64) -> Vec<Vec<f64>> {
    let ids: Vec<_> = model.params().iter().map(|p| p.id).collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = model.params().value(id).data().len();
        let mut grad = vec![0.0; n];
        for k in 0..n {
            let original = model.params().value(id).data()[k];
            model.params_mut().get_mut(id).value.data_mut()[k] = original + h;
            let plus = tree_loss_cached(model, tree).expect("forward").sse;
            model.params_mut().get_mut(id).value.data_mut()[k] = original - h;
            let minus = tree_loss_cached(model, tree).expect("forward").sse;
            model.params_mut().get_mut(id).value.data_mut()[k] = original;
            grad[k] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}
