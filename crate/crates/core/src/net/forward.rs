//! Circuit assembly and inference over plan trees.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::net::QppModel;
use crate::plan::PlanNode;

/// One unit's output: the latency prediction for its subtree plus the
/// opaque data vector passed to its parent.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitOutput {
    pub latency: f64,
    pub data: Vec<f64>,
}

/// A plan tree compiled into one differentiable graph. Each tree node maps
/// to one unit application; `outputs[i]` is the output vector of the `i`-th
/// node in pre-order.
pub struct PlanCircuit<'p> {
    pub graph: Graph<'p>,
    pub outputs: Vec<NodeId>,
    /// Number of unit applications it took to build this circuit. Because
    /// child outputs are computed once and shared, this equals the node
    /// count: evaluating a parent adds nothing on top of its subtrees.
    pub unit_invocations: usize,
}

impl<'p> PlanCircuit<'p> {
    /// Output vector of the plan root.
    pub fn root_output(&self) -> &[f64] {
        self.graph.value(self.outputs[0])
    }
}

/// Compiles `root` into a circuit over the model's parameters.
pub fn build_circuit<'p>(model: &'p QppModel, root: &PlanNode) -> Result<PlanCircuit<'p>> {
    let mut graph = Graph::new(model.params());
    let mut outputs: Vec<Option<NodeId>> = vec![None; root.node_count()];
    let mut invocations = 0usize;
    let mut cursor = 0usize;
    build_node(
        model,
        &mut graph,
        root,
        "root",
        &mut cursor,
        &mut outputs,
        &mut invocations,
    )?;
    let outputs = outputs
        .into_iter()
        .map(|o| o.expect("every pre-order slot is filled"))
        .collect();
    Ok(PlanCircuit {
        graph,
        outputs,
        unit_invocations: invocations,
    })
}

fn build_node<'p>(
    model: &'p QppModel,
    graph: &mut Graph<'p>,
    node: &PlanNode,
    path: &str,
    cursor: &mut usize,
    outputs: &mut Vec<Option<NodeId>>,
    invocations: &mut usize,
) -> Result<NodeId> {
    let my_slot = *cursor;
    *cursor += 1;

    let unit = model.unit(&node.kind).map_err(|e| Error::Inference {
        path: path.into(),
        detail: e.to_string(),
    })?;
    if node.children.len() > unit.max_arity {
        return Err(Error::Inference {
            path: path.into(),
            detail: format!(
                "{} children exceed max arity {} of kind {:?}",
                node.children.len(),
                unit.max_arity,
                node.kind
            ),
        });
    }
    let features = model.encoder.encode(node).map_err(|e| Error::Inference {
        path: path.into(),
        detail: e.to_string(),
    })?;
    let mut parts = Vec::with_capacity(1 + unit.max_arity);
    parts.push(graph.input(features)?);
    for (i, child) in node.children.iter().enumerate() {
        let child_path = format!("{path}.{i}");
        parts.push(build_node(
            model,
            graph,
            child,
            &child_path,
            cursor,
            outputs,
            invocations,
        )?);
    }
    // absent children feed zero vectors so the input width stays fixed
    for _ in node.children.len()..unit.max_arity {
        parts.push(graph.input(vec![0.0; model.output_width()])?);
    }
    let mut x = graph.concat(&parts)?;
    debug_assert_eq!(graph.value(x).len(), unit.input_width);
    for (li, layer) in unit.layers.iter().enumerate() {
        x = graph.affine(layer.w, layer.b, x)?;
        if li + 1 < unit.layers.len() {
            x = graph.relu(x);
        }
    }
    *invocations += 1;
    outputs[my_slot] = Some(x);
    Ok(x)
}

/// Applies one kind's unit to a raw input vector.
pub fn unit_forward(model: &QppModel, kind: &str, input: &[f64]) -> Result<UnitOutput> {
    let unit = model.unit(kind)?;
    if input.len() != unit.input_width {
        return Err(Error::Dimension {
            op: "unit_forward",
            detail: format!(
                "kind {kind:?} expects {} inputs, got {}",
                unit.input_width,
                input.len()
            ),
        });
    }
    let mut graph = Graph::new(model.params());
    let mut x = graph.input(input.to_vec())?;
    for (li, layer) in unit.layers.iter().enumerate() {
        x = graph.affine(layer.w, layer.b, x)?;
        if li + 1 < unit.layers.len() {
            x = graph.relu(x);
        }
    }
    let out = graph.value(x);
    Ok(UnitOutput {
        latency: out[0],
        data: out[1..].to_vec(),
    })
}

/// Evaluates a whole plan; returns one output per node in pre-order.
pub fn evaluate_plan(model: &QppModel, root: &PlanNode) -> Result<Vec<UnitOutput>> {
    let circuit = build_circuit(model, root)?;
    Ok(circuit
        .outputs
        .iter()
        .map(|id| {
            let v = circuit.graph.value(*id);
            UnitOutput {
                latency: v[0],
                data: v[1..].to_vec(),
            }
        })
        .collect())
}

/// The model's latency prediction for the whole plan (the root unit's
/// latency element). May be negative for an untrained model; consumers
/// clamp where their semantics require positivity.
pub fn predict_latency(model: &QppModel, root: &PlanNode) -> Result<f64> {
    let circuit = build_circuit(model, root)?;
    Ok(circuit.root_output()[0])
}
