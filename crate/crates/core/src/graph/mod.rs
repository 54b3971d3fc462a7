//! Reverse-mode automatic differentiation over dynamically built graphs.
//!
//! A [`Graph`] is an append-only arena of nodes evaluated eagerly as they are
//! built (define-by-run). Node indices grow in construction order, so the
//! arena order is already topological and the backward pass is a single
//! reverse sweep that accumulates adjoints additively — a value consumed by
//! several downstream nodes receives the sum of their contributions.

pub mod gradcheck;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_difference_grad, max_relative_gap, relative_gap};
pub use params::{GradientSet, Param, ParamId, ParamStore};
pub use tensor::{Tensor, Tensor1, Tensor2};

use crate::error::{Error, Result};

/// Handle to a node in one [`Graph`]. Indices are graph-local.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant input; contributes no gradient.
    Input,
    /// The (flattened) current value of a stored parameter.
    ParamRef(ParamId),
    /// `W x + b` with `W`, `b` parameters and `x` a vector node.
    Affine { w: ParamId, b: ParamId, x: NodeId },
    Relu(NodeId),
    Concat(Vec<NodeId>),
    Sub(NodeId, NodeId),
    Square(NodeId),
    Scale(NodeId, f64),
    /// Elementwise sum of same-shaped nodes.
    Sum(Vec<NodeId>),
    /// Contiguous sub-range of a vector node; the adjoint scatters back
    /// into the matching range (the dual of `Concat`).
    Slice { x: NodeId, start: usize },
}

#[derive(Debug, Clone)]
struct GraphNode {
    op: Op,
    value: Vec<f64>,
}

/// An eagerly evaluated computation graph borrowing a read-only parameter
/// store. Several graphs over the same store can be built and differentiated
/// in parallel; updates to the store happen between graphs, never during.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<GraphNode>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }

    /// Number of nodes built so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Current value of a node.
    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    fn add(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(GraphNode { op, value });
        id
    }

    /// Introduces a constant vector. Inputs must be finite.
    pub fn input(&mut self, value: Vec<f64>) -> Result<NodeId> {
        if let Some(bad) = value.iter().find(|v| !v.is_finite()) {
            return Err(Error::Tensor(format!("graph input contains {bad}")));
        }
        Ok(self.add(Op::Input, value))
    }

    /// References a parameter's current value (flattened row-major for
    /// matrices). Gradients flow back into the parameter.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let value = self.params.value(id).data().to_vec();
        self.add(Op::ParamRef(id), value)
    }

    /// `W x + b`. `W` must be a matrix parameter, `b` a vector parameter of
    /// matching output size, and `x` a node of length `W.cols()`.
    pub fn affine(&mut self, w: ParamId, b: ParamId, x: NodeId) -> Result<NodeId> {
        let wt = self.params.value(w).as_mat().ok_or(Error::Dimension {
            op: "affine",
            detail: format!("parameter {} is not a matrix", self.params.get(w).name),
        })?;
        let bt = self.params.value(b).as_vec().ok_or(Error::Dimension {
            op: "affine",
            detail: format!("parameter {} is not a vector", self.params.get(b).name),
        })?;
        let xv = &self.nodes[x.0].value;
        if wt.cols() != xv.len() || wt.rows() != bt.len() {
            return Err(Error::Dimension {
                op: "affine",
                detail: format!(
                    "W is {}x{}, b has {}, x has {}",
                    wt.rows(),
                    wt.cols(),
                    bt.len(),
                    xv.len()
                ),
            });
        }
        let mut out = bt.as_slice().to_vec();
        for r in 0..wt.rows() {
            let row = &wt.as_slice()[r * wt.cols()..(r + 1) * wt.cols()];
            let mut acc = 0.0;
            for (wv, x) in row.iter().zip(xv) {
                acc += wv * x;
            }
            out[r] += acc;
        }
        Ok(self.add(Op::Affine { w, b, x }, out))
    }

    /// Elementwise `max(0, x)`.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].value.iter().map(|v| v.max(0.0)).collect();
        self.add(Op::Relu(x), out)
    }

    /// Concatenates the inputs in order. Zero-length segments are allowed;
    /// an empty input list is not.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::Usage("concat of an empty node list".into()));
        }
        let mut out = Vec::new();
        for x in xs {
            out.extend_from_slice(&self.nodes[x.0].value);
        }
        Ok(self.add(Op::Concat(xs.to_vec()), out))
    }

    /// Elementwise `a - b`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.len() != bv.len() {
            return Err(Error::Dimension {
                op: "sub",
                detail: format!("{} vs {}", av.len(), bv.len()),
            });
        }
        let out = av.iter().zip(bv).map(|(a, b)| a - b).collect();
        Ok(self.add(Op::Sub(a, b), out))
    }

    /// Elementwise square.
    pub fn square(&mut self, x: NodeId) -> NodeId {
        let out = self.nodes[x.0].value.iter().map(|v| v * v).collect();
        self.add(Op::Square(x), out)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        if !s.is_finite() {
            return Err(Error::Usage(format!("scale factor must be finite, got {s}")));
        }
        let out = self.nodes[x.0].value.iter().map(|v| v * s).collect();
        Ok(self.add(Op::Scale(x, s), out))
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn sum(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::Usage("sum of an empty node list".into()));
        }
        let len = self.nodes[xs[0].0].value.len();
        let mut out = vec![0.0; len];
        for x in xs {
            let v = &self.nodes[x.0].value;
            if v.len() != len {
                return Err(Error::Dimension {
                    op: "sum",
                    detail: format!("{len} vs {}", v.len()),
                });
            }
            for (o, s) in out.iter_mut().zip(v) {
                *o += s;
            }
        }
        Ok(self.add(Op::Sum(xs.to_vec()), out))
    }

    /// `x[start..start+len]` as a new node.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = &self.nodes[x.0].value;
        if start + len > xv.len() {
            return Err(Error::Dimension {
                op: "slice",
                detail: format!("range {start}..{} of a node with {}", start + len, xv.len()),
            });
        }
        let out = xv[start..start + len].to_vec();
        Ok(self.add(Op::Slice { x, start }, out))
    }

    /// Reverse sweep from a scalar root. Returns the gradient of the root
    /// with respect to every stored parameter (zeros for parameters the
    /// graph never touched).
    pub fn backward(&self, root: NodeId) -> Result<GradientSet> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar root, got a node of length {}",
                self.nodes[root.0].value.len()
            )));
        }
        let mut adjoints: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        adjoints[root.0][0] = 1.0;

        let mut grads = GradientSet::zeros_like(self.params);
        for i in (0..=root.0).rev() {
            if adjoints[i].iter().all(|v| *v == 0.0) {
                continue;
            }
            // Split so we can read the current node's adjoint while writing
            // the adjoints of its (strictly earlier) inputs.
            let (before, rest) = adjoints.split_at_mut(i);
            let adj = &rest[0];
            match &self.nodes[i].op {
                Op::Input => {}
                Op::ParamRef(p) => {
                    for (g, a) in grads.get_mut(*p).iter_mut().zip(adj) {
                        *g += a;
                    }
                }
                Op::Affine { w, b, x } => {
                    let wt = self.params.value(*w).as_mat().expect("checked at build");
                    let xv = &self.nodes[x.0].value;
                    let (rows, cols) = (wt.rows(), wt.cols());
                    {
                        let gw = grads.get_mut(*w);
                        for r in 0..rows {
                            for c in 0..cols {
                                gw[r * cols + c] += adj[r] * xv[c];
                            }
                        }
                    }
                    {
                        let gb = grads.get_mut(*b);
                        for (g, a) in gb.iter_mut().zip(adj) {
                            *g += a;
                        }
                    }
                    let gx = &mut before[x.0];
                    for r in 0..rows {
                        let row = &wt.as_slice()[r * cols..(r + 1) * cols];
                        let a = adj[r];
                        for (g, wv) in gx.iter_mut().zip(row) {
                            *g += a * wv;
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx = &mut before[x.0];
                    for k in 0..adj.len() {
                        if xv[k] > 0.0 {
                            gx[k] += adj[k];
                        }
                    }
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for x in xs {
                        let len = self.nodes[x.0].value.len();
                        let gx = &mut before[x.0];
                        for k in 0..len {
                            gx[k] += adj[offset + k];
                        }
                        offset += len;
                    }
                }
                Op::Sub(a, b) => {
                    for (g, v) in before[a.0].iter_mut().zip(adj) {
                        *g += v;
                    }
                    for (g, v) in before[b.0].iter_mut().zip(adj) {
                        *g -= v;
                    }
                }
                Op::Square(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx = &mut before[x.0];
                    for k in 0..adj.len() {
                        gx[k] += 2.0 * xv[k] * adj[k];
                    }
                }
                Op::Scale(x, s) => {
                    for (g, v) in before[x.0].iter_mut().zip(adj) {
                        *g += s * v;
                    }
                }
                Op::Sum(xs) => {
                    for x in xs {
                        for (g, v) in before[x.0].iter_mut().zip(adj) {
                            *g += v;
                        }
                    }
                }
                Op::Slice { x, start } => {
                    let gx = &mut before[x.0];
                    for k in 0..adj.len() {
                        gx[start + k] += adj[k];
                    }
                }
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(store: &mut ParamStore, name: &str, v: f64) -> ParamId {
        store.add_vec(name, Tensor1::new(vec![v]).unwrap())
    }

    #[test]
    fn affine_zero_weights_and_bias_is_zero() {
        let mut store = ParamStore::new();
        let w = store.add_mat("w", Tensor2::zeros(2, 3));
        let b = store.add_vec("b", Tensor1::zeros(2));
        let mut g = Graph::new(&store);
        let x = g.input(vec![1.0, -2.0, 5.0]).unwrap();
        let y = g.affine(w, b, x).unwrap();
        assert_eq!(g.value(y), &[0.0, 0.0]);
    }

    #[test]
    fn affine_identity_adds_bias() {
        let mut store = ParamStore::new();
        let w = store
            .add_mat("w", Tensor2::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = store.add_vec("b", Tensor1::new(vec![1.0, 1.0]).unwrap());
        let mut g = Graph::new(&store);
        let x = g.input(vec![2.0, 3.0]).unwrap();
        let y = g.affine(w, b, x).unwrap();
        assert_eq!(g.value(y), &[3.0, 4.0]);
    }

    #[test]
    fn affine_general_case() {
        let mut store = ParamStore::new();
        let w = store
            .add_mat("w", Tensor2::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = store.add_vec("b", Tensor1::zeros(2));
        let mut g = Graph::new(&store);
        let x = g.input(vec![1.0, 1.0]).unwrap();
        let y = g.affine(w, b, x).unwrap();
        assert_eq!(g.value(y), &[3.0, 7.0]);
    }

    #[test]
    fn affine_shape_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let w = store.add_mat("w", Tensor2::zeros(2, 3));
        let b = store.add_vec("b", Tensor1::zeros(2));
        let mut g = Graph::new(&store);
        let x = g.input(vec![1.0, 2.0]).unwrap(); // needs 3
        assert!(matches!(
            g.affine(w, b, x),
            Err(Error::Dimension { op: "affine", .. })
        ));
    }

    #[test]
    fn relu_clamps_negatives_and_keeps_zero() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(vec![-1.0]).unwrap();
        let ra = g.relu(a);
        assert_eq!(g.value(ra), &[0.0]);
        let b = g.input(vec![2.0]).unwrap();
        let rb = g.relu(b);
        assert_eq!(g.value(rb), &[2.0]);
        let c = g.input(vec![-3.0, 0.0, 5.0]).unwrap();
        let rc = g.relu(c);
        assert_eq!(g.value(rc), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn concat_orders_and_allows_empty_segments() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(vec![1.0, 2.0]).unwrap();
        let b = g.input(vec![3.0]).unwrap();
        let ab = g.concat(&[a, b]).unwrap();
        assert_eq!(g.value(ab), &[1.0, 2.0, 3.0]);

        let single = g.concat(&[a]).unwrap();
        assert_eq!(g.value(single), &[1.0, 2.0]);

        let empty = g.input(vec![]).unwrap();
        let eb = g.concat(&[empty, b]).unwrap();
        assert_eq!(g.value(eb), &[3.0]);
    }

    #[test]
    fn concat_of_no_nodes_is_a_usage_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        assert!(matches!(g.concat(&[]), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_of_square_is_two_w() {
        let mut store = ParamStore::new();
        let w = scalar_param(&mut store, "w", 3.0);
        let mut g = Graph::new(&store);
        let wn = g.param(w);
        let y = g.square(wn);
        let grads = g.backward(y).unwrap();
        assert!((grads.get(w)[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn relu_blocks_gradient_on_negative_preactivation() {
        let mut store = ParamStore::new();
        let w = scalar_param(&mut store, "w", 2.0);
        let mut g = Graph::new(&store);
        let wn = g.param(w);
        let neg = g.scale(wn, -1.0).unwrap(); // -w = -2
        let y = g.relu(neg);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(w)[0], 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar_roots() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(vec![1.0, 2.0]).unwrap();
        assert!(matches!(g.backward(a), Err(Error::Usage(_))));
    }

    #[test]
    fn shared_subexpression_accumulates_like_duplicated_one() {
        // y = relu(a)·c1 + relu(a)·c2 built with a shared relu node must
        // match the same expression with the relu duplicated.
        let mut store = ParamStore::new();
        let a = store.add_vec("a", Tensor1::new(vec![0.7, -0.3, 1.9]).unwrap());

        let shared = {
            let mut g = Graph::new(&store);
            let an = g.param(a);
            let r = g.relu(an);
            let s1 = g.scale(r, 2.0).unwrap();
            let s2 = g.scale(r, -0.5).unwrap();
            let both = g.sum(&[s1, s2]).unwrap();
            let sq = g.square(both);
            let total = g.sum(&[sq]).unwrap();
            let first = g.slice(total, 0, 1).unwrap();
            let rest1 = g.slice(total, 1, 1).unwrap();
            let rest2 = g.slice(total, 2, 1).unwrap();
            let root = g.sum(&[first, rest1]).unwrap();
            let root = g.sum(&[root, rest2]).unwrap();
            g.backward(root).unwrap()
        };
        let duplicated = {
            let mut g = Graph::new(&store);
            let an1 = g.param(a);
            let an2 = g.param(a);
            let r1 = g.relu(an1);
            let r2 = g.relu(an2);
            let s1 = g.scale(r1, 2.0).unwrap();
            let s2 = g.scale(r2, -0.5).unwrap();
            let both = g.sum(&[s1, s2]).unwrap();
            let sq = g.square(both);
            let first = g.slice(sq, 0, 1).unwrap();
            let rest1 = g.slice(sq, 1, 1).unwrap();
            let rest2 = g.slice(sq, 2, 1).unwrap();
            let root = g.sum(&[first, rest1]).unwrap();
            let root = g.sum(&[root, rest2]).unwrap();
            g.backward(root).unwrap()
        };
        for (s, d) in shared.get(a).iter().zip(duplicated.get(a)) {
            let denom = s.abs().max(d.abs()).max(1.0);
            assert!(
                ((s - d) / denom).abs() < 1e-12,
                "shared {s} vs duplicated {d}"
            );
        }
    }

    #[test]
    fn slice_routes_gradient_to_its_range() {
        let mut store = ParamStore::new();
        let a = store.add_vec("a", Tensor1::new(vec![1.0, 2.0, 3.0]).unwrap());
        let mut g = Graph::new(&store);
        let an = g.param(a);
        let mid = g.slice(an, 1, 1).unwrap();
        let y = g.square(mid);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(a), &[0.0, 4.0, 0.0]);
    }

    #[test]
    fn rebuilding_the_same_graph_is_bit_identical() {
        let mut store = ParamStore::new();
        let w = store
            .add_mat("w", Tensor2::new(2, 2, vec![0.3, -1.2, 0.07, 2.4]).unwrap());
        let b = store.add_vec("b", Tensor1::new(vec![0.1, -0.9]).unwrap());
        let run = |store: &ParamStore| {
            let mut g = Graph::new(store);
            let x = g.input(vec![0.5, -0.25]).unwrap();
            let h = g.affine(w, b, x).unwrap();
            let r = g.relu(h);
            let s0 = g.slice(r, 0, 1).unwrap();
            let s1 = g.slice(r, 1, 1).unwrap();
            let root0 = g.sum(&[s0, s1]).unwrap();
            let root = g.square(root0);
            let grads = g.backward(root).unwrap();
            (g.value(root).to_vec(), grads.get(w).to_vec(), grads.get(b).to_vec())
        };
        let (v1, gw1, gb1) = run(&store);
        let (v2, gw2, gb2) = run(&store);
        assert_eq!(v1, v2);
        assert_eq!(gw1, gw2);
        assert_eq!(gb1, gb2);
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        assert!(g.input(vec![f64::NAN]).is_err());
    }
}
