use crate::error::{Error, Result};
use crate::graph::tensor::{Tensor, Tensor1, Tensor2};

/// Stable handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A trainable tensor with its accumulated gradient and momentum buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub id: ParamId,
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub momentum: Tensor,
}

/// Owns every parameter of a model. Graphs borrow the store read-only;
/// gradients are accumulated and applied through `&mut` access between
/// graph evaluations.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    fn push(&mut self, name: String, value: Tensor) -> ParamId {
        let id = ParamId(self.params.len() as u32);
        let zeros = match &value {
            Tensor::Vec(v) => Tensor::Vec(Tensor1::zeros(v.len())),
            Tensor::Mat(m) => Tensor::Mat(Tensor2::zeros(m.rows(), m.cols())),
        };
        self.params.push(Param {
            id,
            name,
            grad: zeros.clone(),
            momentum: zeros,
            value,
        });
        id
    }

    pub fn add_vec(&mut self, name: impl Into<String>, value: Tensor1) -> ParamId {
        self.push(name.into(), Tensor::Vec(value))
    }

    pub fn add_mat(&mut self, name: impl Into<String>, value: Tensor2) -> ParamId {
        self.push(name.into(), Tensor::Mat(value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.index()]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.index()].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds `grads` into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &GradientSet) -> Result<()> {
        if grads.grads.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "gradient set holds {} entries but store has {} parameters",
                grads.grads.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            for (dst, src) in p.grad.data_mut().iter_mut().zip(g) {
                *dst += src;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// One SGD-with-momentum update from the accumulated gradients:
    /// `buf <- momentum * buf + grad; value <- value - lr * buf`.
    /// Gradients are zeroed afterwards. A non-finite gradient aborts the
    /// step before any parameter is touched.
    pub fn sgd_step(&mut self, lr: f64, momentum: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Usage(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Usage(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        for p in &self.params {
            if let Some(bad) = p.grad.data().iter().find(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient {bad} for parameter {} (id {})",
                    p.name,
                    p.id.index()
                )));
            }
        }
        for p in &mut self.params {
            let n = p.value.len();
            let grad = p.grad.data_mut();
            let buf = p.momentum.data_mut();
            let value = p.value.data_mut();
            for i in 0..n {
                buf[i] = momentum * buf[i] + grad[i];
                value[i] -= lr * buf[i];
                grad[i] = 0.0;
            }
        }
        Ok(())
    }
}

/// Gradients aligned index-for-index with a [`ParamStore`], kept separate so
/// they can be computed against a shared read-only store, scaled, and merged.
#[derive(Debug, Clone)]
pub struct GradientSet {
    grads: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradientSet {
            grads: store.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.index()]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.index()]
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }

    /// `self += w * other`.
    pub fn scaled_add(&mut self, other: &GradientSet, w: f64) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return Err(Error::Usage(format!(
                "gradient sets differ in parameter count: {} vs {}",
                self.grads.len(),
                other.grads.len()
            )));
        }
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            debug_assert_eq!(dst.len(), src.len());
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn param_count(&self) -> usize {
        self.grads.len()
    }
}
