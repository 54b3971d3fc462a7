//! Plan-structured network: one small MLP ("neural unit") per operator
//! kind, shared across every instance of that kind, assembled at inference
//! time into a circuit mirroring the plan tree.
//!
//! Every unit emits a vector of width `data_width + 1`: element 0 is the
//! unit's latency prediction for its whole subtree, the rest is an opaque
//! data vector its parent consumes. A unit's input is its operator's
//! feature vector concatenated with the outputs of its children, padded
//! with zero vectors up to the kind's maximum arity so the input width is
//! fixed per kind.

mod forward;

pub use forward::{build_circuit, evaluate_plan, predict_latency, unit_forward, PlanCircuit, UnitOutput};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{EncoderFile, FeatureEncoder};
use crate::error::{Error, Result};
use crate::graph::{ParamId, ParamStore, Tensor1, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Hidden (ReLU) layers per unit.
    pub hidden_layers: usize,
    /// Neurons per hidden layer.
    pub hidden_width: usize,
    /// Width `d` of the opaque data vector; units output `d + 1` values.
    pub data_width: usize,
    /// Weight initialization seed.
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden_layers: 5,
            hidden_width: 128,
            data_width: 32,
            seed: 0,
        }
    }
}

impl Hyperparams {
    fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_width == 0 || self.data_width == 0 {
            return Err(Error::Usage(format!(
                "hyperparameters must be positive: hidden_layers={}, hidden_width={}, data_width={}",
                self.hidden_layers, self.hidden_width, self.data_width
            )));
        }
        Ok(())
    }
}

/// One affine layer of a unit, referring to parameters in the model store.
#[derive(Debug, Clone)]
pub struct UnitLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// The MLP for one operator kind.
#[derive(Debug, Clone)]
pub struct NeuralUnit {
    pub kind: String,
    /// Feature width plus `max_arity * (data_width + 1)`.
    pub input_width: usize,
    pub max_arity: usize,
    /// Hidden layers (ReLU after each) followed by the linear output layer.
    pub layers: Vec<UnitLayer>,
}

/// A full plan-performance model: hyperparameters, the fitted encoder it
/// was built against, and one neural unit per operator kind. Immutable
/// during inference and shareable across threads; training mutates the
/// parameter store between graph evaluations.
#[derive(Debug, Clone)]
pub struct QppModel {
    pub hyper: Hyperparams,
    pub encoder: FeatureEncoder,
    units: BTreeMap<String, NeuralUnit>,
    params: ParamStore,
}

impl QppModel {
    /// Builds a model with one unit per encoder kind, weights drawn
    /// uniformly from `[-sqrt(1/fan_in), sqrt(1/fan_in)]` with a seeded
    /// generator. The same encoder, hyperparameters, and seed always yield
    /// bit-identical parameters.
    pub fn init(encoder: FeatureEncoder, hyper: Hyperparams) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut params = ParamStore::new();
        let mut units = BTreeMap::new();
        let out_width = hyper.data_width + 1;
        // encoder kinds are sorted by name, which fixes parameter order
        for ke in &encoder.kinds {
            let input_width = ke.width + ke.max_arity * out_width;
            if input_width == 0 {
                return Err(Error::Schema(format!(
                    "kind {:?} has no features and no children; its unit would have no input",
                    ke.kind
                )));
            }
            let mut dims = Vec::with_capacity(hyper.hidden_layers + 1);
            let mut prev = input_width;
            for _ in 0..hyper.hidden_layers {
                dims.push((prev, hyper.hidden_width));
                prev = hyper.hidden_width;
            }
            dims.push((prev, out_width));

            let mut layers = Vec::with_capacity(dims.len());
            for (li, (in_dim, out_dim)) in dims.into_iter().enumerate() {
                let bound = (1.0 / in_dim as f64).sqrt();
                let wdata: Vec<f64> = (0..in_dim * out_dim)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                let bdata: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-bound..=bound)).collect();
                let w = params.add_mat(
                    format!("{}/L{li}/w", ke.kind),
                    Tensor2::new(out_dim, in_dim, wdata).expect("finite init"),
                );
                let b = params.add_vec(
                    format!("{}/L{li}/b", ke.kind),
                    Tensor1::new(bdata).expect("finite init"),
                );
                layers.push(UnitLayer {
                    w,
                    b,
                    in_dim,
                    out_dim,
                });
            }
            units.insert(
                ke.kind.clone(),
                NeuralUnit {
                    kind: ke.kind.clone(),
                    input_width,
                    max_arity: ke.max_arity,
                    layers,
                },
            );
        }
        Ok(QppModel {
            hyper,
            encoder,
            units,
            params,
        })
    }

    pub fn unit(&self, kind: &str) -> Result<&NeuralUnit> {
        self.units
            .get(kind)
            .ok_or_else(|| Error::Encoding(format!("model has no unit for kind {kind:?}")))
    }

    pub fn units(&self) -> impl Iterator<Item = &NeuralUnit> {
        self.units.values()
    }

    /// Width of every unit's output vector (`data_width + 1`).
    pub fn output_width(&self) -> usize {
        self.hyper.data_width + 1
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Total scalar parameter count. Depends only on the encoder widths and
    /// hyperparameters — never on how many plans the model has seen.
    pub fn scalar_param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Serializable snapshot referencing its encoder by content hash.
    pub fn to_file(&self, encoder_sha256: String) -> ModelFile {
        let units = self
            .units
            .values()
            .map(|u| UnitRecord {
                kind: u.kind.clone(),
                input_width: u.input_width,
                max_arity: u.max_arity,
                layers: u
                    .layers
                    .iter()
                    .map(|l| LayerRecord {
                        in_dim: l.in_dim,
                        out_dim: l.out_dim,
                        w: self.params.value(l.w).data().to_vec(),
                        b: self.params.value(l.b).data().to_vec(),
                    })
                    .collect(),
            })
            .collect();
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            tool_version: None,
            seed: self.hyper.seed,
            encoder_sha256,
            corpus_sha256: None,
            hyper: self.hyper,
            units,
        }
    }

    /// Rebuilds a model from a snapshot and the encoder file it references.
    /// The encoder's content hash must match the one recorded in the model.
    pub fn from_file(file: &ModelFile, encoder_file: &EncoderFile) -> Result<Self> {
        if file.format != MODEL_FORMAT {
            return Err(Error::Artifact(format!(
                "not a model file (format {:?})",
                file.format
            )));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        let actual = encoder_file.sha256_hex();
        if actual != file.encoder_sha256 {
            return Err(Error::Artifact(format!(
                "encoder hash mismatch: model references {} but the encoder file hashes to {actual}",
                file.encoder_sha256
            )));
        }
        let mut model = QppModel::init(encoder_file.encoder.clone(), file.hyper)?;
        // overwrite the fresh weights with the stored ones
        let mut by_kind: BTreeMap<&str, &UnitRecord> = BTreeMap::new();
        for u in &file.units {
            by_kind.insert(u.kind.as_str(), u);
        }
        for unit in model.units.values() {
            let rec = by_kind.remove(unit.kind.as_str()).ok_or_else(|| {
                Error::Artifact(format!("model file lacks a unit for kind {:?}", unit.kind))
            })?;
            if rec.input_width != unit.input_width || rec.layers.len() != unit.layers.len() {
                return Err(Error::Artifact(format!(
                    "unit {:?} shape mismatch: file has input width {} / {} layers, encoder implies {} / {}",
                    unit.kind,
                    rec.input_width,
                    rec.layers.len(),
                    unit.input_width,
                    unit.layers.len()
                )));
            }
            for (l, lr) in unit.layers.iter().zip(&rec.layers) {
                if lr.in_dim != l.in_dim
                    || lr.out_dim != l.out_dim
                    || lr.w.len() != l.in_dim * l.out_dim
                    || lr.b.len() != l.out_dim
                {
                    return Err(Error::Artifact(format!(
                        "unit {:?} layer {}x{} does not match the stored arrays",
                        unit.kind, lr.out_dim, lr.in_dim
                    )));
                }
                for (slot, v) in [(l.w, &lr.w), (l.b, &lr.b)] {
                    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                        return Err(Error::Artifact(format!(
                            "unit {:?} holds a non-finite weight {bad}",
                            unit.kind
                        )));
                    }
                    model.params.get_mut(slot).value.data_mut().copy_from_slice(v);
                }
            }
        }
        if let Some((kind, _)) = by_kind.into_iter().next() {
            return Err(Error::Artifact(format!(
                "model file has a unit for kind {kind:?} the encoder does not know"
            )));
        }
        Ok(model)
    }
}

pub const MODEL_FORMAT: &str = "qppnet-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim` weight matrix.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub kind: String,
    pub input_width: usize,
    pub max_arity: usize,
    pub layers: Vec<LayerRecord>,
}

/// On-disk model snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
    pub seed: u64,
    pub encoder_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_sha256: Option<String>,
    pub hyper: Hyperparams,
    /// Sorted by kind name.
    pub units: Vec<UnitRecord>,
}

impl ModelFile {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serialization");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Artifact(format!("bad model file: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{AttrValue, PlanNode, PlanSchema, PlanTree};

    fn small_hyper() -> Hyperparams {
        Hyperparams {
            hidden_layers: 2,
            hidden_width: 8,
            data_width: 4,
            seed: 7,
        }
    }

    fn fitted_encoder() -> FeatureEncoder {
        let mut scan = PlanNode::new("seq-scan");
        scan.attrs.insert("plan-rows".into(), AttrValue::Num(10.0));
        let mut join = PlanNode::new("hash-join");
        join.attrs
            .insert("join-type".into(), AttrValue::Text("inner".into()));
        join.children.push(scan.clone());
        join.children.push(scan.clone());
        let trees = vec![PlanTree {
            id: "p0".into(),
            template: None,
            root: join,
        }];
        FeatureEncoder::fit(&trees, &PlanSchema::default()).unwrap()
    }

    #[test]
    fn input_width_is_features_plus_arity_times_output() {
        let enc = fitted_encoder();
        let model = QppModel::init(enc.clone(), small_hyper()).unwrap();
        let scan_unit = model.unit("seq-scan").unwrap();
        assert_eq!(
            scan_unit.input_width,
            enc.feature_width("seq-scan").unwrap()
        );
        let join_unit = model.unit("hash-join").unwrap();
        assert_eq!(
            join_unit.input_width,
            enc.feature_width("hash-join").unwrap() + 2 * (4 + 1)
        );
        // layer chain: input -> 8 -> 8 -> 5
        let dims: Vec<(usize, usize)> = join_unit
            .layers
            .iter()
            .map(|l| (l.in_dim, l.out_dim))
            .collect();
        assert_eq!(
            dims,
            vec![(join_unit.input_width, 8), (8, 8), (8, 5)]
        );
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let enc = fitted_encoder();
        let a = QppModel::init(enc.clone(), small_hyper()).unwrap();
        let b = QppModel::init(enc.clone(), small_hyper()).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.value.data(), pb.value.data(), "param {}", pa.name);
        }
        let mut other = small_hyper();
        other.seed = 8;
        let c = QppModel::init(enc, other).unwrap();
        let same = a
            .params()
            .iter()
            .zip(c.params().iter())
            .all(|(x, y)| x.value.data() == y.value.data());
        assert!(!same, "different seeds should differ somewhere");
    }

    #[test]
    fn init_weights_respect_fan_in_bound() {
        let enc = fitted_encoder();
        let model = QppModel::init(enc, small_hyper()).unwrap();
        for unit in model.units() {
            for layer in &unit.layers {
                let bound = (1.0 / layer.in_dim as f64).sqrt() + 1e-12;
                for v in model.params().value(layer.w).data() {
                    assert!(v.abs() <= bound);
                }
                for v in model.params().value(layer.b).data() {
                    assert!(v.abs() <= bound);
                }
            }
        }
    }

    #[test]
    fn zero_input_kind_is_a_schema_error() {
        use crate::plan::schema::KindSchema;
        let schema = PlanSchema {
            kinds: vec![KindSchema {
                kind: "void".into(),
                max_arity: 0,
                attrs: vec![],
            }],
            fallback_kind: None,
        };
        let tree = PlanTree {
            id: "p".into(),
            template: None,
            root: PlanNode::new("void"),
        };
        let enc = FeatureEncoder::fit(&[tree], &schema).unwrap();
        assert!(matches!(
            QppModel::init(enc, small_hyper()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn model_file_round_trips_bit_exactly() {
        let enc = fitted_encoder();
        let model = QppModel::init(enc.clone(), small_hyper()).unwrap();
        let encoder_file = EncoderFile::new(enc);
        let file = model.to_file(encoder_file.sha256_hex());
        let text = file.to_json_string();
        let parsed = ModelFile::from_json_str(&text).unwrap();
        assert_eq!(parsed, file);

        let restored = QppModel::from_file(&parsed, &encoder_file).unwrap();
        for (pa, pb) in model.params().iter().zip(restored.params().iter()) {
            assert_eq!(pa.value.data(), pb.value.data(), "param {}", pa.name);
        }
        // and re-serializing produces the same bytes
        assert_eq!(
            restored.to_file(encoder_file.sha256_hex()).to_json_string(),
            text
        );
    }

    #[test]
    fn encoder_hash_mismatch_is_rejected() {
        let enc = fitted_encoder();
        let model = QppModel::init(enc.clone(), small_hyper()).unwrap();
        let encoder_file = EncoderFile::new(enc);
        let file = model.to_file("0".repeat(64));
        let err = QppModel::from_file(&file, &encoder_file).unwrap_err();
        assert!(err.to_string().contains("hash mismatch"), "{err}");
    }
}
