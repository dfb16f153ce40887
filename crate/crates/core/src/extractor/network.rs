use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Arch, Embedder, ExtractorSpec, ModelError};
use crate::numerics::{ConvParams, Graph, NumericsError, Tensor, Var};

const CONV_KERNEL: usize = 3;
const CONV: ConvParams = ConvParams { stride: 2, padding: 1 };

/// Named parameter tensors, ordered by name.
pub type Weights = BTreeMap<String, Arc<Tensor>>;

/// Provenance of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub dataset_fingerprint: [u8; 32],
    pub epochs: u32,
    pub final_train_accuracy: f64,
    pub rng_seed: u64,
}

/// An embedding network φ together with its classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorModel {
    spec: ExtractorSpec,
    weights: Weights,
    train_meta: Option<TrainMeta>,
}

/// Graph handles produced by [`ExtractorModel::forward`].
pub struct Forward {
    pub embedding: Var,
    pub logits: Var,
    /// Leaf handle of every weight, keyed by name.
    pub params: BTreeMap<String, Var>,
}

struct Layer {
    name: &'static str,
    shape: Vec<usize>,
    fan_in: usize,
    /// Followed by a ReLU.
    rectified: bool,
}

fn layers(spec: &ExtractorSpec) -> Vec<Layer> {
    const CONV_NAMES: [&str; 3] = ["conv1", "conv2", "conv3"];
    const HIDDEN_NAMES: [&str; 4] = ["hidden1", "hidden2", "hidden3", "hidden4"];
    let mut out = Vec::new();
    let last_width = match spec.arch {
        Arch::TinyCnn => {
            let mut in_ch = spec.input.channels;
            for (name, &ch) in CONV_NAMES.iter().zip(&spec.hidden) {
                let fan_in = in_ch * CONV_KERNEL * CONV_KERNEL;
                out.push(Layer {
                    name,
                    shape: vec![ch, in_ch, CONV_KERNEL, CONV_KERNEL],
                    fan_in,
                    rectified: true,
                });
                in_ch = ch;
            }
            in_ch
        }
        Arch::Mlp => {
            let mut width = spec.input.numel();
            for (name, &h) in HIDDEN_NAMES.iter().zip(&spec.hidden) {
                out.push(Layer {
                    name,
                    shape: vec![width, h],
                    fan_in: width,
                    rectified: true,
                });
                width = h;
            }
            width
        }
    };
    out.push(Layer {
        name: "embed",
        shape: vec![last_width, spec.embedding_dim],
        fan_in: last_width,
        rectified: false,
    });
    out.push(Layer {
        name: "head",
        shape: vec![spec.embedding_dim, spec.class_count],
        fan_in: spec.embedding_dim,
        rectified: false,
    });
    out
}

fn check_layer_count(spec: &ExtractorSpec) -> Result<(), ModelError> {
    let max = match spec.arch {
        Arch::TinyCnn => 3,
        Arch::Mlp => 4,
    };
    if spec.hidden.len() > max {
        return Err(ModelError::InvalidSpec(format!(
            "{} supports at most {max} hidden entries, got {}",
            spec.arch,
            spec.hidden.len()
        )));
    }
    Ok(())
}

/// Expected `(name, shape)` of every weight tensor for `spec`.
pub(crate) fn expected_weights(spec: &ExtractorSpec) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for layer in layers(spec) {
        let bias_len = match spec.arch {
            Arch::TinyCnn if layer.shape.len() == 4 => layer.shape[0],
            _ => layer.shape[1],
        };
        out.push((format!("{}.weight", layer.name), layer.shape));
        out.push((format!("{}.bias", layer.name), vec![bias_len]));
    }
    out
}

/// Pixels enter both architectures as `(x − 0.5) · 4`.
const INPUT_CENTER: f64 = 0.5;
const INPUT_GAIN: f64 = 4.0;

/// Fresh weights: `U(−a, a)` with `a = gain · √(3 / fan_in)`, where `gain` is
/// √2 for layers followed by a ReLU and 1 otherwise; biases start at zero.
/// Layers are drawn in network order from a ChaCha8 stream seeded with `seed`.
pub fn init_model(spec: ExtractorSpec, seed: u64) -> Result<ExtractorModel, ModelError> {
    spec.validate()?;
    check_layer_count(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Weights::new();
    for layer in layers(&spec) {
        let gain = if layer.rectified { 2f64.sqrt() } else { 1.0 };
        let bound = gain * (3.0 / layer.fan_in as f64).sqrt();
        let n: usize = layer.shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let bias_len = if layer.shape.len() == 4 { layer.shape[0] } else { layer.shape[1] };
        weights.insert(format!("{}.weight", layer.name), Arc::new(Tensor::new(layer.shape, data)?));
        weights.insert(format!("{}.bias", layer.name), Arc::new(Tensor::zeros(vec![bias_len])?));
    }
    Ok(ExtractorModel {
        spec,
        weights,
        train_meta: None,
    })
}

impl ExtractorModel {
    /// Assembles a model from stored parts, checking every weight shape.
    pub fn from_parts(spec: ExtractorSpec, weights: Weights, train_meta: Option<TrainMeta>) -> Result<Self, ModelError> {
        spec.validate()?;
        check_layer_count(&spec)?;
        let expected = expected_weights(&spec);
        if expected.len() != weights.len() {
            return Err(ModelError::Corrupt(format!(
                "expected {} weight tensors, found {}",
                expected.len(),
                weights.len()
            )));
        }
        for (name, shape) in expected {
            match weights.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(ModelError::Corrupt(format!(
                        "weight '{name}' has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(ModelError::Corrupt(format!("missing weight '{name}'"))),
            }
        }
        Ok(Self {
            spec,
            weights,
            train_meta,
        })
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Weights {
        &mut self.weights
    }

    pub fn train_meta(&self) -> Option<&TrainMeta> {
        self.train_meta.as_ref()
    }

    pub(crate) fn set_train_meta(&mut self, meta: TrainMeta) {
        self.train_meta = Some(meta);
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.values().map(|t| t.numel()).sum()
    }

    /// Runs the network on `images: (N, C, H, W)`. With `trainable` the
    /// weights enter the graph as differentiable leaves, otherwise as constants.
    pub fn forward(&self, g: &mut Graph, images: Var, trainable: bool) -> Result<Forward, NumericsError> {
        let mut params = BTreeMap::new();
        for (name, w) in &self.weights {
            params.insert(name.clone(), g.leaf(Arc::clone(w), trainable)?);
        }
        let p = |name: &str| params[name];
        let centered = g.offset(images, -INPUT_CENTER)?;
        let x = g.scale(centered, INPUT_GAIN)?;
        let features = match self.spec.arch {
            Arch::TinyCnn => {
                let mut h = x;
                for layer in ["conv1", "conv2", "conv3"].iter().take(self.spec.hidden.len()) {
                    let z = g.conv2d(h, p(&format!("{layer}.weight")), p(&format!("{layer}.bias")), CONV)?;
                    h = g.relu(z)?;
                }
                g.global_avg_pool(h)?
            }
            Arch::Mlp => {
                let mut h = x;
                for layer in ["hidden1", "hidden2", "hidden3", "hidden4"].iter().take(self.spec.hidden.len()) {
                    let z = g.dense(h, p(&format!("{layer}.weight")), p(&format!("{layer}.bias")))?;
                    h = g.relu(z)?;
                }
                h
            }
        };
        let embedding = g.dense(features, p("embed.weight"), p("embed.bias"))?;
        let logits = g.dense(embedding, p("head.weight"), p("head.bias"))?;
        Ok(Forward {
            embedding,
            logits,
            params,
        })
    }
}

impl Embedder for ExtractorModel {
    fn input_dims(&self) -> (usize, usize, usize) {
        self.spec.input.dims()
    }

    fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim
    }

    fn embed_graph(&self, graph: &mut Graph, images: Var) -> Result<Var, NumericsError> {
        Ok(self.forward(graph, images, false)?.embedding)
    }
}
