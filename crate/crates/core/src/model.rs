//! The incremental learner: a multilayer feature extractor feeding a
//! per-class linear classifier, with append-only classifier expansion and
//! teacher freezing.
//!
//! The classifier layout is append-only: logits of classes `[0, old)` keep
//! their indices across every expansion, so old-class outputs stay
//! comparable between phases.

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

/// Per-layer activation. Hidden layers use ReLU; the embedding layer is
/// linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z` (ReLU uses the right derivative at 0).
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One fully-connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

/// Feature extractor: a chain of fully-connected layers mapping an input
/// vector to an embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    layers: Vec<Layer>,
    input_dim: usize,
    embedding_dim: usize,
}

/// Architecture of the extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
}

impl ExtractorConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>, embedding_dim: usize) -> Self {
        ExtractorConfig {
            input_dim,
            hidden,
            embedding_dim,
        }
    }
}

impl ExtractorParams {
    /// Builds a seeded random extractor: uniform `±1/√fan_in` weights and
    /// zero biases; ReLU on hidden layers, linear embedding layer.
    pub fn init(cfg: &ExtractorConfig, seed: u64) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.embedding_dim == 0 {
            return Err(Error::Config("extractor dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![cfg.input_dim];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(cfg.embedding_dim);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let mut data = Vec::with_capacity(fan_out * fan_in);
            for _ in 0..fan_out * fan_in {
                data.push(rng.random_range(-scale..=scale));
            }
            let activation = if l + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer {
                weight: Matrix::new(fan_out, fan_in, data),
                bias: Vector::zeros(fan_out),
                activation,
            });
        }
        Ok(ExtractorParams {
            layers,
            input_dim: cfg.input_dim,
            embedding_dim: cfg.embedding_dim,
        })
    }

    /// Builds an extractor from explicit layers, validating the dimension
    /// chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("extractor needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weight.rows() != pair[1].weight.cols() {
                return Err(Error::Config(format!(
                    "layer dimensions do not chain: {} out vs {} in",
                    pair[0].weight.rows(),
                    pair[1].weight.cols()
                )));
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.weight.rows() {
                return Err(Error::Config("bias length must match layer output".into()));
            }
        }
        let input_dim = layers[0].weight.cols();
        let embedding_dim = layers.last().unwrap().weight.rows();
        Ok(ExtractorParams {
            layers,
            input_dim,
            embedding_dim,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }
}

/// Maps `x` through the extractor to its embedding.
pub fn extract(extractor: &ExtractorParams, x: &Vector) -> Result<Vector> {
    let (_, mut acts) = extract_cached(extractor, x)?;
    Ok(acts.pop().expect("at least one layer"))
}

/// Forward pass retaining per-layer pre-activations and activations
/// (needed for backpropagation). `activations[i]` is the output of layer
/// `i`; the last entry is the embedding.
pub fn extract_cached(
    extractor: &ExtractorParams,
    x: &Vector,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    if x.len() != extractor.input_dim {
        return Err(Error::Config(format!(
            "extract: input has dim {}, extractor expects {}",
            x.len(),
            extractor.input_dim
        )));
    }
    let mut pre = Vec::with_capacity(extractor.layers.len());
    let mut acts = Vec::with_capacity(extractor.layers.len());
    let mut h = x.clone();
    for layer in &extractor.layers {
        let mut z = layer.weight.matvec(&h);
        z.axpy(1.0, &layer.bias);
        let mut a = z.clone();
        for v in a.as_mut_slice() {
            *v = layer.activation.apply(*v);
        }
        pre.push(z);
        h = a.clone();
        acts.push(a);
    }
    Ok((pre, acts))
}

/// One output unit: a weight vector over the embedding plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEntry {
    pub weight: Vector,
    pub bias: f64,
}

/// The expanding classifier head. Entries are append-only; `frozen`
/// marks per-class entries excluded from training updates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    entries: Vec<ClassEntry>,
    frozen: Vec<bool>,
    embedding_dim: usize,
}

impl ClassifierParams {
    pub fn empty(embedding_dim: usize) -> Self {
        ClassifierParams {
            entries: Vec::new(),
            frozen: Vec::new(),
            embedding_dim,
        }
    }

    pub fn class_count(&self) -> usize {
        self.entries.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn is_frozen(&self, class: usize) -> bool {
        self.frozen[class]
    }

    /// Marks classes `[0, count)` as frozen (feature-extraction baseline).
    pub fn freeze_classes(&mut self, count: usize) {
        for k in 0..count.min(self.frozen.len()) {
            self.frozen[k] = true;
        }
    }

    /// Appends one pre-built entry (checkpoint loading).
    pub(crate) fn push_entry(&mut self, entry: ClassEntry, frozen: bool) {
        self.entries.push(entry);
        self.frozen.push(frozen);
    }
}

/// Logits for every class: `o_k = w_k · v + b_k`, in class-index order.
pub fn classify(classifier: &ClassifierParams, v: &Vector) -> Result<Vector> {
    if v.len() != classifier.embedding_dim {
        return Err(Error::Config(format!(
            "classify: embedding has dim {}, classifier expects {}",
            v.len(),
            classifier.embedding_dim
        )));
    }
    Ok(Vector::new(
        classifier
            .entries
            .iter()
            .map(|e| e.weight.dot(v) + e.bias)
            .collect(),
    ))
}

/// Appends `n_new` output units: weights uniform in `[−init_scale, +init_scale]`,
/// biases zero. Existing entries are copied bit-identically.
pub fn expand_classifier(
    classifier: &ClassifierParams,
    n_new: usize,
    init_scale: f64,
    seed: u64,
) -> Result<ClassifierParams> {
    if n_new == 0 {
        return Err(Error::Config("expand_classifier: n_new must be at least 1".into()));
    }
    if init_scale < 0.0 {
        return Err(Error::Config("expand_classifier: init_scale must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = classifier.clone();
    for _ in 0..n_new {
        let weight = Vector::new(
            (0..classifier.embedding_dim)
                .map(|_| {
                    if init_scale == 0.0 {
                        0.0
                    } else {
                        rng.random_range(-init_scale..=init_scale)
                    }
                })
                .collect(),
        );
        out.entries.push(ClassEntry { weight, bias: 0.0 });
        out.frozen.push(false);
    }
    Ok(out)
}

/// L2 norm of each class weight vector (bias excluded).
pub fn weight_norms(classifier: &ClassifierParams) -> Vec<f64> {
    classifier.entries.iter().map(|e| e.weight.norm()).collect()
}

/// The live learner: extractor, classifier, and class bookkeeping for the
/// current phase. Logit layout is `{old classes, new classes}` with old
/// classes at indices `[0, old_class_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub extractor: ExtractorParams,
    pub classifier: ClassifierParams,
    pub phase_index: usize,
    pub old_class_count: usize,
    pub new_class_count: usize,
}

impl LearnerState {
    /// A phase-0 learner: seeded extractor plus `n_classes` fresh output
    /// units.
    pub fn fresh(
        extractor_cfg: &ExtractorConfig,
        n_classes: usize,
        init_scale: f64,
        extractor_seed: u64,
        classifier_seed: u64,
    ) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::Config("learner needs at least one class".into()));
        }
        let extractor = ExtractorParams::init(extractor_cfg, extractor_seed)?;
        let classifier = expand_classifier(
            &ClassifierParams::empty(extractor_cfg.embedding_dim),
            n_classes,
            init_scale,
            classifier_seed,
        )?;
        Ok(LearnerState {
            extractor,
            classifier,
            phase_index: 0,
            old_class_count: 0,
            new_class_count: n_classes,
        })
    }

    pub fn class_count(&self) -> usize {
        self.classifier.class_count()
    }

    /// Embedding and logits for one input.
    pub fn forward(&self, x: &Vector) -> Result<(Vector, Vector)> {
        let v = extract(&self.extractor, x)?;
        let o = classify(&self.classifier, &v)?;
        Ok((v, o))
    }

    /// Number of trainable scalars (extractor + classifier).
    pub fn param_len(&self) -> usize {
        let ext: usize = self
            .extractor
            .layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum();
        let cls: usize = self
            .classifier
            .entries
            .iter()
            .map(|e| e.weight.len() + 1)
            .sum();
        ext + cls
    }

    /// Flattens all parameters into one vector: extractor layers in order
    /// (row-major weight, then bias), then classifier entries in class
    /// order (weight, then bias). Appending classes appends coordinates,
    /// so old-class offsets are stable across expansions.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        for layer in &self.extractor.layers {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(layer.bias.as_slice());
        }
        for entry in &self.classifier.entries {
            out.extend_from_slice(entry.weight.as_slice());
            out.push(entry.bias);
        }
        out
    }

    /// Writes a flat parameter vector back, rejecting wrong lengths and
    /// non-finite values (nothing NaN/Inf is admitted into the store).
    pub fn set_param_vector(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::Config(format!(
                "set_param_vector: expected {} values, got {}",
                self.param_len(),
                params.len()
            )));
        }
        crate::linalg::check_finite(params, "learner parameters")?;
        let mut at = 0;
        for layer in &mut self.extractor.layers {
            let w = layer.weight.as_mut_slice();
            w.copy_from_slice(&params[at..at + w.len()]);
            at += w.len();
            let b = layer.bias.as_mut_slice();
            b.copy_from_slice(&params[at..at + b.len()]);
            at += b.len();
        }
        for entry in &mut self.classifier.entries {
            let w = entry.weight.as_mut_slice();
            w.copy_from_slice(&params[at..at + w.len()]);
            at += w.len();
            entry.bias = params[at];
            at += 1;
        }
        debug_assert_eq!(at, params.len());
        Ok(())
    }

    /// Boolean mask over [`Self::param_vector`]: `true` marks coordinates
    /// excluded from updates (whole extractor and/or frozen class entries).
    pub fn frozen_param_mask(&self, freeze_extractor: bool) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.param_len());
        for layer in &self.extractor.layers {
            let n = layer.weight.rows() * layer.weight.cols() + layer.bias.len();
            mask.extend(std::iter::repeat(freeze_extractor).take(n));
        }
        for (k, entry) in self.classifier.entries.iter().enumerate() {
            let frozen = self.classifier.frozen[k];
            mask.extend(std::iter::repeat(frozen).take(entry.weight.len() + 1));
        }
        mask
    }
}

/// An immutable deep copy of a learner, used as the distillation teacher.
/// No mutating access exists, so its outputs never change.
#[derive(Debug, Clone)]
pub struct FrozenTeacher(LearnerState);

impl FrozenTeacher {
    pub fn learner(&self) -> &LearnerState {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.class_count()
    }

    pub fn forward(&self, x: &Vector) -> Result<(Vector, Vector)> {
        self.0.forward(x)
    }
}

/// Snapshots the learner as an immutable teacher.
pub fn freeze(learner: &LearnerState) -> FrozenTeacher {
    FrozenTeacher(learner.clone())
}
