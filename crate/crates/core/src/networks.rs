//! Feature extractor `F`, classifier `C` and joint discriminator `D`.
//!
//! `D` scores a `(feature, label)` pair, where the label slot is a one-hot
//! class code extended by one extra "nil" slot. Feeding the nil code turns the
//! same network into a marginal (label-free) discriminator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, NodeId, Tensor};
use crate::error::{shape_err, Error, Result};

/// Class label as seen by the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Class(usize),
    Nil,
}

/// One-hot code of length `K + 1`; slot `K` marks the nil label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelInput(Vec<f64>);

impl LabelInput {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_nil(&self) -> bool {
        self.0.last() == Some(&1.0)
    }
}

pub fn encode_label(label: Label, num_classes: usize) -> Result<LabelInput> {
    let slot = match label {
        Label::Class(y) if y < num_classes => y,
        Label::Class(y) => {
            return Err(Error::Domain(format!(
                "class {y} out of range for {num_classes} classes"
            )))
        }
        Label::Nil => num_classes,
    };
    let mut code = vec![0.0; num_classes + 1];
    code[slot] = 1.0;
    Ok(LabelInput(code))
}

/// Encodes a batch of labels as a `[n, K + 1]` matrix.
pub fn encode_labels(labels: &[Label], num_classes: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(labels.len() * (num_classes + 1));
    for &l in labels {
        data.extend_from_slice(encode_label(l, num_classes)?.as_slice());
    }
    Tensor::matrix(labels.len(), num_classes + 1, data)
}

/// Layer sizes of the three networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDims {
    pub input_dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub disc_hidden: usize,
}

impl NetworkDims {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: 64,
            feature_dim: 16,
            num_classes,
            disc_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.input_dim,
            self.hidden,
            self.feature_dim,
            self.num_classes,
            self.disc_hidden,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Affine layer `x · W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![fan_in, fan_out]),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    /// Uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn scaled_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, data).expect("sized by construction"),
            bias: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    fn bind(&self, g: &mut Graph) -> BoundDense {
        BoundDense {
            weight: g.parameter(self.weight.clone()),
            bias: g.parameter(self.bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl BoundDense {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let h = g.matmul(x, self.weight)?;
        g.add_bias(h, self.bias)
    }
}

/// `input → hidden → hidden → feature_dim`, tanh after every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub layers: Vec<Dense>,
}

impl FeatureExtractor {
    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::fan_out).unwrap_or(0)
    }

    pub fn bind(&self, g: &mut Graph) -> BoundFeatureExtractor {
        BoundFeatureExtractor {
            layers: self.layers.iter().map(|l| l.bind(g)).collect(),
            input_dim: self.input_dim(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let xn = g.constant(x.clone());
        let f = bound.forward(&mut g, xn)?;
        Ok(g.value(f)?.clone())
    }
}

#[derive(Debug, Clone)]
pub struct BoundFeatureExtractor {
    layers: Vec<BoundDense>,
    input_dim: usize,
}

impl BoundFeatureExtractor {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let width = g.value(x)?.cols();
        if width != self.input_dim {
            return Err(shape_err(
                "feature_forward",
                format!("input width {width}, extractor expects {}", self.input_dim),
            ));
        }
        let mut h = x;
        for layer in &self.layers {
            let z = layer.forward(g, h)?;
            h = g.tanh(z)?;
        }
        Ok(h)
    }
}

/// Linear map from features to class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub layer: Dense,
}

impl Classifier {
    pub fn num_classes(&self) -> usize {
        self.layer.fan_out()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundClassifier {
        BoundClassifier {
            layer: self.layer.bind(g),
        }
    }

    /// Per-row class probabilities for a batch of features.
    pub fn probabilities(&self, features: &Tensor) -> Result<Tensor> {
        if features.shape().len() != 2 || features.cols() != self.layer.fan_in() {
            return Err(shape_err(
                "classify",
                format!(
                    "features {:?}, classifier expects width {}",
                    features.shape(),
                    self.layer.fan_in()
                ),
            ));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let f = g.constant(features.clone());
        let z = bound.logits(&mut g, f)?;
        Ok(softmax_rows(g.value(z)?))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundClassifier {
    layer: BoundDense,
}

impl BoundClassifier {
    pub fn logits(&self, g: &mut Graph, features: NodeId) -> Result<NodeId> {
        self.layer.forward(g, features)
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// `[feature, label code] → hidden (tanh) → 1 logit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDiscriminator {
    pub hidden: Dense,
    pub output: Dense,
}

impl JointDiscriminator {
    pub fn bind(&self, g: &mut Graph) -> BoundDiscriminator {
        BoundDiscriminator {
            hidden: self.hidden.bind(g),
            output: self.output.bind(g),
            input_dim: self.hidden.fan_in(),
        }
    }

    /// Probability that each `(feature, label)` row comes from the target domain,
    /// kept strictly inside `(0, 1)`.
    pub fn probability(&self, features: &Tensor, labels: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let f = g.constant(features.clone());
        let l = g.constant(labels.clone());
        let z = bound.logit(&mut g, f, l)?;
        Ok(g.value(z)?.data().iter().map(|&v| interior_sigmoid(v)).collect())
    }
}

/// Sigmoid kept strictly inside `(0, 1)` for every finite logit.
pub fn interior_sigmoid(z: f64) -> f64 {
    sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDiscriminator {
    hidden: BoundDense,
    output: BoundDense,
    input_dim: usize,
}

impl BoundDiscriminator {
    /// Logit of `D(f, y)`; `labels` is an encoded `[n, K + 1]` node.
    pub fn logit(&self, g: &mut Graph, features: NodeId, labels: NodeId) -> Result<NodeId> {
        let joint = g.concat_cols(features, labels)?;
        let width = g.value(joint)?.cols();
        if width != self.input_dim {
            return Err(shape_err(
                "discriminate",
                format!("joint input width {width}, discriminator expects {}", self.input_dim),
            ));
        }
        let h = self.hidden.forward(g, joint)?;
        let h = g.tanh(h)?;
        self.output.forward(g, h)
    }
}

/// Parameters of `F`, `C` and `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTriple {
    pub feature: FeatureExtractor,
    pub classifier: Classifier,
    pub discriminator: JointDiscriminator,
}

impl ModelTriple {
    /// Seeded scaled-uniform initialization, drawn in the order F, C, D.
    pub fn init(dims: &NetworkDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build(dims, |i, o| Dense::scaled_uniform(i, o, &mut rng)))
    }

    /// All weights and biases zero: features are 0, classes uniform, `D ≡ 0.5`.
    pub fn zeros(dims: &NetworkDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self::build(dims, Dense::zeros))
    }

    /// Checks that every layer has the shape implied by the first layer,
    /// the classifier width and the discriminator width.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(shape_err("model", what));
        if self.feature.layers.len() != 3 {
            return bad(format!(
                "feature extractor has {} layers, expected 3",
                self.feature.layers.len()
            ));
        }
        let layers = self.named_layers();
        for (name, l) in &layers {
            if l.weight.shape().len() != 2 || l.bias.shape() != [l.weight.shape()[1]] {
                return bad(format!(
                    "{name}: weight {:?} with bias {:?}",
                    l.weight.shape(),
                    l.bias.shape()
                ));
            }
        }
        let dims = self.dims();
        dims.validate()?;
        let expected = Self::zeros(&dims)?;
        for ((name, l), (_, e)) in layers.iter().zip(expected.named_layers()) {
            if l.weight.shape() != e.weight.shape() {
                return bad(format!(
                    "{name}: weight {:?}, expected {:?}",
                    l.weight.shape(),
                    e.weight.shape()
                ));
            }
        }
        Ok(())
    }

    fn build(dims: &NetworkDims, mut layer: impl FnMut(usize, usize) -> Dense) -> Self {
        let feature = FeatureExtractor {
            layers: vec![
                layer(dims.input_dim, dims.hidden),
                layer(dims.hidden, dims.hidden),
                layer(dims.hidden, dims.feature_dim),
            ],
        };
        let classifier = Classifier {
            layer: layer(dims.feature_dim, dims.num_classes),
        };
        let discriminator = JointDiscriminator {
            hidden: layer(dims.feature_dim + dims.num_classes + 1, dims.disc_hidden),
            output: layer(dims.disc_hidden, 1),
        };
        Self {
            feature,
            classifier,
            discriminator,
        }
    }

    pub fn dims(&self) -> NetworkDims {
        NetworkDims {
            input_dim: self.feature.input_dim(),
            hidden: self.feature.layers[0].fan_out(),
            feature_dim: self.feature.output_dim(),
            num_classes: self.classifier.num_classes(),
            disc_hidden: self.discriminator.hidden.fan_out(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    fn layers(&self) -> Vec<&Dense> {
        let mut out: Vec<&Dense> = self.feature.layers.iter().collect();
        out.push(&self.classifier.layer);
        out.push(&self.discriminator.hidden);
        out.push(&self.discriminator.output);
        out
    }

    /// Named layers in binding order (F layers, C, D hidden, D output).
    pub fn named_layers(&self) -> Vec<(String, &Dense)> {
        let mut names: Vec<String> = (0..self.feature.layers.len()).map(|i| format!("feature.{i}")).collect();
        names.extend([
            "classifier".into(),
            "discriminator.hidden".into(),
            "discriminator.output".into(),
        ]);
        names.into_iter().zip(self.layers()).collect()
    }

    /// Every parameter tensor, in the same order as [`BoundModel::parameters`].
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers().into_iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in self.feature.layers.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for l in [
            &mut self.classifier.layer,
            &mut self.discriminator.hidden,
            &mut self.discriminator.output,
        ] {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Inserts every parameter into `g` as a parameter leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        let feature = self.feature.bind(g);
        let classifier = self.classifier.bind(g);
        let discriminator = self.discriminator.bind(g);
        let mut parameters = Vec::new();
        for l in &feature.layers {
            parameters.extend([l.weight, l.bias]);
        }
        parameters.extend([classifier.layer.weight, classifier.layer.bias]);
        parameters.extend([
            discriminator.hidden.weight,
            discriminator.hidden.bias,
            discriminator.output.weight,
            discriminator.output.bias,
        ]);
        BoundModel {
            feature,
            classifier,
            discriminator,
            num_classes: self.num_classes(),
            parameters,
        }
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.feature.forward(x)
    }

    pub fn class_probabilities(&self, x: &Tensor) -> Result<Tensor> {
        self.classifier.probabilities(&self.features(x)?)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.class_probabilities(x)?.argmax_rows())
    }

    /// `D(F(x), y)` for each row of `x`.
    pub fn discriminate(&self, x: &Tensor, labels: &[Label]) -> Result<Vec<f64>> {
        if x.rows() != labels.len() {
            return Err(shape_err(
                "discriminate",
                format!("{} inputs with {} labels", x.rows(), labels.len()),
            ));
        }
        let f = self.features(x)?;
        let codes = encode_labels(labels, self.num_classes())?;
        self.discriminator.probability(&f, &codes)
    }
}

/// A [`ModelTriple`] whose parameters live in a graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub feature: BoundFeatureExtractor,
    pub classifier: BoundClassifier,
    pub discriminator: BoundDiscriminator,
    num_classes: usize,
    parameters: Vec<NodeId>,
}

impl BoundModel {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn parameters(&self) -> &[NodeId] {
        &self.parameters
    }

    /// Discriminator logits for `features` paired with `labels`.
    pub fn discriminator_logit(&self, g: &mut Graph, features: NodeId, labels: &[Label]) -> Result<NodeId> {
        let codes = g.constant(encode_labels(labels, self.num_classes)?);
        self.discriminator.logit(g, features, codes)
    }

    /// Collects the gradient of every parameter after a backward pass.
    pub fn gradients(&self, g: &Graph) -> Result<Vec<Tensor>> {
        self.parameters.iter().map(|&id| g.grad(id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> NetworkDims {
        NetworkDims::new(2, 3)
    }

    #[test]
    fn label_codes() {
        assert_eq!(
            encode_label(Label::Class(2), 3).unwrap().as_slice(),
            &[0.0, 0.0, 1.0, 0.0]
        );
        let nil = encode_label(Label::Nil, 3).unwrap();
        assert_eq!(nil.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        assert!(nil.is_nil());
        assert_eq!(encode_label(Label::Class(0), 1).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(matches!(encode_label(Label::Class(3), 3), Err(Error::Domain(_))));
    }

    #[test]
    fn label_codes_are_injective() {
        let k = 4;
        let mut all: Vec<Label> = (0..k).map(Label::Class).collect();
        all.push(Label::Nil);
        let codes: Vec<_> = all.iter().map(|&l| encode_label(l, k).unwrap()).collect();
        for i in 0..codes.len() {
            assert_eq!(codes[i].as_slice().iter().filter(|&&v| v == 1.0).count(), 1);
            for j in i + 1..codes.len() {
                assert_ne!(codes[i], codes[j]);
            }
        }
    }

    #[test]
    fn zero_model_is_neutral() {
        let m = ModelTriple::zeros(&dims()).unwrap();
        let x = Tensor::matrix(4, 2, vec![1.0, -3.0, 0.5, 2.0, 9.0, 9.0, -1.0, 0.0]).unwrap();
        let f = m.features(&x).unwrap();
        assert_eq!(f.shape(), &[4, 16]);
        assert!(f.data().iter().all(|&v| v == 0.0));
        let p = m.class_probabilities(&x).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let d = m
            .discriminate(&x, &[Label::Nil, Label::Class(0), Label::Class(1), Label::Class(2)])
            .unwrap();
        assert!(d.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let m = ModelTriple::init(&dims(), 1).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(m.features(&x), Err(Error::Shape { .. })));
        let f = Tensor::matrix(2, 5, vec![0.0; 10]).unwrap();
        assert!(matches!(m.classifier.probabilities(&f), Err(Error::Shape { .. })));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = ModelTriple::init(&dims(), 42).unwrap();
        let b = ModelTriple::init(&dims(), 42).unwrap();
        let c = ModelTriple::init(&dims(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let x = Tensor::matrix(3, 2, vec![0.1, 0.2, -1.0, 4.0, 2.0, 2.0]).unwrap();
        let fa = a.features(&x).unwrap();
        let fb = b.features(&x).unwrap();
        assert_eq!(fa, fb);
        assert_eq!(fa.rows(), 3);
    }

    #[test]
    fn init_bounds_follow_fan_sizes() {
        let mut m = ModelTriple::init(&dims(), 5).unwrap();
        for (_, layer) in m.named_layers() {
            let a = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            assert!(layer.weight.data().iter().all(|v| v.abs() <= a));
            assert!(layer.bias.data().iter().all(|&v| v == 0.0));
        }
        assert_eq!(m.parameters().len(), m.parameters_mut().len());
        let mut g = Graph::new();
        let bound = m.bind(&mut g);
        assert_eq!(bound.parameters().len(), m.parameters().len());
    }

    #[test]
    fn classify_argmax() {
        let c = Classifier {
            layer: Dense {
                weight: Tensor::matrix(1, 3, vec![10.0, 0.0, 0.0]).unwrap(),
                bias: Tensor::zeros(vec![3]),
            },
        };
        let p = c.probabilities(&Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        assert_eq!(p.argmax_rows(), vec![0]);
    }

    #[test]
    fn discriminator_stays_interior() {
        assert!(interior_sigmoid(1e6) < 1.0);
        assert!(interior_sigmoid(-1e6) > 0.0);
        assert_eq!(interior_sigmoid(0.0), 0.5);
    }
}
