//! Classification and adversarial objectives, plain and gated.
//!
//! Sign convention: the discriminator maximizes the adversarial value
//! `E_T[log D] + E_S[log(1 - D)]` and the feature extractor minimizes it. A
//! single descent step on `clf - adv`, with `grad_reverse(mu)` inserted
//! between `F` and `D`, performs both updates at once: `D` ascends `adv` at
//! full rate while `F` descends `clf + mu * adv`. The reported saddle value is
//! `total = clf - mu * adv`.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::networks::{interior_sigmoid, BoundModel, Label};
use crate::training::Variant;

/// Default clamp applied to `D` before the odds map.
pub const DEFAULT_OMEGA_CLAMP: f64 = 1e-3;

/// Inputs with class labels and perturbation flags.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub x: Tensor,
    pub y: Vec<usize>,
    /// `true` where the example was perturbed in any way.
    pub perturbed: Vec<bool>,
}

impl LabeledBatch {
    pub fn new(x: Tensor, y: Vec<usize>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Shape {
                op: "batch",
                detail: format!("{} inputs with {} labels", x.rows(), y.len()),
            });
        }
        let perturbed = vec![false; y.len()];
        Ok(Self { x, y, perturbed })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn class_labels(&self) -> Vec<Label> {
        self.y.iter().map(|&y| Label::Class(y)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledBatch {
    pub x: Tensor,
}

impl UnlabeledBatch {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Importance weight `ω = d / (1 - d)` of one source pair, `d` clamped to
/// `[δ, 1 - δ]` first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateWeight {
    pub omega: f64,
    pub raw_d: f64,
}

impl GateWeight {
    pub fn from_probability(d: f64, delta: f64) -> Self {
        Self {
            omega: crate::autodiff::clamped_odds(d, delta),
            raw_d: d,
        }
    }
}

/// Loss values of one objective evaluation plus the node to descend.
#[derive(Debug, Clone)]
pub struct LossBundle {
    pub clf_loss: f64,
    pub adv_loss: f64,
    /// `clf_loss - mu * adv_loss`.
    pub total: f64,
    /// Weights applied to the source batch (empty for ungated objectives).
    pub omegas: Vec<GateWeight>,
    pub mu: f64,
    /// Scalar node whose gradient updates every network in one step.
    pub objective: NodeId,
}

/// Which discriminator supplies the source weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateSource {
    /// `D(F(x_s), y_s)`: ratio of joint densities.
    Joint,
    /// `D(F(x_s), nil)`: ratio of marginal densities.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClfTerm {
    /// Unweighted source term with unit scale.
    Plain,
    /// Unweighted source term scaled by `lambda`.
    Scaled,
    Gated(GateSource),
}

/// Selection of the marginal (nil-label) and joint (true-label) adversarial pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AdvPairs {
    pub marginal: bool,
    pub joint: bool,
}

impl AdvPairs {
    pub const NONE: Self = Self {
        marginal: false,
        joint: false,
    };
    pub const MARGINAL: Self = Self {
        marginal: true,
        joint: false,
    };
    pub const JOINT: Self = Self {
        marginal: false,
        joint: true,
    };
    pub const BOTH: Self = Self {
        marginal: true,
        joint: true,
    };
}

/// Active terms of an objective: the classification term, the pairs the
/// discriminator is trained on, and the subset the feature extractor is
/// trained against through gradient reversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wiring {
    pub clf: ClfTerm,
    pub discriminator: AdvPairs,
    pub feature: AdvPairs,
}

/// Batches drawn for one step. `source` is whatever plays the source role.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepBatches<'a> {
    pub source: Option<&'a LabeledBatch>,
    pub target_labeled: Option<&'a LabeledBatch>,
    pub target_unlabeled: Option<&'a UnlabeledBatch>,
}

fn nonempty<T>(b: Option<&T>, len: impl Fn(&T) -> usize) -> Option<&T> {
    b.filter(|b| len(b) > 0)
}

pub(crate) fn features(g: &mut Graph, m: &BoundModel, x: &Tensor) -> Result<NodeId> {
    let xn = g.constant(x.clone());
    m.feature.forward(g, xn)
}

fn ce_per_sample(g: &mut Graph, m: &BoundModel, f: NodeId, y: &[usize]) -> Result<NodeId> {
    let z = m.classifier.logits(g, f)?;
    g.softmax_cross_entropy(z, y)
}

/// `mean log D` (`toward_target`) or `mean log(1 - D)` over a batch.
pub(crate) fn log_d_mean(
    g: &mut Graph,
    m: &BoundModel,
    f: NodeId,
    labels: &[Label],
    toward_target: bool,
) -> Result<NodeId> {
    let z = m.discriminator_logit(g, f, labels)?;
    let t = if toward_target { 1.0 } else { 0.0 };
    let bce = g.bce_with_logits(z, &vec![t; labels.len()])?;
    let mean = g.mean(bce)?;
    g.scale(mean, -1.0)
}

fn sum_nodes(g: &mut Graph, nodes: &[NodeId]) -> Result<Option<NodeId>> {
    let mut it = nodes.iter();
    let Some(&first) = it.next() else {
        return Ok(None);
    };
    let mut acc = first;
    for &n in it {
        acc = g.add(acc, n)?;
    }
    Ok(Some(acc))
}

/// Mean target cross-entropy plus `source_scale` times the (optionally
/// weighted) mean source cross-entropy. Either side may be absent.
fn clf_from_features(
    g: &mut Graph,
    m: &BoundModel,
    target: Option<(NodeId, &[usize])>,
    source: Option<(NodeId, &[usize])>,
    source_weights: Option<NodeId>,
    source_scale: f64,
) -> Result<NodeId> {
    let mut terms = Vec::new();
    if let Some((f, y)) = target {
        let ce = ce_per_sample(g, m, f, y)?;
        terms.push(g.mean(ce)?);
    }
    if let Some((f, y)) = source {
        let ce = ce_per_sample(g, m, f, y)?;
        let weighted = match source_weights {
            Some(w) => g.mul(ce, w)?,
            None => ce,
        };
        let mean = g.mean(weighted)?;
        terms.push(if source_scale == 1.0 {
            mean
        } else {
            g.scale(mean, source_scale)?
        });
    }
    sum_nodes(g, &terms)?.ok_or_else(|| Error::UndefinedLoss("classification loss with both batches empty".into()))
}

/// Mean cross-entropy on labeled target data plus mean cross-entropy on source data.
pub fn clf_loss(
    g: &mut Graph,
    m: &BoundModel,
    target_labeled: Option<&LabeledBatch>,
    source: Option<&LabeledBatch>,
) -> Result<NodeId> {
    let tl = nonempty(target_labeled, LabeledBatch::len);
    let s = nonempty(source, LabeledBatch::len);
    let tf = tl
        .map(|b| features(g, m, &b.x).map(|f| (f, b.y.as_slice())))
        .transpose()?;
    let sf = s
        .map(|b| features(g, m, &b.x).map(|f| (f, b.y.as_slice())))
        .transpose()?;
    clf_from_features(g, m, tf, sf, None, 1.0)
}

/// Source importance weights `SG(clamped D / (1 - D))` as an `[n]` node.
fn gate_node(
    g: &mut Graph,
    m: &BoundModel,
    source_features: NodeId,
    labels: &[Label],
    delta: f64,
) -> Result<(NodeId, Vec<GateWeight>)> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::Config(format!("gate clamp must lie in (0, 0.5), got {delta}")));
    }
    let z = m.discriminator_logit(g, source_features, labels)?;
    // the weights enter the loss as constants, which stops their gradient
    let weights: Vec<GateWeight> = g
        .value(z)?
        .data()
        .iter()
        .map(|&v| GateWeight::from_probability(interior_sigmoid(v), delta))
        .collect();
    let omega = g.constant(Tensor::vector(weights.iter().map(|w| w.omega).collect())?);
    Ok((omega, weights))
}

/// Importance weights of labeled source pairs from the joint discriminator.
/// No gradient flows back through the weights.
pub fn gate_weight(
    g: &mut Graph,
    m: &BoundModel,
    source_x: &Tensor,
    source_y: &[Label],
    delta: f64,
) -> Result<(NodeId, Vec<GateWeight>)> {
    if source_y.iter().any(|l| matches!(l, Label::Nil)) {
        return Err(Error::Contract("gate weights need real class labels, got nil".into()));
    }
    let f = features(g, m, source_x)?;
    gate_node(g, m, f, source_y, delta)
}

/// Target cross-entropy plus `lambda` times the ω-weighted source cross-entropy.
pub fn gated_clf_loss(
    g: &mut Graph,
    m: &BoundModel,
    target_labeled: Option<&LabeledBatch>,
    source: Option<&LabeledBatch>,
    lambda: f64,
    delta: f64,
) -> Result<(NodeId, Vec<GateWeight>)> {
    check_lambda(lambda)?;
    let tl = nonempty(target_labeled, LabeledBatch::len);
    let s = nonempty(source, LabeledBatch::len);
    let tf = tl
        .map(|b| features(g, m, &b.x).map(|f| (f, b.y.as_slice())))
        .transpose()?;
    let mut weights = Vec::new();
    let sf = match s {
        Some(b) => {
            let f = features(g, m, &b.x)?;
            let (w, gw) = gate_node(g, m, f, &b.class_labels(), delta)?;
            weights = gw;
            Some((f, b.y.as_slice(), w))
        }
        None => None,
    };
    let node = clf_from_features(g, m, tf, sf.map(|(f, y, _)| (f, y)), sf.map(|(_, _, w)| w), lambda)?;
    Ok((node, weights))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// `mean log D(F(x_u), nil) + mean log(1 - D(F(x_s), nil))`, with `F`
/// reaching `D` through `grad_reverse(mu)`. An empty side is omitted.
pub fn marginal_adv_loss(
    g: &mut Graph,
    m: &BoundModel,
    target_unlabeled: Option<&UnlabeledBatch>,
    source: Option<&Tensor>,
    mu: f64,
) -> Result<NodeId> {
    let mut terms = Vec::new();
    if let Some(b) = nonempty(target_unlabeled, UnlabeledBatch::len) {
        let f = features(g, m, &b.x)?;
        let r = g.grad_reverse(f, mu)?;
        terms.push(log_d_mean(g, m, r, &vec![Label::Nil; b.len()], true)?);
    }
    if let Some(x) = source {
        let f = features(g, m, x)?;
        let r = g.grad_reverse(f, mu)?;
        terms.push(log_d_mean(g, m, r, &vec![Label::Nil; x.rows()], false)?);
    }
    sum_nodes(g, &terms)?.ok_or_else(|| Error::UndefinedLoss("adversarial loss with both batches empty".into()))
}

/// Marginal pair with nil labels plus joint pair with true labels. The
/// joint target term is omitted when no labeled target data is present.
pub fn aug_adv_loss(
    g: &mut Graph,
    m: &BoundModel,
    target_unlabeled: Option<&UnlabeledBatch>,
    source: &LabeledBatch,
    target_labeled: Option<&LabeledBatch>,
    mu: f64,
) -> Result<NodeId> {
    let tu = nonempty(target_unlabeled, UnlabeledBatch::len);
    let tl = nonempty(target_labeled, LabeledBatch::len);
    if tu.is_none() && tl.is_none() {
        return Err(Error::UndefinedLoss(
            "augmented adversarial loss without target data".into(),
        ));
    }
    if source.is_empty() {
        return Err(Error::UndefinedLoss(
            "augmented adversarial loss without source data".into(),
        ));
    }
    let fs = features(g, m, &source.x)?;
    let rs = g.grad_reverse(fs, mu)?;
    let mut terms = Vec::new();
    if let Some(b) = tu {
        let f = features(g, m, &b.x)?;
        let r = g.grad_reverse(f, mu)?;
        terms.push(log_d_mean(g, m, r, &vec![Label::Nil; b.len()], true)?);
    }
    terms.push(log_d_mean(g, m, rs, &vec![Label::Nil; source.len()], false)?);
    if let Some(b) = tl {
        let f = features(g, m, &b.x)?;
        let r = g.grad_reverse(f, mu)?;
        terms.push(log_d_mean(g, m, r, &b.class_labels(), true)?);
    }
    terms.push(log_d_mean(g, m, rs, &source.class_labels(), false)?);
    Ok(sum_nodes(g, &terms)?.expect("source terms always present"))
}

/// Options of [`total_objective`] beyond the variant.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveOptions {
    pub mu: f64,
    pub lambda: f64,
    pub delta: f64,
    /// When false the gate weights are forced to 1 (warmup).
    pub gate_active: bool,
}

/// Builds the full objective for `variant` on one set of batches.
pub fn total_objective(
    g: &mut Graph,
    m: &BoundModel,
    batches: StepBatches<'_>,
    variant: Variant,
    opts: ObjectiveOptions,
) -> Result<LossBundle> {
    build_objective(g, m, batches, variant.wiring(), opts)
}

pub fn build_objective(
    g: &mut Graph,
    m: &BoundModel,
    batches: StepBatches<'_>,
    wiring: Wiring,
    opts: ObjectiveOptions,
) -> Result<LossBundle> {
    let ObjectiveOptions {
        mu,
        lambda,
        delta,
        gate_active,
    } = opts;
    check_lambda(lambda)?;
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::Config(format!("mu must be finite and >= 0, got {mu}")));
    }
    let s = nonempty(batches.source, LabeledBatch::len);
    let tl = nonempty(batches.target_labeled, LabeledBatch::len);
    let tu = nonempty(batches.target_unlabeled, UnlabeledBatch::len);

    let fs = s.map(|b| features(g, m, &b.x)).transpose()?;
    let ftl = tl.map(|b| features(g, m, &b.x)).transpose()?;
    let ftu = tu.map(|b| features(g, m, &b.x)).transpose()?;

    // classification
    let mut omegas = Vec::new();
    let clf = if s.is_none() && tl.is_none() {
        None
    } else {
        let (weights, scale) = match (wiring.clf, s, fs) {
            (ClfTerm::Gated(source_kind), Some(b), Some(f)) => {
                let labels: Vec<Label> = match source_kind {
                    GateSource::Joint => b.class_labels(),
                    GateSource::Marginal => vec![Label::Nil; b.len()],
                };
                let (w, gw) = gate_node(g, m, f, &labels, delta)?;
                if gate_active {
                    omegas = gw;
                    (Some(w), lambda)
                } else {
                    omegas = gw
                        .iter()
                        .map(|w| GateWeight {
                            omega: 1.0,
                            raw_d: w.raw_d,
                        })
                        .collect();
                    (None, lambda)
                }
            }
            (ClfTerm::Scaled, _, _) => (None, lambda),
            _ => (None, 1.0),
        };
        Some(clf_from_features(
            g,
            m,
            tl.zip(ftl).map(|(b, f)| (f, b.y.as_slice())),
            s.zip(fs).map(|(b, f)| (f, b.y.as_slice())),
            weights,
            scale,
        )?)
    };

    // adversarial: one reversal node per batch, or a detached copy when F
    // is not trained against that pair
    let mut adv_terms = Vec::new();
    let reversed = |g: &mut Graph, f: NodeId, f_matches: bool| -> Result<NodeId> {
        if f_matches {
            g.grad_reverse(f, mu)
        } else {
            g.stop_grad(f)
        }
    };
    let d = wiring.discriminator;
    let fm = wiring.feature;
    if d.marginal {
        if let (Some(b), Some(f)) = (tu, ftu) {
            let r = reversed(g, f, fm.marginal)?;
            adv_terms.push(log_d_mean(g, m, r, &vec![Label::Nil; b.len()], true)?);
        }
        if let (Some(b), Some(f)) = (s, fs) {
            let r = reversed(g, f, fm.marginal)?;
            adv_terms.push(log_d_mean(g, m, r, &vec![Label::Nil; b.len()], false)?);
        }
    }
    if d.joint {
        if let (Some(b), Some(f)) = (tl, ftl) {
            let r = reversed(g, f, fm.joint)?;
            adv_terms.push(log_d_mean(g, m, r, &b.class_labels(), true)?);
        }
        if let (Some(b), Some(f)) = (s, fs) {
            let r = reversed(g, f, fm.joint)?;
            adv_terms.push(log_d_mean(g, m, r, &b.class_labels(), false)?);
        }
    }
    let adv = sum_nodes(g, &adv_terms)?;

    let (objective, clf_value, adv_value) = match (clf, adv) {
        (Some(c), Some(a)) => (g.sub(c, a)?, g.value(c)?.item()?, g.value(a)?.item()?),
        (Some(c), None) => (c, g.value(c)?.item()?, 0.0),
        (None, Some(a)) => (g.scale(a, -1.0)?, 0.0, g.value(a)?.item()?),
        (None, None) => {
            return Err(Error::UndefinedLoss(
                "objective has no active term for these batches".into(),
            ))
        }
    };
    Ok(LossBundle {
        clf_loss: clf_value,
        adv_loss: adv_value,
        total: clf_value - mu * adv_value,
        omegas,
        mu,
        objective,
    })
}
