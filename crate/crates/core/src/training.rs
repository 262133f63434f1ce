//! Training loop, progress schedule for the reversal coefficient, and Adam.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::data::{derive_seed, DomainData, Example};
use crate::error::{Error, Result};
use crate::networks::{Label, ModelTriple, NetworkDims};
use crate::objectives::{
    build_objective, features, log_d_mean, AdvPairs, ClfTerm, GateSource, LabeledBatch, ObjectiveOptions, StepBatches,
    UnlabeledBatch, Wiring, DEFAULT_OMEGA_CLAMP,
};

const STREAM_INIT: u64 = 10;
const STREAM_SOURCE: u64 = 11;
const STREAM_TARGET_LABELED: u64 = 12;
const STREAM_TARGET_UNLABELED: u64 = 13;

/// Algorithm variant of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Gate,
    GateOnly,
    LabelOnly,
    JointOnly,
    MarginalOnly,
    NoneMatch,
    Oracle,
    TargetOnly,
    SourceIgnoringStub,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Base,
        Variant::Gate,
        Variant::GateOnly,
        Variant::LabelOnly,
        Variant::JointOnly,
        Variant::MarginalOnly,
        Variant::NoneMatch,
        Variant::Oracle,
        Variant::TargetOnly,
        Variant::SourceIgnoringStub,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Gate => "gate",
            Variant::GateOnly => "gate_only",
            Variant::LabelOnly => "label_only",
            Variant::JointOnly => "joint_only",
            Variant::MarginalOnly => "marginal_only",
            Variant::NoneMatch => "none_match",
            Variant::Oracle => "oracle",
            Variant::TargetOnly => "target_only",
            Variant::SourceIgnoringStub => "source_ignoring_stub",
        }
    }

    /// True when the variant trains on actual source data.
    pub fn uses_source(self) -> bool {
        !matches!(self, Variant::TargetOnly | Variant::SourceIgnoringStub)
    }

    /// True when source examples are reweighted by the discriminator.
    pub fn is_gated(self) -> bool {
        matches!(self.wiring().clf, ClfTerm::Gated(_))
    }

    /// Active loss terms. The ablation variants keep the discriminator
    /// trained on all four pairs so the gate stays a joint ratio estimate;
    /// only the pairs the feature extractor is trained against change.
    pub fn wiring(self) -> Wiring {
        let gated = ClfTerm::Gated(GateSource::Joint);
        match self {
            Variant::Base | Variant::TargetOnly | Variant::SourceIgnoringStub => Wiring {
                clf: ClfTerm::Plain,
                discriminator: AdvPairs::MARGINAL,
                feature: AdvPairs::MARGINAL,
            },
            Variant::Oracle => Wiring {
                clf: ClfTerm::Scaled,
                discriminator: AdvPairs::MARGINAL,
                feature: AdvPairs::MARGINAL,
            },
            Variant::Gate => Wiring {
                clf: gated,
                discriminator: AdvPairs::BOTH,
                feature: AdvPairs::BOTH,
            },
            Variant::GateOnly => Wiring {
                clf: ClfTerm::Gated(GateSource::Marginal),
                discriminator: AdvPairs::MARGINAL,
                feature: AdvPairs::MARGINAL,
            },
            Variant::LabelOnly => Wiring {
                clf: ClfTerm::Plain,
                discriminator: AdvPairs::BOTH,
                feature: AdvPairs::BOTH,
            },
            Variant::JointOnly => Wiring {
                clf: gated,
                discriminator: AdvPairs::BOTH,
                feature: AdvPairs::JOINT,
            },
            Variant::MarginalOnly => Wiring {
                clf: gated,
                discriminator: AdvPairs::BOTH,
                feature: AdvPairs::MARGINAL,
            },
            Variant::NoneMatch => Wiring {
                clf: gated,
                discriminator: AdvPairs::BOTH,
                feature: AdvPairs::NONE,
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSizes {
    pub source: usize,
    pub target_unlabeled: usize,
    /// Upper bound; the labeled target batch is `min(n_l, target_labeled)`.
    pub target_labeled: usize,
}

impl Default for BatchSizes {
    fn default() -> Self {
        Self {
            source: 64,
            target_unlabeled: 64,
            target_labeled: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub mu_max: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch: BatchSizes,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub omega_clamp: f64,
    /// Fraction of steps during which gate weights are forced to 1.
    pub gate_warmup: f64,
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mu_max: 1.0,
            learning_rate: 3e-3,
            steps: 2000,
            batch: BatchSizes::default(),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            omega_clamp: DEFAULT_OMEGA_CLAMP,
            gate_warmup: 0.1,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.mu_max >= 0.0 && self.mu_max.is_finite()) {
            return bad("mu_max must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch.source == 0 || self.batch.target_unlabeled == 0 || self.batch.target_labeled == 0 {
            return bad("batch sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("adam constants must satisfy 0 <= beta < 1 and eps > 0");
        }
        if !(self.omega_clamp > 0.0 && self.omega_clamp < 0.5) {
            return bad("omega_clamp must lie in (0, 0.5)");
        }
        if !(0.0..=1.0).contains(&self.gate_warmup) {
            return bad("gate_warmup must lie in [0, 1]");
        }
        if self.log_interval == 0 {
            return bad("log_interval must be positive");
        }
        Ok(())
    }
}

/// Averages over one logging interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    /// Number of completed steps.
    pub step: usize,
    pub mu: f64,
    pub clf_loss: f64,
    pub adv_loss: f64,
    pub mean_omega_perturbed: Option<f64>,
    pub mean_omega_clean: Option<f64>,
    /// Accuracy on the labeled target set; `None` without labels.
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub interval: usize,
    pub records: Vec<HistoryRecord>,
}

/// `mu_max * (2 / (1 + exp(-10 p)) - 1)`, `p` clamped into `[0, 1]`.
pub fn mu_schedule(p: f64, mu_max: f64) -> f64 {
    let p = if p.is_nan() {
        log::warn!("mu_schedule progress is NaN, using 0");
        0.0
    } else if !(0.0..=1.0).contains(&p) {
        log::warn!("mu_schedule progress {p} outside [0, 1], clamping");
        p.clamp(0.0, 1.0)
    } else {
        p
    };
    mu_max * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
}

/// Adam over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "{} parameters with {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].len() != g.len() {
                return Err(Error::Contract(format!("parameter {i} changed shape between steps")));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gj), mj), vj) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let mhat = *mj / c1;
                let vhat = *vj / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// The target side handed to an algorithm.
#[derive(Debug, Clone, Copy)]
pub struct TargetData<'a> {
    pub labeled: &'a [Example],
    pub unlabeled: &'a [Vec<f64>],
    pub num_classes: usize,
}

impl<'a> TargetData<'a> {
    pub fn of(data: &'a DomainData) -> Self {
        Self {
            labeled: &data.target_labeled,
            unlabeled: &data.target_unlabeled,
            num_classes: data.num_classes,
        }
    }

    fn input_dim(&self) -> Option<usize> {
        self.unlabeled
            .first()
            .map(Vec::len)
            .or_else(|| self.labeled.first().map(|e| e.x.len()))
    }
}

/// Trains `variant` on `data`. Variants that ignore the source never look at it.
pub fn train(data: &DomainData, cfg: &TrainConfig, variant: Variant) -> Result<(ModelTriple, TrainHistory)> {
    let source = if variant.uses_source() {
        Some(data.source.as_slice())
    } else {
        None
    };
    run_algorithm(source, TargetData::of(data), cfg, variant)
}

/// `A(S, T)`: `None` for `S` runs the target-only wiring regardless of `variant`.
pub fn run_algorithm(
    source: Option<&[Example]>,
    target: TargetData<'_>,
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<(ModelTriple, TrainHistory)> {
    cfg.validate()?;
    let input_dim = target
        .input_dim()
        .ok_or_else(|| Error::Config("target domain has no training data".into()))?;
    let dims = NetworkDims::new(input_dim, target.num_classes);
    dims.validate()?;

    let variant = match source {
        None => Variant::TargetOnly,
        Some(_) if !variant.uses_source() => Variant::TargetOnly,
        Some(_) => variant,
    };

    // the examples that fill the source role, and the real labeled target set
    let (source_role, labeled): (Vec<Example>, &[Example]) = match (variant, source) {
        (Variant::TargetOnly, _) => (target.labeled.to_vec(), &[]),
        (Variant::Oracle, Some(s)) => {
            let clean: Vec<Example> = s.iter().filter(|e| !e.is_perturbed()).cloned().collect();
            if clean.is_empty() {
                return Err(Error::Config("oracle: every source example is perturbed".into()));
            }
            (clean, target.labeled)
        }
        (_, Some(s)) => {
            if s.is_empty() {
                return Err(Error::Config(format!(
                    "{variant}: source classification term needs source data"
                )));
            }
            (s.to_vec(), target.labeled)
        }
        (_, None) => unreachable!("variant without source mapped to target_only"),
    };
    if target.unlabeled.is_empty() {
        return Err(Error::Config(format!(
            "{variant}: adversarial term needs unlabeled target data"
        )));
    }
    for e in source_role.iter().chain(labeled) {
        if e.x.len() != input_dim || e.y >= target.num_classes {
            return Err(Error::Domain(format!(
                "example {:?} does not match dims {input_dim}/K={}",
                e.x, target.num_classes
            )));
        }
    }
    if source_role.is_empty() {
        log::debug!("{variant}: no labeled data in the source role, classification term dropped");
    }

    let mut model = ModelTriple::init(&dims, derive_seed(cfg.seed, STREAM_INIT))?;
    let mut history = TrainHistory {
        interval: cfg.log_interval,
        records: Vec::new(),
    };
    if cfg.steps == 0 {
        return Ok((model, history));
    }

    let wiring = variant.wiring();
    let mut adam = Adam::from_config(cfg);
    let mut rng_s = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SOURCE));
    let mut rng_l = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TARGET_LABELED));
    let mut rng_u = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TARGET_UNLABELED));
    let labeled_batch = cfg.batch.target_labeled.min(labeled.len());
    let warmup_steps = (cfg.gate_warmup * cfg.steps as f64).round() as usize;
    let labeled_x = (!labeled.is_empty())
        .then(|| Tensor::from_rows(&labeled.iter().map(|e| e.x.as_slice()).collect::<Vec<_>>()))
        .transpose()?;

    let mut acc = IntervalAccumulator::default();
    for step in 0..cfg.steps {
        let mu = mu_schedule(step as f64 / cfg.steps as f64, cfg.mu_max);
        let s_batch = sample_labeled(&source_role, cfg.batch.source, &mut rng_s)?;
        let l_batch = sample_labeled(labeled, labeled_batch, &mut rng_l)?;
        let u_batch = sample_unlabeled(target.unlabeled, cfg.batch.target_unlabeled, &mut rng_u)?;

        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let bundle = build_objective(
            &mut g,
            &bound,
            StepBatches {
                source: s_batch.as_ref(),
                target_labeled: l_batch.as_ref(),
                target_unlabeled: u_batch.as_ref(),
            },
            wiring,
            ObjectiveOptions {
                mu,
                lambda: cfg.lambda,
                delta: cfg.omega_clamp,
                gate_active: step >= warmup_steps,
            },
        )?;
        if !bundle.clf_loss.is_finite() || !bundle.adv_loss.is_finite() {
            return Err(Error::UndefinedLoss(format!(
                "{variant}: non-finite loss at step {step}"
            )));
        }
        g.backward(bundle.objective)?;
        let grads = bound.gradients(&g)?;
        adam.step(model.parameters_mut(), &grads)?;

        acc.add(&bundle, s_batch.as_ref());
        if (step + 1) % cfg.log_interval == 0 {
            let target_accuracy = labeled_x
                .as_ref()
                .map(|x| -> Result<f64> {
                    let pred = model.predict(x)?;
                    let hits = pred.iter().zip(labeled).filter(|(p, e)| **p == e.y).count();
                    Ok(hits as f64 / labeled.len() as f64)
                })
                .transpose()?;
            history.records.push(acc.finish(step + 1, mu, target_accuracy));
        }
    }
    Ok((model, history))
}

#[derive(Default)]
struct IntervalAccumulator {
    n: usize,
    clf: f64,
    adv: f64,
    omega_p: (f64, usize),
    omega_c: (f64, usize),
}

impl IntervalAccumulator {
    fn add(&mut self, b: &crate::objectives::LossBundle, source: Option<&LabeledBatch>) {
        self.n += 1;
        self.clf += b.clf_loss;
        self.adv += b.adv_loss;
        if let Some(s) = source {
            for (w, &p) in b.omegas.iter().zip(&s.perturbed) {
                let slot = if p { &mut self.omega_p } else { &mut self.omega_c };
                slot.0 += w.omega;
                slot.1 += 1;
            }
        }
    }

    fn finish(&mut self, step: usize, mu: f64, target_accuracy: Option<f64>) -> HistoryRecord {
        let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        let r = HistoryRecord {
            step,
            mu,
            clf_loss: self.clf / self.n as f64,
            adv_loss: self.adv / self.n as f64,
            mean_omega_perturbed: mean(self.omega_p),
            mean_omega_clean: mean(self.omega_c),
            target_accuracy,
        };
        *self = Self::default();
        r
    }
}

fn sample_labeled(pool: &[Example], n: usize, rng: &mut impl Rng) -> Result<Option<LabeledBatch>> {
    if pool.is_empty() || n == 0 {
        return Ok(None);
    }
    let picks: Vec<&Example> = (0..n).map(|_| &pool[rng.random_range(0..pool.len())]).collect();
    let x = Tensor::from_rows(&picks.iter().map(|e| e.x.as_slice()).collect::<Vec<_>>())?;
    Ok(Some(LabeledBatch {
        x,
        y: picks.iter().map(|e| e.y).collect(),
        perturbed: picks.iter().map(|e| e.is_perturbed()).collect(),
    }))
}

fn sample_unlabeled(pool: &[Vec<f64>], n: usize, rng: &mut impl Rng) -> Result<Option<UnlabeledBatch>> {
    if pool.is_empty() || n == 0 {
        return Ok(None);
    }
    let rows: Vec<&[f64]> = (0..n)
        .map(|_| pool[rng.random_range(0..pool.len())].as_slice())
        .collect();
    Ok(Some(UnlabeledBatch {
        x: Tensor::from_rows(&rows)?,
    }))
}

/// Settings for fitting `F` and `D` as a plain target-vs-source classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioEstimatorConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for RatioEstimatorConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 128,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

/// Trains `F` and `D` jointly to separate labeled target pairs from labeled
/// source pairs by logistic loss. At the optimum `D/(1 - D)` is the density
/// ratio of the two joint distributions. The learning rate follows a cosine
/// decay to zero. The classifier is left untouched.
pub fn train_ratio_estimator(
    target: &[Example],
    source: &[Example],
    num_classes: usize,
    cfg: &RatioEstimatorConfig,
) -> Result<ModelTriple> {
    if target.is_empty() || source.is_empty() {
        return Err(Error::Config(
            "ratio estimator needs both target and source samples".into(),
        ));
    }
    if cfg.batch == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config(
            "ratio estimator needs a positive batch size and learning rate".into(),
        ));
    }
    let dims = NetworkDims::new(target[0].x.len(), num_classes);
    dims.validate()?;
    let mut model = ModelTriple::init(&dims, derive_seed(cfg.seed, STREAM_INIT))?;
    let mut adam = Adam::new(cfg.learning_rate, 0.9, 0.999, 1e-8);
    let mut rng_t = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TARGET_LABELED));
    let mut rng_s = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SOURCE));
    for step in 0..cfg.steps {
        let progress = step as f64 / cfg.steps as f64;
        adam.set_learning_rate(cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        let t = sample_labeled(target, cfg.batch, &mut rng_t)?.expect("nonempty pool");
        let s = sample_labeled(source, cfg.batch, &mut rng_s)?.expect("nonempty pool");
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let ft = features(&mut g, &bound, &t.x)?;
        let fs = features(&mut g, &bound, &s.x)?;
        let lt: Vec<Label> = t.y.iter().map(|&y| Label::Class(y)).collect();
        let ls: Vec<Label> = s.y.iter().map(|&y| Label::Class(y)).collect();
        let a = log_d_mean(&mut g, &bound, ft, &lt, true)?;
        let b = log_d_mean(&mut g, &bound, fs, &ls, false)?;
        let value = g.add(a, b)?;
        let loss = g.scale(value, -1.0)?;
        g.backward(loss)?;
        let grads = bound.gradients(&g)?;
        adam.step(model.parameters_mut(), &grads)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests;
