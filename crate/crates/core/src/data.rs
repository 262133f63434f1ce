//! Synthetic source/target domains with closed-form densities, the source
//! perturbation protocol and the target train/test/labeled split.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mixes a run seed with a stream tag so independent streams never collide.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Isotropic Gaussian bump belonging to one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub class: usize,
    pub mean: Vec<f64>,
    pub std: f64,
    /// Relative weight among the components of the same class.
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// Replacement noise applied to perturbed source inputs: additive isotropic
/// Gaussian followed by an independent sign flip of each coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub std: f64,
    pub flip_prob: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            std: 3.0,
            flip_prob: 0.5,
        }
    }
}

/// Class-conditional Gaussian mixture `P(X, Y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub num_classes: usize,
    pub components: Vec<GaussianComponent>,
    /// Uniform when absent.
    #[serde(default)]
    pub class_prior: Option<Vec<f64>>,
    #[serde(default)]
    pub noise: NoiseModel,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes;
        if k == 0 {
            return Err(Error::Config("scenario needs at least one class".into()));
        }
        let dim = self
            .components
            .first()
            .ok_or_else(|| Error::Config("scenario has no components".into()))?
            .mean
            .len();
        if dim == 0 {
            return Err(Error::Config("component means must be non-empty".into()));
        }
        for (i, c) in self.components.iter().enumerate() {
            if c.class >= k {
                return Err(Error::Config(format!("component {i} has class {} >= {k}", c.class)));
            }
            if c.mean.len() != dim {
                return Err(Error::Config(format!(
                    "component {i} has dimension {}, expected {dim}",
                    c.mean.len()
                )));
            }
            if !(c.std > 0.0) || !c.std.is_finite() {
                return Err(Error::Config(format!(
                    "component {i} has non-positive stddev {}",
                    c.std
                )));
            }
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(Error::Config(format!(
                    "component {i} has non-positive weight {}",
                    c.weight
                )));
            }
        }
        for y in 0..k {
            if !self.components.iter().any(|c| c.class == y) {
                return Err(Error::Config(format!("class {y} has no component")));
            }
        }
        if let Some(p) = &self.class_prior {
            if p.len() != k || p.iter().any(|&v| !(v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "class prior {p:?} is not a distribution over {k} classes"
                )));
            }
        }
        if !(self.noise.std >= 0.0) || !(0.0..=1.0).contains(&self.noise.flip_prob) {
            return Err(Error::Config(format!("invalid noise model {:?}", self.noise)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn prior(&self) -> Vec<f64> {
        self.class_prior
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.num_classes as f64; self.num_classes])
    }

    /// `ln p(x, y)`.
    pub fn log_joint_density(&self, x: &[f64], y: usize) -> f64 {
        let prior = self.prior();
        if y >= self.num_classes || prior[y] == 0.0 {
            return f64::NEG_INFINITY;
        }
        let comps: Vec<&GaussianComponent> = self.components.iter().filter(|c| c.class == y).collect();
        let total_w: f64 = comps.iter().map(|c| c.weight).sum();
        let d = x.len() as f64;
        let terms: Vec<f64> = comps
            .iter()
            .map(|c| {
                let sq: f64 = x.iter().zip(&c.mean).map(|(a, m)| (a - m) * (a - m)).sum();
                (c.weight / total_w).ln()
                    - 0.5 * d * (2.0 * std::f64::consts::PI * c.std * c.std).ln()
                    - sq / (2.0 * c.std * c.std)
            })
            .collect();
        prior[y].ln() + crate::autodiff::log_sum_exp(&terms)
    }

    pub fn joint_density(&self, x: &[f64], y: usize) -> f64 {
        self.log_joint_density(x, y).exp()
    }

    fn sample_one(&self, rng: &mut impl Rng) -> Example {
        let prior = self.prior();
        let y = pick_weighted(rng, &prior);
        let comps: Vec<&GaussianComponent> = self.components.iter().filter(|c| c.class == y).collect();
        let weights: Vec<f64> = comps.iter().map(|c| c.weight).collect();
        let c = comps[pick_weighted(rng, &weights)];
        let x = c
            .mean
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + c.std * z
            })
            .collect();
        Example::new(x, y)
    }
}

fn pick_weighted(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// One labeled point plus the perturbation it received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: usize,
    pub perturbed_x: bool,
    pub perturbed_y: bool,
}

impl Example {
    pub fn new(x: Vec<f64>, y: usize) -> Self {
        Self {
            x,
            y,
            perturbed_x: false,
            perturbed_y: false,
        }
    }

    pub fn is_perturbed(&self) -> bool {
        self.perturbed_x || self.perturbed_y
    }
}

/// I.i.d. draws from `spec`, a pure function of `(spec, n, seed)`.
pub fn sample_scenario(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<Vec<Example>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("sample size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| spec.sample_one(&mut rng)).collect())
}

/// Bernoulli rates of input and label perturbation for source examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub eps_x: f64,
    pub eps_y: f64,
    pub seed: u64,
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps_x", self.eps_x), ("eps_y", self.eps_y)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Returns a perturbed copy of `source`.
///
/// Every example consumes the same random draws whatever the rates, so for a
/// fixed seed the examples perturbed at a lower rate are a subset of those
/// perturbed at a higher rate, with identical noise.
pub fn perturb_source(
    source: &[Example],
    cfg: &PerturbationConfig,
    noise: &NoiseModel,
    num_classes: usize,
) -> Result<Vec<Example>> {
    cfg.validate()?;
    if num_classes == 0 {
        return Err(Error::Config("perturbation needs at least one class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(source
        .iter()
        .map(|ex| {
            let ux: f64 = rng.random();
            let uy: f64 = rng.random();
            let noisy: Vec<f64> =
                ex.x.iter()
                    .map(|&v| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let flip = rng.random::<f64>() < noise.flip_prob;
                        let moved = v + noise.std * z;
                        if flip {
                            -moved
                        } else {
                            moved
                        }
                    })
                    .collect();
            let random_label = rng.random_range(0..num_classes);

            let mut out = ex.clone();
            if ux < cfg.eps_x {
                out.x = noisy;
                out.perturbed_x = true;
            }
            if uy < cfg.eps_y {
                out.y = random_label;
                out.perturbed_y = true;
            }
            out
        })
        .collect())
}

/// Target data after the train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSplit {
    pub labeled: Vec<Example>,
    /// Every training input, labels hidden.
    pub unlabeled: Vec<Vec<f64>>,
    pub test: Vec<Example>,
}

/// Halves `target` into train/test, keeps all training inputs as unlabeled data
/// and draws `round(l_pct% · n_train)` class-stratified labeled examples.
///
/// A class that would receive no labeled example while `l_pct > 0` gets one
/// (the ceiling of its share). `max_per_class` caps each class afterwards.
pub fn split_target(
    target: &[Example],
    l_pct: f64,
    max_per_class: Option<usize>,
    num_classes: usize,
    seed: u64,
) -> Result<TargetSplit> {
    if !(0.0..=100.0).contains(&l_pct) {
        return Err(Error::Config(format!("l_pct = {l_pct} is outside [0, 100]")));
    }
    if target.len() < 2 {
        return Err(Error::Config("target set needs at least two examples to split".into()));
    }
    if let Some(bad) = target.iter().find(|e| e.y >= num_classes) {
        return Err(Error::Domain(format!("target label {} out of range", bad.y)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.shuffle(&mut rng);
    let n_train = target.len() / 2;
    let (train_idx, test_idx) = order.split_at(n_train);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for &i in train_idx {
        by_class[target[i].y].push(i);
    }
    let quotas = labeled_quotas(&by_class, n_train, l_pct, max_per_class);

    let mut chosen = Vec::new();
    for (members, &quota) in by_class.iter_mut().zip(&quotas) {
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..quota]);
    }
    // keep labeled examples in training-set order
    let rank: std::collections::HashMap<usize, usize> = train_idx.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    chosen.sort_by_key(|i| rank[i]);

    Ok(TargetSplit {
        labeled: chosen.iter().map(|&i| target[i].clone()).collect(),
        unlabeled: train_idx.iter().map(|&i| target[i].x.clone()).collect(),
        test: test_idx.iter().map(|&i| target[i].clone()).collect(),
    })
}

/// Per-class labeled counts: largest-remainder apportionment of
/// `round(l_pct% · n_train)` over class sizes.
fn labeled_quotas(by_class: &[Vec<usize>], n_train: usize, l_pct: f64, cap: Option<usize>) -> Vec<usize> {
    let total = (l_pct / 100.0 * n_train as f64).round() as usize;
    if total == 0 && l_pct == 0.0 {
        return vec![0; by_class.len()];
    }
    let shares: Vec<f64> = by_class
        .iter()
        .map(|m| total as f64 * m.len() as f64 / n_train.max(1) as f64)
        .collect();
    let mut quotas: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut remaining = total.saturating_sub(quotas.iter().sum());
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &c in order.iter().cycle().take(order.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quotas[c] < by_class[c].len() {
            quotas[c] += 1;
            remaining -= 1;
        }
    }
    for (c, q) in quotas.iter_mut().enumerate() {
        if l_pct > 0.0 && *q == 0 && !by_class[c].is_empty() {
            log::warn!("l_pct = {l_pct}% leaves class {c} without labels; taking one");
            *q = 1;
        }
        if let Some(cap) = cap {
            *q = (*q).min(cap);
        }
        *q = (*q).min(by_class[c].len());
    }
    quotas
}

/// Source and target distributions plus sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScenario {
    pub source: ScenarioSpec,
    pub target: ScenarioSpec,
    pub n_source: usize,
    pub n_target: usize,
}

impl DomainScenario {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.target.validate()?;
        if self.source.num_classes != self.target.num_classes {
            return Err(Error::Config("source and target class counts differ".into()));
        }
        if self.source.dim() != self.target.dim() {
            return Err(Error::Config("source and target input dimensions differ".into()));
        }
        if self.n_source == 0 || self.n_target < 2 {
            return Err(Error::Config("need n_source >= 1 and n_target >= 2".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.target.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.target.dim()
    }

    /// Draws a full [`DomainData`]. The target side depends only on `seed`,
    /// never on the perturbation rates.
    pub fn generate(
        &self,
        eps_x: f64,
        eps_y: f64,
        l_pct: f64,
        max_per_class: Option<usize>,
        seed: u64,
    ) -> Result<DomainData> {
        self.validate()?;
        let clean = sample_scenario(&self.source, self.n_source, derive_seed(seed, 1))?;
        let pert = PerturbationConfig {
            eps_x,
            eps_y,
            seed: derive_seed(seed, 2),
        };
        let source = perturb_source(&clean, &pert, &self.source.noise, self.num_classes())?;
        let target = sample_scenario(&self.target, self.n_target, derive_seed(seed, 3))?;
        let split = split_target(&target, l_pct, max_per_class, self.num_classes(), derive_seed(seed, 4))?;
        Ok(DomainData {
            source,
            target_labeled: split.labeled,
            target_unlabeled: split.unlabeled,
            target_test: split.test,
            num_classes: self.num_classes(),
            seed,
        })
    }
}

impl Default for DomainScenario {
    fn default() -> Self {
        crate::scenarios::three_class_plane()
    }
}

/// Everything a training run sees, plus the held-out target test set.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainData {
    pub source: Vec<Example>,
    pub target_labeled: Vec<Example>,
    pub target_unlabeled: Vec<Vec<f64>>,
    pub target_test: Vec<Example>,
    pub num_classes: usize,
    pub seed: u64,
}

impl DomainData {
    pub fn input_dim(&self) -> usize {
        self.target_test
            .first()
            .map(|e| e.x.len())
            .or_else(|| self.target_unlabeled.first().map(Vec::len))
            .unwrap_or(0)
    }

    /// Same target side, no source data.
    pub fn without_source(&self) -> DomainData {
        DomainData {
            source: Vec::new(),
            ..self.clone()
        }
    }
}

/// `P_T(x, y) / P_S(x, y)` for closed-form mixtures.
pub fn analytic_density_ratio(target: &ScenarioSpec, source: &ScenarioSpec, x: &[f64], y: usize) -> Result<f64> {
    let floor = 1e-300_f64.ln();
    let lt = target.log_joint_density(x, y);
    let ls = source.log_joint_density(x, y);
    if !(lt > floor) || !(ls > floor) {
        return Err(Error::UndefinedRatio(format!(
            "joint density underflow at x = {x:?}, y = {y}"
        )));
    }
    Ok((lt - ls).exp())
}
