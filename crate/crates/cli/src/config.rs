//! Experiment configuration: a JSON document with a scenario, a grid of
//! blocks, training overrides and output options.

use std::fmt;
use std::path::{Path, PathBuf};

use ntlab_core::data::DomainScenario;
use ntlab_core::scenarios;
use ntlab_core::training::{TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// A named built-in scenario or an explicit one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioConfig {
    Preset { preset: String },
    Custom(DomainScenario),
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::Preset {
            preset: "three_class_plane".into(),
        }
    }
}

impl ScenarioConfig {
    pub fn resolve(&self) -> Result<DomainScenario, String> {
        match self {
            ScenarioConfig::Preset { preset } => match preset.as_str() {
                "three_class_plane" => Ok(scenarios::three_class_plane()),
                "two_gaussian_line" => Ok(scenarios::two_gaussian_line()),
                other => Err(format!(
                    "unknown preset `{other}` (expected three_class_plane or two_gaussian_line)"
                )),
            },
            ScenarioConfig::Custom(s) => Ok(s.clone()),
        }
    }
}

/// A perturbation level: one rate for both `eps_x` and `eps_y`, or a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Eps {
    Both(f64),
    Pair([f64; 2]),
}

impl Eps {
    pub fn rates(self) -> (f64, f64) {
        match self {
            Eps::Both(e) => (e, e),
            Eps::Pair([x, y]) => (x, y),
        }
    }
}

/// Cartesian product of its lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub eps: Vec<Eps>,
    pub l_pct: Vec<f64>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    One(GridBlock),
    Many(Vec<GridBlock>),
}

impl Grid {
    pub fn blocks(&self) -> &[GridBlock] {
        match self {
            Grid::One(b) => std::slice::from_ref(b),
            Grid::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: ScenarioConfig,
    pub grid: Grid,
    /// Training settings; `seed` is replaced by each row's seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub max_per_class: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write a checkpoint and a dataset file for every row.
    #[serde(default)]
    pub save_artifacts: bool,
}

/// One cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub seed: u64,
    pub eps_x: f64,
    pub eps_y: f64,
    pub l_pct: f64,
    pub variant: Variant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
    pub severity: Severity,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.path, self.message)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Every problem found, errors and warnings, without running anything.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut err = |path: String, message: String| {
            out.push(Violation {
                path,
                message,
                severity: Severity::Error,
            })
        };
        let scenario = match self.scenario.resolve() {
            Ok(s) => match s.validate() {
                Ok(()) => Some(s),
                Err(e) => {
                    err("scenario".into(), e.to_string());
                    None
                }
            },
            Err(e) => {
                err("scenario.preset".into(), e);
                None
            }
        };
        if let Err(e) = self.train.validate() {
            err("train".into(), e.to_string());
        }
        if self.train.steps == 0 {
            err("train.steps".into(), "must be positive".into());
        }
        let blocks = self.grid.blocks();
        if blocks.is_empty() {
            err("grid".into(), "no grid blocks".into());
        }
        for (b, block) in blocks.iter().enumerate() {
            let at = |field: &str| format!("grid[{b}].{field}");
            for (field, empty) in [
                ("eps", block.eps.is_empty()),
                ("l_pct", block.l_pct.is_empty()),
                ("variants", block.variants.is_empty()),
                ("seeds", block.seeds.is_empty()),
            ] {
                if empty {
                    err(at(field), "empty list".into());
                }
            }
            for (i, e) in block.eps.iter().enumerate() {
                let (x, y) = e.rates();
                for (name, v) in [("eps_x", x), ("eps_y", y)] {
                    if !(0.0..=1.0).contains(&v) {
                        err(format!("grid[{b}].eps[{i}]"), format!("{name} = {v} outside [0, 1]"));
                    }
                }
                if block.variants.contains(&Variant::Oracle) && (x >= 1.0 || y >= 1.0) {
                    err(
                        format!("grid[{b}].eps[{i}]"),
                        "oracle needs unperturbed source examples, but every example is perturbed at rate 1".into(),
                    );
                }
            }
            for (i, v) in block.variants.iter().enumerate() {
                if *v == Variant::TargetOnly {
                    err(
                        format!("grid[{b}].variants[{i}]"),
                        "target_only is the baseline of every row and cannot be a row variant".into(),
                    );
                }
            }
            for (i, &l) in block.l_pct.iter().enumerate() {
                if !(0.0..=100.0).contains(&l) {
                    err(format!("grid[{b}].l_pct[{i}]"), format!("{l} outside [0, 100]"));
                    continue;
                }
                if l > 0.0 && self.max_per_class == Some(0) {
                    err(
                        format!("grid[{b}].l_pct[{i}]"),
                        format!("L = {l}% asks for labels but max_per_class is 0"),
                    );
                }
            }
        }
        if let Some(s) = scenario {
            for (b, block) in blocks.iter().enumerate() {
                for (i, &l) in block.l_pct.iter().enumerate() {
                    if let Some(msg) = label_shortfall(&s, l) {
                        out.push(Violation {
                            path: format!("grid[{b}].l_pct[{i}]"),
                            message: msg,
                            severity: Severity::Warning,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn errors(&self) -> Vec<Violation> {
        self.violations()
            .into_iter()
            .filter(|v| v.severity == Severity::Error)
            .collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        let errors = self.errors();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(CliError::Invalid(
                errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"),
            ))
        }
    }

    pub fn scenario(&self) -> CliResult<DomainScenario> {
        self.scenario.resolve().map_err(CliError::Invalid)
    }

    /// Grid cells in output order: block, eps, L, variant, seed.
    pub fn rows(&self) -> Vec<RowSpec> {
        let mut rows = Vec::new();
        for block in self.grid.blocks() {
            for e in &block.eps {
                let (eps_x, eps_y) = e.rates();
                for &l_pct in &block.l_pct {
                    for &variant in &block.variants {
                        for &seed in &block.seeds {
                            rows.push(RowSpec {
                                seed,
                                eps_x,
                                eps_y,
                                l_pct,
                                variant,
                            });
                        }
                    }
                }
            }
        }
        rows
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Warning text when `l_pct` gives fewer labeled examples than classes.
fn label_shortfall(s: &DomainScenario, l_pct: f64) -> Option<String> {
    if l_pct <= 0.0 {
        return None;
    }
    let n_train = s.n_target / 2;
    let k = s.num_classes();
    let n_l = (l_pct / 100.0 * n_train as f64).round() as usize;
    (n_l < k).then(|| {
        format!(
            "L = {l_pct}% of {n_train} training examples gives {n_l} labels for {k} classes; \
             each class present is raised to one label (ceiling rule)"
        )
    })
}

/// The 4 x 4 x 2 grid of perturbation rates, label fractions and base/gate.
pub fn table1_grid(seeds: Vec<u64>) -> Grid {
    Grid::One(GridBlock {
        eps: [0.0, 0.3, 0.7, 0.9].map(Eps::Both).to_vec(),
        l_pct: vec![0.0, 10.0, 30.0, 50.0],
        variants: vec![Variant::Base, Variant::Gate],
        seeds,
    })
}

/// Every ablation at one setting.
pub fn ablation_grid(seeds: Vec<u64>) -> Grid {
    Grid::One(GridBlock {
        eps: vec![Eps::Both(0.7)],
        l_pct: vec![30.0],
        variants: vec![
            Variant::Base,
            Variant::Gate,
            Variant::GateOnly,
            Variant::LabelOnly,
            Variant::JointOnly,
            Variant::MarginalOnly,
            Variant::NoneMatch,
            Variant::Oracle,
        ],
        seeds,
    })
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            grid: table1_grid((1..=5).collect()),
            train: TrainConfig::default(),
            max_per_class: None,
            output_dir: None,
            save_artifacts: false,
        }
    }
}
