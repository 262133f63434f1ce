//! Grid execution: target-only baselines first, then every row in parallel,
//! with a single writer emitting rows in grid order.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use ntlab_core::data::DomainScenario;
use ntlab_core::evaluation::{expected_risk, weight_stats, LossKind};
use ntlab_core::training::{train, TrainConfig, Variant};
use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::config::{ExperimentConfig, RowSpec};
use crate::dataset::write_dataset;
use crate::error::{CliError, CliResult};
use crate::results::{aggregate, write_aggregate, ResultRow, ResultsWriter, STATUS_OK};

pub const RESULTS_FILE: &str = "results.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub jobs: usize,
    pub seed_offset: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub rows: Vec<ResultRow>,
    pub results_path: PathBuf,
    pub aggregate_path: PathBuf,
}

impl SweepSummary {
    pub fn n_failed(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.n_failed() == self.rows.len()
    }
}

/// Loads, validates and runs the config at `path`. `out` overrides the
/// config's output directory.
pub fn run_experiment(path: &Path, out: Option<&Path>, jobs: usize, seed_offset: u64) -> CliResult<SweepSummary> {
    let config = ExperimentConfig::load(path)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    run_sweep(
        &config,
        &SweepOptions {
            jobs,
            seed_offset,
            out_dir,
        },
    )
}

type BaselineKey = (u64, u64);

struct Context<'a> {
    config: &'a ExperimentConfig,
    scenario: DomainScenario,
    config_hash: String,
    seed_offset: u64,
    out_dir: &'a Path,
}

pub fn run_sweep(config: &ExperimentConfig, opts: &SweepOptions) -> CliResult<SweepSummary> {
    config.validate()?;
    std::fs::create_dir_all(&opts.out_dir).map_err(|e| CliError::io(&opts.out_dir, e))?;
    let ctx = Context {
        config,
        scenario: config.scenario()?,
        config_hash: config.hash(),
        seed_offset: opts.seed_offset,
        out_dir: &opts.out_dir,
    };
    if config.save_artifacts {
        for sub in ["checkpoints", "datasets"] {
            let d = opts.out_dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
        }
    }
    let specs = config.rows();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| CliError::Format(format!("thread pool: {e}")))?;

    // the target side of a run depends only on (seed, L), so one baseline
    // serves every eps and variant at that pair
    let mut keys: Vec<BaselineKey> = specs.iter().map(|r| (r.seed, r.l_pct.to_bits())).collect();
    keys.sort_unstable();
    keys.dedup();
    log::info!("{} rows, {} target-only baselines", specs.len(), keys.len());
    let baselines: HashMap<BaselineKey, Result<f64, String>> =
        pool.install(|| keys.par_iter().map(|&k| (k, ctx.baseline(k))).collect());

    let results_path = opts.out_dir.join(RESULTS_FILE);
    let mut writer = ResultsWriter::create(&results_path)?;
    let (tx, rx) = mpsc::channel::<(usize, ResultRow)>();
    let n = specs.len();
    let rows = std::thread::scope(|scope| -> CliResult<Vec<ResultRow>> {
        let handle = scope.spawn(move || -> CliResult<Vec<ResultRow>> {
            let mut pending = BTreeMap::new();
            let mut written = Vec::with_capacity(n);
            for (i, row) in rx {
                pending.insert(i, row);
                while let Some(row) = pending.remove(&written.len()) {
                    writer.write(&row)?;
                    written.push(row);
                }
            }
            Ok(written)
        });
        pool.install(|| {
            specs.par_iter().enumerate().for_each_with(tx, |tx, (i, spec)| {
                let baseline = &baselines[&(spec.seed, spec.l_pct.to_bits())];
                let row = ctx.row(spec, baseline);
                log::info!("row {}/{}: {} {}", i + 1, n, spec.variant, row.status);
                tx.send((i, row)).expect("writer outlives workers");
            })
        });
        handle.join().expect("writer thread panicked")
    })?;

    let aggregate_path = opts.out_dir.join(AGGREGATE_FILE);
    write_aggregate(&aggregate_path, &aggregate(&rows))?;
    Ok(SweepSummary {
        rows,
        results_path,
        aggregate_path,
    })
}

impl Context<'_> {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.config.train
        }
    }

    fn baseline(&self, (seed, l_bits): BaselineKey) -> Result<f64, String> {
        let seed = seed + self.seed_offset;
        let l_pct = f64::from_bits(l_bits);
        let run = || -> ntlab_core::Result<f64> {
            let data = self
                .scenario
                .generate(0.0, 0.0, l_pct, self.config.max_per_class, seed)?
                .without_source();
            let (model, _) = train(&data, &self.train_config(seed), Variant::TargetOnly)?;
            let risk = expected_risk(&model, &data.target_test, LossKind::ZeroOne)?;
            Ok(1.0 - risk.risk)
        };
        run().map_err(|e| format!("target-only baseline: {e}"))
    }

    fn row(&self, spec: &RowSpec, baseline: &Result<f64, String>) -> ResultRow {
        let start = Instant::now();
        let outcome = baseline
            .clone()
            .map_err(CliError::Format)
            .and_then(|acc_without| self.run_row(spec).map(|r| (acc_without, r)));
        let mut row = ResultRow {
            seed: spec.seed,
            eps_x: spec.eps_x,
            eps_y: spec.eps_y,
            l_pct: spec.l_pct,
            variant: spec.variant,
            acc_with_source: None,
            acc_target_only: None,
            ntg: None,
            mean_omega_perturbed: None,
            mean_omega_clean: None,
            wall_seconds: 0.0,
            status: STATUS_OK.into(),
        };
        match outcome {
            Ok((acc_without, (acc_with, omega_p, omega_c))) => {
                row.acc_with_source = Some(acc_with);
                row.acc_target_only = Some(acc_without);
                row.ntg = Some(acc_without - acc_with);
                row.mean_omega_perturbed = omega_p;
                row.mean_omega_clean = omega_c;
            }
            Err(e) => {
                row.status = format!("failed: {}", e.to_string().replace(['\n', '\r'], " "));
            }
        }
        row.wall_seconds = start.elapsed().as_secs_f64();
        row
    }

    #[allow(clippy::type_complexity)]
    fn run_row(&self, spec: &RowSpec) -> CliResult<(f64, Option<f64>, Option<f64>)> {
        let seed = spec.seed + self.seed_offset;
        let data = self
            .scenario
            .generate(spec.eps_x, spec.eps_y, spec.l_pct, self.config.max_per_class, seed)?;
        let cfg = self.train_config(seed);
        let (model, _) = train(&data, &cfg, spec.variant)?;
        let risk = expected_risk(&model, &data.target_test, LossKind::ZeroOne)?;
        let (omega_p, omega_c) = if spec.variant.is_gated() {
            let w = weight_stats(&model, &data.source, cfg.omega_clamp)?;
            (w.mean_omega_perturbed, w.mean_omega_clean)
        } else {
            (None, None)
        };
        if self.config.save_artifacts {
            let tag = artifact_tag(spec);
            Checkpoint {
                metadata: CheckpointMeta {
                    seed,
                    variant: spec.variant,
                    config_hash: self.config_hash.clone(),
                    dims: model.dims(),
                    eps_x: spec.eps_x,
                    eps_y: spec.eps_y,
                    l_pct: spec.l_pct,
                    omega_clamp: cfg.omega_clamp,
                },
                model,
            }
            .save(&self.out_dir.join("checkpoints").join(format!("{tag}.json")))?;
            write_dataset(&self.out_dir.join("datasets").join(format!("{tag}.csv")), &data)?;
        }
        Ok((1.0 - risk.risk, omega_p, omega_c))
    }
}

/// File stem shared by a row's checkpoint and dataset.
pub fn artifact_tag(spec: &RowSpec) -> String {
    format!(
        "{}_s{}_ex{}_ey{}_l{}",
        spec.variant, spec.seed, spec.eps_x, spec.eps_y, spec.l_pct
    )
}
