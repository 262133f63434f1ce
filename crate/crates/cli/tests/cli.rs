use std::path::Path;

use ntlab_cli::checkpoint::Checkpoint;
use ntlab_cli::config::{Eps, ExperimentConfig, Grid, GridBlock, Severity};
use ntlab_cli::dataset::{read_dataset, write_dataset, Split};
use ntlab_cli::features::export_features;
use ntlab_cli::results::{aggregate, read_results, AGGREGATE_HEADER, RESULTS_HEADER};
use ntlab_cli::sweep::{run_experiment, run_sweep, SweepOptions};
use ntlab_cli::CliError;
use ntlab_core::scenarios;
use ntlab_core::training::{TrainConfig, Variant};

fn quick_train() -> TrainConfig {
    TrainConfig {
        steps: 30,
        log_interval: 10,
        ..TrainConfig::default()
    }
}

fn block(eps: &[f64], l: &[f64], variants: &[Variant], seeds: &[u64]) -> GridBlock {
    GridBlock {
        eps: eps.iter().map(|&e| Eps::Both(e)).collect(),
        l_pct: l.to_vec(),
        variants: variants.to_vec(),
        seeds: seeds.to_vec(),
    }
}

fn config(grid: Grid) -> ExperimentConfig {
    ExperimentConfig {
        grid,
        train: quick_train(),
        ..ExperimentConfig::default()
    }
}

fn sweep(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> ntlab_cli::SweepSummary {
    run_sweep(
        cfg,
        &SweepOptions {
            jobs,
            seed_offset: 0,
            out_dir: out.to_path_buf(),
        },
    )
    .unwrap()
}

fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::parse(text, Path::new("inline.json"))
}

#[test]
fn single_cell_grid_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Grid::One(block(&[0.0], &[0.0], &[Variant::Base], &[1])));
    let s = sweep(&cfg, dir.path(), 1);
    assert_eq!(s.rows.len(), 1);
    let text = std::fs::read_to_string(&s.results_path).unwrap();
    assert_eq!(text.lines().next().unwrap(), RESULTS_HEADER);
    assert_eq!(text.lines().count(), 2);
    let agg = std::fs::read_to_string(&s.aggregate_path).unwrap();
    assert_eq!(agg.lines().next().unwrap(), AGGREGATE_HEADER);
}

#[test]
fn table1_grid_arithmetic() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.rows().len(), 4 * 4 * 2 * 5);
    assert!(cfg.errors().is_empty());
}

#[test]
fn rows_are_consistent_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config(Grid::Many(vec![
        block(&[0.0, 0.7], &[30.0], &[Variant::Base, Variant::Gate], &[1, 2]),
        block(&[0.7], &[30.0], &[Variant::SourceIgnoringStub], &[1, 2]),
    ]));
    let first = sweep(&cfg, a.path(), 2);
    let second = sweep(&cfg, b.path(), 1);
    assert_eq!(first.rows.len(), 10);
    for (x, y) in first.rows.iter().zip(&second.rows) {
        assert_eq!(x.without_timing(), y.without_timing());
    }
    for r in &first.rows {
        assert!(r.is_ok(), "{}", r.status);
        let (with, without) = (r.acc_with_source.unwrap(), r.acc_target_only.unwrap());
        assert_eq!(r.ntg.unwrap(), without - with);
        assert_eq!(r.ntc().unwrap(), r.ntg.unwrap() > 0.0);
        if r.variant == Variant::SourceIgnoringStub {
            assert_eq!(r.ntg, Some(0.0));
        }
        if r.variant == Variant::Gate && r.eps_x > 0.0 {
            assert!(r.mean_omega_perturbed.is_some() && r.mean_omega_clean.is_some());
        } else {
            assert!(r.mean_omega_perturbed.is_none());
        }
    }
    // file rows equal the returned rows, and the aggregate recomputes
    let read = read_results(&first.results_path).unwrap();
    assert_eq!(read, first.rows);
    let agg_text = std::fs::read_to_string(&first.aggregate_path).unwrap();
    let c = tempfile::tempdir().unwrap();
    let path = c.path().join("agg.csv");
    ntlab_cli::results::write_aggregate(&path, &aggregate(&read)).unwrap();
    assert_eq!(std::fs::read_to_string(path).unwrap(), agg_text);
}

#[test]
fn failed_rows_do_not_stop_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    // three source examples, all perturbed: the oracle has nothing to train on
    let mut cfg = config(Grid::One(GridBlock {
        eps: vec![Eps::Pair([0.999999, 0.0])],
        l_pct: vec![30.0],
        variants: vec![Variant::Oracle, Variant::Base],
        seeds: vec![1],
    }));
    let mut sc = scenarios::three_class_plane();
    sc.n_source = 3;
    cfg.scenario = ntlab_cli::config::ScenarioConfig::Custom(sc);
    let s = sweep(&cfg, dir.path(), 1);
    assert_eq!(s.rows.len(), 2);
    assert!(s.rows[0].status.starts_with("failed: "), "{}", s.rows[0].status);
    assert!(s.rows[0].acc_with_source.is_none() && s.rows[0].ntg.is_none());
    assert!(s.rows[1].is_ok());
    assert!(!s.all_failed());
    let text = std::fs::read_to_string(&s.results_path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(read_results(&s.results_path).unwrap(), s.rows);
}

#[test]
fn out_of_range_eps_names_its_field() {
    let cfg = parse(r#"{"grid": {"eps": [0.0, 1.5], "l_pct": [10], "variants": ["base"], "seeds": [1]}}"#).unwrap();
    let errors = cfg.errors();
    assert_eq!(errors.len(), 2);
    assert!(errors
        .iter()
        .all(|e| e.path == "grid[0].eps[1]" && e.message.contains("1.5")));
    assert!(errors[0].message.starts_with("eps_x") && errors[1].message.starts_with("eps_y"));
    assert!(matches!(cfg.validate(), Err(CliError::Invalid(_))));
}

#[test]
fn default_config_file_is_clean() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["default.json", "acceptance.json", "smoke.json"] {
        let cfg = ExperimentConfig::load(&root.join(name)).unwrap();
        assert!(cfg.errors().is_empty(), "{name}: {:?}", cfg.errors());
    }
    let cfg = ExperimentConfig::load(&root.join("default.json")).unwrap();
    assert!(cfg.violations().is_empty());
}

#[test]
fn scarce_labels_raise_a_ceiling_warning() {
    let mut sc = scenarios::three_class_plane();
    sc.n_target = 20;
    let mut cfg = config(Grid::One(block(&[0.0], &[10.0], &[Variant::Base], &[1])));
    cfg.scenario = ntlab_cli::config::ScenarioConfig::Custom(sc);
    let v = cfg.violations();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].severity, Severity::Warning);
    assert!(v[0].message.contains("ceiling"));
}

#[test]
fn structural_violations_are_all_listed() {
    let cfg = parse(
        r#"{"scenario": {"preset": "moons"},
            "grid": [{"eps": [], "l_pct": [120], "variants": ["target_only"], "seeds": []}],
            "train": {"steps": 0},
            "max_per_class": 0}"#,
    )
    .unwrap();
    let paths: Vec<String> = cfg.errors().into_iter().map(|v| v.path).collect();
    for p in [
        "scenario.preset",
        "train.steps",
        "grid[0].eps",
        "grid[0].seeds",
        "grid[0].l_pct[0]",
        "grid[0].variants[0]",
    ] {
        assert!(paths.iter().any(|x| x == p), "{p} missing from {paths:?}");
    }
    assert!(parse(r#"{"grid": []}"#)
        .unwrap()
        .errors()
        .iter()
        .any(|v| v.path == "grid"));
}

#[test]
fn parse_errors_carry_line_and_column() {
    let err = parse("{\n  \"grid\": {\"eps\": [0.1,],\n}").unwrap_err();
    match err {
        CliError::Parse { line, .. } => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        parse(r#"{"grid": [], "bogus": 1}"#),
        Err(CliError::Parse { .. })
    ));
    assert!(matches!(
        parse(r#"{"grid": {"eps": [0], "l_pct": [0], "variants": ["dann"], "seeds": [1]}}"#),
        Err(CliError::Parse { .. })
    ));
}

#[test]
fn eps_pairs_set_rates_independently() {
    let cfg = parse(r#"{"grid": {"eps": [[0.2, 0.6]], "l_pct": [0], "variants": ["base"], "seeds": [3]}}"#).unwrap();
    let rows = cfg.rows();
    assert_eq!((rows[0].eps_x, rows[0].eps_y, rows[0].seed), (0.2, 0.6, 3));
}

#[test]
fn config_hash_is_stable_and_sensitive() {
    let a = ExperimentConfig::default();
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    b.train.steps += 1;
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn run_experiment_reads_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(
        &path,
        r#"{"grid": {"eps": [0.3], "l_pct": [10], "variants": ["stub_missing"], "seeds": [1]}}"#,
    )
    .unwrap();
    assert!(matches!(
        run_experiment(&path, Some(dir.path()), 1, 0),
        Err(CliError::Parse { .. })
    ));
    std::fs::write(
        &path,
        r#"{"grid": {"eps": [0.3], "l_pct": [10], "variants": ["source_ignoring_stub"], "seeds": [1]},
            "train": {"steps": 10}}"#,
    )
    .unwrap();
    let s = run_experiment(&path, Some(&dir.path().join("o")), 1, 7).unwrap();
    assert_eq!(s.rows[0].ntg, Some(0.0));
    assert!(matches!(
        run_experiment(&dir.path().join("missing.json"), None, 1, 0),
        Err(CliError::Io { .. })
    ));
}

#[test]
fn artifacts_round_trip_through_feature_export() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Grid::One(block(&[0.7], &[30.0], &[Variant::Gate], &[4])));
    cfg.save_artifacts = true;
    let s = sweep(&cfg, dir.path(), 1);
    let tag = ntlab_cli::sweep::artifact_tag(&cfg.rows()[0]);
    let ck_path = dir.path().join("checkpoints").join(format!("{tag}.json"));
    let ds_path = dir.path().join("datasets").join(format!("{tag}.csv"));
    let ck = Checkpoint::load(&ck_path).unwrap();
    assert_eq!(ck.metadata.variant, Variant::Gate);
    assert_eq!(ck.metadata.config_hash, cfg.hash());
    assert!(s.rows[0].is_ok());

    let rows = read_dataset(&ds_path).unwrap();
    let header = std::fs::read_to_string(&ds_path).unwrap();
    assert_eq!(header.lines().next().unwrap(), "split,x0,x1,y,perturbed_x,perturbed_y");
    assert!(rows
        .iter()
        .filter(|r| r.split == Split::TargetUnlabeled)
        .all(|r| r.y.is_none()));

    let out = dir.path().join("features.csv");
    let n = export_features(&ck_path, &ds_path, &out).unwrap();
    assert_eq!(n, rows.len());
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let mut expected: Vec<String> = ["domain", "class", "perturbed_x", "perturbed_y", "omega"]
        .map(String::from)
        .to_vec();
    expected.extend((0..16).map(|i| format!("f{i}")));
    assert_eq!(header, expected);
    for rec in reader.records() {
        let rec = rec.unwrap();
        assert_eq!(rec[4].is_empty(), &rec[0] == "target");
    }
}

#[test]
fn feature_export_rejects_mismatched_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Grid::One(block(&[0.0], &[30.0], &[Variant::Base], &[1])));
    cfg.save_artifacts = true;
    sweep(&cfg, dir.path(), 1);
    let tag = ntlab_cli::sweep::artifact_tag(&cfg.rows()[0]);
    let ck_path = dir.path().join("checkpoints").join(format!("{tag}.json"));
    let line = scenarios::two_gaussian_line()
        .generate(0.0, 0.0, 10.0, None, 1)
        .unwrap();
    let ds = dir.path().join("line.csv");
    write_dataset(&ds, &line).unwrap();
    let err = export_features(&ck_path, &ds, &dir.path().join("f.csv")).unwrap_err();
    assert!(err.to_string().contains("inputs"), "{err}");
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Grid::One(block(&[0.0], &[30.0], &[Variant::Base], &[1])));
    cfg.save_artifacts = true;
    sweep(&cfg, dir.path(), 1);
    let tag = ntlab_cli::sweep::artifact_tag(&cfg.rows()[0]);
    let ck_path = dir.path().join("checkpoints").join(format!("{tag}.json"));
    let mut value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ck_path).unwrap()).unwrap();
    value["model"]["classifier"]["layer"]["bias"]["data"] = serde_json::json!([0.0]);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, value.to_string()).unwrap();
    assert!(Checkpoint::load(&bad).is_err());
}
