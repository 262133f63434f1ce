use super::*;
use crate::data::{DomainScenario, GaussianComponent, NoiseModel, ScenarioSpec};
use crate::evaluation::{expected_risk, LossKind};

fn separable() -> DomainScenario {
    let spec = ScenarioSpec {
        num_classes: 2,
        components: vec![
            GaussianComponent {
                class: 0,
                mean: vec![-2.0, 0.0],
                std: 0.5,
                weight: 1.0,
            },
            GaussianComponent {
                class: 1,
                mean: vec![2.0, 0.0],
                std: 0.5,
                weight: 1.0,
            },
        ],
        class_prior: None,
        noise: NoiseModel::default(),
    };
    DomainScenario {
        source: spec.clone(),
        target: spec,
        n_source: 400,
        n_target: 200,
    }
}

fn quick(seed: u64, steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        seed,
        log_interval: 20,
        batch: BatchSizes {
            source: 32,
            target_unlabeled: 32,
            target_labeled: 32,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn schedule_endpoints_and_monotonicity() {
    assert_eq!(mu_schedule(0.0, 1.0), 0.0);
    let end = 2.0 / (1.0 + (-10f64).exp()) - 1.0;
    assert!((mu_schedule(1.0, 1.0) - end).abs() < 1e-15);
    assert!((end - 0.99991).abs() < 1e-5);
    assert_eq!(mu_schedule(2.0, 1.0), mu_schedule(1.0, 1.0));
    assert_eq!(mu_schedule(-1.0, 0.5), 0.0);
}

proptest::proptest! {
    #[test]
    fn schedule_is_bounded_and_monotone(p in 0.0f64..1.0, q in 0.0f64..1.0, mu_max in 0.0f64..5.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let (a, b) = (mu_schedule(lo, mu_max), mu_schedule(hi, mu_max));
        proptest::prop_assert!(a <= b);
        proptest::prop_assert!((0.0..=mu_max).contains(&a) && b <= mu_max);
    }
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        assert_eq!(v.to_string(), v.name());
    }
    assert!("dann".parse::<Variant>().is_err());
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut p = Tensor::vector(vec![1.0, -1.0]).unwrap();
    let g = Tensor::vector(vec![0.3, -7.0]).unwrap();
    let mut adam = Adam::new(0.01, 0.9, 0.999, 1e-8);
    adam.step(vec![&mut p], &[g]).unwrap();
    assert!((p.data()[0] - 0.99).abs() < 1e-6);
    assert!((p.data()[1] + 0.99).abs() < 1e-6);
}

#[test]
fn zero_steps_return_initial_models() {
    let data = separable().generate(0.0, 0.0, 30.0, None, 1).unwrap();
    let cfg = quick(5, 0);
    let (m, h) = train(&data, &cfg, Variant::Base).unwrap();
    let init = ModelTriple::init(&NetworkDims::new(2, 2), derive_seed(5, STREAM_INIT)).unwrap();
    assert_eq!(m, init);
    assert!(h.records.is_empty());
}

#[test]
fn training_is_deterministic() {
    let data = separable().generate(0.5, 0.5, 30.0, None, 2).unwrap();
    let cfg = quick(3, 40);
    for v in [Variant::Base, Variant::Gate, Variant::MarginalOnly] {
        let a = train(&data, &cfg, v).unwrap();
        let b = train(&data, &cfg, v).unwrap();
        assert_eq!(a.0, b.0, "{v}");
        assert_eq!(a.1, b.1, "{v}");
    }
}

#[test]
fn history_has_one_record_per_interval() {
    let data = separable().generate(0.3, 0.3, 30.0, None, 2).unwrap();
    let (_, h) = train(&data, &quick(1, 100), Variant::Gate).unwrap();
    assert_eq!(h.records.len(), 100 / 20);
    let last = h.records.last().unwrap();
    assert!(last.mean_omega_clean.is_some() && last.mean_omega_perturbed.is_some());
    assert!(last.target_accuracy.is_some());
}

#[test]
fn base_learns_a_separable_problem() {
    let data = separable().generate(0.0, 0.0, 30.0, None, 3).unwrap();
    let (m, _) = train(&data, &quick(0, 300), Variant::Base).unwrap();
    let risk = expected_risk(&m, &data.target_test, LossKind::ZeroOne).unwrap();
    assert!(risk.accuracy().unwrap() > 0.95, "{risk:?}");
}

#[test]
fn stub_matches_target_only() {
    let data = separable().generate(0.5, 0.5, 30.0, None, 4).unwrap();
    let cfg = quick(9, 60);
    let stub = run_algorithm(
        Some(&data.source),
        TargetData::of(&data),
        &cfg,
        Variant::SourceIgnoringStub,
    )
    .unwrap();
    let alone = run_algorithm(None, TargetData::of(&data), &cfg, Variant::TargetOnly).unwrap();
    assert_eq!(stub, alone);
    let via_train = train(&data, &cfg, Variant::SourceIgnoringStub).unwrap();
    assert_eq!(via_train, alone);
}

#[test]
fn target_only_with_no_labels_still_runs() {
    let data = separable().generate(0.0, 0.0, 0.0, None, 4).unwrap();
    assert!(data.target_labeled.is_empty());
    let (_, h) = train(&data, &quick(1, 20), Variant::TargetOnly).unwrap();
    assert_eq!(h.records[0].clf_loss, 0.0);
}

#[test]
fn source_variants_need_source_data() {
    let data = separable().generate(0.0, 0.0, 30.0, None, 4).unwrap();
    let empty = data.without_source();
    for v in [Variant::Base, Variant::Gate, Variant::Oracle] {
        assert!(matches!(train(&empty, &quick(1, 5), v), Err(Error::Config(_))), "{v}");
    }
    let all_perturbed = separable().generate(1.0, 0.0, 30.0, None, 4).unwrap();
    assert!(matches!(
        train(&all_perturbed, &quick(1, 5), Variant::Oracle),
        Err(Error::Config(_))
    ));
}

#[test]
fn invalid_configs_are_rejected() {
    let data = separable().generate(0.0, 0.0, 30.0, None, 4).unwrap();
    let bad = [
        TrainConfig {
            lambda: -1.0,
            ..quick(0, 1)
        },
        TrainConfig {
            learning_rate: 0.0,
            ..quick(0, 1)
        },
        TrainConfig {
            omega_clamp: 0.5,
            ..quick(0, 1)
        },
        TrainConfig {
            log_interval: 0,
            ..quick(0, 1)
        },
    ];
    for cfg in bad {
        assert!(matches!(train(&data, &cfg, Variant::Base), Err(Error::Config(_))));
    }
}

#[test]
fn gate_records_weights_after_warmup() {
    let data = separable().generate(0.7, 0.7, 30.0, None, 6).unwrap();
    let cfg = TrainConfig {
        log_interval: 10,
        ..quick(2, 100)
    };
    let (_, h) = train(&data, &cfg, Variant::Gate).unwrap();
    // warmup covers the first 10 steps: weights are exactly 1
    assert_eq!(h.records[0].mean_omega_clean, Some(1.0));
    assert_ne!(h.records[5].mean_omega_clean, Some(1.0));
}
