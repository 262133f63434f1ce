use ntlab_core::data::DomainScenario;
use ntlab_core::evaluation::{expected_risk, negative_transfer_gap, weight_stats, LossKind, Setting};
use ntlab_core::objectives::DEFAULT_OMEGA_CLAMP;
use ntlab_core::scenarios;
use ntlab_core::training::{run_algorithm, train, TargetData, TrainConfig, Variant};
use proptest::prelude::*;

fn short(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        seed: 9,
        ..TrainConfig::default()
    }
}

fn scenario() -> DomainScenario {
    scenarios::three_class_plane()
}

#[test]
fn stub_matches_target_only_with_and_without_source() {
    let data = scenario().generate(0.7, 0.7, 30.0, None, 4).unwrap();
    let cfg = short(40);
    let (stub, _) = run_algorithm(
        Some(&data.source),
        TargetData::of(&data),
        &cfg,
        Variant::SourceIgnoringStub,
    )
    .unwrap();
    let (baseline, _) = run_algorithm(None, TargetData::of(&data), &cfg, Variant::TargetOnly).unwrap();
    assert_eq!(stub, baseline);
    let report = negative_transfer_gap(
        &data,
        &cfg,
        Variant::SourceIgnoringStub,
        Setting {
            seed: 4,
            eps_x: 0.7,
            eps_y: 0.7,
            l_pct: 30.0,
        },
    )
    .unwrap();
    assert_eq!(report.ntg, 0.0);
    assert!(!report.ntc);
}

#[test]
fn gap_is_risk_difference_and_sets_the_verdict() {
    let data = scenario().generate(0.9, 0.9, 10.0, None, 2).unwrap();
    let cfg = short(60);
    let setting = Setting {
        seed: 2,
        eps_x: 0.9,
        eps_y: 0.9,
        l_pct: 10.0,
    };
    for variant in [Variant::Base, Variant::Gate, Variant::Oracle] {
        let report = negative_transfer_gap(&data, &cfg, variant, setting).unwrap();
        assert_eq!(report.ntg, report.risk_with_source.risk - report.risk_target_only.risk);
        assert_eq!(report.ntc, report.ntg > 0.0);
        let (model, _) = train(&data, &cfg, variant).unwrap();
        let direct = expected_risk(&model, &data.target_test, LossKind::ZeroOne).unwrap();
        assert_eq!(direct, report.risk_with_source);
    }
}

#[test]
fn trained_gate_weights_stay_inside_the_clamp() {
    let data = scenario().generate(0.7, 0.7, 30.0, None, 3).unwrap();
    let (model, history) = train(&data, &short(80), Variant::Gate).unwrap();
    assert!(history
        .records
        .iter()
        .all(|r| r.clf_loss.is_finite() && r.adv_loss.is_finite()));
    let stats = weight_stats(&model, &data.source, DEFAULT_OMEGA_CLAMP).unwrap();
    let lo = DEFAULT_OMEGA_CLAMP / (1.0 - DEFAULT_OMEGA_CLAMP);
    for mean in [stats.mean_omega_perturbed, stats.mean_omega_clean]
        .into_iter()
        .flatten()
    {
        assert!((lo..=1.0 / lo).contains(&mean));
    }
    assert_eq!(stats.n_perturbed + stats.n_clean, data.source.len());
    assert_eq!(stats.histogram.iter().sum::<usize>(), data.source.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn target_side_ignores_perturbation_rates(
        seed in 0u64..1000,
        ex in 0.0f64..=1.0,
        ey in 0.0f64..=1.0,
        l in prop::sample::select(vec![0.0, 10.0, 30.0, 50.0]),
    ) {
        let sc = scenario();
        let a = sc.generate(ex, ey, l, None, seed).unwrap();
        let b = sc.generate(0.0, 0.0, l, None, seed).unwrap();
        prop_assert_eq!(&a.target_labeled, &b.target_labeled);
        prop_assert_eq!(&a.target_unlabeled, &b.target_unlabeled);
        prop_assert_eq!(&a.target_test, &b.target_test);
        prop_assert_eq!(a.source.len(), b.source.len());
        prop_assert!(b.source.iter().all(|e| !e.is_perturbed()));
    }

    #[test]
    fn perturbed_sets_are_nested_in_the_rate(seed in 0u64..1000, lo in 0.0f64..=1.0, hi in 0.0f64..=1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let sc = scenario();
        let a = sc.generate(lo, lo, 30.0, None, seed).unwrap();
        let b = sc.generate(hi, hi, 30.0, None, seed).unwrap();
        for (x, y) in a.source.iter().zip(&b.source) {
            prop_assert!(!x.perturbed_x || y.perturbed_x);
            prop_assert!(!x.perturbed_y || y.perturbed_y);
        }
    }
}
