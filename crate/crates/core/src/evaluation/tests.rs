use super::*;
use crate::data::{DomainScenario, Example};
use crate::networks::NetworkDims;
use crate::scenarios;

fn biased_model(bias: [f64; 3]) -> ModelTriple {
    let mut m = ModelTriple::zeros(&NetworkDims::new(2, 3)).unwrap();
    m.classifier.layer.bias = Tensor::vector(bias.to_vec()).unwrap();
    m
}

fn examples(ys: &[usize]) -> Vec<Example> {
    ys.iter()
        .enumerate()
        .map(|(i, &y)| Example::new(vec![i as f64, 0.0], y))
        .collect()
}

#[test]
fn perfect_classifier_has_zero_risk() {
    let m = biased_model([0.0, 5.0, 0.0]);
    let r = expected_risk(&m, &examples(&[1, 1, 1]), LossKind::ZeroOne).unwrap();
    assert_eq!(r.risk, 0.0);
    assert_eq!(r.accuracy(), Some(1.0));
}

#[test]
fn one_error_in_four_is_a_quarter() {
    let m = biased_model([0.0, 5.0, 0.0]);
    let r = expected_risk(&m, &examples(&[1, 1, 0, 1]), LossKind::ZeroOne).unwrap();
    assert_eq!(r.risk, 0.25);
    assert_eq!(r.risk + r.accuracy().unwrap(), 1.0);
    assert_eq!(r.n_test, 4);
}

#[test]
fn uniform_labels_against_constant_predictor() {
    // a constant prediction against uniformly drawn labels errs with p = 2/3
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let n = 9000;
    let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let r = expected_risk(&biased_model([1.0, 0.0, 0.0]), &examples(&ys), LossKind::ZeroOne).unwrap();
    let sigma = (2.0 / 9.0 / n as f64).sqrt();
    assert!((r.risk - 2.0 / 3.0).abs() < 4.0 * sigma, "{}", r.risk);
}

#[test]
fn cross_entropy_risk_of_uniform_predictor() {
    let m = biased_model([0.0; 3]);
    let r = expected_risk(&m, &examples(&[0, 2]), LossKind::CrossEntropy).unwrap();
    assert!((r.risk - 3f64.ln()).abs() < 1e-12);
    assert_eq!(r.accuracy(), None);
}

#[test]
fn empty_test_set_is_an_error() {
    assert!(matches!(
        expected_risk(&biased_model([0.0; 3]), &[], LossKind::ZeroOne),
        Err(Error::Empty(_))
    ));
}

fn risk(r: f64) -> RiskEstimate {
    RiskEstimate {
        risk: r,
        loss_kind: LossKind::ZeroOne,
        n_test: 100,
    }
}

fn setting() -> Setting {
    Setting {
        seed: 1,
        eps_x: 0.7,
        eps_y: 0.7,
        l_pct: 30.0,
    }
}

proptest::proptest! {
    #[test]
    fn ntc_iff_positive_gap(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let r = NTGReport::new(risk(a), risk(b), Variant::Base, setting()).unwrap();
        proptest::prop_assert_eq!(r.ntg, a - b);
        proptest::prop_assert_eq!(r.ntc, r.ntg > 0.0);
    }
}

#[test]
fn mixed_losses_cannot_form_a_gap() {
    let ce = RiskEstimate {
        loss_kind: LossKind::CrossEntropy,
        ..risk(0.2)
    };
    assert!(NTGReport::new(risk(0.1), ce, Variant::Base, setting()).is_err());
}

#[test]
fn stub_gap_is_exactly_zero() {
    let sc = scenarios::three_class_plane();
    let data = sc.generate(0.7, 0.7, 30.0, None, 5).unwrap();
    let cfg = TrainConfig {
        steps: 40,
        seed: 5,
        ..TrainConfig::default()
    };
    let r = negative_transfer_gap(&data, &cfg, Variant::SourceIgnoringStub, setting()).unwrap();
    assert_eq!(r.ntg, 0.0);
    assert!(!r.ntc);
    assert!(negative_transfer_gap(&data, &cfg, Variant::TargetOnly, setting()).is_err());
}

#[test]
fn untrained_discriminator_gives_unit_weights() {
    let m = ModelTriple::zeros(&NetworkDims::new(2, 3)).unwrap();
    let mut src = examples(&[0, 1, 2, 0]);
    src[1].perturbed_x = true;
    src[3].perturbed_y = true;
    let w = weight_stats(&m, &src, 1e-3).unwrap();
    assert_eq!(w.mean_omega_perturbed, Some(1.0));
    assert_eq!(w.mean_omega_clean, Some(1.0));
    assert_eq!(w.n_perturbed + w.n_clean, src.len());
    assert_eq!(w.histogram[10], 4);
    assert_eq!(w.histogram.iter().sum::<usize>(), 4);
}

#[test]
fn clean_source_has_no_perturbed_group() {
    let m = ModelTriple::zeros(&NetworkDims::new(2, 3)).unwrap();
    let w = weight_stats(&m, &examples(&[0, 1]), 1e-3).unwrap();
    assert_eq!(w.mean_omega_perturbed, None);
    assert_eq!(w.n_perturbed, 0);
}

#[test]
fn grid_shape() {
    let g = evaluation_grid(2, 3, 5, -1.0, 1.0);
    assert_eq!(g.len(), 5 * 5 * 3);
    assert_eq!(g[0], (vec![-1.0, -1.0], 0));
    assert_eq!(g.last().unwrap(), &(vec![1.0, 1.0], 2));
    assert_eq!(evaluation_grid(1, 1, 101, -4.0, 4.0).len(), 101);
}

#[test]
fn analytic_discriminator_has_zero_fit_error() {
    let sc = scenarios::two_gaussian_line();
    let grid = evaluation_grid(1, 1, 101, -4.0, 4.0);
    let err = ratio_fit_error_with(
        |pts| Ok(pts.iter().map(|(x, _)| (2.0 * x[0]).exp()).collect()),
        &sc.target,
        &sc.source,
        &grid,
    )
    .unwrap();
    assert!(err < 1e-12, "{err}");
}

#[test]
fn identical_specs_with_flat_discriminator_fit_exactly() {
    let sc = scenarios::three_class_plane();
    let m = ModelTriple::zeros(&NetworkDims::new(2, 3)).unwrap();
    let grid = evaluation_grid(2, 3, 21, -4.0, 4.0);
    let err = ratio_fit_error(&m, &sc.target, &sc.target, &grid, 1e-3).unwrap();
    assert!(err < 1e-12, "{err}");
}

#[test]
fn flat_discriminator_error_has_closed_form() {
    // r(x) = exp(2x) for N(1,1) over N(-1,1); both densities exceed the floor
    // for |x ± 1| < sqrt(2 ln(1 / (1e-3 sqrt(2π))))
    let sc = scenarios::two_gaussian_line();
    let m = ModelTriple::zeros(&NetworkDims::new(1, 1)).unwrap();
    let grid = evaluation_grid(1, 1, 101, -4.0, 4.0);
    let err = ratio_fit_error(&m, &sc.target, &sc.source, &grid, 1e-3).unwrap();
    let reach = (2.0 * (1.0 / (1e-3 * (2.0 * std::f64::consts::PI).sqrt())).ln()).sqrt();
    let pts: Vec<f64> = grid
        .iter()
        .map(|(x, _)| x[0])
        .filter(|x| (x - 1.0).abs() < reach && (x + 1.0).abs() < reach)
        .collect();
    let expected = pts
        .iter()
        .map(|x| (1.0 - (2.0 * x).exp()).abs() / (2.0 * x).exp())
        .sum::<f64>()
        / pts.len() as f64;
    assert!((err - expected).abs() < 1e-12, "{err} vs {expected}");
}

#[test]
fn empty_grid_is_an_error() {
    let sc = scenarios::two_gaussian_line();
    let grid = evaluation_grid(1, 1, 3, 40.0, 50.0);
    let m = ModelTriple::zeros(&NetworkDims::new(1, 1)).unwrap();
    assert!(matches!(
        ratio_fit_error(&m, &sc.target, &sc.source, &grid, 1e-3),
        Err(Error::Empty(_))
    ));
}

#[test]
fn trained_estimator_recovers_one_dimensional_ratio() {
    let sc: DomainScenario = scenarios::two_gaussian_line();
    let data = sc.generate(0.0, 0.0, 100.0, None, 1).unwrap();
    let target: Vec<Example> = data.target_labeled.iter().chain(&data.target_test).cloned().collect();
    let cfg = crate::training::RatioEstimatorConfig {
        steps: 600,
        ..Default::default()
    };
    let m = crate::training::train_ratio_estimator(&target, &data.source, 1, &cfg).unwrap();
    let grid = evaluation_grid(1, 1, 101, -2.0, 2.0);
    let err = ratio_fit_error(&m, &sc.target, &sc.source, &grid, 1e-3).unwrap();
    assert!(err < 0.3, "{err}");
}
