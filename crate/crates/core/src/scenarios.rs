//! Built-in domain pairs.

use crate::data::{DomainScenario, GaussianComponent, NoiseModel, ScenarioSpec};

fn ring(num_classes: usize, radius: f64, phase_deg: f64, std: f64) -> ScenarioSpec {
    let components = (0..num_classes)
        .map(|c| {
            let angle = (phase_deg + 360.0 * c as f64 / num_classes as f64).to_radians();
            GaussianComponent {
                class: c,
                mean: vec![radius * angle.cos(), radius * angle.sin()],
                std,
                weight: 1.0,
            }
        })
        .collect();
    ScenarioSpec {
        num_classes,
        components,
        class_prior: None,
        noise: NoiseModel::default(),
    }
}

/// `num_classes * clusters` Gaussian clusters on a circle, classes
/// alternating around it, rotated by `phase_deg`.
pub fn petal_ring(num_classes: usize, clusters: usize, radius: f64, phase_deg: f64, std: f64) -> ScenarioSpec {
    let total = num_classes * clusters;
    let components = (0..total)
        .map(|i| {
            let angle = (phase_deg + 360.0 * i as f64 / total as f64).to_radians();
            GaussianComponent {
                class: i % num_classes,
                mean: vec![radius * angle.cos(), radius * angle.sin()],
                std,
                weight: 1.0,
            }
        })
        .collect();
    ScenarioSpec {
        num_classes,
        components,
        class_prior: None,
        noise: NoiseModel::default(),
    }
}

/// Three classes in the plane; the source is the target rotated slightly.
pub fn three_class_plane() -> DomainScenario {
    DomainScenario {
        source: ring(3, 2.0, 110.0, 0.9),
        target: ring(3, 2.0, 90.0, 0.9),
        n_source: 2000,
        n_target: 160,
    }
}

fn gaussian_1d(mean: f64) -> ScenarioSpec {
    ScenarioSpec {
        num_classes: 1,
        components: vec![GaussianComponent {
            class: 0,
            mean: vec![mean],
            std: 1.0,
            weight: 1.0,
        }],
        class_prior: None,
        noise: NoiseModel::default(),
    }
}

/// `P_T = N(+1, 1)`, `P_S = N(-1, 1)`, one class; the density ratio is `e^{2x}`.
pub fn two_gaussian_line() -> DomainScenario {
    DomainScenario {
        source: gaussian_1d(-1.0),
        target: gaussian_1d(1.0),
        n_source: 5000,
        n_target: 5000,
    }
}
