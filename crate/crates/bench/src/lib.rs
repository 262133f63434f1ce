//! Fixtures shared by the benchmarks.

use ntlab_core::data::DomainData;
use ntlab_core::scenarios;

/// Default scenario at eps 0.7 and L 30%.
pub fn fixture(seed: u64) -> DomainData {
    scenarios::three_class_plane()
        .generate(0.7, 0.7, 30.0, None, seed)
        .expect("built-in scenario is valid")
}
