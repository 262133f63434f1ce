use ntlab_bench::fixture;

#[test]
fn fixture_is_deterministic_and_populated() {
    let a = fixture(1);
    assert_eq!(a, fixture(1));
    assert_ne!(a.source, fixture(2).source);
    assert!(!a.source.is_empty() && !a.target_labeled.is_empty() && !a.target_test.is_empty());
    assert!(a.source.iter().any(|e| e.is_perturbed()));
}
