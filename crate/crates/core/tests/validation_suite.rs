use deltavox::validation::{property_names, run_all, run_with, Kernels, SuiteConfig};

#[test]
fn default_seed_passes_every_property() {
    let s = run_all(0);
    assert!(s.ok(), "{:#?}", s.failures);
    assert_eq!(s.passed, property_names().len());
}

#[test]
fn suite_is_deterministic() {
    let cfg = SuiteConfig {
        cases: 5,
        max_size: 3,
        shrink_budget: 2,
    };
    let k = Kernels::default();
    assert_eq!(run_with(17, &cfg, &k), run_with(17, &cfg, &k));
}
