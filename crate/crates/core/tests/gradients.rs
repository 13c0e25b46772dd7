use sparsepose::gradcheck::{run_suite, GradCheckConfig};

#[test]
fn finite_difference_suite_passes() {
    let cfg = GradCheckConfig::default();
    let results = run_suite(&cfg).unwrap();
    let mut failed = Vec::new();
    for r in &results {
        println!("{:<34} max_rel_err={:.3e} entries={}", r.name, r.max_rel_err, r.entries);
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}

#[test]
fn suite_is_seed_stable() {
    for seed in [1, 2] {
        let cfg = GradCheckConfig {
            seed,
            ..GradCheckConfig::default()
        };
        for r in run_suite(&cfg).unwrap() {
            assert!(r.passed(), "seed {seed}: {} at {:.3e}", r.name, r.max_rel_err);
        }
    }
}
