//! The full finite-difference suite at its acceptance settings.

use hsict_core::verify::run_gradcheck_suite;

#[test]
fn full_suite_passes_on_three_seeds() {
    let t0 = std::time::Instant::now();
    let results = run_gradcheck_suite("all", 1e-4, &[11, 23, 47]).unwrap();
    for r in &results {
        println!(
            "{:24} worst rel err {:.3e} (tol {:.1e}) {}",
            r.name,
            r.worst_rel_err,
            r.tol,
            if r.passed { "ok" } else { "FAIL" }
        );
        assert!(r.passed, "{}: {:?}", r.name, r.detail);
    }
    println!("suite runtime: {:.1?}", t0.elapsed());
}
