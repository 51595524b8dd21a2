//! Runs the finite-difference suite over every differentiable operation.

use featflow::gradcheck::{run_suite, DEFAULT_SEEDS};

fn main() -> featflow::Result<()> {
    let start = std::time::Instant::now();
    let results = run_suite(DEFAULT_SEEDS, None)?;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<18} max rel err {:.3e}  (tol {:.0e}, {} seeds)  {verdict}", r.name, r.max_error, r.tolerance, r.seeds);
    }
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
