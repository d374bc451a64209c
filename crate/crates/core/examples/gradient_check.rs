//! Finite-difference verification of every differentiable operation, the
//! attention layer and the full model.
//!
//! `cargo run --release --example gradient_check [instances]`

use sea_core::checks::run_gradient_suite;

fn main() -> sea_core::Result<()> {
    let instances = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let results = run_gradient_suite(None, instances, 0)?;
    for r in &results {
        println!(
            "{:<9} {:<36} n={:<3} max_rel_err={:.2e} {}",
            r.module,
            r.name,
            r.instances,
            r.max_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {} failed", results.len(), failed);
    Ok(())
}
