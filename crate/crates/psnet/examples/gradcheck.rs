//! Finite-difference and adjoint checks of every layer and of the full
//! network.

use psnet::nn::gradcheck_suite;

pub fn main() {
    let results = gradcheck_suite(0).expect("suite runs");
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAILED" };
        println!("{:<40} {:?} {:.2e} < {:.0e} {status}", r.name, r.kind, r.error, r.tolerance);
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {failed} failed", results.len());
}
