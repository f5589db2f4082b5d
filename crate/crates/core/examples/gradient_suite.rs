//! Runs the 64-bit finite-difference suite over every primitive and
//! objective, then shows how the error depends on the step size.

use astnlab::verification::{eps_sweep, run_suite, toy_config, SuiteOptions};

fn main() -> astnlab::Result<()> {
    let opts = SuiteOptions {
        seeds: 3,
        ..SuiteOptions::default()
    };
    for r in run_suite(&opts)? {
        println!(
            "{} {:<24} {:.2e}",
            if r.passed { "ok  " } else { "FAIL" },
            r.name,
            r.max_relative_error
        );
    }
    println!("step size sweep:");
    for (eps, err) in eps_sweep(&[1e-3, 1e-4, 1e-5, 1e-6, 1e-7], 2, &toy_config(true))? {
        println!("  eps {eps:.0e}  max error {err:.2e}");
    }
    Ok(())
}
