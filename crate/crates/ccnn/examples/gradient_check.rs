//! Check every layer type's backward pass against central finite
//! differences, the same way the `ccnn gradcheck` subcommand does.
//!
//! ```bash
//! cargo run --release -p ccnn --example gradient_check
//! ```

use ccnn::equivalence::build_real_counterpart;
use ccnn::gradcheck::{builtin_specs, check_network, check_real_network};
use ccnn::network::NetworkSpec;

fn main() -> ccnn::Result<()> {
    let seed = 4242;
    for (name, spec) in builtin_specs() {
        let report = check_network(&spec, 2, seed, 1e-5, 1e-5)?;
        println!(
            "{:-45} {} (max rel err {:.2e})",
            name,
            if report.passed { "pass" } else { "FAIL" },
            report.max_error
        );
    }
    let real_spec = build_real_counterpart(&NetworkSpec::cell_detection(2, 2))?;
    let report = check_real_network(&real_spec, 2, seed, 1e-5, 1e-5)?;
    println!(
        "{:-45} {} (max rel err {:.2e})",
        "real counterpart network",
        if report.passed { "pass" } else { "FAIL" },
        report.max_error
    );
    Ok(())
}
