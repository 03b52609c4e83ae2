//! Tape gradients against central finite differences through the whole
//! selection, attention and fusion chain.
//!
//! `cargo run --release --example gradient_check -- [cases]`

use vistoken::gradcheck::{chain_suite, op_suite, PARAM_NAMES};

fn main() -> vistoken::Result<()> {
    let cases = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20);
    for (label, suite) in [
        ("f32", chain_suite::<f32>(cases, 7)?),
        ("f64", chain_suite::<f64>(cases, 8)?),
    ] {
        println!(
            "{label}: worst relative error {:.2e} over {} cases ({} redrawn)",
            suite.worst(),
            suite.reports.len(),
            suite.skipped
        );
        let mut per_param = vec![0.0f64; PARAM_NAMES.len()];
        for r in &suite.reports {
            for (w, (_, e)) in per_param.iter_mut().zip(&r.errors) {
                *w = w.max(*e);
            }
        }
        for (name, e) in PARAM_NAMES.iter().zip(per_param) {
            println!("  {name:<18} {e:.2e}");
        }
    }
    for (op, err) in op_suite(9)? {
        println!("op {op:<14} {err:.2e}");
    }
    Ok(())
}
