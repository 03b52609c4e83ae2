//! Token budgets for the reference ratio pairs, then a timed sweep over
//! them on the demo scene.
//!
//! `cargo run --release --example budget_sweep`

use vistoken::pipeline::{budget, demo_scene};
use vistoken::sweep::{self, REFERENCE_PAIRS, REFERENCE_REDUCTION};
use vistoken::PipelineConfig;

fn main() -> vistoken::Result<()> {
    let m = 6 * 28 * 49;
    println!("m = {m}");
    for (s, c) in REFERENCE_PAIRS {
        let b = budget(m, s, c)?;
        let declared = s * c as f64;
        let note = if declared == REFERENCE_REDUCTION {
            ""
        } else {
            "  <- declared product is not 168"
        };
        println!(
            "{s:>3} x {c:<3} k {:>5}  out {:>3}  achieved {:.2}{note}",
            b.k,
            b.out_tokens,
            m as f64 / b.out_tokens as f64
        );
    }

    let rows = sweep::sweep(
        &PipelineConfig::default(),
        &demo_scene(),
        &REFERENCE_PAIRS,
        None,
    )?;
    print!("\n{}", sweep::to_csv(&rows));
    Ok(())
}
