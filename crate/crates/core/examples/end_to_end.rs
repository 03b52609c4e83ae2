//! Full run on the demo scene with a config file, printing the report.
//!
//! `cargo run --release --example end_to_end`

use vistoken::pipeline::{demo_scene, DEFAULT_CONFIG_TOML};
use vistoken::{Pipeline, PipelineConfig};

fn main() -> vistoken::Result<()> {
    let mut config = PipelineConfig::from_toml(DEFAULT_CONFIG_TOML)?;
    config.alpha = 0.3;
    let out = Pipeline::<f32>::new(config)?.run_scene(&demo_scene())?;
    print!("{}", out.report.to_text());
    println!("\nfinal tokens {:?}", out.final_tokens.shape());
    println!(
        "first selected indices {:?}",
        &out.selection.selected_indices[..8]
    );
    Ok(())
}
