//! Renders the demo selection as PGM masks in both modes.
//!
//! `cargo run --release --example masks -- [out_dir]`

use std::path::PathBuf;

use vistoken::pipeline::{demo_scene, planted_recall, render_mask, MaskMode};
use vistoken::{Pipeline, PipelineConfig};

fn main() -> vistoken::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "masks_out".into())
        .into();
    let scene = demo_scene();
    let run = Pipeline::<f32>::new(PipelineConfig::default())?.run_scene(&scene)?;
    let mask = &run.mask;
    for mode in [MaskMode::Density, MaskMode::Binary] {
        let dir = out.join(format!("{mode:?}").to_lowercase());
        let files = render_mask(mask, &dir, mode, 8)?;
        println!("{} files in {}", files.len(), dir.display());
    }
    for (v, f) in mask.keys() {
        let busy = (0..4)
            .flat_map(|r| (0..7).map(move |c| (r, c)))
            .filter(|&(r, c)| mask.patch_count(v, f, r, c) > 0)
            .count();
        println!("view {v} frame {f}: {busy} of 28 patches keep tokens");
    }
    if let Some(r) = planted_recall(&scene, scene.current_frame(), mask) {
        println!("query cells covered: {:.0}%", r * 100.0);
    }
    Ok(())
}
