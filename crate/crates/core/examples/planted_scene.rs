//! Builds a synthetic scene with query-matching patches planted at random
//! cells and prints it as TOML.
//!
//! `cargo run --example planted_scene > crates/core/data/demo_scene.toml`
//! regenerates the bundled demo scene.

use vistoken::grid::tile_patches;
use vistoken::scene::{planted_scene, PlantedScene};

fn main() -> vistoken::Result<()> {
    let scene = planted_scene(&PlantedScene {
        grid: tile_patches(896, 1568, 224)?,
        views: 6,
        frames: 4,
        tokens_per_patch: 49,
        planted_per_view: 3,
        seed: 2024,
    })?;
    print!("{}", scene.to_toml());
    let planted = scene.query_cells(scene.current_frame());
    eprintln!(
        "{} planted cells at frame {}",
        planted.len(),
        scene.current_frame()
    );
    for k in planted {
        eprintln!("  view {} row {} col {}", k.view, k.row, k.col);
    }
    Ok(())
}
