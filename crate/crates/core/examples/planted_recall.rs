//! Planted-relevance recall: how often every planted patch keeps at least
//! one selected token, over many scene seeds.
//!
//! `cargo run --release --example planted_recall -- [seeds]`

use rayon::prelude::*;
use vistoken::grid::tile_patches;
use vistoken::pipeline::planted_recall;
use vistoken::scene::{planted_scene, PlantedScene};
use vistoken::{Pipeline, PipelineConfig};

fn main() -> vistoken::Result<()> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let config = PipelineConfig {
        alpha: 0.0,
        tau: 0.07,
        select_ratio: 2.0,
        frames: 1,
        ..PipelineConfig::default()
    };
    let recalls: Vec<(u64, f64)> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let scene = planted_scene(&PlantedScene {
                grid: tile_patches(896, 1568, 224)?,
                views: 6,
                frames: 1,
                tokens_per_patch: 49,
                planted_per_view: 3,
                seed,
            })?;
            let out = Pipeline::<f32>::new(PipelineConfig {
                seed,
                ..config.clone()
            })?
            .run_scene(&scene)?;
            Ok((
                seed,
                planted_recall(&scene, scene.current_frame(), &out.mask).unwrap_or(0.0),
            ))
        })
        .collect::<vistoken::Result<_>>()?;
    let full = recalls.iter().filter(|r| r.1 == 1.0).count();
    for (seed, r) in recalls.iter().filter(|r| r.1 < 1.0) {
        println!("seed {seed}: recall {r:.3}");
    }
    let mean = recalls.iter().map(|r| r.1).sum::<f64>() / seeds as f64;
    println!("{full} of {seeds} seeds keep every planted patch (mean recall {mean:.4})");
    Ok(())
}
