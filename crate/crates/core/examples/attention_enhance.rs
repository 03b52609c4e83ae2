//! Spatial restoration and temporal enhancement of a few query tokens,
//! then fusion.
//!
//! `cargo run --example attention_enhance`

use vistoken::enhance::{fuse, spatial_restoration, temporal_enhancement, AttentionParams};
use vistoken::selection::Projection;
use vistoken::Tensor;

fn print(name: &str, t: &Tensor<f64>) {
    println!("{name}:");
    for r in t.iter_rows() {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:+.3}")).collect();
        println!("  [{}]", cells.join(", "));
    }
}

fn main() -> vistoken::Result<()> {
    let queries = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]])?;
    let support = Tensor::from_rows(&[[2.0, 0.0], [0.0, 2.0], [1.0, 1.0]])?;
    let frames = Tensor::from_rows(&[[0.5, -0.5], [-0.5, 0.5]])?;
    let att = AttentionParams::default();

    let spatial = spatial_restoration(&queries, &support, &att)?;
    let temporal = temporal_enhancement(&queries, &frames, &att)?;
    // a fusion layer that swaps the two coordinates and shifts them
    let fusion = Projection::affine(
        Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]])?,
        Tensor::from_rows(&[[0.1, -0.1]])?,
    )?;
    let fused = fuse(&spatial, Some(&temporal), &fusion)?;
    print("spatial", &spatial);
    print("temporal", &temporal);
    print("fused", &fused);

    // with a single key every query returns that key's value
    let lone = Tensor::from_rows(&[[3.0, -1.0]])?;
    print("single key", &spatial_restoration(&queries, &lone, &att)?);
    Ok(())
}
