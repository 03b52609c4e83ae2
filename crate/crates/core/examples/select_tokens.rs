//! Query-aware selection on a toy set of image and text embeddings.
//!
//! `cargo run --example select_tokens`

use vistoken::selection::{select_tokens, Aggregation, SelectionParams};
use vistoken::Tensor;

fn main() -> vistoken::Result<()> {
    // eight image tokens in 3-d; tokens 2 and 5 point roughly along the query
    let image = Tensor::from_rows(&[
        [0.1, 1.0, 0.0],
        [0.0, 0.9, 0.3],
        [1.0, 0.1, 0.0],
        [0.2, 0.2, 1.0],
        [0.0, 1.0, 0.1],
        [0.9, 0.0, 0.2],
        [0.1, 0.3, 0.9],
        [0.3, 0.8, 0.2],
    ])?;
    let text = Tensor::from_rows(&[[1.0f64, 0.0, 0.0], [0.8, 0.1, 0.1]])?;

    for alpha in [0.0, 0.5, 1.0] {
        let mut params = SelectionParams::new(0.07, alpha, 2.0, 2);
        params.aggregation = Aggregation::Mean;
        let r = select_tokens(&image, &text, &params, 4)?;
        let map: Vec<String> = r.selection_map.iter().map(|v| format!("{v:.2}")).collect();
        println!("alpha {alpha}: map [{}]", map.join(", "));
        println!(
            "          kept {:?} -> {} compressed tokens",
            r.selected_indices,
            r.compressed.rows()
        );
    }
    Ok(())
}
