//! Writing and reading `.lvde` embedding files, and what a damaged file
//! reports.
//!
//! `cargo run --example embeddings_io`

use vistoken::embfile::{decode, encode, load_embeddings, save_embeddings, HEADER_LEN};
use vistoken::encoders::mock_embed;
use vistoken::Tensor;

fn main() -> vistoken::Result<()> {
    let t: Tensor<f32> = mock_embed(&[1, 2, 3], 8, 42)?;
    let path = std::env::temp_dir().join("vistoken_example.lvde");
    save_embeddings(&t, &path)?;
    let back = load_embeddings(&path)?;
    println!(
        "{} -> {:?}, bit-identical: {}",
        path.display(),
        back.shape(),
        back.bit_eq(&t)
    );

    let bytes = encode(&t);
    let header: Vec<String> = bytes[..HEADER_LEN]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    println!("header: {}", header.join(" "));

    let mut bad = bytes.clone();
    bad.truncate(bytes.len() - 3);
    println!("truncated: {}", decode(&bad).unwrap_err());
    bad = bytes;
    bad[0] = b'X';
    println!("bad magic: {}", decode(&bad).unwrap_err());
    std::fs::remove_file(&path).ok();
    Ok(())
}
