//! Deterministic stand-ins for the text, image (main and support branch) and
//! video encoders.
//!
//! Every concept id maps to a fixed pseudo-random unit direction
//! ([`mock_embed`]), shared by all encoder roles, so a query concept and an
//! image token carrying the same concept have cosine similarity close to one.
//! Image and video tokens blend concept directions with per-token noise
//! directions and are renormalised.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::PatchGrid;
use crate::hash::{concept_coord, derived_id};
use crate::scene::{CellKey, ConceptId, SceneSpec};
use crate::tensor::{Scalar, Tensor};

/// Weight of the concept direction in a blended token.
pub const CONCEPT_WEIGHT: f64 = 0.8;
/// Weight of the per-token noise direction in a blended token.
pub const NOISE_WEIGHT: f64 = 0.2;
/// Weight of the frame-index direction in a video token.
pub const FRAME_WEIGHT: f64 = 0.5;

const TAG_BACKGROUND: u64 = 1;
const TAG_NOISE: u64 = 2;
const TAG_SUPPORT_NOISE: u64 = 3;
const TAG_SUPPORT_BACKGROUND: u64 = 4;
const TAG_FRAME: u64 = 5;

/// Where a main-branch token came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Provenance {
    pub view: u32,
    pub frame: u32,
    pub row: usize,
    pub col: usize,
    /// Position of the token inside its patch.
    pub index: usize,
}

/// Main-branch token embeddings with per-row provenance, in raster order.
#[derive(Clone, Debug)]
pub struct TokenBatch<T: Scalar = f32> {
    embeddings: Tensor<T>,
    provenance: Vec<Provenance>,
}

impl<T: Scalar> TokenBatch<T> {
    pub fn new(embeddings: Tensor<T>, provenance: Vec<Provenance>) -> Result<Self> {
        if provenance.len() != embeddings.rows() {
            return Err(Error::shape(
                "token_batch",
                format!(
                    "{} provenance entries for {} rows",
                    provenance.len(),
                    embeddings.rows()
                ),
            ));
        }
        if let Some(i) = provenance.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Contract(format!(
                "token provenance not in strict raster order at row {}",
                i + 1
            )));
        }
        Ok(Self {
            embeddings,
            provenance,
        })
    }

    /// Attaches raster-order provenance for `views` at one `frame` to
    /// embeddings produced elsewhere (one row per token).
    pub fn from_geometry(
        embeddings: Tensor<T>,
        views: &[u32],
        frame: u32,
        grid: &PatchGrid,
        tokens_per_patch: usize,
    ) -> Result<Self> {
        let provenance = raster(views, &[frame], grid, tokens_per_patch);
        Self::new(embeddings, provenance)
    }

    pub fn embeddings(&self) -> &Tensor<T> {
        &self.embeddings
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn into_parts(self) -> (Tensor<T>, Vec<Provenance>) {
        (self.embeddings, self.provenance)
    }
}

fn raster(views: &[u32], frames: &[u32], grid: &PatchGrid, tpp: usize) -> Vec<Provenance> {
    let mut out = Vec::with_capacity(views.len() * frames.len() * grid.len() * tpp);
    for &view in views {
        for &frame in frames {
            for (row, col) in grid.cells() {
                out.extend((0..tpp).map(|index| Provenance {
                    view,
                    frame,
                    row,
                    col,
                    index,
                }));
            }
        }
    }
    out
}

/// Unit direction of `concept` under `seed` in `d` dimensions.
pub fn concept_direction(seed: u64, concept: ConceptId, d: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..d as u64)
        .map(|j| concept_coord(seed, concept, j))
        .collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.into_iter().map(|v| v / norm).collect()
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::Param(format!(
            "embedding dim must be at least 2, got {d}"
        )));
    }
    Ok(())
}

/// One unit row per concept id.
pub fn mock_embed<T: Scalar>(concepts: &[ConceptId], d: usize, seed: u64) -> Result<Tensor<T>> {
    check_dim(d)?;
    let mut data = Vec::with_capacity(concepts.len() * d);
    for &c in concepts {
        data.extend(concept_direction(seed, c, d).into_iter().map(T::of));
    }
    Tensor::new(concepts.len(), d, data)
}

/// Query concepts → `L_text × d`.
pub fn mock_text_encoder<T: Scalar>(scene: &SceneSpec, d: usize, seed: u64) -> Result<Tensor<T>> {
    if scene.query.is_empty() {
        return Err(Error::Degenerate("text query has no tokens".into()));
    }
    mock_embed(&scene.query, d, seed)
}

fn blend_unit(parts: &[(f64, &[f64])], d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    for (w, dir) in parts {
        for (o, x) in v.iter_mut().zip(dir.iter()) {
            *o += w * x;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn mean_unit(dirs: &[&[f64]], d: usize) -> Option<Vec<f64>> {
    if dirs.is_empty() {
        return None;
    }
    let mut v = vec![0.0; d];
    for dir in dirs {
        for (o, x) in v.iter_mut().zip(dir.iter()) {
            *o += x;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 1e-12).then(|| v.into_iter().map(|x| x / norm).collect())
}

struct DirCache {
    seed: u64,
    d: usize,
    dirs: HashMap<ConceptId, Vec<f64>>,
}

impl DirCache {
    fn for_scene(scene: &SceneSpec, frames: &[u32], seed: u64, d: usize) -> Self {
        let mut dirs = HashMap::new();
        for &view in &scene.views {
            for &frame in frames {
                for (row, col) in scene.grid.cells() {
                    for &c in scene.concepts(&CellKey {
                        view,
                        frame,
                        row,
                        col,
                    }) {
                        dirs.entry(c)
                            .or_insert_with(|| concept_direction(seed, c, d));
                    }
                }
            }
        }
        Self { seed, d, dirs }
    }

    fn get(&self, c: ConceptId) -> &[f64] {
        &self.dirs[&c]
    }

    fn derived(&self, tag: u64, parts: &[u64]) -> Vec<f64> {
        concept_direction(self.seed, derived_id(tag, parts), self.d)
    }
}

/// Concept carried by token `t` of a patch: the concepts split the patch's
/// tokens into contiguous blocks of `ceil(tpp / |C|)`; empty cells are
/// background.
fn token_concept(concepts: &[ConceptId], t: usize, tpp: usize) -> Option<ConceptId> {
    if concepts.is_empty() {
        return None;
    }
    let block = tpp.div_ceil(concepts.len());
    concepts.get(t / block).copied()
}

/// Main-branch tokens for every view at one frame, in raster order.
pub fn encode_frame<T: Scalar>(
    scene: &SceneSpec,
    frame: u32,
    d: usize,
    seed: u64,
) -> Result<TokenBatch<T>> {
    encode_frames(scene, &[frame], d, seed)
}

/// Main-branch tokens for every view and frame of the scene.
pub fn mock_main_encoder<T: Scalar>(
    scene: &SceneSpec,
    d: usize,
    seed: u64,
) -> Result<TokenBatch<T>> {
    encode_frames(scene, &scene.frames, d, seed)
}

fn encode_frames<T: Scalar>(
    scene: &SceneSpec,
    frames: &[u32],
    d: usize,
    seed: u64,
) -> Result<TokenBatch<T>> {
    check_dim(d)?;
    if let Some(f) = frames
        .iter()
        .find(|f| scene.frames.binary_search(f).is_err())
    {
        return Err(Error::Config(format!("frame {f} is not part of the scene")));
    }
    let tpp = scene.tokens_per_patch;
    let cache = DirCache::for_scene(scene, frames, seed, d);
    let provenance = raster(&scene.views, frames, &scene.grid, tpp);
    let mut data = vec![T::zero(); provenance.len() * d];

    data.par_chunks_mut(d)
        .zip(provenance.par_iter())
        .for_each(|(out, p)| {
            let key = CellKey {
                view: p.view,
                frame: p.frame,
                row: p.row,
                col: p.col,
            };
            let parts = [
                p.view as u64,
                p.frame as u64,
                p.row as u64,
                p.col as u64,
                p.index as u64,
            ];
            let base = match token_concept(scene.concepts(&key), p.index, tpp) {
                Some(c) => cache.get(c).to_vec(),
                None => cache.derived(TAG_BACKGROUND, &parts),
            };
            let noise = cache.derived(TAG_NOISE, &parts);
            let row = blend_unit(&[(CONCEPT_WEIGHT, &base), (NOISE_WEIGHT, &noise)], d);
            for (o, v) in out.iter_mut().zip(row) {
                *o = T::of(v);
            }
        });

    TokenBatch::new(Tensor::new(provenance.len(), d, data)?, provenance)
}

/// Low-resolution whole-image tokens: `tokens_per_patch` per view at the
/// current frame.
///
/// Support token `s` of a view covers the patch cell `s * N / L` (N cells, L
/// tokens). Its direction is the mean of that cell's concepts blended with
/// the mean of every concept in the view, then noise-perturbed.
pub fn mock_support_encoder<T: Scalar>(
    scene: &SceneSpec,
    d: usize,
    seed: u64,
) -> Result<Tensor<T>> {
    check_dim(d)?;
    let frame = scene.current_frame();
    let cache = DirCache::for_scene(scene, &[frame], seed, d);
    let per_view = scene.tokens_per_patch;
    let n_cells = scene.grid.len();
    let cells: Vec<(usize, usize)> = scene.grid.cells().collect();

    let mut rows = Vec::with_capacity(scene.views.len() * per_view);
    for &view in &scene.views {
        let cell_concepts = |(row, col): (usize, usize)| {
            scene.concepts(&CellKey {
                view,
                frame,
                row,
                col,
            })
        };
        let all: Vec<&[f64]> = cells
            .iter()
            .flat_map(|&cell| cell_concepts(cell).iter().map(|&c| cache.get(c)))
            .collect();
        let view_mean = mean_unit(&all, d);
        for s in 0..per_view {
            let cell = cells[s * n_cells / per_view];
            let local: Vec<&[f64]> = cell_concepts(cell).iter().map(|&c| cache.get(c)).collect();
            let parts = [view as u64, frame as u64, s as u64];
            let base = match (mean_unit(&local, d), &view_mean) {
                (Some(l), Some(v)) => blend_unit(&[(0.5, &l), (0.5, v)], d),
                (None, Some(v)) => v.clone(),
                (Some(l), None) => l,
                (None, None) => cache.derived(TAG_SUPPORT_BACKGROUND, &parts),
            };
            let noise = cache.derived(TAG_SUPPORT_NOISE, &parts);
            rows.push(blend_unit(
                &[(CONCEPT_WEIGHT, &base), (NOISE_WEIGHT, &noise)],
                d,
            ));
        }
    }
    to_tensor(rows, d)
}

/// One token per frame: mean concept direction of the frame plus a
/// frame-index direction.
pub fn mock_video_encoder<T: Scalar>(scene: &SceneSpec, d: usize, seed: u64) -> Result<Tensor<T>> {
    check_dim(d)?;
    if scene.frames.is_empty() {
        return Err(Error::Degenerate("video input has no frames".into()));
    }
    let cache = DirCache::for_scene(scene, &scene.frames, seed, d);
    let mut rows = Vec::with_capacity(scene.frames.len());
    for &frame in &scene.frames {
        let mut dirs: Vec<&[f64]> = Vec::new();
        for &view in &scene.views {
            for (row, col) in scene.grid.cells() {
                dirs.extend(
                    scene
                        .concepts(&CellKey {
                            view,
                            frame,
                            row,
                            col,
                        })
                        .iter()
                        .map(|&c| cache.get(c)),
                );
            }
        }
        let frame_dir = cache.derived(TAG_FRAME, &[frame as u64]);
        let content = mean_unit(&dirs, d).unwrap_or_else(|| vec![0.0; d]);
        rows.push(blend_unit(
            &[(1.0, &content), (FRAME_WEIGHT, &frame_dir)],
            d,
        ));
    }
    to_tensor(rows, d)
}

fn to_tensor<T: Scalar>(rows: Vec<Vec<f64>>, d: usize) -> Result<Tensor<T>> {
    let n = rows.len();
    Tensor::new(n, d, rows.into_iter().flatten().map(T::of).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tile_patches;
    use crate::kernels::cosine_sim;

    fn tiny_scene(tpp: usize) -> SceneSpec {
        let grid = tile_patches(224, 448, 224).unwrap();
        let mut s = SceneSpec::new(grid, vec![0], vec![0, 1], tpp, vec![1, 2, 3]).unwrap();
        s.set_cell(
            CellKey {
                view: 0,
                frame: 1,
                row: 0,
                col: 0,
            },
            vec![1, 10],
        )
        .unwrap();
        s.set_cell(
            CellKey {
                view: 0,
                frame: 0,
                row: 0,
                col: 1,
            },
            vec![10],
        )
        .unwrap();
        s.set_cell(
            CellKey {
                view: 0,
                frame: 1,
                row: 0,
                col: 1,
            },
            vec![10],
        )
        .unwrap();
        s
    }

    fn max_row_norm_err(t: &Tensor<f64>) -> f64 {
        t.iter_rows()
            .map(|r| (r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn golden_row_seed42_concept0() {
        let row = mock_embed::<f64>(&[0], 4, 42).unwrap();
        let golden = [
            0.3647804593978688,
            -0.5286058914544444,
            0.5354557075932911,
            -0.548450739052196,
        ];
        assert_eq!(row.data(), &golden);
    }

    #[test]
    fn dim_below_two_is_rejected() {
        assert!(mock_embed::<f32>(&[0], 1, 0).is_err());
    }

    #[test]
    fn text_encoder_shapes_and_determinism() {
        let s = tiny_scene(4);
        let a = mock_text_encoder::<f32>(&s, 16, 3).unwrap();
        let b = mock_text_encoder::<f32>(&s, 16, 3).unwrap();
        assert_eq!(a.shape(), (3, 16));
        assert!(a.bit_eq(&b));
        let mut empty = s.clone();
        empty.query.clear();
        assert!(matches!(
            mock_text_encoder::<f32>(&empty, 16, 3),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn main_encoder_raster_and_unit_rows() {
        let s = tiny_scene(5);
        let b = mock_main_encoder::<f64>(&s, 32, 9).unwrap();
        assert_eq!(b.len(), 2 * 2 * 5);
        assert!(b.provenance().windows(2).all(|w| w[0] < w[1]));
        assert!(max_row_norm_err(b.embeddings()) < 1e-12);
    }

    #[test]
    fn token_blocks_split_by_concept() {
        assert_eq!(token_concept(&[7, 8], 0, 5), Some(7));
        assert_eq!(token_concept(&[7, 8], 2, 5), Some(7));
        assert_eq!(token_concept(&[7, 8], 3, 5), Some(8));
        assert_eq!(token_concept(&[], 0, 5), None);
    }

    #[test]
    fn query_concept_tokens_score_highest() {
        let s = tiny_scene(6);
        let d = 256;
        let text = mock_text_encoder::<f64>(&s, d, 1).unwrap();
        let batch = encode_frame::<f64>(&s, 1, d, 1).unwrap();
        let sim = cosine_sim(batch.embeddings(), &text).unwrap();
        let best = (0..batch.len())
            .max_by(|&a, &b| sim.get(a, 0).total_cmp(&sim.get(b, 0)))
            .unwrap();
        let p = batch.provenance()[best];
        assert_eq!((p.row, p.col), (0, 0));
        assert!(p.index < 3);
        // 0.8 concept + 0.2 near-orthogonal noise, renormalised
        assert!(sim.get(best, 0) > 0.95);
    }

    #[test]
    fn support_and_video_shapes() {
        let s = tiny_scene(7);
        let sup = mock_support_encoder::<f64>(&s, 24, 2).unwrap();
        assert_eq!(sup.shape(), (7, 24));
        assert!(max_row_norm_err(&sup) < 1e-12);
        let vid = mock_video_encoder::<f64>(&s, 24, 2).unwrap();
        assert_eq!(vid.shape(), (2, 24));
        assert!(max_row_norm_err(&vid) < 1e-12);
    }

    #[test]
    fn identical_frames_differ_only_by_frame_direction() {
        let grid = tile_patches(224, 224, 224).unwrap();
        let mut s = SceneSpec::new(grid, vec![0], vec![3, 8], 2, vec![1]).unwrap();
        for f in [3, 8] {
            s.set_cell(
                CellKey {
                    view: 0,
                    frame: f,
                    row: 0,
                    col: 0,
                },
                vec![4, 5],
            )
            .unwrap();
        }
        let d = 64;
        let vid = mock_video_encoder::<f64>(&s, d, 0).unwrap();
        let content = mean_unit(
            &[
                &concept_direction(0, 4, d)[..],
                &concept_direction(0, 5, d)[..],
            ],
            d,
        )
        .unwrap();
        for (i, f) in [3u64, 8].into_iter().enumerate() {
            let fd = concept_direction(0, derived_id(TAG_FRAME, &[f]), d);
            let expected = blend_unit(&[(1.0, &content), (FRAME_WEIGHT, &fd)], d);
            let got = vid.row(i);
            for (g, e) in got.iter().zip(&expected) {
                assert!((g - e).abs() < 1e-15);
            }
        }
        assert_ne!(vid.row(0), vid.row(1));
    }
}
