//! End-to-end run: encode → select → compress → enhance, under a token
//! budget of `select_ratio × compress_ratio`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embfile::load_embeddings;
use crate::encoders::{
    encode_frame, mock_support_encoder, mock_text_encoder, mock_video_encoder, Provenance,
    TokenBatch,
};
use crate::enhance::{
    fuse, fuse_residual, spatial_restoration, temporal_enhancement, AttentionParams, EnhancedTokens,
};
use crate::error::{Error, Result, StageExt};
use crate::grid::{tile_patches, PatchGrid};
use crate::kernels;
use crate::scene::{CellKey, SceneSpec};
use crate::selection::{
    self, Aggregation, Projection, SelectionParams, SelectionResult, SoftmaxAxis,
};
use crate::tensor::{Scalar, Tensor};

/// Which tokens act as attention queries in the enhancement stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum QuerySource {
    /// The compressed selected tokens; the enhanced tokens are the output.
    #[default]
    Selected,
    /// Every aligned token; the enhanced set is then selected and compressed.
    All,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Patch brightness proportional to the fraction of its tokens kept.
    #[default]
    Density,
    /// Patch is white if any of its tokens was kept.
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub d: usize,
    pub patch_size: u32,
    /// Patch grid as `[rows, cols]`.
    pub grid: [usize; 2],
    pub views: usize,
    pub frames: usize,
    pub tokens_per_patch: usize,
    pub select_ratio: f64,
    pub compress_ratio: usize,
    pub tau: f64,
    pub alpha: f64,
    pub seed: u64,
    pub axis: SoftmaxAxis,
    pub q_source: QuerySource,
    pub residual: bool,
    pub has_class_token: bool,
    pub mask_mode: MaskMode,
    /// Pixels per patch side in rendered masks.
    pub mask_block: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            d: 768,
            patch_size: 224,
            grid: [4, 7],
            views: 6,
            frames: 4,
            tokens_per_patch: 49,
            select_ratio: 2.0,
            compress_ratio: 84,
            tau: 0.07,
            alpha: 0.2,
            seed: 0,
            axis: SoftmaxAxis::Image,
            q_source: QuerySource::Selected,
            residual: false,
            has_class_token: false,
            mask_mode: MaskMode::Density,
            mask_block: 8,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Overall reduction the ratios promise: `select_ratio × compress_ratio`.
    pub fn declared_reduction(&self) -> f64 {
        self.select_ratio * self.compress_ratio as f64
    }

    pub fn patch_grid(&self) -> Result<PatchGrid> {
        let p = self.patch_size;
        tile_patches(self.grid[0] as u32 * p, self.grid[1] as u32 * p, p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d < 2 {
            return bad(format!("d must be at least 2, got {}", self.d));
        }
        if self.patch_size == 0 || self.grid.contains(&0) {
            return bad("patch size and grid dims must be positive".into());
        }
        if self.views == 0 || self.frames == 0 || self.tokens_per_patch == 0 {
            return bad("views, frames and tokens_per_patch must be at least 1".into());
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.select_ratio >= 1.0) || !self.select_ratio.is_finite() {
            return bad(format!(
                "select_ratio must be >= 1, got {}",
                self.select_ratio
            ));
        }
        if self.compress_ratio == 0 {
            return bad("compress_ratio must be >= 1".into());
        }
        if self.mask_block == 0 {
            return bad("mask_block must be >= 1".into());
        }
        Ok(())
    }

    /// Copies the scene's geometry into the config.
    pub fn adopt_scene_geometry(&mut self, scene: &SceneSpec) {
        self.patch_size = scene.grid.patch_size;
        self.grid = [scene.grid.rows, scene.grid.cols];
        self.views = scene.views.len();
        self.frames = scene.frames.len();
        self.tokens_per_patch = scene.tokens_per_patch;
    }

    fn check_scene(&self, scene: &SceneSpec) -> Result<()> {
        let g = &scene.grid;
        let ok = g.patch_size == self.patch_size
            && [g.rows, g.cols] == self.grid
            && scene.views.len() == self.views
            && scene.frames.len() == self.frames
            && scene.tokens_per_patch == self.tokens_per_patch;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "scene geometry ({} views, {} frames, {}x{} grid of {} px, {} tokens/patch) \
                 differs from config ({} views, {} frames, {}x{} grid of {} px, {} tokens/patch)",
                scene.views.len(),
                scene.frames.len(),
                g.rows,
                g.cols,
                g.patch_size,
                scene.tokens_per_patch,
                self.views,
                self.frames,
                self.grid[0],
                self.grid[1],
                self.patch_size,
                self.tokens_per_patch
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Budget {
    /// Tokens kept by top-k selection.
    pub k: usize,
    /// Tokens left after aggregation, `k / compress_ratio`.
    pub out_tokens: usize,
}

/// `out = floor(m / (select_ratio × c))`, `k = out × c`.
pub fn budget(m: usize, select_ratio: f64, c: usize) -> Result<Budget> {
    if !(select_ratio >= 1.0) || !select_ratio.is_finite() || c == 0 {
        return Err(Error::Param(format!(
            "ratios must be >= 1, got select {select_ratio}, compress {c}"
        )));
    }
    let out_tokens = if select_ratio.fract() == 0.0 && select_ratio <= usize::MAX as f64 {
        m / (select_ratio as usize).saturating_mul(c)
    } else {
        (m as f64 / (select_ratio * c as f64)).floor() as usize
    };
    if out_tokens == 0 {
        return Err(Error::Budget(format!(
            "{m} tokens cannot be reduced by {select_ratio} x {c} to at least one token"
        )));
    }
    Ok(Budget {
        k: out_tokens * c,
        out_tokens,
    })
}

/// Learnable pieces of the pipeline. Defaults are identity maps and a mean
/// aggregation.
#[derive(Clone, Debug)]
pub struct PipelineParams<T: Scalar> {
    pub align: Projection<T>,
    pub aggregation: Aggregation<T>,
    pub fusion: Projection<T>,
    pub attention: AttentionParams<T>,
}

impl<T: Scalar> Default for PipelineParams<T> {
    fn default() -> Self {
        Self {
            align: Projection::Identity,
            aggregation: Aggregation::Mean,
            fusion: Projection::Identity,
            attention: AttentionParams::default(),
        }
    }
}

/// Encoder outputs ready for selection.
#[derive(Clone, Debug)]
pub struct EncodedInputs<T: Scalar> {
    pub text: Tensor<T>,
    pub main: TokenBatch<T>,
    pub support: Tensor<T>,
    /// Per-frame video tokens; `None` for single-frame input.
    pub temporal: Option<Tensor<T>>,
}

impl<T: Scalar> EncodedInputs<T> {
    /// Runs the mock encoders. The main branch covers the current frame of
    /// every view; earlier frames only reach the video encoder.
    pub fn from_scene(scene: &SceneSpec, d: usize, seed: u64) -> Result<Self> {
        let text = mock_text_encoder(scene, d, seed)?;
        let main = encode_frame(scene, scene.current_frame(), d, seed)?;
        let support = mock_support_encoder(scene, d, seed)?;
        let temporal = if scene.frames.len() > 1 {
            Some(mock_video_encoder(scene, d, seed)?)
        } else {
            None
        };
        Ok(Self {
            text,
            main,
            support,
            temporal,
        })
    }
}

/// Embedding files expected by [`load_inputs`].
pub const INPUT_FILES: [&str; 4] = ["text.lvde", "main.lvde", "support.lvde", "temporal.lvde"];

/// Loads precomputed encoder outputs from `dir`.
///
/// `main.lvde` holds `views × rows × cols × tokens_per_patch` rows in raster
/// order. `temporal.lvde` is optional and ignored when `config.frames == 1`.
/// With `has_class_token` set, row 0 of every file is dropped first.
pub fn load_inputs(dir: &Path, config: &PipelineConfig) -> Result<EncodedInputs<f32>> {
    let load = |name: &str| -> Result<Tensor<f32>> {
        let t = load_embeddings(&dir.join(name))?;
        if config.has_class_token {
            if t.rows() < 2 {
                return Err(Error::Degenerate(format!(
                    "{name} has no rows after the class token"
                )));
            }
            let rest: Vec<usize> = (1..t.rows()).collect();
            kernels::gather_rows(&t, &rest)
        } else {
            Ok(t)
        }
    };
    let text = load(INPUT_FILES[0])?;
    let main = load(INPUT_FILES[1])?;
    let support = load(INPUT_FILES[2])?;
    let temporal_path = dir.join(INPUT_FILES[3]);
    let temporal = if config.frames > 1 && temporal_path.exists() {
        Some(load(INPUT_FILES[3])?)
    } else {
        None
    };
    let grid = config.patch_grid()?;
    let views: Vec<u32> = (0..config.views as u32).collect();
    let frame = config.frames as u32 - 1;
    let main = TokenBatch::from_geometry(main, &views, frame, &grid, config.tokens_per_patch)?;
    Ok(EncodedInputs {
        text,
        main,
        support,
        temporal,
    })
}

/// Per (view, frame) boolean volumes `rows × cols × tokens_per_patch`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionMask {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub tokens_per_patch: usize,
    volumes: BTreeMap<(u32, u32), Vec<bool>>,
}

impl SelectionMask {
    pub fn build(
        views: &[u32],
        frame: u32,
        grid: &PatchGrid,
        tokens_per_patch: usize,
        provenance: &[Provenance],
        selected: &[usize],
    ) -> Result<Self> {
        let size = grid.len() * tokens_per_patch;
        let mut volumes: BTreeMap<(u32, u32), Vec<bool>> = views
            .iter()
            .map(|&v| ((v, frame), vec![false; size]))
            .collect();
        for &i in selected {
            let p = provenance
                .get(i)
                .ok_or_else(|| Error::Contract(format!("selected index {i} has no provenance")))?;
            let vol = volumes.get_mut(&(p.view, p.frame)).ok_or_else(|| {
                Error::Contract(format!(
                    "token {i} is from view {} frame {} outside the mask",
                    p.view, p.frame
                ))
            })?;
            if p.row >= grid.rows || p.col >= grid.cols || p.index >= tokens_per_patch {
                return Err(Error::Contract(format!(
                    "token {i} lies outside the patch grid"
                )));
            }
            vol[(p.row * grid.cols + p.col) * tokens_per_patch + p.index] = true;
        }
        Ok(Self {
            grid_rows: grid.rows,
            grid_cols: grid.cols,
            tokens_per_patch,
            volumes,
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.volumes.keys().copied()
    }

    pub fn is_selected(&self, view: u32, frame: u32, row: usize, col: usize, index: usize) -> bool {
        self.volumes
            .get(&(view, frame))
            .is_some_and(|v| v[(row * self.grid_cols + col) * self.tokens_per_patch + index])
    }

    /// Selected tokens in one patch.
    pub fn patch_count(&self, view: u32, frame: u32, row: usize, col: usize) -> usize {
        let Some(vol) = self.volumes.get(&(view, frame)) else {
            return 0;
        };
        let start = (row * self.grid_cols + col) * self.tokens_per_patch;
        vol[start..start + self.tokens_per_patch]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    pub fn true_count(&self) -> usize {
        self.volumes.values().flatten().filter(|&&b| b).count()
    }

    /// Binary PGM (P5, maxval 255) for one (view, frame).
    pub fn to_pgm(&self, view: u32, frame: u32, mode: MaskMode, block: usize) -> Result<Vec<u8>> {
        if !self.volumes.contains_key(&(view, frame)) {
            return Err(Error::Param(format!(
                "mask has no view {view} frame {frame}"
            )));
        }
        let (w, h) = (self.grid_cols * block, self.grid_rows * block);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        let tpp = self.tokens_per_patch;
        for y in 0..h {
            for x in 0..w {
                let n = self.patch_count(view, frame, y / block, x / block);
                let level = match mode {
                    MaskMode::Density => (255 * n + tpp / 2) / tpp,
                    MaskMode::Binary => usize::from(n > 0) * 255,
                };
                out.push(level as u8);
            }
        }
        Ok(out)
    }
}

/// File name of the mask image for one (view, frame).
pub fn mask_file_name(view: u32, frame: u32) -> String {
    format!("view{view}_frame{frame}.pgm")
}

/// Writes one PGM per (view, frame) into `dir`; returns the paths written.
pub fn render_mask(
    mask: &SelectionMask,
    dir: &Path,
    mode: MaskMode,
    block: usize,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (view, frame) in mask.keys() {
        let path = dir.join(mask_file_name(view, frame));
        let bytes = mask.to_pgm(view, frame, mode, block)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub m_in: usize,
    pub k_selected: usize,
    pub out_tokens: usize,
    pub achieved_reduction: f64,
    pub stage_ms: Vec<StageTiming>,
    pub config: PipelineConfig,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// `key = value` lines; the config echo follows under `[config]`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "m_in = {}", self.m_in);
        let _ = writeln!(s, "k_selected = {}", self.k_selected);
        let _ = writeln!(s, "out_tokens = {}", self.out_tokens);
        let _ = writeln!(s, "achieved_reduction = {}", self.achieved_reduction);
        for t in &self.stage_ms {
            let _ = writeln!(s, "stage_ms.{} = {:.3}", t.stage, t.ms);
        }
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.config.to_toml());
        s
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput<T: Scalar> {
    /// Tokens handed to the language model, `out_tokens × d`.
    pub final_tokens: Tensor<T>,
    pub text: Tensor<T>,
    pub selection: SelectionResult<T>,
    pub enhanced: EnhancedTokens<T>,
    pub provenance: Vec<Provenance>,
    pub mask: SelectionMask,
    pub report: PipelineReport,
}

struct Timer {
    stages: Vec<StageTiming>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Self {
            stages: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.stages.push(StageTiming {
            stage,
            ms: (now - self.last).as_secs_f64() * 1e3,
        });
        self.last = now;
    }
}

#[derive(Clone, Debug)]
pub struct Pipeline<T: Scalar = f32> {
    pub config: PipelineConfig,
    pub params: PipelineParams<T>,
}

impl<T: Scalar> Pipeline<T> {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: PipelineParams::default(),
        })
    }

    pub fn with_params(mut self, params: PipelineParams<T>) -> Self {
        self.params = params;
        self
    }

    fn selection_params(&self) -> SelectionParams<T> {
        SelectionParams {
            tau: T::of(self.config.tau),
            alpha: T::of(self.config.alpha),
            select_ratio: self.config.select_ratio,
            compress_ratio: self.config.compress_ratio,
            axis: self.config.axis,
            align: self.params.align.clone(),
            aggregation: self.params.aggregation.clone(),
        }
    }

    /// Encodes `scene` with the mock encoders and runs every stage.
    pub fn run_scene(&self, scene: &SceneSpec) -> Result<PipelineOutput<T>> {
        self.config.check_scene(scene).stage("config")?;
        let mut timer = Timer::new();
        let inputs =
            EncodedInputs::from_scene(scene, self.config.d, self.config.seed).stage("encode")?;
        timer.lap("encode");
        self.run_timed(
            &inputs,
            &scene.views,
            scene.current_frame(),
            &scene.grid,
            timer,
        )
    }

    /// Runs every stage on already encoded inputs.
    pub fn run_inputs(&self, inputs: &EncodedInputs<T>) -> Result<PipelineOutput<T>> {
        let grid = self.config.patch_grid().stage("config")?;
        let views: Vec<u32> = (0..self.config.views as u32).collect();
        let frame = self.config.frames as u32 - 1;
        self.run_timed(inputs, &views, frame, &grid, Timer::new())
    }

    fn run_timed(
        &self,
        inputs: &EncodedInputs<T>,
        views: &[u32],
        frame: u32,
        grid: &PatchGrid,
        mut timer: Timer,
    ) -> Result<PipelineOutput<T>> {
        let cfg = &self.config;
        let sp = self.selection_params();
        let image = inputs.main.embeddings();
        let m = image.rows();
        let budget = budget(m, cfg.select_ratio, cfg.compress_ratio).stage("budget")?;

        let aligned = selection::align(image, &sp.align).stage("align")?;
        timer.lap("align");
        let s = selection::similarity(&aligned, &inputs.text).stage("similarity")?;
        timer.lap("similarity");
        let p = selection::normalize_similarity_along(&s, sp.tau, sp.axis).stage("normalize")?;
        timer.lap("normalize");
        let s_sum = selection::relevance_scores(&p);
        let w = selection::token_weights(&aligned);
        timer.lap("scores");
        let map = selection::selection_map(&s_sum, &w, sp.alpha).stage("map")?;
        timer.lap("map");
        let (topk, indices) = selection::select(&aligned, &map, budget.k).stage("select")?;
        timer.lap("select");
        let compressed =
            selection::compress(&topk, cfg.compress_ratio, &sp.aggregation).stage("compress")?;
        timer.lap("compress");

        let queries = match cfg.q_source {
            QuerySource::Selected => &compressed,
            QuerySource::All => &aligned,
        };
        let att = &self.params.attention;
        let spatial = spatial_restoration(queries, &inputs.support, att).stage("spatial")?;
        timer.lap("spatial");
        let temporal = inputs
            .temporal
            .as_ref()
            .map(|t| temporal_enhancement(queries, t, att))
            .transpose()
            .stage("temporal")?;
        timer.lap("temporal");
        let fused = if cfg.residual {
            fuse_residual(&spatial, temporal.as_ref(), &self.params.fusion, queries)
        } else {
            fuse(&spatial, temporal.as_ref(), &self.params.fusion)
        }
        .stage("fuse")?;
        let final_tokens = match cfg.q_source {
            QuerySource::Selected => fused.clone(),
            QuerySource::All => {
                let picked = kernels::gather_rows(&fused, &indices).stage("fuse")?;
                selection::compress(&picked, cfg.compress_ratio, &sp.aggregation).stage("fuse")?
            }
        };
        final_tokens.ensure_finite("final tokens").stage("fuse")?;
        timer.lap("fuse");

        let provenance = inputs.main.provenance().to_vec();
        let mask = SelectionMask::build(
            views,
            frame,
            grid,
            cfg.tokens_per_patch,
            &provenance,
            &indices,
        )
        .stage("mask")?;
        let report = PipelineReport {
            m_in: m,
            k_selected: budget.k,
            out_tokens: final_tokens.rows(),
            achieved_reduction: m as f64 / final_tokens.rows() as f64,
            stage_ms: timer.stages,
            config: cfg.clone(),
        };
        Ok(PipelineOutput {
            final_tokens,
            text: inputs.text.clone(),
            selection: SelectionResult {
                selected_indices: indices,
                selection_map: map,
                s_sum,
                w,
                aligned,
                topk,
                compressed,
                tau: sp.tau,
                alpha: sp.alpha,
                k: budget.k,
            },
            enhanced: EnhancedTokens {
                spatial,
                temporal,
                fused,
            },
            provenance,
            mask,
            report,
        })
    }
}

/// Fraction of query-bearing cells at `frame` with at least one selected
/// token; `None` if the scene has no such cell.
pub fn planted_recall(scene: &SceneSpec, frame: u32, mask: &SelectionMask) -> Option<f64> {
    let cells: Vec<CellKey> = scene.query_cells(frame);
    if cells.is_empty() {
        return None;
    }
    let hit = cells
        .iter()
        .filter(|k| mask.patch_count(k.view, k.frame, k.row, k.col) > 0)
        .count();
    Some(hit as f64 / cells.len() as f64)
}

/// The shipped six-view, four-frame demo scene.
pub fn demo_scene() -> SceneSpec {
    SceneSpec::from_toml(DEMO_SCENE_TOML).expect("bundled demo scene parses")
}

pub const DEMO_SCENE_TOML: &str = include_str!("../data/demo_scene.toml");
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../data/default_config.toml");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_examples() {
        assert_eq!(
            budget(8232, 2.0, 84).unwrap(),
            Budget {
                k: 4116,
                out_tokens: 49
            }
        );
        assert_eq!(
            budget(49, 1.0, 1).unwrap(),
            Budget {
                k: 49,
                out_tokens: 49
            }
        );
        assert_eq!(
            budget(8232, 3.0, 56).unwrap(),
            Budget {
                k: 2744,
                out_tokens: 49
            }
        );
        assert_eq!(
            budget(8232, 6.0, 26).unwrap(),
            Budget {
                k: 1352,
                out_tokens: 52
            }
        );
        assert!(matches!(budget(100, 2.0, 84), Err(Error::Budget(_))));
        assert!(budget(100, 0.5, 1).is_err());
    }

    #[test]
    fn budget_identity_holds() {
        for m in [1usize, 7, 49, 168, 169, 1000, 8232] {
            for (s, c) in [(1.0, 1), (2.0, 84), (3.0, 56), (1.5, 4), (2.5, 3)] {
                let Ok(b) = budget(m, s, c) else {
                    assert!((m as f64) < s * c as f64);
                    continue;
                };
                let prod = s * c as f64;
                assert!(b.out_tokens as f64 * prod <= m as f64);
                assert!((m as f64) < (b.out_tokens + 1) as f64 * prod);
                assert_eq!(b.k, b.out_tokens * c);
            }
        }
    }

    #[test]
    fn shipped_config_is_the_default() {
        let cfg = PipelineConfig::from_toml(DEFAULT_CONFIG_TOML).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
        assert!(PipelineConfig::from_toml("alpha = 1.5").is_err());
        assert!(PipelineConfig::from_toml("tau = 0.0").is_err());
        assert!(PipelineConfig::from_toml("views = 0").is_err());
        let cfg =
            PipelineConfig::from_toml("select_ratio = 3.0\ncompress_ratio = 56\naxis = \"text\"")
                .unwrap();
        assert_eq!(cfg.declared_reduction(), 168.0);
        assert_eq!(cfg.axis, SoftmaxAxis::Text);
    }

    #[test]
    fn mask_pgm_extremes() {
        let grid = tile_patches(2, 4, 2).unwrap();
        let views = [0u32];
        let prov: Vec<Provenance> = grid
            .cells()
            .flat_map(|(row, col)| {
                (0..3).map(move |index| Provenance {
                    view: 0,
                    frame: 0,
                    row,
                    col,
                    index,
                })
            })
            .collect();
        let none = SelectionMask::build(&views, 0, &grid, 3, &prov, &[]).unwrap();
        let pgm = none.to_pgm(0, 0, MaskMode::Density, 2).unwrap();
        let header = b"P5\n4 2\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert!(pgm[header.len()..].iter().all(|&b| b == 0));
        let all: Vec<usize> = (0..prov.len()).collect();
        let full = SelectionMask::build(&views, 0, &grid, 3, &prov, &all).unwrap();
        assert_eq!(full.true_count(), 6);
        let pgm = full.to_pgm(0, 0, MaskMode::Density, 2).unwrap();
        assert!(pgm[header.len()..].iter().all(|&b| b == 255));
        let one = SelectionMask::build(&views, 0, &grid, 3, &prov, &[4]).unwrap();
        let dens = one.to_pgm(0, 0, MaskMode::Density, 1).unwrap();
        let bin = one.to_pgm(0, 0, MaskMode::Binary, 1).unwrap();
        assert_eq!(&dens[dens.len() - 2..], &[0, 85]);
        assert_eq!(&bin[bin.len() - 2..], &[0, 255]);
    }

    #[test]
    fn mask_rejects_foreign_tokens() {
        let grid = tile_patches(2, 2, 2).unwrap();
        let prov = vec![Provenance {
            view: 5,
            frame: 0,
            row: 0,
            col: 0,
            index: 0,
        }];
        assert!(SelectionMask::build(&[0], 0, &grid, 1, &prov, &[0]).is_err());
        assert!(SelectionMask::build(&[5], 0, &grid, 1, &prov, &[1]).is_err());
    }
}
