//! Synthetic scene descriptions: which concepts appear in which patch of
//! which camera view at which frame, plus the concepts of the text query.
//!
//! Scenes are stored as TOML:
//!
//! ```toml
//! image_height = 896
//! image_width = 1568
//! patch_size = 224
//! tokens_per_patch = 49
//! views = [0, 1, 2, 3, 4, 5]
//! frames = [0, 1, 2, 3]
//! query = [1, 900, 901]
//!
//! [[cell]]
//! view = 0
//! row = 2
//! col = 3
//! concepts = [1, 10]
//! # frames = [3]        # optional, defaults to every frame
//! ```
//!
//! Cells that are not listed carry no concept and encode as background.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{tile_patches, PatchGrid};
use crate::hash::{SplitMix, DERIVED_ID_BASE};

pub type ConceptId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub view: u32,
    pub frame: u32,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub grid: PatchGrid,
    pub views: Vec<u32>,
    pub frames: Vec<u32>,
    pub tokens_per_patch: usize,
    pub query: Vec<ConceptId>,
    cells: BTreeMap<CellKey, Vec<ConceptId>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    image_height: u32,
    image_width: u32,
    patch_size: u32,
    #[serde(default = "default_tokens_per_patch")]
    tokens_per_patch: usize,
    views: Vec<u32>,
    frames: Vec<u32>,
    query: Vec<ConceptId>,
    #[serde(default, rename = "cell")]
    cells: Vec<CellEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellEntry {
    view: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<u32>>,
    row: usize,
    col: usize,
    concepts: Vec<ConceptId>,
}

fn default_tokens_per_patch() -> usize {
    49
}

fn strictly_ascending(ids: &[u32]) -> bool {
    ids.windows(2).all(|w| w[0] < w[1])
}

impl SceneSpec {
    /// An empty scene (every cell background) with the given geometry.
    pub fn new(
        grid: PatchGrid,
        views: Vec<u32>,
        frames: Vec<u32>,
        tokens_per_patch: usize,
        query: Vec<ConceptId>,
    ) -> Result<Self> {
        let scene = Self {
            grid,
            views,
            frames,
            tokens_per_patch,
            query,
            cells: BTreeMap::new(),
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() || self.frames.is_empty() {
            return Err(Error::Config(
                "a scene needs at least one view and one frame".into(),
            ));
        }
        if !strictly_ascending(&self.views) || !strictly_ascending(&self.frames) {
            return Err(Error::Config(
                "view and frame ids must be strictly ascending".into(),
            ));
        }
        if self.tokens_per_patch == 0 {
            return Err(Error::Config("tokens_per_patch must be at least 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("patch grid is empty".into()));
        }
        for &c in self.query.iter().chain(self.cells.values().flatten()) {
            if c >= DERIVED_ID_BASE {
                return Err(Error::Config(format!(
                    "concept id {c} is in the reserved range"
                )));
            }
        }
        for key in self.cells.keys() {
            self.check_key(key)?;
        }
        Ok(())
    }

    fn check_key(&self, key: &CellKey) -> Result<()> {
        if self.views.binary_search(&key.view).is_err() {
            return Err(Error::Config(format!(
                "cell refers to unknown view {}",
                key.view
            )));
        }
        if self.frames.binary_search(&key.frame).is_err() {
            return Err(Error::Config(format!(
                "cell refers to unknown frame {}",
                key.frame
            )));
        }
        if key.row >= self.grid.rows || key.col >= self.grid.cols {
            return Err(Error::Config(format!(
                "cell ({}, {}) is outside the {}x{} grid",
                key.row, key.col, self.grid.rows, self.grid.cols
            )));
        }
        Ok(())
    }

    /// Sets the concepts of one cell, replacing what was there.
    pub fn set_cell(&mut self, key: CellKey, concepts: Vec<ConceptId>) -> Result<()> {
        self.check_key(&key)?;
        if let Some(&c) = concepts.iter().find(|&&c| c >= DERIVED_ID_BASE) {
            return Err(Error::Config(format!(
                "concept id {c} is in the reserved range"
            )));
        }
        if concepts.is_empty() {
            self.cells.remove(&key);
        } else {
            self.cells.insert(key, concepts);
        }
        Ok(())
    }

    pub fn concepts(&self, key: &CellKey) -> &[ConceptId] {
        self.cells.get(key).map_or(&[], Vec::as_slice)
    }

    /// The most recent frame; the main branch encodes this one.
    pub fn current_frame(&self) -> u32 {
        *self.frames.last().expect("validated scene has a frame")
    }

    /// Cells of `frame` whose concepts include any query concept.
    pub fn query_cells(&self, frame: u32) -> Vec<CellKey> {
        self.cells
            .iter()
            .filter(|(k, cs)| k.frame == frame && cs.iter().any(|c| self.query.contains(c)))
            .map(|(k, _)| *k)
            .collect()
    }

    /// Keeps the first `views` views and the last `frames` frames.
    pub fn subset(&self, views: usize, frames: usize) -> Result<Self> {
        if views == 0 || frames == 0 || views > self.views.len() || frames > self.frames.len() {
            return Err(Error::Config(format!(
                "cannot take {views} views x {frames} frames from a scene with {} x {}",
                self.views.len(),
                self.frames.len()
            )));
        }
        let keep_views = self.views[..views].to_vec();
        let keep_frames = self.frames[self.frames.len() - frames..].to_vec();
        let cells = self
            .cells
            .iter()
            .filter(|(k, _)| {
                keep_views.binary_search(&k.view).is_ok()
                    && keep_frames.binary_search(&k.frame).is_ok()
            })
            .map(|(k, v)| (*k, v.clone()))
            .collect();
        Ok(Self {
            grid: self.grid,
            views: keep_views,
            frames: keep_frames,
            tokens_per_patch: self.tokens_per_patch,
            query: self.query.clone(),
            cells,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SceneFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("scene file: {e}")))?;
        let grid = tile_patches(file.image_height, file.image_width, file.patch_size)
            .map_err(|e| Error::Config(format!("scene file: {e}")))?;
        let mut scene = Self::new(
            grid,
            file.views,
            file.frames,
            file.tokens_per_patch,
            file.query,
        )?;
        for cell in file.cells {
            let frames = cell.frames.unwrap_or_else(|| scene.frames.clone());
            for frame in frames {
                let key = CellKey {
                    view: cell.view,
                    frame,
                    row: cell.row,
                    col: cell.col,
                };
                scene.set_cell(key, cell.concepts.clone())?;
            }
        }
        Ok(scene)
    }

    pub fn to_toml(&self) -> String {
        // cells identical across every frame collapse into one entry
        let mut grouped: BTreeMap<(u32, usize, usize, Vec<ConceptId>), Vec<u32>> = BTreeMap::new();
        for (k, cs) in &self.cells {
            grouped
                .entry((k.view, k.row, k.col, cs.clone()))
                .or_default()
                .push(k.frame);
        }
        let cells = grouped
            .into_iter()
            .map(|((view, row, col, concepts), frames)| CellEntry {
                view,
                frames: (frames != self.frames).then_some(frames),
                row,
                col,
                concepts,
            })
            .collect();
        let file = SceneFile {
            image_height: self.grid.image_height,
            image_width: self.grid.image_width,
            patch_size: self.grid.patch_size,
            tokens_per_patch: self.tokens_per_patch,
            views: self.views.clone(),
            frames: self.frames.clone(),
            query: self.query.clone(),
            cells,
        };
        toml::to_string(&file).expect("scene serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Parameters for [`planted_scene`].
#[derive(Clone, Debug)]
pub struct PlantedScene {
    pub grid: PatchGrid,
    pub views: usize,
    pub frames: usize,
    pub tokens_per_patch: usize,
    /// Cells per view that carry the query's target concept.
    pub planted_per_view: usize,
    pub seed: u64,
}

/// Concept the planted cells share with the query.
pub const TARGET_CONCEPT: ConceptId = 1;
/// Query words that appear nowhere in the scene.
pub const FILLER_CONCEPTS: [ConceptId; 2] = [900, 901];
/// Scenery concepts every cell draws one of.
pub const SCENERY_CONCEPTS: [ConceptId; 8] = [10, 11, 12, 13, 14, 15, 16, 17];

/// A static scene where `planted_per_view` random cells of each view hold
/// the target concept next to their scenery, and the query asks for the
/// target plus two filler words.
pub fn planted_scene(p: &PlantedScene) -> Result<SceneSpec> {
    if p.planted_per_view > p.grid.len() {
        return Err(Error::Config(format!(
            "cannot plant {} cells in a {}-cell grid",
            p.planted_per_view,
            p.grid.len()
        )));
    }
    let mut query = vec![TARGET_CONCEPT];
    query.extend_from_slice(&FILLER_CONCEPTS);
    let mut scene = SceneSpec::new(
        p.grid,
        (0..p.views as u32).collect(),
        (0..p.frames as u32).collect(),
        p.tokens_per_patch,
        query,
    )?;
    let mut rng = SplitMix::new(p.seed);
    let n = p.grid.len();
    for view in 0..p.views as u32 {
        // partial Fisher-Yates over cell indices
        let mut order: Vec<usize> = (0..n).collect();
        for i in 0..p.planted_per_view {
            let j = i + rng.below((n - i) as u64) as usize;
            order.swap(i, j);
        }
        let planted = &order[..p.planted_per_view];
        let scenery: Vec<ConceptId> = (0..n)
            .map(|_| SCENERY_CONCEPTS[rng.below(SCENERY_CONCEPTS.len() as u64) as usize])
            .collect();
        for (idx, (row, col)) in p.grid.cells().enumerate() {
            let concepts = if planted.contains(&idx) {
                vec![TARGET_CONCEPT, scenery[idx]]
            } else {
                vec![scenery[idx]]
            };
            for &frame in &scene.frames.clone() {
                scene.set_cell(
                    CellKey {
                        view,
                        frame,
                        row,
                        col,
                    },
                    concepts.clone(),
                )?;
            }
        }
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> PatchGrid {
        tile_patches(896, 1568, 224).unwrap()
    }

    #[test]
    fn toml_round_trip() {
        let scene = planted_scene(&PlantedScene {
            grid: grid(),
            views: 2,
            frames: 3,
            tokens_per_patch: 49,
            planted_per_view: 3,
            seed: 5,
        })
        .unwrap();
        let back = SceneSpec::from_toml(&scene.to_toml()).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn planted_cells_per_view() {
        let scene = planted_scene(&PlantedScene {
            grid: grid(),
            views: 6,
            frames: 1,
            tokens_per_patch: 49,
            planted_per_view: 3,
            seed: 11,
        })
        .unwrap();
        let cells = scene.query_cells(0);
        assert_eq!(cells.len(), 18);
        for v in 0..6 {
            assert_eq!(cells.iter().filter(|k| k.view == v).count(), 3);
        }
    }

    #[test]
    fn rejects_bad_files() {
        let base = "image_height = 224\nimage_width = 224\npatch_size = 224\nviews = [0]\nframes = [0]\nquery = [1]\n";
        assert!(SceneSpec::from_toml(base).is_ok());
        let bad_tile = base.replace("image_height = 224", "image_height = 225");
        assert!(SceneSpec::from_toml(&bad_tile).is_err());
        let unsorted = base.replace("views = [0]", "views = [1, 0]");
        assert!(SceneSpec::from_toml(&unsorted).is_err());
        let outside = format!("{base}[[cell]]\nview = 0\nrow = 1\ncol = 0\nconcepts = [3]\n");
        assert!(SceneSpec::from_toml(&outside).is_err());
        let unknown_view = format!("{base}[[cell]]\nview = 4\nrow = 0\ncol = 0\nconcepts = [3]\n");
        assert!(SceneSpec::from_toml(&unknown_view).is_err());
    }

    #[test]
    fn subset_keeps_latest_frames() {
        let scene = planted_scene(&PlantedScene {
            grid: grid(),
            views: 3,
            frames: 4,
            tokens_per_patch: 49,
            planted_per_view: 2,
            seed: 1,
        })
        .unwrap();
        let s = scene.subset(1, 2).unwrap();
        assert_eq!(s.views, vec![0]);
        assert_eq!(s.frames, vec![2, 3]);
        assert!(scene.subset(4, 1).is_err());
    }
}
