use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square patch tiling of one camera image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub image_height: u32,
    pub image_width: u32,
    pub patch_size: u32,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    /// Number of patches, `rows * cols`.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major patch cells.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (r, c)))
    }
}

/// Tiles an `h × w` image into `p × p` patches. Sizes must divide exactly.
pub fn tile_patches(h: u32, w: u32, p: u32) -> Result<PatchGrid> {
    if h == 0 || w == 0 || p == 0 {
        return Err(Error::Tiling(format!(
            "image {h}x{w} and patch size {p} must all be positive"
        )));
    }
    if h % p != 0 || w % p != 0 {
        return Err(Error::Tiling(format!(
            "image {h}x{w} is not a whole number of {p}x{p} patches"
        )));
    }
    Ok(PatchGrid {
        image_height: h,
        image_width: w,
        patch_size: p,
        rows: (h / p) as usize,
        cols: (w / p) as usize,
    })
}
