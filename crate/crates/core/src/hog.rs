//! Histogram of Oriented Gradients on small time × space patches.
//!
//! Gradients use centered differences with replicated borders. Each pixel
//! votes its gradient magnitude into the single orientation bin whose center
//! is nearest (bins centered at `k·180/θ`, unsigned orientation). Optional
//! block normalization divides each cell histogram by the l2 norm of every
//! histogram in the block of cells centered on it, truncated at the grid edge.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HogError {
    #[error("invalid HOG config: {0}")]
    InvalidConfig(String),
    #[error("patch is {got:?}, expected {want:?}")]
    PatchShape {
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error("patch of {0:?} is smaller than the 3×3 gradient stencil")]
    PatchTooSmall((usize, usize)),
    #[error("magnitude {mag:?} and direction {dir:?} arrays differ in shape")]
    ShapeMismatch {
        mag: (usize, usize),
        dir: (usize, usize),
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogConfig {
    /// Patch height in time samples.
    pub patch_h: usize,
    /// Patch width in A-scans.
    pub patch_w: usize,
    pub cells_t: usize,
    pub cells_x: usize,
    pub block_t: usize,
    pub block_x: usize,
    pub n_bins: usize,
    pub normalize: bool,
    pub norm_epsilon: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            patch_h: 18,
            patch_w: 20,
            cells_t: 3,
            cells_x: 4,
            block_t: 3,
            block_x: 3,
            n_bins: 9,
            normalize: true,
            norm_epsilon: 1e-10,
        }
    }
}

impl HogConfig {
    pub fn cell_h(&self) -> usize {
        self.patch_h / self.cells_t
    }

    pub fn cell_w(&self) -> usize {
        self.patch_w / self.cells_x
    }

    pub fn feature_len(&self) -> usize {
        self.cells_t * self.cells_x * self.n_bins
    }

    pub fn validate(&self) -> Result<(), HogError> {
        let bad = |m: &str| Err(HogError::InvalidConfig(m.to_owned()));
        if self.cells_t == 0 || self.cells_x == 0 {
            return bad("cell counts must be positive");
        }
        if !self.patch_h.is_multiple_of(self.cells_t) || !self.patch_w.is_multiple_of(self.cells_x) {
            return bad("patch dimensions must be exact multiples of the cell grid");
        }
        if self.patch_h < 3 || self.patch_w < 3 {
            return bad("patch must be at least 3×3");
        }
        if self.n_bins < 2 {
            return bad("need at least two orientation bins");
        }
        if self.block_t.is_multiple_of(2) || self.block_x.is_multiple_of(2) {
            return bad("block dimensions must be odd so blocks center on a cell");
        }
        if !(self.norm_epsilon >= 0.0) {
            return bad("norm_epsilon must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub magnitude: Array2<f64>,
    /// Unsigned orientation in degrees, `[0, 180)`.
    pub direction_deg: Array2<f64>,
}

pub fn gradients(patch: ArrayView2<'_, f64>) -> Result<Gradients, HogError> {
    let (h, w) = patch.dim();
    if h < 3 || w < 3 {
        return Err(HogError::PatchTooSmall((h, w)));
    }
    let mut magnitude = Array2::zeros((h, w));
    let mut direction_deg = Array2::zeros((h, w));
    for t in 0..h {
        let (up, down) = (t.saturating_sub(1), (t + 1).min(h - 1));
        for x in 0..w {
            let (left, right) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = (patch[[t, right]] - patch[[t, left]]) / 2.0;
            let gy = (patch[[down, x]] - patch[[up, x]]) / 2.0;
            let mag = (gx * gx + gy * gy).sqrt();
            magnitude[[t, x]] = mag;
            direction_deg[[t, x]] = if mag == 0.0 {
                0.0
            } else {
                fold_degrees(gy.atan2(gx).to_degrees())
            };
        }
    }
    Ok(Gradients {
        magnitude,
        direction_deg,
    })
}

fn fold_degrees(deg: f64) -> f64 {
    let d = if deg < 0.0 { deg + 180.0 } else { deg };
    if d >= 180.0 {
        d - 180.0
    } else {
        d
    }
}

/// Bin whose center is angularly nearest to `deg` (modulo 180); an exact
/// midpoint goes to the lower bin index.
pub fn nearest_bin(deg: f64, n_bins: usize) -> usize {
    let x = deg / (180.0 / n_bins as f64);
    let lo = (x.floor() as usize).min(n_bins - 1);
    let hi = (lo + 1) % n_bins;
    let frac = x - lo as f64;
    if frac < 0.5 {
        lo
    } else if frac > 0.5 {
        hi
    } else {
        lo.min(hi)
    }
}

/// Per-cell orientation histograms, stored row-major as
/// `(cell_row, cell_col, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellHistGrid {
    pub cells_t: usize,
    pub cells_x: usize,
    pub n_bins: usize,
    pub data: Vec<f64>,
}

impl CellHistGrid {
    pub fn zeros(cells_t: usize, cells_x: usize, n_bins: usize) -> Self {
        Self {
            cells_t,
            cells_x,
            n_bins,
            data: vec![0.0; cells_t * cells_x * n_bins],
        }
    }

    pub fn cell(&self, ct: usize, cx: usize) -> &[f64] {
        let o = (ct * self.cells_x + cx) * self.n_bins;
        &self.data[o..o + self.n_bins]
    }

    pub fn cell_mut(&mut self, ct: usize, cx: usize) -> &mut [f64] {
        let o = (ct * self.cells_x + cx) * self.n_bins;
        &mut self.data[o..o + self.n_bins]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

pub fn cell_histograms(
    magnitude: &Array2<f64>,
    direction_deg: &Array2<f64>,
    config: &HogConfig,
) -> Result<CellHistGrid, HogError> {
    config.validate()?;
    if magnitude.dim() != direction_deg.dim() {
        return Err(HogError::ShapeMismatch {
            mag: magnitude.dim(),
            dir: direction_deg.dim(),
        });
    }
    let want = (config.patch_h, config.patch_w);
    if magnitude.dim() != want {
        return Err(HogError::PatchShape {
            got: magnitude.dim(),
            want,
        });
    }
    let (ch, cw) = (config.cell_h(), config.cell_w());
    let mut grid = CellHistGrid::zeros(config.cells_t, config.cells_x, config.n_bins);
    for ((t, x), &mag) in magnitude.indexed_iter() {
        let bin = nearest_bin(direction_deg[[t, x]], config.n_bins);
        grid.cell_mut(t / ch, x / cw)[bin] += mag;
    }
    Ok(grid)
}

pub fn block_normalize(grid: &CellHistGrid, config: &HogConfig) -> CellHistGrid {
    let (bt, bx) = (config.block_t / 2, config.block_x / 2);
    let mut out = grid.clone();
    for ct in 0..grid.cells_t {
        for cx in 0..grid.cells_x {
            let mut sq = 0.0;
            for nt in ct.saturating_sub(bt)..=(ct + bt).min(grid.cells_t - 1) {
                for nx in cx.saturating_sub(bx)..=(cx + bx).min(grid.cells_x - 1) {
                    sq += grid.cell(nt, nx).iter().map(|v| v * v).sum::<f64>();
                }
            }
            let denom = sq.sqrt() + config.norm_epsilon;
            for v in out.cell_mut(ct, cx) {
                *v = if *v == 0.0 { 0.0 } else { *v / denom };
            }
        }
    }
    out
}

/// Unnormalized cell histograms of a patch.
pub fn hog_cells(patch: ArrayView2<'_, f64>, config: &HogConfig) -> Result<CellHistGrid, HogError> {
    config.validate()?;
    let want = (config.patch_h, config.patch_w);
    if patch.dim() != want {
        return Err(HogError::PatchShape {
            got: patch.dim(),
            want,
        });
    }
    let g = gradients(patch)?;
    cell_histograms(&g.magnitude, &g.direction_deg, config)
}

/// Applies the optional block normalization and flattens the grid.
pub fn finish_feature(grid: &CellHistGrid, config: &HogConfig) -> Vec<f64> {
    if config.normalize {
        block_normalize(grid, config).into_vec()
    } else {
        grid.data.clone()
    }
}

/// Full HOG descriptor, `cells_t·cells_x·n_bins` long.
pub fn hog_feature(patch: ArrayView2<'_, f64>, config: &HogConfig) -> Result<Vec<f64>, HogError> {
    Ok(finish_feature(&hog_cells(patch, config)?, config))
}
