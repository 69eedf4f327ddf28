//! Per-alarm feature vectors: a cross-track and a down-track HOG descriptor,
//! each optionally averaged over parallel B-scans on either side of the alarm,
//! concatenated as `[cross ‖ down]`.
//!
//! With `avg_halfcount = 0` and block normalization on this is the original
//! HOG pipeline feature; `avg_halfcount = 3` without normalization is gprHOG.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hog::{finish_feature, hog_cells, CellHistGrid, HogConfig, HogError};
use crate::volume::{clamp_index, extract_bscan, extract_patch, BScan, Direction, ExtractError, Volume};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Hog(#[from] HogError),
    #[error("averaging half-count {requested} exceeds the {available} prepared B-scans per side")]
    HalfcountTooLarge { requested: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GprHogConfig {
    pub hog: HogConfig,
    /// Parallel B-scans averaged on each side of the alarm.
    pub avg_halfcount: usize,
    /// B-scans span `2·bscan_half_width + 1` A-scans.
    pub bscan_half_width: usize,
}

impl Default for GprHogConfig {
    fn default() -> Self {
        Self {
            hog: HogConfig::default(),
            avg_halfcount: 0,
            bscan_half_width: 10,
        }
    }
}

impl GprHogConfig {
    pub fn feature_len(&self) -> usize {
        2 * self.hog.feature_len()
    }
}

/// B-scans through an alarm and its parallel neighbours, for both directions.
#[derive(Debug, Clone)]
pub struct AlarmContext {
    /// `bscans[d][o + halfcount]` for `Direction::BOTH[d]` and offset `o`.
    bscans: [Vec<BScan>; 2],
    halfcount: usize,
}

impl AlarmContext {
    pub fn new(
        volume: &Volume,
        grid_pos: (usize, usize),
        halfcount: usize,
        half_width: usize,
    ) -> Result<Self, FeatureError> {
        let (down, cross) = grid_pos;
        let mut bscans: [Vec<BScan>; 2] = [Vec::new(), Vec::new()];
        for (slot, dir) in bscans.iter_mut().zip(Direction::BOTH) {
            for o in -(halfcount as isize)..=halfcount as isize {
                // neighbours of a down-track B-scan sit at adjacent cross-track
                // indices, and vice versa
                let (d, c) = match dir {
                    Direction::DownTrack => {
                        (down, clamp_index(cross, o, volume.n_cross().max(1)))
                    }
                    Direction::CrossTrack => (clamp_index(down, o, volume.n_down().max(1)), cross),
                };
                if down >= volume.n_down() || cross >= volume.n_cross() {
                    return Err(ExtractError::CenterOutOfBounds {
                        down,
                        cross,
                        n_down: volume.n_down(),
                        n_cross: volume.n_cross(),
                    }
                    .into());
                }
                slot.push(extract_bscan(volume, dir, d, c, half_width)?);
            }
        }
        Ok(Self { bscans, halfcount })
    }

    pub fn halfcount(&self) -> usize {
        self.halfcount
    }

    pub fn n_time(&self) -> usize {
        self.bscans[0][0].n_time()
    }

    /// Unnormalized cell histograms of the patch at `keypoint_t` in every
    /// prepared B-scan.
    pub fn cell_grids(&self, keypoint_t: usize, hog: &HogConfig) -> Result<GridSet, FeatureError> {
        let mut out: [Vec<CellHistGrid>; 2] = [Vec::new(), Vec::new()];
        for (dst, scans) in out.iter_mut().zip(&self.bscans) {
            for b in scans {
                let patch = extract_patch(b, keypoint_t, hog.patch_h, hog.patch_w)?;
                dst.push(hog_cells(patch.view(), hog)?);
            }
        }
        Ok(GridSet {
            grids: out,
            halfcount: self.halfcount,
        })
    }
}

/// Cell histograms at one keypoint for all offsets and both directions.
#[derive(Debug, Clone)]
pub struct GridSet {
    grids: [Vec<CellHistGrid>; 2],
    halfcount: usize,
}

impl GridSet {
    fn averaged(&self, dir_slot: usize, config: &GprHogConfig) -> Result<Vec<f64>, FeatureError> {
        let a = config.avg_halfcount;
        if a > self.halfcount {
            return Err(FeatureError::HalfcountTooLarge {
                requested: a,
                available: self.halfcount,
            });
        }
        let members = &self.grids[dir_slot][self.halfcount - a..=self.halfcount + a];
        let mut acc = vec![0.0; config.hog.feature_len()];
        for g in members {
            for (s, v) in acc.iter_mut().zip(finish_feature(g, &config.hog)) {
                *s += v;
            }
        }
        let n = members.len() as f64;
        acc.iter_mut().for_each(|v| *v /= n);
        Ok(acc)
    }

    pub fn directional(&self, direction: Direction, config: &GprHogConfig) -> Result<Vec<f64>, FeatureError> {
        let slot = Direction::BOTH.iter().position(|d| *d == direction).unwrap();
        self.averaged(slot, config)
    }

    /// `[cross-track ‖ down-track]`.
    pub fn alarm_feature(&self, config: &GprHogConfig) -> Result<Vec<f64>, FeatureError> {
        let mut out = self.averaged(0, config)?;
        out.extend(self.averaged(1, config)?);
        Ok(out)
    }
}

/// HOG of the B-scan along `direction` through the alarm, averaged over the
/// `2·avg_halfcount + 1` parallel B-scans (edge offsets are clamped).
pub fn directional_feature(
    volume: &Volume,
    alarm_grid_pos: (usize, usize),
    keypoint_t: usize,
    direction: Direction,
    config: &GprHogConfig,
) -> Result<Vec<f64>, FeatureError> {
    AlarmContext::new(volume, alarm_grid_pos, config.avg_halfcount, config.bscan_half_width)?
        .cell_grids(keypoint_t, &config.hog)?
        .directional(direction, config)
}

pub fn alarm_feature(
    volume: &Volume,
    alarm_grid_pos: (usize, usize),
    keypoint_t: usize,
    config: &GprHogConfig,
) -> Result<Vec<f64>, FeatureError> {
    AlarmContext::new(volume, alarm_grid_pos, config.avg_halfcount, config.bscan_half_width)?
        .cell_grids(keypoint_t, &config.hog)?
        .alarm_feature(config)
}
