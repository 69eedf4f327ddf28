//! Ground alignment, crop and depth normalization of raw lane volumes.

use std::ops::Range;

use ndarray::{s, Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{BScan, Volume};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocError {
    #[error("ground gate {start}..{end} is empty or outside the {n_time}-sample A-scan")]
    BadGate {
        start: usize,
        end: usize,
        n_time: usize,
    },
    #[error("crop window {start}..{end} exceeds the {n_time}-sample A-scan")]
    CropOutOfBounds {
        start: usize,
        end: usize,
        n_time: usize,
    },
    #[error("align target {0} lies outside the A-scan")]
    AlignTargetOutOfBounds(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocConfig {
    /// Half-open index range searched for the ground echo.
    pub ground_gate: (usize, usize),
    pub align_target_idx: usize,
    pub crop_start_idx: usize,
    pub crop_len: usize,
    pub depth_norm_epsilon: f64,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self {
            ground_gate: (50, 200),
            align_target_idx: 100,
            // last 330 samples of a 448-sample trace
            crop_start_idx: 118,
            crop_len: 330,
            depth_norm_epsilon: 1e-12,
        }
    }
}

impl PreprocConfig {
    pub fn gate(&self) -> Range<usize> {
        self.ground_gate.0..self.ground_gate.1
    }

    pub fn validate(&self, n_time: usize) -> Result<(), PreprocError> {
        let (start, end) = self.ground_gate;
        if start >= end || end > n_time {
            return Err(PreprocError::BadGate { start, end, n_time });
        }
        if self.align_target_idx >= n_time {
            return Err(PreprocError::AlignTargetOutOfBounds(self.align_target_idx));
        }
        let end = self.crop_start_idx + self.crop_len;
        if self.crop_len == 0 || end > n_time {
            return Err(PreprocError::CropOutOfBounds {
                start: self.crop_start_idx,
                end,
                n_time,
            });
        }
        Ok(())
    }
}

/// Index of the largest `|amplitude|` inside `gate`; ties go to the earliest
/// index. The gate is clipped to the series length.
///
/// Panics if the clipped gate is empty.
pub fn estimate_ground<'a>(ascan: impl IntoIterator<Item = &'a f64>, gate: Range<usize>) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in ascan.into_iter().enumerate().skip(gate.start).take(gate.len()) {
        let a = v.abs();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best.expect("ground gate must overlap the A-scan").0
}

/// Shifts every A-scan so its ground echo lands on `align_target_idx`,
/// zero-filling vacated samples.
pub fn align_ground(volume: &Volume, config: &PreprocConfig) -> Result<Volume, PreprocError> {
    let n_time = volume.n_time();
    config.validate(n_time)?;
    let target = config.align_target_idx as isize;
    let mut out = Array3::<f64>::zeros(volume.data().raw_dim());
    Zip::from(out.lanes_mut(Axis(2)))
        .and(volume.data().lanes(Axis(2)))
        .for_each(|mut dst, src| {
            let shift = target - estimate_ground(src.iter(), config.gate()) as isize;
            for t in 0..n_time as isize {
                let from = t - shift;
                if (0..n_time as isize).contains(&from) {
                    dst[t as usize] = src[from as usize];
                }
            }
        });
    Ok(volume.with_data(out).expect("shifted samples stay finite"))
}

/// Keeps `crop_len` samples from `crop_start_idx`, then z-scores every time
/// slice over the whole lane: `(x − mean) / (std + ε)` with the population
/// standard deviation.
pub fn crop_and_depth_normalize(
    volume: &Volume,
    config: &PreprocConfig,
) -> Result<Volume, PreprocError> {
    let n_time = volume.n_time();
    let (start, len) = (config.crop_start_idx, config.crop_len);
    if len == 0 || start + len > n_time {
        return Err(PreprocError::CropOutOfBounds {
            start,
            end: start + len,
            n_time,
        });
    }
    let mut out = volume.data().slice(s![.., .., start..start + len]).to_owned();
    let count = (out.dim().0 * out.dim().1) as f64;
    for t in 0..len {
        let mut slice = out.slice_mut(s![.., .., t]);
        let mean = slice.iter().sum::<f64>() / count;
        let var = slice.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / count;
        let denom = var.sqrt() + config.depth_norm_epsilon;
        slice.mapv_inplace(|x| {
            let centered = x - mean;
            if centered == 0.0 {
                0.0
            } else {
                centered / denom
            }
        });
    }
    Ok(volume.with_data(out).expect("normalized samples stay finite"))
}

/// Full chain: align, crop, depth-normalize.
pub fn preprocess(volume: &Volume, config: &PreprocConfig) -> Result<Volume, PreprocError> {
    crop_and_depth_normalize(&align_ground(volume, config)?, config)
}

/// Removes the per-row (time index) mean across the B-scan's columns.
pub fn background_normalize(bscan: &BScan) -> BScan {
    let mut data: Array2<f64> = bscan.data.clone();
    for mut row in data.rows_mut() {
        // incremental mean: exact when every column holds the same value
        let mut m = 0.0;
        for (k, &x) in row.iter().enumerate() {
            m += (x - m) / (k + 1) as f64;
        }
        row.mapv_inplace(|x| x - m);
    }
    BScan {
        data,
        direction: bscan.direction,
        origin: bscan.origin,
    }
}
