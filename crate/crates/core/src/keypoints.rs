//! Maximum Smoothed Energy Keypoints (MSEK).
//!
//! Keypoints are temporal positions on an alarm's central A-scan where the
//! boxcar-smoothed energy has a local maximum. They pick where training
//! sub-images are cut for threat alarms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::BScan;

#[derive(Debug, Error, PartialEq)]
pub enum KeypointError {
    #[error("A-scan of {len} samples is shorter than the {window}-sample smoothing window")]
    SeriesTooShort { len: usize, window: usize },
    #[error("smooth_halfwidth must be at least 1")]
    ZeroHalfwidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsekConfig {
    pub smooth_halfwidth: usize,
    pub max_keypoints: usize,
    pub min_separation: usize,
}

impl Default for MsekConfig {
    fn default() -> Self {
        Self {
            smooth_halfwidth: 5,
            max_keypoints: 16,
            min_separation: 9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub t_idx: usize,
    pub energy: f64,
}

/// Moving average of the squared series over `[t − hw, t + hw]`, truncated at
/// the borders and divided by the number of samples actually covered.
pub fn smoothed_energy(ascan: &[f64], config: &MsekConfig) -> Result<Vec<f64>, KeypointError> {
    let hw = config.smooth_halfwidth;
    if hw == 0 {
        return Err(KeypointError::ZeroHalfwidth);
    }
    let window = 2 * hw + 1;
    if ascan.len() < window {
        return Err(KeypointError::SeriesTooShort {
            len: ascan.len(),
            window,
        });
    }
    let squared: Vec<f64> = ascan.iter().map(|x| x * x).collect();
    Ok((0..squared.len())
        .map(|t| {
            let lo = t.saturating_sub(hw);
            let hi = (t + hw).min(squared.len() - 1);
            squared[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

/// Local maxima of an energy series, strongest first, with greedy
/// suppression of anything closer than `min_separation` to an accepted peak.
pub fn select_peaks(energy: &[f64], config: &MsekConfig) -> Vec<Keypoint> {
    let mut peaks: Vec<Keypoint> = (1..energy.len().saturating_sub(1))
        .filter(|&t| energy[t] > energy[t - 1] && energy[t] >= energy[t + 1])
        .map(|t| Keypoint {
            t_idx: t,
            energy: energy[t],
        })
        .collect();
    if peaks.is_empty() {
        let Some(first) = energy.first() else {
            return Vec::new();
        };
        let mut best = Keypoint {
            t_idx: 0,
            energy: *first,
        };
        for (t, &e) in energy.iter().enumerate() {
            if e > best.energy {
                best = Keypoint { t_idx: t, energy: e };
            }
        }
        return vec![best];
    }
    // stable: equal energies keep ascending time order
    peaks.sort_by(|a, b| b.energy.total_cmp(&a.energy));
    let mut accepted: Vec<Keypoint> = Vec::new();
    for p in peaks {
        if accepted.len() == config.max_keypoints {
            break;
        }
        if accepted
            .iter()
            .all(|a| a.t_idx.abs_diff(p.t_idx) >= config.min_separation)
        {
            accepted.push(p);
        }
    }
    accepted
}

/// MSEK on a B-scan that the caller has already background-normalized.
pub fn msek(bscan: &BScan, config: &MsekConfig) -> Result<Vec<Keypoint>, KeypointError> {
    let central = bscan.central_ascan().to_vec();
    Ok(select_peaks(&smoothed_energy(&central, config)?, config))
}

/// First `min(k, len)` keypoints of an energy-sorted list.
pub fn top_k(keypoints: &[Keypoint], k: usize) -> Vec<Keypoint> {
    keypoints[..k.min(keypoints.len())].to_vec()
}
