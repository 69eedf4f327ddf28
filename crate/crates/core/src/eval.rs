//! Halo-scored ROC curves (FAR in false alarms per m², object-level Pd) and
//! the normalized partial AUC used to compare experimental arms.

use std::collections::HashSet;
use std::io::Write;

use thiserror::Error;

use crate::volume::{Alarm, GroundTruth};

/// Default comparison window in false alarms per square meter.
pub const DEFAULT_FAR_WINDOW: (f64, f64) = (0.001, 0.05);

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("ground truth contains no threat objects")]
    NoThreats,
    #[error("total area must be positive and finite, got {0}")]
    BadArea(f64),
    #[error("alarm {0} has no confidence")]
    MissingConfidence(usize),
    #[error("alarm {0} has a NaN confidence")]
    NanConfidence(usize),
    #[error("invalid FAR window [{0}, {1}]")]
    BadWindow(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Alarms with confidence ≥ threshold are declared.
    pub threshold: f64,
    pub far_per_m2: f64,
    pub pd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Starts at the `(0, 0)` origin (threshold `+∞`); far ascending.
    pub points: Vec<RocPoint>,
    pub total_area_m2: f64,
    pub n_threat_objects: usize,
}

/// Threshold sweep over the distinct alarm confidences, highest first.
pub fn roc(alarms: &[Alarm], truths: &[GroundTruth], total_area_m2: f64) -> Result<RocCurve, EvalError> {
    if !(total_area_m2 > 0.0 && total_area_m2.is_finite()) {
        return Err(EvalError::BadArea(total_area_m2));
    }
    let n_threat_objects = truths.iter().filter(|t| t.is_threat).count();
    if n_threat_objects == 0 {
        return Err(EvalError::NoThreats);
    }
    let mut scored: Vec<(f64, &Alarm)> = Vec::with_capacity(alarms.len());
    for (i, a) in alarms.iter().enumerate() {
        match a.confidence {
            None => return Err(EvalError::MissingConfidence(i)),
            Some(c) if c.is_nan() => return Err(EvalError::NanConfidence(i)),
            Some(c) => scored.push((c, a)),
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        far_per_m2: 0.0,
        pd: 0.0,
    }];
    let mut detected: HashSet<(u32, u32)> = HashSet::new();
    let mut false_alarms = 0usize;
    let mut i = 0;
    while i < scored.len() {
        let tau = scored[i].0;
        while i < scored.len() && scored[i].0 == tau {
            let a = scored[i].1;
            match a.matched_object {
                Some(obj) => {
                    detected.insert((a.lane_id, obj));
                }
                None => false_alarms += 1,
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: tau,
            far_per_m2: false_alarms as f64 / total_area_m2,
            pd: detected.len() as f64 / n_threat_objects as f64,
        });
    }
    Ok(RocCurve {
        points,
        total_area_m2,
        n_threat_objects,
    })
}

/// Area under the step-interpolated curve over `[far_lo, far_hi]`, divided by
/// the window width. Between operating points Pd holds at the last achieved
/// value; past the final point it stays at the final Pd.
pub fn partial_auc(curve: &RocCurve, far_lo: f64, far_hi: f64) -> Result<f64, EvalError> {
    if !(far_lo < far_hi) || !far_lo.is_finite() || !far_hi.is_finite() || far_lo < 0.0 {
        return Err(EvalError::BadWindow(far_lo, far_hi));
    }
    let pts = &curve.points;
    let mut area = 0.0;
    for (k, p) in pts.iter().enumerate() {
        let seg_hi = pts.get(k + 1).map_or(f64::INFINITY, |q| q.far_per_m2);
        let lo = p.far_per_m2.max(far_lo);
        let hi = seg_hi.min(far_hi);
        if hi > lo {
            area += p.pd * (hi - lo);
        }
    }
    Ok(area / (far_hi - far_lo))
}

pub fn write_roc_csv<W: Write>(curve: &RocCurve, w: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(w);
    writer.write_record(["threshold", "far_per_m2", "pd"])?;
    for p in &curve.points {
        writer.write_record([p.threshold.to_string(), p.far_per_m2.to_string(), p.pd.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}
