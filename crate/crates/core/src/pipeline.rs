//! Prescreening, halo association, training-set construction, top-L scoring
//! and lane/object cross-validation.
//!
//! Feature rows for every alarm are computed once per run (for any number of
//! feature configurations sharing the same patch geometry) and reused by all
//! folds; only the forests differ between folds.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{AlarmContext, FeatureError, GprHogConfig};
use crate::forest::{self, Forest, ForestConfig, ForestError};
use crate::keypoints::{msek, top_k, KeypointError, MsekConfig};
use crate::preprocess::background_normalize;
use crate::synth::splitmix64;
use crate::volume::{extract_bscan, Alarm, Direction, ExtractError, GroundTruth, Volume};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("feature extraction: {0}")]
    Feature(#[from] FeatureError),
    #[error("keypoints: {0}")]
    Keypoint(#[from] KeypointError),
    #[error("B-scan extraction: {0}")]
    Extract(#[from] ExtractError),
    #[error("forest: {0}")]
    Forest(#[from] ForestError),
    #[error("object-based CV needs at least {folds} threat objects, found {objects} ({} short)", folds - objects)]
    TooFewObjects { objects: usize, folds: usize },
    #[error("training set for fold {fold} has no {missing} rows")]
    SingleClassFold { fold: usize, missing: &'static str },
    #[error("fold {fold}: training row from alarm {alarm} overlaps the test fold")]
    FoldLeak { fold: usize, alarm: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CvScheme {
    #[serde(rename = "LBCV")]
    Lbcv,
    #[serde(rename = "OBCV")]
    Obcv,
}

impl CvScheme {
    pub const ALL: [CvScheme; 2] = [CvScheme::Lbcv, CvScheme::Obcv];

    pub fn name(self) -> &'static str {
        match self {
            CvScheme::Lbcv => "LBCV",
            CvScheme::Obcv => "OBCV",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub scheme: CvScheme,
    pub n_folds_obcv: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            scheme: CvScheme::Lbcv,
            n_folds_obcv: 10,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrescreenConfig {
    pub smooth_halfwidth_cells: usize,
    /// Smoothed-energy percentile a local maximum must reach (0–100).
    pub threshold_percentile: f64,
    pub min_alarm_separation_m: f64,
}

impl Default for PrescreenConfig {
    fn default() -> Self {
        Self {
            smooth_halfwidth_cells: 2,
            threshold_percentile: 87.5,
            min_alarm_separation_m: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub prescreen: PrescreenConfig,
    pub halo_m: f64,
    pub train_threat_keypoints: usize,
    pub train_nonthreat_stride: usize,
    pub test_stride: usize,
    pub top_l: usize,
    /// Half-width of the down-track B-scan whose central A-scan feeds MSEK.
    pub msek_context_halfwidth: usize,
    pub cv: CvConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prescreen: PrescreenConfig::default(),
            halo_m: 0.25,
            train_threat_keypoints: 4,
            train_nonthreat_stride: 4,
            test_stride: 4,
            top_l: 3,
            msek_context_halfwidth: 10,
            cv: CvConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if !(self.halo_m > 0.0 && self.halo_m.is_finite()) {
            return bad("halo_m must be positive");
        }
        if self.top_l == 0 {
            return bad("top_l must be at least 1");
        }
        if self.train_nonthreat_stride == 0 || self.test_stride == 0 {
            return bad("strides must be at least 1");
        }
        if self.train_threat_keypoints == 0 {
            return bad("train_threat_keypoints must be at least 1");
        }
        let p = self.prescreen.threshold_percentile;
        if !(0.0..=100.0).contains(&p) {
            return bad("threshold_percentile must lie in [0, 100]");
        }
        if !(self.prescreen.min_alarm_separation_m >= 0.0) {
            return bad("min_alarm_separation_m must be non-negative");
        }
        if self.cv.n_folds_obcv < 2 {
            return bad("n_folds_obcv must be at least 2");
        }
        Ok(())
    }
}

/// A preprocessed lane with its ground truth.
#[derive(Debug, Clone)]
pub struct Lane {
    pub lane_id: u32,
    pub volume: Volume,
    pub truths: Vec<GroundTruth>,
}

/// Total squared amplitude of every A-scan, box-smoothed over
/// `(2h+1) × (2h+1)` grid cells (truncated at lane edges).
pub fn energy_map(volume: &Volume, smooth_halfwidth: usize) -> Vec<Vec<f64>> {
    let (nd, nc) = (volume.n_down(), volume.n_cross());
    let raw: Vec<Vec<f64>> = (0..nd)
        .map(|d| (0..nc).map(|c| volume.ascan(d, c).iter().map(|x| x * x).sum()).collect())
        .collect();
    let h = smooth_halfwidth;
    (0..nd)
        .map(|d| {
            (0..nc)
                .map(|c| {
                    let (d0, d1) = (d.saturating_sub(h), (d + h).min(nd - 1));
                    let (c0, c1) = (c.saturating_sub(h), (c + h).min(nc - 1));
                    let mut s = 0.0;
                    for row in &raw[d0..=d1] {
                        s += row[c0..=c1].iter().sum::<f64>();
                    }
                    s / ((d1 - d0 + 1) * (c1 - c0 + 1)) as f64
                })
                .collect()
        })
        .collect()
}

/// Nearest-rank percentile of a non-empty sample.
fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Energy-map local maxima at or above the configured percentile, greedily
/// thinned so no two alarms are closer than `min_alarm_separation_m`.
pub fn prescreen(volume: &Volume, lane_id: u32, config: &PrescreenConfig) -> Vec<Alarm> {
    let (nd, nc) = (volume.n_down(), volume.n_cross());
    if nd == 0 || nc == 0 {
        return Vec::new();
    }
    let e = energy_map(volume, config.smooth_halfwidth_cells);
    let flat: Vec<f64> = e.iter().flatten().copied().collect();
    let thr = percentile(&flat, config.threshold_percentile);

    let mut peaks: Vec<(f64, usize, usize)> = Vec::new();
    for d in 0..nd {
        for c in 0..nc {
            let v = e[d][c];
            if v < thr || v <= 0.0 {
                continue;
            }
            // plateaus resolve to their first cell in raster order
            let mut is_max = true;
            'nbr: for dd in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dd == 0 && dc == 0 {
                        continue;
                    }
                    let (Some(d2), Some(c2)) = (d.checked_add_signed(dd), c.checked_add_signed(dc)) else {
                        continue;
                    };
                    if d2 >= nd || c2 >= nc {
                        continue;
                    }
                    let earlier = (d2, c2) < (d, c);
                    let n = e[d2][c2];
                    if (earlier && n >= v) || (!earlier && n > v) {
                        is_max = false;
                        break 'nbr;
                    }
                }
            }
            if is_max {
                peaks.push((v, d, c));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut kept: Vec<(usize, usize)> = Vec::new();
    let sep = config.min_alarm_separation_m;
    for &(_, d, c) in &peaks {
        let (pd, pc) = volume.position_m(d, c);
        let clear = kept.iter().all(|&(kd, kc)| {
            let (qd, qc) = volume.position_m(kd, kc);
            (pd - qd).hypot(pc - qc) >= sep
        });
        if clear {
            kept.push((d, c));
        }
    }
    kept.sort_unstable();
    kept.into_iter()
        .map(|(d, c)| {
            let (down_m, cross_m) = volume.position_m(d, c);
            Alarm {
                lane_id,
                down_m,
                cross_m,
                grid_pos: (d, c),
                matched_object: None,
                confidence: None,
            }
        })
        .collect()
}

/// Matches each alarm to the nearest threat truth of its lane within
/// `halo_m` (inclusive). Clutter truths never match.
pub fn associate(alarms: &[Alarm], truths: &[GroundTruth], halo_m: f64) -> Vec<Alarm> {
    alarms
        .iter()
        .map(|a| {
            let mut best: Option<(f64, u32)> = None;
            for t in truths.iter().filter(|t| t.is_threat && t.lane_id == a.lane_id) {
                let dist = (a.down_m - t.down_m).hypot(a.cross_m - t.cross_m);
                if dist <= halo_m && best.is_none_or(|(bd, _)| dist < bd) {
                    best = Some((dist, t.object_id));
                }
            }
            Alarm {
                matched_object: best.map(|(_, id)| id),
                ..a.clone()
            }
        })
        .collect()
}

/// Prescreen and associate every lane; alarms are concatenated in lane order.
pub fn detect(lanes: &[Lane], config: &PipelineConfig) -> Vec<Alarm> {
    lanes
        .iter()
        .flat_map(|l| associate(&prescreen(&l.volume, l.lane_id, &config.prescreen), &l.truths, config.halo_m))
        .collect()
}

/// Centers `t = k·stride`, `k = 1, 2, …` while `t < n_time`. Patches around
/// centers near the end are shifted inward, so every center is usable.
pub fn strided_centers(n_time: usize, stride: usize) -> Vec<usize> {
    (1..).map(|k| k * stride).take_while(|&t| t < n_time).collect()
}

/// MSEK on the background-normalized down-track B-scan through the alarm,
/// truncated to the strongest `train_threat_keypoints`.
pub fn training_keypoints(
    volume: &Volume,
    grid_pos: (usize, usize),
    pipeline: &PipelineConfig,
    msek_config: &MsekConfig,
) -> Result<Vec<usize>, PipelineError> {
    let ctx = extract_bscan(
        volume,
        Direction::DownTrack,
        grid_pos.0,
        grid_pos.1,
        pipeline.msek_context_halfwidth,
    )?;
    let kps = msek(&background_normalize(&ctx), msek_config)?;
    Ok(top_k(&kps, pipeline.train_threat_keypoints)
        .into_iter()
        .map(|k| k.t_idx)
        .collect())
}

/// Every feature row one alarm contributes: `features[i]` sits at `times[i]`;
/// `train` and `test` index into it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlarmRows {
    pub times: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Configs sharing a patch geometry and B-scan width can share cell grids.
fn geometry_groups(configs: &[GprHogConfig]) -> Vec<Vec<usize>> {
    let key = |c: &GprHogConfig| {
        let mut hog = c.hog.clone();
        hog.normalize = false;
        hog.norm_epsilon = 0.0;
        (hog, c.bscan_half_width)
    };
    let mut groups: Vec<(_, Vec<usize>)> = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        let k = key(c);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, members)) => members.push(i),
            None => groups.push((k, vec![i])),
        }
    }
    groups.into_iter().map(|(_, m)| m).collect()
}

/// Training rows (MSEK keypoints for threats, strided sweep otherwise) and
/// test rows (strided sweep) of one alarm, for each config in `configs`.
pub fn alarm_rows(
    volume: &Volume,
    alarm: &Alarm,
    configs: &[GprHogConfig],
    pipeline: &PipelineConfig,
    msek_config: &MsekConfig,
) -> Result<Vec<AlarmRows>, PipelineError> {
    let n_time = volume.n_time();
    let test_t = strided_centers(n_time, pipeline.test_stride);
    let train_t = if alarm.is_threat() {
        training_keypoints(volume, alarm.grid_pos, pipeline, msek_config)?
    } else {
        strided_centers(n_time, pipeline.train_nonthreat_stride)
    };
    let mut times: Vec<usize> = test_t.iter().chain(&train_t).copied().collect();
    times.sort_unstable();
    times.dedup();
    let locate = |t: &usize| times.binary_search(t).expect("time collected above");
    let train: Vec<usize> = train_t.iter().map(locate).collect();
    let test: Vec<usize> = test_t.iter().map(locate).collect();

    let mut out: Vec<AlarmRows> = configs
        .iter()
        .map(|_| AlarmRows {
            times: times.clone(),
            features: Vec::with_capacity(times.len()),
            train: train.clone(),
            test: test.clone(),
        })
        .collect();
    for group in geometry_groups(configs) {
        let lead = &configs[group[0]];
        let halfcount = group.iter().map(|&i| configs[i].avg_halfcount).max().unwrap_or(0);
        let ctx = AlarmContext::new(volume, alarm.grid_pos, halfcount, lead.bscan_half_width)?;
        for &t in &times {
            let grids = ctx.cell_grids(t, &lead.hog)?;
            for &i in &group {
                out[i].features.push(grids.alarm_feature(&configs[i])?);
            }
        }
    }
    Ok(out)
}

/// Rows for every alarm (outer index: config, inner: alarm). `lane_of[i]`
/// indexes `lanes` for alarm `i`.
pub fn compute_rows(
    lanes: &[Lane],
    alarms: &[Alarm],
    configs: &[GprHogConfig],
    pipeline: &PipelineConfig,
    msek_config: &MsekConfig,
) -> Result<Vec<Vec<AlarmRows>>, PipelineError> {
    let lane_index: HashMap<u32, usize> = lanes.iter().enumerate().map(|(i, l)| (l.lane_id, i)).collect();
    let per_alarm: Vec<Vec<AlarmRows>> = alarms
        .par_iter()
        .map(|a| {
            let lane = &lanes[lane_index[&a.lane_id]];
            alarm_rows(&lane.volume, a, configs, pipeline, msek_config)
        })
        .collect::<Result<_, _>>()?;
    let mut out: Vec<Vec<AlarmRows>> = configs.iter().map(|_| Vec::with_capacity(alarms.len())).collect();
    for rows in per_alarm {
        for (dst, r) in out.iter_mut().zip(rows) {
            dst.push(r);
        }
    }
    Ok(out)
}

/// Which alarm (and keypoint) produced a training row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowSource {
    pub alarm: usize,
    pub t_idx: usize,
}

/// Feature rows, labels and where each row came from.
pub type TrainingRows = (Vec<Vec<f64>>, Vec<bool>, Vec<RowSource>);

pub fn build_training_set(
    volume: &Volume,
    alarms: &[Alarm],
    feature_config: &GprHogConfig,
    pipeline: &PipelineConfig,
    msek_config: &MsekConfig,
) -> Result<TrainingRows, PipelineError> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut prov = Vec::new();
    for (i, a) in alarms.iter().enumerate() {
        let mut rows = alarm_rows(volume, a, std::slice::from_ref(feature_config), pipeline, msek_config)?;
        let rows = rows.pop().expect("one config");
        for &r in &rows.train {
            x.push(rows.features[r].clone());
            y.push(a.is_threat());
            prov.push(RowSource {
                alarm: i,
                t_idx: rows.times[r],
            });
        }
    }
    Ok((x, y, prov))
}

/// Sum of the `l` largest values, added largest first.
pub fn top_l_sum(confidences: &[f64], l: usize) -> f64 {
    let mut v = confidences.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.iter().take(l).sum()
}

/// Forest confidence at every strided center, aggregated over the top L.
pub fn score_alarm(
    volume: &Volume,
    alarm: &Alarm,
    forest: &Forest,
    feature_config: &GprHogConfig,
    pipeline: &PipelineConfig,
) -> Result<f64, PipelineError> {
    let ctx = AlarmContext::new(
        volume,
        alarm.grid_pos,
        feature_config.avg_halfcount,
        feature_config.bscan_half_width,
    )?;
    let mut conf = Vec::new();
    for t in strided_centers(volume.n_time(), pipeline.test_stride) {
        let f = ctx.cell_grids(t, &feature_config.hog)?.alarm_feature(feature_config)?;
        conf.push(forest.predict(&f)?);
    }
    Ok(top_l_sum(&conf, pipeline.top_l))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Folds {
    pub scheme: CvScheme,
    pub n_folds: usize,
    pub fold_of: Vec<usize>,
}

/// LBCV: one fold per distinct lane, in lane-id order. OBCV: threat objects
/// shuffled by the seeded RNG and dealt round-robin; alarms follow their
/// matched object; non-threat alarms are shuffled by the same RNG and dealt
/// round-robin.
pub fn make_folds(alarms: &[Alarm], truths: &[GroundTruth], cv: &CvConfig) -> Result<Folds, PipelineError> {
    match cv.scheme {
        CvScheme::Lbcv => {
            let mut lanes: Vec<u32> = alarms
                .iter()
                .map(|a| a.lane_id)
                .chain(truths.iter().map(|t| t.lane_id))
                .collect();
            lanes.sort_unstable();
            lanes.dedup();
            let fold_of = alarms
                .iter()
                .map(|a| lanes.binary_search(&a.lane_id).unwrap())
                .collect();
            Ok(Folds {
                scheme: cv.scheme,
                n_folds: lanes.len(),
                fold_of,
            })
        }
        CvScheme::Obcv => {
            let n = cv.n_folds_obcv;
            let mut objects: Vec<(u32, u32)> = truths
                .iter()
                .filter(|t| t.is_threat)
                .map(|t| (t.lane_id, t.object_id))
                .collect();
            objects.sort_unstable();
            objects.dedup();
            if objects.len() < n {
                return Err(PipelineError::TooFewObjects {
                    objects: objects.len(),
                    folds: n,
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cv.seed);
            objects.shuffle(&mut rng);
            let object_fold: HashMap<(u32, u32), usize> =
                objects.iter().enumerate().map(|(i, &o)| (o, i % n)).collect();
            let mut non_threats: Vec<usize> = (0..alarms.len()).filter(|&i| !alarms[i].is_threat()).collect();
            non_threats.shuffle(&mut rng);
            let mut fold_of = vec![0; alarms.len()];
            for (k, &i) in non_threats.iter().enumerate() {
                fold_of[i] = k % n;
            }
            for (i, a) in alarms.iter().enumerate() {
                if let Some(obj) = a.matched_object {
                    fold_of[i] = object_fold[&(a.lane_id, obj)];
                }
            }
            Ok(Folds {
                scheme: cv.scheme,
                n_folds: n,
                fold_of,
            })
        }
    }
}

/// Fails if any training row shares a fold, lane (LBCV) or threat object
/// (OBCV) with the alarms under test.
fn audit_fold(alarms: &[Alarm], folds: &Folds, fold: usize, train_alarms: &[usize]) -> Result<(), PipelineError> {
    let test = (0..alarms.len()).filter(|&i| folds.fold_of[i] == fold);
    let mut lanes = HashSet::new();
    let mut objects = HashSet::new();
    for i in test {
        lanes.insert(alarms[i].lane_id);
        if let Some(o) = alarms[i].matched_object {
            objects.insert((alarms[i].lane_id, o));
        }
    }
    for &i in train_alarms {
        let a = &alarms[i];
        let leak = folds.fold_of[i] == fold
            || match folds.scheme {
                CvScheme::Lbcv => lanes.contains(&a.lane_id),
                CvScheme::Obcv => a.matched_object.is_some_and(|o| objects.contains(&(a.lane_id, o))),
            };
        if leak {
            return Err(PipelineError::FoldLeak { fold, alarm: i });
        }
    }
    Ok(())
}

pub fn fold_forest_config(base: &ForestConfig, fold: usize) -> ForestConfig {
    ForestConfig {
        seed: splitmix64(base.seed ^ (fold as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)),
        ..base.clone()
    }
}

/// Per-alarm confidences at each test center, every alarm scored by the
/// forest of its own fold trained on all other folds.
pub fn cross_validate(
    alarms: &[Alarm],
    rows: &[AlarmRows],
    folds: &Folds,
    forest_config: &ForestConfig,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    let mut x: Vec<&[f64]> = Vec::new();
    let mut y = Vec::new();
    let mut row_alarm = Vec::new();
    for (i, a) in alarms.iter().enumerate() {
        for &r in &rows[i].train {
            x.push(&rows[i].features[r]);
            y.push(a.is_threat());
            row_alarm.push(i);
        }
    }
    let dataset = forest::Dataset::new(&x, &y)?;

    let mut conf: Vec<Vec<f64>> = vec![Vec::new(); alarms.len()];
    for fold in 0..folds.n_folds {
        let test: Vec<usize> = (0..alarms.len()).filter(|&i| folds.fold_of[i] == fold).collect();
        if test.is_empty() {
            continue;
        }
        let train_rows: Vec<usize> = (0..x.len()).filter(|&k| folds.fold_of[row_alarm[k]] != fold).collect();
        let mut sources: Vec<usize> = train_rows.iter().map(|&k| row_alarm[k]).collect();
        sources.dedup();
        audit_fold(alarms, folds, fold, &sources)?;
        if !train_rows.iter().any(|&k| y[k]) {
            return Err(PipelineError::SingleClassFold { fold, missing: "threat" });
        }
        if train_rows.iter().all(|&k| y[k]) {
            return Err(PipelineError::SingleClassFold {
                fold,
                missing: "non-threat",
            });
        }
        let forest = forest::train_subset(&dataset, &train_rows, &fold_forest_config(forest_config, fold))?;
        let scored: Vec<Vec<f64>> = test
            .par_iter()
            .map(|&i| {
                rows[i]
                    .test
                    .iter()
                    .map(|&r| forest.predict(&rows[i].features[r]))
                    .collect::<Result<Vec<f64>, _>>()
            })
            .collect::<Result<_, _>>()?;
        for (&i, c) in test.iter().zip(scored) {
            conf[i] = c;
        }
    }
    Ok(conf)
}

/// Alarms with their top-L confidence filled in.
pub fn apply_top_l(alarms: &[Alarm], center_confidences: &[Vec<f64>], top_l: usize) -> Vec<Alarm> {
    alarms
        .iter()
        .zip(center_confidences)
        .map(|(a, c)| Alarm {
            confidence: Some(top_l_sum(c, top_l)),
            ..a.clone()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CvRun {
    pub alarms: Vec<Alarm>,
    pub folds: Folds,
}

/// Prescreen, associate, build rows, cross-validate and aggregate for one
/// feature configuration. Lanes must already be preprocessed.
pub fn run_cv(
    lanes: &[Lane],
    feature_config: &GprHogConfig,
    forest_config: &ForestConfig,
    pipeline: &PipelineConfig,
    msek_config: &MsekConfig,
) -> Result<CvRun, PipelineError> {
    pipeline.validate()?;
    let alarms = detect(lanes, pipeline);
    let truths: Vec<GroundTruth> = lanes.iter().flat_map(|l| l.truths.iter().cloned()).collect();
    let folds = make_folds(&alarms, &truths, &pipeline.cv)?;
    let rows = compute_rows(lanes, &alarms, std::slice::from_ref(feature_config), pipeline, msek_config)?
        .pop()
        .expect("one config");
    let conf = cross_validate(&alarms, &rows, &folds, forest_config)?;
    Ok(CvRun {
        alarms: apply_top_l(&alarms, &conf, pipeline.top_l),
        folds,
    })
}

/// `lane_id,down_m,cross_m,label,matched_object,confidence,fold`.
pub fn write_scored_csv<W: Write>(alarms: &[Alarm], folds: &Folds, w: W) -> Result<(), csv::Error> {
    let mut writer = csv::Writer::from_writer(w);
    writer.write_record(["lane_id", "down_m", "cross_m", "label", "matched_object", "confidence", "fold"])?;
    for (a, fold) in alarms.iter().zip(&folds.fold_of) {
        writer.write_record([
            a.lane_id.to_string(),
            a.down_m.to_string(),
            a.cross_m.to_string(),
            if a.is_threat() { "threat" } else { "non_threat" }.to_string(),
            a.matched_object.map(|o| o.to_string()).unwrap_or_default(),
            a.confidence.map(|c| c.to_string()).unwrap_or_default(),
            fold.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{Node, Tree};
    use crate::preprocess::{preprocess, PreprocConfig};
    use crate::synth::{generate_lane, SynthConfig};
    use ndarray::Array3;
    use rand::Rng;

    fn alarm_at(lane_id: u32, down_m: f64, cross_m: f64) -> Alarm {
        Alarm {
            lane_id,
            down_m,
            cross_m,
            grid_pos: (0, 0),
            matched_object: None,
            confidence: None,
        }
    }

    fn truth(lane_id: u32, object_id: u32, down_m: f64, cross_m: f64, is_threat: bool) -> GroundTruth {
        GroundTruth {
            lane_id,
            object_id,
            down_m,
            cross_m,
            depth_m: 0.2,
            is_threat,
        }
    }

    #[test]
    fn halo_is_inclusive() {
        let truths = vec![truth(0, 3, 1.0, 0.5, true)];
        let inside = associate(&[alarm_at(0, 1.24, 0.5)], &truths, 0.25);
        let edge = associate(&[alarm_at(0, 1.0, 0.75)], &truths, 0.25);
        let outside = associate(&[alarm_at(0, 1.26, 0.5)], &truths, 0.25);
        assert_eq!(inside[0].matched_object, Some(3));
        assert_eq!(edge[0].matched_object, Some(3));
        assert_eq!(outside[0].matched_object, None);
    }

    #[test]
    fn nearest_threat_wins_and_clutter_never_matches() {
        let truths = vec![
            truth(0, 1, 1.0, 0.5, true),
            truth(0, 2, 1.2, 0.5, true),
            truth(0, 3, 1.15, 0.5, false),
            truth(1, 4, 1.15, 0.5, true),
        ];
        let out = associate(&[alarm_at(0, 1.15, 0.5), alarm_at(0, 3.0, 0.5)], &truths, 0.25);
        assert_eq!(out[0].matched_object, Some(2));
        assert_eq!(out[1].matched_object, None);
    }

    fn flat_volume(data: Array3<f64>) -> Volume {
        Volume::new(data, 0.1, 0.05, 0.05).unwrap()
    }

    #[test]
    fn zero_volume_has_no_alarms() {
        let v = flat_volume(Array3::zeros((20, 10, 30)));
        assert!(prescreen(&v, 0, &PrescreenConfig::default()).is_empty());
    }

    #[test]
    fn full_percentile_keeps_only_the_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = flat_volume(Array3::from_shape_simple_fn((30, 12, 20), || rng.gen_range(-1.0..1.0)));
        let cfg = PrescreenConfig {
            threshold_percentile: 100.0,
            min_alarm_separation_m: 0.0,
            ..PrescreenConfig::default()
        };
        let alarms = prescreen(&v, 0, &cfg);
        assert_eq!(alarms.len(), 1);
        let e = energy_map(&v, cfg.smooth_halfwidth_cells);
        let max = e.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (d, c) = alarms[0].grid_pos;
        assert_eq!(e[d][c], max);
    }

    #[test]
    fn alarms_respect_separation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = flat_volume(Array3::from_shape_simple_fn((60, 20, 10), || rng.gen_range(-1.0..1.0)));
        let cfg = PrescreenConfig {
            smooth_halfwidth_cells: 1,
            threshold_percentile: 50.0,
            min_alarm_separation_m: 0.3,
        };
        let alarms = prescreen(&v, 0, &cfg);
        assert!(alarms.len() > 1);
        for (i, a) in alarms.iter().enumerate() {
            for b in &alarms[i + 1..] {
                assert!((a.down_m - b.down_m).hypot(a.cross_m - b.cross_m) >= 0.3);
            }
        }
    }

    #[test]
    fn synthetic_threat_is_prescreened() {
        let cfg = SynthConfig {
            n_threats: 1,
            n_clutter: 0,
            lane_length_m: 6.0,
            ..SynthConfig::default()
        };
        let (vol, truths) = generate_lane(&cfg, 0).unwrap();
        let vol = preprocess(&vol, &PreprocConfig::default()).unwrap();
        let pc = PrescreenConfig {
            threshold_percentile: 90.0,
            ..PrescreenConfig::default()
        };
        let alarms = associate(&prescreen(&vol, 0, &pc), &truths, 0.25);
        assert!(alarms.iter().any(|a| a.matched_object.is_some()));
    }

    #[test]
    fn strided_center_count() {
        let c = strided_centers(330, 4);
        assert_eq!(c.len(), 82);
        assert_eq!((c[0], c[81]), (4, 328));
        // oracle: count t = 4k, k ≥ 1, inside [0, n)
        for n in 1..60 {
            for s in 1..7 {
                let want = (1..=n).filter(|k| k * s < n).count();
                assert_eq!(strided_centers(n, s).len(), want);
            }
        }
    }

    #[test]
    fn top_l_matches_sort_and_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let c: Vec<f64> = (0..82).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut s = c.clone();
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert_eq!(top_l_sum(&c, 3), s[0] + s[1] + s[2]);
            assert_eq!(top_l_sum(&c, 1), s[0]);
            let all: f64 = s.iter().sum();
            assert_eq!(top_l_sum(&c, 500), all);
            for l in 1..82 {
                assert!(top_l_sum(&c, l + 1) >= top_l_sum(&c, l));
            }
        }
    }

    fn small_lane(lane_id: u32, n_threats: usize, seed: u64) -> Lane {
        let cfg = SynthConfig {
            n_threats,
            n_clutter: 2,
            lane_length_m: 8.0,
            seed,
            ..SynthConfig::default()
        };
        let (vol, truths) = generate_lane(&cfg, lane_id).unwrap();
        Lane {
            lane_id,
            volume: preprocess(&vol, &PreprocConfig::default()).unwrap(),
            truths,
        }
    }

    #[test]
    fn threat_rows_follow_keypoints_and_nonthreat_rows_follow_sweep() {
        let lane = small_lane(0, 2, 1);
        let pipeline = PipelineConfig::default();
        let t = &lane.truths[0];
        let pos = ((t.down_m / 0.05).round() as usize, (t.cross_m / 0.05).round() as usize);
        let mut threat = alarm_at(0, t.down_m, t.cross_m);
        threat.grid_pos = pos;
        threat.matched_object = Some(t.object_id);
        let mut non = threat.clone();
        non.matched_object = None;
        let (x, y, prov) = build_training_set(
            &lane.volume,
            &[threat, non],
            &GprHogConfig::default(),
            &pipeline,
            &MsekConfig::default(),
        )
        .unwrap();
        let n_kp = training_keypoints(&lane.volume, pos, &pipeline, &MsekConfig::default()).unwrap().len();
        assert!((1..=4).contains(&n_kp));
        assert_eq!(x.len(), n_kp + 82);
        assert!(y[..n_kp].iter().all(|&l| l) && y[n_kp..].iter().all(|&l| !l));
        assert!(prov[..n_kp].iter().all(|p| p.alarm == 0));
        assert_eq!(prov[n_kp].t_idx, 4);
        assert!(x.iter().all(|r| r.len() == 216));
    }

    #[test]
    fn score_alarm_matches_row_path() {
        let lane = small_lane(0, 2, 2);
        let mut a = alarm_at(0, 1.0, 0.5);
        a.grid_pos = (20, 10);
        let cfg = GprHogConfig::default();
        let pipeline = PipelineConfig::default();
        // a forest that reads a single feature makes confidences vary
        let forest = Forest {
            trees: vec![Tree {
                nodes: vec![
                    Node::Split {
                        feature: 5,
                        threshold: 0.1,
                        left: 1,
                        right: 2,
                    },
                    Node::Leaf { fraction: 0.1 },
                    Node::Leaf { fraction: 0.9 },
                ],
            }],
            config: ForestConfig::default(),
            n_features: 216,
        };
        let direct = score_alarm(&lane.volume, &a, &forest, &cfg, &pipeline).unwrap();
        let rows = alarm_rows(&lane.volume, &a, &[cfg], &pipeline, &MsekConfig::default())
            .unwrap()
            .pop()
            .unwrap();
        let conf: Vec<f64> = rows.test.iter().map(|&r| forest.predict(&rows.features[r]).unwrap()).collect();
        assert_eq!(direct, top_l_sum(&conf, 3));
    }

    #[test]
    fn shared_rows_equal_single_config_rows() {
        let lane = small_lane(0, 2, 3);
        let mut a = alarm_at(0, 1.0, 0.5);
        a.grid_pos = (30, 4);
        let pipeline = PipelineConfig::default();
        let mut norm = GprHogConfig::default();
        norm.hog.normalize = true;
        let mut gpr = GprHogConfig::default();
        gpr.hog.normalize = false;
        gpr.avg_halfcount = 3;
        let both = alarm_rows(&lane.volume, &a, &[norm.clone(), gpr.clone()], &pipeline, &MsekConfig::default()).unwrap();
        let one = alarm_rows(&lane.volume, &a, &[gpr], &pipeline, &MsekConfig::default()).unwrap();
        let zero = alarm_rows(&lane.volume, &a, &[norm], &pipeline, &MsekConfig::default()).unwrap();
        assert_eq!(both[1], one[0]);
        assert_eq!(both[0], zero[0]);
    }

    fn labeled(n_lanes: u32, per_lane: usize) -> (Vec<Alarm>, Vec<GroundTruth>) {
        let mut alarms = Vec::new();
        let mut truths = Vec::new();
        for lane in 0..n_lanes {
            for k in 0..per_lane {
                let obj = k as u32;
                truths.push(truth(lane, obj, k as f64, 0.5, true));
                let mut a = alarm_at(lane, k as f64, 0.5);
                a.matched_object = Some(obj);
                alarms.push(a.clone());
                alarms.push(a);
                alarms.push(alarm_at(lane, k as f64 + 0.5, 0.5));
            }
        }
        (alarms, truths)
    }

    #[test]
    fn lane_folds_follow_lanes() {
        let (alarms, truths) = labeled(13, 3);
        let f = make_folds(&alarms, &truths, &CvConfig::default()).unwrap();
        assert_eq!(f.n_folds, 13);
        for (a, &fold) in alarms.iter().zip(&f.fold_of) {
            assert_eq!(fold, a.lane_id as usize);
        }
    }

    #[test]
    fn object_folds_group_alarms_and_are_deterministic() {
        let (alarms, truths) = labeled(3, 10);
        let cv = CvConfig {
            scheme: CvScheme::Obcv,
            ..CvConfig::default()
        };
        let f = make_folds(&alarms, &truths, &cv).unwrap();
        assert_eq!(f, make_folds(&alarms, &truths, &cv).unwrap());
        for i in 0..alarms.len() {
            for j in 0..alarms.len() {
                if alarms[i].matched_object.is_some()
                    && (alarms[i].lane_id, alarms[i].matched_object) == (alarms[j].lane_id, alarms[j].matched_object)
                {
                    assert_eq!(f.fold_of[i], f.fold_of[j]);
                }
            }
        }
        let mut sizes = [0; 10];
        for &k in &f.fold_of {
            sizes[k] += 1;
        }
        assert!(sizes.iter().all(|&s| s > 0));
    }

    #[test]
    fn too_few_objects_is_an_error() {
        let (alarms, truths) = labeled(1, 4);
        let cv = CvConfig {
            scheme: CvScheme::Obcv,
            ..CvConfig::default()
        };
        assert!(matches!(
            make_folds(&alarms, &truths, &cv),
            Err(PipelineError::TooFewObjects { objects: 4, folds: 10 })
        ));
    }

    #[test]
    fn audit_catches_a_planted_leak() {
        let (alarms, truths) = labeled(3, 2);
        let f = make_folds(&alarms, &truths, &CvConfig::default()).unwrap();
        let lane0: Vec<usize> = (0..alarms.len()).filter(|&i| alarms[i].lane_id == 0).collect();
        assert!(audit_fold(&alarms, &f, 1, &lane0).is_ok());
        assert!(matches!(
            audit_fold(&alarms, &f, 0, &lane0),
            Err(PipelineError::FoldLeak { fold: 0, .. })
        ));
    }

    #[test]
    fn two_folds_score_every_alarm_once() {
        let lanes = vec![small_lane(0, 3, 11), small_lane(1, 3, 12)];
        let pipeline = PipelineConfig {
            prescreen: PrescreenConfig {
                threshold_percentile: 70.0,
                ..PrescreenConfig::default()
            },
            ..PipelineConfig::default()
        };
        let forest = ForestConfig {
            n_trees: 10,
            ..ForestConfig::default()
        };
        let run = run_cv(&lanes, &GprHogConfig::default(), &forest, &pipeline, &MsekConfig::default()).unwrap();
        assert_eq!(run.folds.n_folds, 2);
        assert!(run.alarms.iter().all(|a| a.confidence.is_some_and(|c| (0.0..=3.0).contains(&c))));
        let again = run_cv(&lanes, &GprHogConfig::default(), &forest, &pipeline, &MsekConfig::default()).unwrap();
        assert_eq!(run.alarms, again.alarms);

        let mut buf = Vec::new();
        write_scored_csv(&run.alarms, &run.folds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lane_id,down_m,cross_m,label,matched_object,confidence,fold\n"));
        assert_eq!(text.lines().count(), run.alarms.len() + 1);
    }
}
