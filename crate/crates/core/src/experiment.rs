//! Declarative experiments: a TOML config naming the synthetic data, the
//! preprocessing/pipeline/forest settings and the feature arms to compare,
//! plus the evaluation loop and the ablation verdicts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::eval::{partial_auc, roc, RocCurve, DEFAULT_FAR_WINDOW};
use crate::features::GprHogConfig;
use crate::forest::ForestConfig;
use crate::hog::HogConfig;
use crate::keypoints::MsekConfig;
use crate::pipeline::{
    apply_top_l, compute_rows, cross_validate, detect, make_folds, CvScheme, Folds, Lane, PipelineConfig,
};
use crate::preprocess::{preprocess, PreprocConfig};
use crate::synth::{generate_lanes, SynthConfig};
use crate::volume::{Alarm, GroundTruth};

/// A named feature configuration plus its top-L aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub top_l: usize,
    #[serde(default)]
    pub feature: GprHogConfig,
}

impl Arm {
    pub fn new(name: &str, normalize: bool, avg_halfcount: usize, top_l: usize) -> Self {
        Self {
            name: name.to_string(),
            top_l,
            feature: GprHogConfig {
                hog: HogConfig {
                    normalize,
                    ..HogConfig::default()
                },
                avg_halfcount,
                ..GprHogConfig::default()
            },
        }
    }
}

pub fn default_arms() -> Vec<Arm> {
    vec![Arm::new("HOG", true, 0, 3), Arm::new("gprHOG", false, 3, 12)]
}

pub const ABLATION_HOG: &str = "HOG";
pub const ABLATION_NONORM_L3: &str = "HOG-nonorm-L3";
pub const ABLATION_NONORM_L8: &str = "HOG-nonorm-L8";
pub const ABLATION_NONORM_L10: &str = "HOG-nonorm-L10";
pub const ABLATION_NONORM_L12: &str = "HOG-nonorm-L12";
pub const ABLATION_GPRHOG: &str = "gprHOG";

/// The four canonical arms, plus L ∈ {8, 10} for the L-sensitivity check.
/// All no-normalization variants without averaging share one feature set.
pub fn ablation_arms() -> Vec<Arm> {
    vec![
        Arm::new(ABLATION_HOG, true, 0, 3),
        Arm::new(ABLATION_NONORM_L3, false, 0, 3),
        Arm::new(ABLATION_NONORM_L8, false, 0, 8),
        Arm::new(ABLATION_NONORM_L10, false, 0, 10),
        Arm::new(ABLATION_NONORM_L12, false, 0, 12),
        Arm::new(ABLATION_GPRHOG, false, 3, 12),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Where `run`/`ablate` read lanes from; defaults to `output_dir`.
    pub data_dir: Option<PathBuf>,
    pub far_window: (f64, f64),
    pub synth: SynthConfig,
    pub preproc: PreprocConfig,
    pub msek: MsekConfig,
    pub forest: ForestConfig,
    pub pipeline: PipelineConfig,
    pub arms: Vec<Arm>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("gprhog-out"),
            data_dir: None,
            far_window: DEFAULT_FAR_WINDOW,
            synth: SynthConfig::default(),
            preproc: PreprocConfig::default(),
            msek: MsekConfig::default(),
            forest: ForestConfig::default(),
            pipeline: PipelineConfig::default(),
            arms: default_arms(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn data_dir(&self) -> &Path {
        self.data_dir.as_deref().unwrap_or(&self.output_dir)
    }

    /// One seed drives data generation, fold assignment and forests.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.forest.seed = seed;
        self.pipeline.cv.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        validate_arms(&self.arms)?;
        self.synth.validate()?;
        self.pipeline.validate()?;
        let (lo, hi) = self.far_window;
        if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
            bail!("far_window must satisfy 0 ≤ lo < hi, got ({lo}, {hi})");
        }
        Ok(())
    }
}

fn validate_arms(arms: &[Arm]) -> Result<()> {
    if arms.is_empty() {
        bail!("at least one arm is required");
    }
    let mut seen = std::collections::HashSet::new();
    for a in arms {
        if a.name.is_empty() || !a.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            bail!("arm name {:?} must be non-empty and use only [A-Za-z0-9_-]", a.name);
        }
        if !seen.insert(&a.name) {
            bail!("duplicate arm name {:?}", a.name);
        }
        if a.top_l == 0 {
            bail!("arm {:?}: top_l must be at least 1", a.name);
        }
        a.feature.hog.validate().with_context(|| format!("arm {:?}", a.name))?;
    }
    Ok(())
}

/// Generates and preprocesses every synthetic lane.
pub fn synthetic_lanes(synth: &SynthConfig, preproc: &PreprocConfig) -> Result<Vec<Lane>> {
    let raw = generate_lanes(synth).context("stage synth")?;
    raw.into_iter()
        .enumerate()
        .map(|(i, (volume, truths))| {
            Ok(Lane {
                lane_id: i as u32,
                volume: preprocess(&volume, preproc).context("stage preprocess")?,
                truths,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub arm: String,
    pub scheme: CvScheme,
    pub alarms: Vec<Alarm>,
    pub folds: Folds,
    pub curve: RocCurve,
    pub partial_auc: f64,
}

/// Runs every arm under every scheme on preprocessed lanes. Feature rows are
/// computed once per distinct feature config and forests once per
/// (feature config, scheme, fold); arms differing only in `top_l` share them.
pub fn evaluate(
    lanes: &[Lane],
    arms: &[Arm],
    schemes: &[CvScheme],
    forest: &ForestConfig,
    pipeline: &PipelineConfig,
    msek: &MsekConfig,
    far_window: (f64, f64),
) -> Result<Vec<ArmResult>> {
    validate_arms(arms)?;
    pipeline.validate().context("stage config")?;
    let alarms = detect(lanes, pipeline);
    let truths: Vec<GroundTruth> = lanes.iter().flat_map(|l| l.truths.iter().cloned()).collect();
    let area: f64 = lanes.iter().map(|l| l.volume.area_m2()).sum();

    let mut configs: Vec<GprHogConfig> = Vec::new();
    let arm_config: Vec<usize> = arms
        .iter()
        .map(|a| match configs.iter().position(|c| *c == a.feature) {
            Some(i) => i,
            None => {
                configs.push(a.feature.clone());
                configs.len() - 1
            }
        })
        .collect();
    let rows = compute_rows(lanes, &alarms, &configs, pipeline, msek).context("stage features")?;

    let mut out = Vec::new();
    for &scheme in schemes {
        let mut cv = pipeline.cv.clone();
        cv.scheme = scheme;
        let folds = make_folds(&alarms, &truths, &cv).context("stage folds")?;
        let mut conf = Vec::with_capacity(configs.len());
        for r in &rows {
            conf.push(cross_validate(&alarms, r, &folds, forest).context("stage cross-validation")?);
        }
        for (arm, &ci) in arms.iter().zip(&arm_config) {
            let scored = apply_top_l(&alarms, &conf[ci], arm.top_l);
            let curve = roc(&scored, &truths, area).context("stage roc")?;
            let pauc = partial_auc(&curve, far_window.0, far_window.1)?;
            out.push(ArmResult {
                arm: arm.name.clone(),
                scheme,
                alarms: scored,
                folds: folds.clone(),
                curve,
                partial_auc: pauc,
            });
        }
    }
    Ok(out)
}

/// Fraction of threat objects with at least one prescreener alarm.
pub fn prescreen_pd(lanes: &[Lane], pipeline: &PipelineConfig) -> f64 {
    let alarms = detect(lanes, pipeline);
    let found: std::collections::HashSet<(u32, u32)> = alarms
        .iter()
        .filter_map(|a| a.matched_object.map(|o| (a.lane_id, o)))
        .collect();
    let total = lanes.iter().flat_map(|l| &l.truths).filter(|t| t.is_threat).count();
    found.len() as f64 / total.max(1) as f64
}

pub fn report_table(results: &[ArmResult]) -> String {
    let mut s = String::from("arm               cv_scheme  partial_auc\n");
    for r in results {
        let _ = writeln!(s, "{:<17} {:<10} {:.6}", r.arm, r.scheme.name(), r.partial_auc);
    }
    s
}

pub fn summary_text(results: &[ArmResult], far_window: (f64, f64)) -> String {
    let mut s = format!("far_window = [{}, {}]\n", far_window.0, far_window.1);
    for r in results {
        let _ = writeln!(s, "{}.{}.partial_auc = {:.6}", r.arm, r.scheme.name(), r.partial_auc);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub scheme: CvScheme,
    pub id: char,
    pub description: &'static str,
    pub pass: bool,
    /// Informational checks do not affect the exit status.
    pub required: bool,
    pub detail: String,
}

/// Ordering checks over ablation partial AUCs, per scheme.
pub fn ablation_verdicts(results: &[ArmResult]) -> Result<Vec<Verdict>> {
    let mut by: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for r in results {
        by.insert((r.arm.as_str(), r.scheme.name()), r.partial_auc);
    }
    let mut schemes: Vec<CvScheme> = results.iter().map(|r| r.scheme).collect();
    schemes.dedup();
    let mut out = Vec::new();
    for scheme in schemes {
        let get = |arm: &str| {
            by.get(&(arm, scheme.name()))
                .copied()
                .with_context(|| format!("ablation arm {arm} missing for {}", scheme.name()))
        };
        let hog = get(ABLATION_HOG)?;
        let l3 = get(ABLATION_NONORM_L3)?;
        let l8 = get(ABLATION_NONORM_L8)?;
        let l10 = get(ABLATION_NONORM_L10)?;
        let l12 = get(ABLATION_NONORM_L12)?;
        let gpr = get(ABLATION_GPRHOG)?;
        let spread = [l8, l10, l12].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - [l8, l10, l12].iter().cloned().fold(f64::INFINITY, f64::min);
        let mut push = |id, description, pass, required, detail: String| {
            out.push(Verdict {
                scheme,
                id,
                description,
                pass,
                required,
                detail,
            })
        };
        push('a', "no block normalization beats normalized HOG", l3 > hog, true, format!("{l3:.4} vs {hog:.4}"));
        push(
            'b',
            "L=12 at least L=3, and flat over L in {8,10,12}",
            l12 >= l3 && spread < 0.03,
            false,
            format!("L12 {l12:.4} vs L3 {l3:.4}; spread {spread:.4}"),
        );
        push('c', "parallel B-scan averaging helps", gpr > l12, true, format!("{gpr:.4} vs {l12:.4}"));
        push(
            'd',
            "gprHOG beats HOG by at least 0.02",
            gpr - hog >= 0.02,
            true,
            format!("margin {:.4}", gpr - hog),
        );
    }
    Ok(out)
}

pub fn verdict_lines(verdicts: &[Verdict]) -> String {
    let mut s = String::new();
    for v in verdicts {
        let status = match (v.pass, v.required) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "NOTE",
        };
        let _ = writeln!(s, "{} {} ({}): {} [{}]", status, v.scheme.name(), v.id, v.description, v.detail);
    }
    s
}
