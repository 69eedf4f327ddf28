//! Seeded synthetic GPR lanes.
//!
//! Every A-scan is the sum of a ground echo, the differentiated-Gaussian
//! responses of buried point scatterers and white Gaussian noise. Threats are
//! small clusters of scatterers (a top face, a ring around it and an inverted
//! bottom echo); clutter is one or two weaker scatterers. Planning (object
//! placement) and rendering use independent random streams so that editing a
//! scene never changes the noise realisation.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{GroundTruth, Volume};

const PLACEMENT_STREAM: u64 = 1;
const GROUND_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const MAX_PLACEMENT_TRIES: usize = 10_000;
/// Pulses are evaluated over `±PULSE_SUPPORT·σ`.
const PULSE_SUPPORT: f64 = 5.0;
/// Relative weight of the delayed lobe in the ground echo; makes the leading
/// lobe the unique absolute maximum.
const GROUND_TAIL: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("could not place object {placed} of {requested} after {tries} attempts")]
    Placement {
        placed: usize,
        requested: usize,
        tries: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_lanes: usize,
    pub lane_length_m: f64,
    pub lane_width_m: f64,
    pub dx_down_m: f64,
    pub dx_cross_m: f64,
    pub n_time: usize,
    pub dt_ns: f64,
    pub n_threats: usize,
    pub n_clutter: usize,
    /// Threat burial depth range (top face), meters.
    pub depth_range_m: (f64, f64),
    pub clutter_depth_range_m: (f64, f64),
    pub velocity_m_per_ns: f64,
    pub pulse_sigma_ns: f64,
    /// Nominal two-way time of the ground echo.
    pub ground_time_ns: f64,
    pub ground_amplitude: f64,
    /// Per-A-scan ground shift is uniform in `±ground_jitter_samples`.
    pub ground_jitter_samples: usize,
    pub amplitude_decay_exponent: f64,
    pub threat_reflectivity: (f64, f64),
    pub clutter_reflectivity: (f64, f64),
    pub threat_radius_m: (f64, f64),
    pub threat_thickness_m: (f64, f64),
    /// Minimum ground-plane distance between any two objects.
    pub min_separation_m: f64,
    /// Objects keep at least this distance from the lane border.
    pub edge_margin_m: f64,
    /// Scatterers are rendered only into A-scans within this horizontal range.
    pub max_range_m: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_lanes: 13,
            lane_length_m: 25.0,
            lane_width_m: 1.5,
            dx_down_m: 0.05,
            dx_cross_m: 0.05,
            n_time: 448,
            dt_ns: 0.1,
            n_threats: 8,
            n_clutter: 8,
            depth_range_m: (0.15, 0.5),
            clutter_depth_range_m: (0.12, 0.4),
            velocity_m_per_ns: 0.1,
            pulse_sigma_ns: 0.3,
            ground_time_ns: 12.0,
            ground_amplitude: 8.0,
            ground_jitter_samples: 8,
            amplitude_decay_exponent: 1.0,
            threat_reflectivity: (0.25, 0.6),
            clutter_reflectivity: (0.1, 0.45),
            threat_radius_m: (0.05, 0.15),
            threat_thickness_m: (0.04, 0.1),
            min_separation_m: 1.0,
            edge_margin_m: 0.3,
            max_range_m: 1.0,
            noise_sigma: 0.5,
            seed: 2018,
        }
    }
}

impl SynthConfig {
    pub fn n_down(&self) -> usize {
        (self.lane_length_m / self.dx_down_m).round() as usize
    }

    pub fn n_cross(&self) -> usize {
        (self.lane_width_m / self.dx_cross_m).round() as usize
    }

    /// Latest echo time any object can produce at its apex, including the
    /// ground jitter and the pulse support.
    fn latest_apex_ns(&self) -> f64 {
        let deepest = self.depth_range_m.1.max(self.clutter_depth_range_m.1 + 0.05)
            + self.threat_thickness_m.1;
        self.ground_time_ns
            + 2.0 * deepest / self.velocity_m_per_ns
            + self.ground_jitter_samples as f64 * self.dt_ns
            + PULSE_SUPPORT * self.pulse_sigma_ns
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        let positive = [
            ("lane_length_m", self.lane_length_m),
            ("lane_width_m", self.lane_width_m),
            ("dx_down_m", self.dx_down_m),
            ("dx_cross_m", self.dx_cross_m),
            ("dt_ns", self.dt_ns),
            ("velocity_m_per_ns", self.velocity_m_per_ns),
            ("pulse_sigma_ns", self.pulse_sigma_ns),
            ("max_range_m", self.max_range_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.n_lanes == 0 || self.n_time == 0 || self.n_down() == 0 || self.n_cross() == 0 {
            return bad("lane must contain at least one sample in every dimension".into());
        }
        if !(self.noise_sigma >= 0.0) || !(self.ground_amplitude >= 0.0) {
            return bad("noise_sigma and ground_amplitude must be non-negative".into());
        }
        for (name, (lo, hi)) in [
            ("depth_range_m", self.depth_range_m),
            ("clutter_depth_range_m", self.clutter_depth_range_m),
            ("threat_reflectivity", self.threat_reflectivity),
            ("clutter_reflectivity", self.clutter_reflectivity),
            ("threat_radius_m", self.threat_radius_m),
            ("threat_thickness_m", self.threat_thickness_m),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} must be an ordered finite range"));
            }
        }
        if self.depth_range_m.0 <= 0.0 || self.clutter_depth_range_m.0 <= 0.0 {
            return bad("burial depths must be strictly positive".into());
        }
        let earliest = self.ground_time_ns
            - self.ground_jitter_samples as f64 * self.dt_ns
            - PULSE_SUPPORT * self.pulse_sigma_ns;
        if earliest < 0.0 {
            return bad("ground echo starts before the first time sample".into());
        }
        let window = self.n_time as f64 * self.dt_ns;
        if self.latest_apex_ns() >= window {
            return bad(format!(
                "deepest apex at {:.2} ns falls outside the {window:.2} ns window",
                self.latest_apex_ns()
            ));
        }
        let usable_down = self.lane_length_m - 2.0 * self.edge_margin_m;
        let usable_cross = self.lane_width_m - 2.0 * self.edge_margin_m;
        if usable_down < 0.0 || usable_cross < 0.0 {
            return bad("edge margin leaves no room for objects".into());
        }
        // Loose packing bound (twice the square-grid count); placement retries
        // catch the remaining infeasible cases.
        let n_objects = self.n_threats + self.n_clutter;
        let sep = self.min_separation_m.max(0.0);
        let capacity = if sep > 0.0 {
            2.0 * ((usable_down / sep).floor() + 1.0) * ((usable_cross / sep).floor() + 1.0)
        } else {
            f64::INFINITY
        };
        if n_objects as f64 > capacity {
            return bad(format!(
                "{n_objects} objects at {sep} m separation do not fit in the lane"
            ));
        }
        Ok(())
    }
}

/// Seed of lane `lane_id`, independent of how many lanes are generated or in
/// which order.
pub fn lane_seed(seed: u64, lane_id: u32) -> u64 {
    splitmix64(seed ^ u64::from(lane_id))
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The transmitted waveform: first derivative of a Gaussian, `−t·exp(−t²/2σ²)`.
pub fn pulse(t_ns: f64, sigma_ns: f64) -> f64 {
    -t_ns * (-(t_ns * t_ns) / (2.0 * sigma_ns * sigma_ns)).exp()
}

/// [`pulse`] rescaled so its extrema are ±1.
fn unit_pulse(t_ns: f64, sigma_ns: f64) -> f64 {
    pulse(t_ns, sigma_ns) / (sigma_ns * (-0.5f64).exp())
}

fn ground_wavelet(t_ns: f64, sigma_ns: f64) -> f64 {
    unit_pulse(t_ns, sigma_ns) + GROUND_TAIL * unit_pulse(t_ns - 2.0 * sigma_ns, sigma_ns)
}

/// Two-way travel time (ns) and spreading loss of a point scatterer seen from
/// an A-scan at `ascan_pos_m`.
pub fn scatter_response(
    target_depth_m: f64,
    target_pos_m: (f64, f64),
    ascan_pos_m: (f64, f64),
    config: &SynthConfig,
) -> (f64, f64) {
    let dd = ascan_pos_m.0 - target_pos_m.0;
    let dc = ascan_pos_m.1 - target_pos_m.1;
    let r2 = target_depth_m * target_depth_m + dd * dd + dc * dc;
    let time = config.ground_time_ns + 2.0 * r2.sqrt() / config.velocity_m_per_ns;
    let scale = r2.powf(-config.amplitude_decay_exponent / 2.0);
    (time, scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scatterer {
    pub down_m: f64,
    pub cross_m: f64,
    pub depth_m: f64,
    pub reflectivity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuriedObject {
    pub object_id: u32,
    pub is_threat: bool,
    pub down_m: f64,
    pub cross_m: f64,
    pub depth_m: f64,
    pub scatterers: Vec<Scatterer>,
}

/// Everything about a lane except its noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub lane_id: u32,
    pub objects: Vec<BuriedObject>,
    /// Integer ground shift (samples) of every A-scan.
    pub ground_shift: Array2<i32>,
}

impl Scene {
    pub fn truths(&self) -> Vec<GroundTruth> {
        self.objects
            .iter()
            .map(|o| GroundTruth {
                lane_id: self.lane_id,
                object_id: o.object_id,
                down_m: o.down_m,
                cross_m: o.cross_m,
                depth_m: o.depth_m,
                is_threat: o.is_threat,
            })
            .collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn threat_scatterers(rng: &mut ChaCha8Rng, config: &SynthConfig, d: f64, c: f64, depth: f64) -> Vec<Scatterer> {
    let rho = uniform(rng, config.threat_reflectivity);
    let radius = uniform(rng, config.threat_radius_m);
    let thickness = uniform(rng, config.threat_thickness_m);
    let mut out = vec![Scatterer {
        down_m: d,
        cross_m: c,
        depth_m: depth,
        reflectivity: rho,
    }];
    for (od, oc) in [(radius, 0.0), (-radius, 0.0), (0.0, radius), (0.0, -radius)] {
        out.push(Scatterer {
            down_m: d + od,
            cross_m: c + oc,
            depth_m: depth,
            reflectivity: 0.5 * rho,
        });
    }
    out.push(Scatterer {
        down_m: d,
        cross_m: c,
        depth_m: depth + thickness,
        reflectivity: -0.6 * rho,
    });
    out
}

fn clutter_scatterers(rng: &mut ChaCha8Rng, config: &SynthConfig, d: f64, c: f64, depth: f64) -> Vec<Scatterer> {
    let rho = uniform(rng, config.clutter_reflectivity);
    let mut out = vec![Scatterer {
        down_m: d,
        cross_m: c,
        depth_m: depth,
        reflectivity: rho,
    }];
    if rng.gen_bool(0.5) {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        out.push(Scatterer {
            down_m: d + rng.gen_range(-0.1..0.1),
            cross_m: c + rng.gen_range(-0.1..0.1),
            depth_m: depth + rng.gen_range(0.0..0.05),
            reflectivity: sign * 0.5 * rho,
        });
    }
    out
}

/// Places objects and draws the ground shifts for one lane.
pub fn plan_lane(config: &SynthConfig, lane_id: u32) -> Result<Scene, SynthError> {
    config.validate()?;
    let seed = lane_seed(config.seed, lane_id);
    let mut rng = stream_rng(seed, PLACEMENT_STREAM);
    let requested = config.n_threats + config.n_clutter;
    let margin = config.edge_margin_m;
    let mut objects: Vec<BuriedObject> = Vec::with_capacity(requested);
    let mut tries = 0;
    while objects.len() < requested {
        tries += 1;
        if tries > MAX_PLACEMENT_TRIES {
            return Err(SynthError::Placement {
                placed: objects.len(),
                requested,
                tries: MAX_PLACEMENT_TRIES,
            });
        }
        let d = uniform(&mut rng, (margin, config.lane_length_m - margin));
        let c = uniform(&mut rng, (margin, config.lane_width_m - margin));
        let crowded = objects.iter().any(|o| {
            (o.down_m - d).hypot(o.cross_m - c) < config.min_separation_m
        });
        if crowded {
            continue;
        }
        let is_threat = objects.len() < config.n_threats;
        let (depth, scatterers) = if is_threat {
            let depth = uniform(&mut rng, config.depth_range_m);
            (depth, threat_scatterers(&mut rng, config, d, c, depth))
        } else {
            let depth = uniform(&mut rng, config.clutter_depth_range_m);
            (depth, clutter_scatterers(&mut rng, config, d, c, depth))
        };
        objects.push(BuriedObject {
            object_id: objects.len() as u32,
            is_threat,
            down_m: d,
            cross_m: c,
            depth_m: depth,
            scatterers,
        });
    }

    let mut rng = stream_rng(seed, GROUND_STREAM);
    let j = config.ground_jitter_samples as i32;
    let ground_shift =
        Array2::from_shape_simple_fn((config.n_down(), config.n_cross()), || rng.gen_range(-j..=j));
    Ok(Scene {
        lane_id,
        objects,
        ground_shift,
    })
}

/// Renders a planned scene into a volume. Samples are rounded through `f32`
/// so the in-memory volume equals what the file format stores.
pub fn render_lane(config: &SynthConfig, scene: &Scene) -> Result<Volume, SynthError> {
    config.validate()?;
    let (n_down, n_cross, n_time) = (config.n_down(), config.n_cross(), config.n_time);
    if scene.ground_shift.dim() != (n_down, n_cross) {
        return Err(SynthError::InvalidConfig(
            "scene ground map does not match lane dimensions".into(),
        ));
    }
    let dt = config.dt_ns;
    let sigma = config.pulse_sigma_ns;
    let support = (PULSE_SUPPORT * sigma / dt).ceil() as i64;
    let ground_center = config.ground_time_ns / dt;

    // Ground echo on a reference trace; every A-scan is an integer shift of it.
    let ground_lo = -support;
    let ground_hi = support + (2.0 * sigma / dt).ceil() as i64;
    let ground_ref: Vec<f64> = (ground_lo..=ground_hi)
        .map(|k| {
            let base = ground_center.floor() as i64 + k;
            config.ground_amplitude * ground_wavelet((base as f64 - ground_center) * dt, sigma)
        })
        .collect();

    let mut data = Array3::<f64>::zeros((n_down, n_cross, n_time));
    let reach = config.max_range_m;
    for i in 0..n_down {
        for jc in 0..n_cross {
            let shift = scene.ground_shift[[i, jc]] as i64;
            let mut trace = data.slice_mut(ndarray::s![i, jc, ..]);
            let base = ground_center.floor() as i64 + shift;
            for (k, v) in (ground_lo..=ground_hi).zip(&ground_ref) {
                let idx = base + k;
                if (0..n_time as i64).contains(&idx) {
                    trace[idx as usize] += v;
                }
            }
            let pos = (i as f64 * config.dx_down_m, jc as f64 * config.dx_cross_m);
            for obj in &scene.objects {
                if (obj.down_m - pos.0).hypot(obj.cross_m - pos.1) > reach + 0.2 {
                    continue;
                }
                for s in &obj.scatterers {
                    let horiz = (s.down_m - pos.0).hypot(s.cross_m - pos.1);
                    if horiz > reach {
                        continue;
                    }
                    let (time, scale) =
                        scatter_response(s.depth_m, (s.down_m, s.cross_m), pos, config);
                    let arrival = time + shift as f64 * dt;
                    let amp = s.reflectivity * scale;
                    let center = (arrival / dt).round() as i64;
                    for idx in (center - support).max(0)..=(center + support).min(n_time as i64 - 1) {
                        trace[idx as usize] += amp * unit_pulse(idx as f64 * dt - arrival, sigma);
                    }
                }
            }
        }
    }

    if config.noise_sigma > 0.0 {
        let mut rng = stream_rng(lane_seed(config.seed, scene.lane_id), NOISE_STREAM);
        for v in data.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v += config.noise_sigma * n;
        }
    }
    data.mapv_inplace(|v| v as f32 as f64);
    Volume::new(data, dt, config.dx_down_m, config.dx_cross_m)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))
}

pub fn generate_lane(
    config: &SynthConfig,
    lane_id: u32,
) -> Result<(Volume, Vec<GroundTruth>), SynthError> {
    let scene = plan_lane(config, lane_id)?;
    let volume = render_lane(config, &scene)?;
    Ok((volume, scene.truths()))
}

/// Generates lanes `0..config.n_lanes`. Output does not depend on the rayon
/// pool size.
pub fn generate_lanes(config: &SynthConfig) -> Result<Vec<(Volume, Vec<GroundTruth>)>, SynthError> {
    (0..config.n_lanes as u32)
        .into_par_iter()
        .map(|lane| generate_lane(config, lane))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            lane_length_m: 4.0,
            lane_width_m: 1.0,
            n_threats: 1,
            n_clutter: 1,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn pulse_is_odd_with_extremum_at_sigma() {
        assert_eq!(pulse(0.0, 0.3), 0.0);
        for &t in &[0.01, 0.17, 0.5, 1.3, 4.0] {
            assert_eq!(pulse(-t, 0.3), -pulse(t, 0.3));
        }
        let sigma = 0.3;
        let peak = pulse(sigma, sigma).abs();
        for k in 1..2000 {
            let t = k as f64 * 0.001;
            assert!(pulse(t, sigma).abs() <= peak + 1e-15, "t={t}");
        }
        assert!((unit_pulse(-sigma, sigma) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ground_wavelet_has_unique_leading_maximum() {
        let sigma = 0.3;
        let lead = ground_wavelet(-sigma, sigma).abs();
        for k in -400..400 {
            let t = k as f64 * 0.01;
            if (t + sigma).abs() > sigma {
                assert!(ground_wavelet(t, sigma).abs() < 0.7 * lead, "t={t}");
            }
        }
    }

    #[test]
    fn apex_time_matches_vertical_path() {
        let cfg = SynthConfig::default();
        let (t, a) = scatter_response(0.3, (2.0, 0.5), (2.0, 0.5), &cfg);
        assert!((t - (cfg.ground_time_ns + 2.0 * 0.3 / cfg.velocity_m_per_ns)).abs() < 1e-12);
        assert!((a - 0.3f64.powf(-1.0)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_ascans_see_equal_response() {
        let cfg = SynthConfig::default();
        let left = scatter_response(0.2, (3.0, 0.7), (2.6, 0.7), &cfg);
        let right = scatter_response(0.2, (3.0, 0.7), (3.4, 0.7), &cfg);
        assert!((left.0 - right.0).abs() < 1e-12);
        assert!((left.1 - right.1).abs() < 1e-12);
    }

    #[test]
    fn response_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let cfg = SynthConfig {
                velocity_m_per_ns: rng.gen_range(0.05..0.3),
                amplitude_decay_exponent: rng.gen_range(0.0..2.0),
                ground_time_ns: rng.gen_range(5.0..15.0),
                ..SynthConfig::default()
            };
            let depth: f64 = rng.gen_range(0.01..1.0);
            let tp: (f64, f64) = (rng.gen_range(0.0..25.0), rng.gen_range(0.0..1.5));
            let ap: (f64, f64) = (rng.gen_range(0.0..25.0), rng.gen_range(0.0..1.5));
            let range = ((tp.0 - ap.0).powi(2) + (tp.1 - ap.1).powi(2)).sqrt();
            let slant = (depth * depth + range * range).sqrt();
            let want_t = cfg.ground_time_ns + 2.0 * slant / cfg.velocity_m_per_ns;
            let want_a = slant.powf(-cfg.amplitude_decay_exponent);
            let (t, a) = scatter_response(depth, tp, ap, &cfg);
            assert!((t - want_t).abs() <= 1e-12 * want_t);
            assert!((a - want_a).abs() <= 1e-9 * want_a);
        }
    }

    #[test]
    fn empty_noiseless_lane_is_shifted_ground() {
        let cfg = SynthConfig {
            n_threats: 0,
            n_clutter: 0,
            noise_sigma: 0.0,
            ..small_config()
        };
        let scene = plan_lane(&cfg, 0).unwrap();
        let v = render_lane(&cfg, &scene).unwrap();
        let reference = v.ascan(0, 0).to_owned();
        let s0 = scene.ground_shift[[0, 0]];
        for i in 0..v.n_down() {
            for j in 0..v.n_cross() {
                let delta = scene.ground_shift[[i, j]] - s0;
                let a = v.ascan(i, j);
                for t in 0..v.n_time() {
                    let src = t as i64 - delta as i64;
                    let want = if (0..v.n_time() as i64).contains(&src) {
                        reference[src as usize]
                    } else {
                        0.0
                    };
                    assert_eq!(a[t], want, "ascan ({i},{j}) t={t}");
                }
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = small_config();
        let (a, ta) = generate_lane(&cfg, 2).unwrap();
        let (b, tb) = generate_lane(&cfg, 2).unwrap();
        assert_eq!(ta, tb);
        assert!(a.data().iter().zip(b.data().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn distinct_seeds_differ() {
        let cfg = small_config();
        let (a, _) = generate_lane(&cfg, 0).unwrap();
        let (b, _) = generate_lane(&SynthConfig { seed: 12, ..cfg.clone() }, 0).unwrap();
        assert_ne!(a, b);
        let (c, _) = generate_lane(&cfg, 1).unwrap();
        assert_ne!(a, c);
    }

    fn post_ground_energy(v: &Volume, scene: &Scene, cfg: &SynthConfig, i: usize, j: usize) -> f64 {
        let start = (cfg.ground_time_ns / cfg.dt_ns) as i64
            + scene.ground_shift[[i, j]] as i64
            + 25;
        v.ascan(i, j)
            .iter()
            .enumerate()
            .filter(|(t, _)| *t as i64 >= start)
            .map(|(_, x)| x * x)
            .sum()
    }

    #[test]
    fn single_threat_energy_peaks_at_target() {
        for seed in 0..5 {
            let cfg = SynthConfig {
                n_threats: 1,
                n_clutter: 0,
                noise_sigma: 0.0,
                seed,
                ..small_config()
            };
            let scene = plan_lane(&cfg, 0).unwrap();
            let v = render_lane(&cfg, &scene).unwrap();
            let mut best = (0, 0, f64::MIN);
            for i in 0..v.n_down() {
                for j in 0..v.n_cross() {
                    let e = post_ground_energy(&v, &scene, &cfg, i, j);
                    if e > best.2 {
                        best = (i, j, e);
                    }
                }
            }
            let obj = &scene.objects[0];
            let ti = (obj.down_m / cfg.dx_down_m).round() as i64;
            let tj = (obj.cross_m / cfg.dx_cross_m).round() as i64;
            assert!((best.0 as i64 - ti).abs() <= 2, "seed {seed}: {best:?} vs {ti}");
            assert!((best.1 as i64 - tj).abs() <= 2, "seed {seed}: {best:?} vs {tj}");
        }
    }

    #[test]
    fn doubling_reflectivity_never_lowers_apex_energy() {
        for seed in 0..8 {
            let cfg = SynthConfig {
                n_threats: 1,
                n_clutter: 1,
                seed,
                ..small_config()
            };
            let scene = plan_lane(&cfg, 0).unwrap();
            let mut louder = scene.clone();
            for s in &mut louder.objects[0].scatterers {
                s.reflectivity *= 2.0;
            }
            let a = render_lane(&cfg, &scene).unwrap();
            let b = render_lane(&cfg, &louder).unwrap();
            let obj = &scene.objects[0];
            let i = (obj.down_m / cfg.dx_down_m).round() as usize;
            let j = (obj.cross_m / cfg.dx_cross_m).round() as usize;
            assert!(
                post_ground_energy(&b, &louder, &cfg, i, j)
                    >= post_ground_energy(&a, &scene, &cfg, i, j)
            );
        }
    }

    #[test]
    fn truths_are_inside_the_time_window_and_unique() {
        let cfg = SynthConfig::default();
        cfg.validate().unwrap();
        for lane in 0..3 {
            let scene = plan_lane(&cfg, lane).unwrap();
            let truths = scene.truths();
            assert_eq!(truths.len(), cfg.n_threats + cfg.n_clutter);
            assert_eq!(truths.iter().filter(|t| t.is_threat).count(), cfg.n_threats);
            let mut ids: Vec<_> = truths.iter().map(|t| t.object_id).collect();
            ids.dedup();
            assert_eq!(ids.len(), truths.len());
            for obj in &scene.objects {
                for s in &obj.scatterers {
                    let (t, _) = scatter_response(s.depth_m, (s.down_m, s.cross_m), (s.down_m, s.cross_m), &cfg);
                    let worst = t + cfg.ground_jitter_samples as f64 * cfg.dt_ns;
                    assert!(worst < cfg.n_time as f64 * cfg.dt_ns);
                }
                assert!(obj.depth_m >= 0.0);
            }
        }
    }

    #[test]
    fn impossible_placement_errors() {
        let cfg = SynthConfig {
            lane_length_m: 2.0,
            lane_width_m: 1.0,
            n_threats: 6,
            n_clutter: 6,
            min_separation_m: 1.0,
            ..SynthConfig::default()
        };
        assert!(matches!(
            plan_lane(&cfg, 0),
            Err(SynthError::Placement { .. }) | Err(SynthError::InvalidConfig(_))
        ));
    }

    #[test]
    fn rejects_nonpositive_velocity() {
        let cfg = SynthConfig {
            velocity_m_per_ns: 0.0,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
