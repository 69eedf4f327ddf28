//! Volume, B-scan and patch types plus the binary volume file format.
//!
//! A [`Volume`] is the down-track × cross-track × time cube collected over a
//! lane. Feature extraction never looks at the cube directly; it goes through
//! [`extract_bscan`] and [`extract_patch`], both of which always return a
//! fixed-shape result so downstream features have a constant dimension.
//!
//! File layout (all little-endian):
//!
//! ```text
//! "GPRV" | version: u16 | n_down: u32 | n_cross: u32 | n_time: u32
//!        | dx_down: f64 (m) | dx_cross: f64 (m) | dt: f64 (ns)
//!        | amplitudes: f32 × n_down·n_cross·n_time, time fastest, then cross, then down
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VOLUME_MAGIC: [u8; 4] = *b"GPRV";
pub const VOLUME_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 3 * 4 + 3 * 8;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"GPRV\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported volume file version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated header: {0} bytes")]
    TruncatedHeader(usize),
    #[error("dimension `{field}` must be at least 1")]
    ZeroDimension { field: &'static str },
    #[error("spacing `{field}` must be finite and positive, got {value}")]
    InvalidSpacing { field: &'static str, value: f64 },
    #[error("payload length mismatch: header declares {expected} samples, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("payload contains a trailing partial sample ({0} stray bytes)")]
    TrailingBytes(usize),
    #[error("amplitude at flat index {0} is not finite")]
    NonFiniteAmplitude(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("center ({down}, {cross}) outside volume of {n_down}×{n_cross} A-scans")]
    CenterOutOfBounds {
        down: usize,
        cross: usize,
        n_down: usize,
        n_cross: usize,
    },
    #[error("patch {h}×{w} does not fit in B-scan of {rows}×{cols}")]
    PatchTooLarge {
        h: usize,
        w: usize,
        rows: usize,
        cols: usize,
    },
    #[error("patch dimensions must be at least 1")]
    EmptyPatch,
}

/// 3-D GPR cube indexed `[down, cross, time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f64>,
    /// Time-sample spacing in nanoseconds.
    pub dt_ns: f64,
    /// Down-track sample spacing in meters.
    pub dx_down_m: f64,
    /// Cross-track sample spacing in meters.
    pub dx_cross_m: f64,
}

impl Volume {
    pub fn new(
        data: Array3<f64>,
        dt_ns: f64,
        dx_down_m: f64,
        dx_cross_m: f64,
    ) -> Result<Self, VolumeError> {
        let (n_down, n_cross, n_time) = data.dim();
        for (field, n) in [("n_down", n_down), ("n_cross", n_cross), ("n_time", n_time)] {
            if n == 0 {
                return Err(VolumeError::ZeroDimension { field });
            }
        }
        for (field, value) in [
            ("dx_down", dx_down_m),
            ("dx_cross", dx_cross_m),
            ("dt", dt_ns),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(VolumeError::InvalidSpacing { field, value });
            }
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFiniteAmplitude(i));
        }
        Ok(Self {
            data,
            dt_ns,
            dx_down_m,
            dx_cross_m,
        })
    }

    /// Builds a volume with the same spacings as `self` but new samples.
    pub fn with_data(&self, data: Array3<f64>) -> Result<Self, VolumeError> {
        Self::new(data, self.dt_ns, self.dx_down_m, self.dx_cross_m)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn n_down(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_cross(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_time(&self) -> usize {
        self.data.dim().2
    }

    pub fn ascan(&self, down: usize, cross: usize) -> ArrayView1<'_, f64> {
        self.data.slice(s![down, cross, ..])
    }

    /// Ground-plane position of an A-scan in meters.
    pub fn position_m(&self, down: usize, cross: usize) -> (f64, f64) {
        (down as f64 * self.dx_down_m, cross as f64 * self.dx_cross_m)
    }

    /// Scanned lane area in square meters.
    pub fn area_m2(&self) -> f64 {
        self.n_down() as f64 * self.dx_down_m * self.n_cross() as f64 * self.dx_cross_m
    }
}

/// Writes `volume` in the `GPRV` format. Amplitudes are stored as `f32`, so
/// only volumes whose samples are exactly representable in `f32` round-trip
/// bit-exactly.
pub fn save_volume(volume: &Volume, path: &Path) -> Result<(), VolumeError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_volume(volume, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_volume<W: Write>(volume: &Volume, w: &mut W) -> Result<(), VolumeError> {
    w.write_all(&VOLUME_MAGIC)?;
    w.write_all(&VOLUME_VERSION.to_le_bytes())?;
    for n in [volume.n_down(), volume.n_cross(), volume.n_time()] {
        w.write_all(&(n as u32).to_le_bytes())?;
    }
    for v in [volume.dx_down_m, volume.dx_cross_m, volume.dt_ns] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(volume.data.len() * 4);
    for v in volume.data.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<Volume, VolumeError> {
    read_volume(&mut BufReader::new(File::open(path)?))
}

pub fn read_volume<R: Read>(r: &mut R) -> Result<Volume, VolumeError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        let n = r.read(&mut header[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    if filled >= 4 && header[..4] != VOLUME_MAGIC {
        return Err(VolumeError::BadMagic(header[..4].try_into().unwrap()));
    }
    if filled < HEADER_LEN {
        return Err(VolumeError::TruncatedHeader(filled));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VOLUME_VERSION {
        return Err(VolumeError::UnsupportedVersion(version));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let dims = [u32_at(6), u32_at(10), u32_at(14)];
    for (field, n) in ["n_down", "n_cross", "n_time"].into_iter().zip(dims) {
        if n == 0 {
            return Err(VolumeError::ZeroDimension { field });
        }
    }
    let spacings = [f64_at(18), f64_at(26), f64_at(34)];
    for (field, value) in ["dx_down", "dx_cross", "dt"].into_iter().zip(spacings) {
        if !(value.is_finite() && value > 0.0) {
            return Err(VolumeError::InvalidSpacing { field, value });
        }
    }
    let expected = dims[0] * dims[1] * dims[2];

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 4 != 0 {
        return Err(VolumeError::TrailingBytes(payload.len() % 4));
    }
    let found = payload.len() / 4;
    if found != expected {
        return Err(VolumeError::LengthMismatch { expected, found });
    }
    let samples: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let data = Array3::from_shape_vec((dims[0], dims[1], dims[2]), samples)
        .expect("payload length checked against header");
    Volume::new(data, spacings[2], spacings[0], spacings[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    DownTrack,
    CrossTrack,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::CrossTrack, Direction::DownTrack];

    pub fn perpendicular(self) -> Direction {
        match self {
            Direction::DownTrack => Direction::CrossTrack,
            Direction::CrossTrack => Direction::DownTrack,
        }
    }
}

/// Time × space image made of adjacent A-scans.
#[derive(Debug, Clone, PartialEq)]
pub struct BScan {
    pub data: Array2<f64>,
    pub direction: Direction,
    /// `(down_idx, cross_idx)` of the central A-scan.
    pub origin: (usize, usize),
}

impl BScan {
    pub fn n_time(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_space(&self) -> usize {
        self.data.ncols()
    }

    pub fn central_column(&self) -> usize {
        self.n_space() / 2
    }

    pub fn central_ascan(&self) -> ArrayView1<'_, f64> {
        self.data.column(self.central_column())
    }
}

/// `h × w` window of a B-scan. `row0`/`col0` locate its top-left corner in the
/// parent B-scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub data: Array2<f64>,
    pub row0: usize,
    pub col0: usize,
}

impl Patch {
    pub fn new(data: Array2<f64>) -> Self {
        Self {
            data,
            row0: 0,
            col0: 0,
        }
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    /// `(t_idx, x_idx)` of the window center in parent coordinates.
    pub fn center(&self) -> (usize, usize) {
        (
            self.row0 + self.data.nrows() / 2,
            self.col0 + self.data.ncols() / 2,
        )
    }
}

/// Extracts the `n_time × (2·half_width + 1)` B-scan centered on an A-scan.
/// Columns that would fall outside the lane repeat the boundary A-scan.
pub fn extract_bscan(
    volume: &Volume,
    direction: Direction,
    down_idx: usize,
    cross_idx: usize,
    half_width: usize,
) -> Result<BScan, ExtractError> {
    let (n_down, n_cross, n_time) = volume.data.dim();
    if down_idx >= n_down || cross_idx >= n_cross {
        return Err(ExtractError::CenterOutOfBounds {
            down: down_idx,
            cross: cross_idx,
            n_down,
            n_cross,
        });
    }
    let width = 2 * half_width + 1;
    let mut data = Array2::zeros((n_time, width));
    for col in 0..width {
        let offset = col as isize - half_width as isize;
        let (d, c) = match direction {
            Direction::DownTrack => (clamp_index(down_idx, offset, n_down), cross_idx),
            Direction::CrossTrack => (down_idx, clamp_index(cross_idx, offset, n_cross)),
        };
        data.column_mut(col).assign(&volume.data.slice(s![d, c, ..]));
    }
    Ok(BScan {
        data,
        direction,
        origin: (down_idx, cross_idx),
    })
}

pub(crate) fn clamp_index(center: usize, offset: isize, len: usize) -> usize {
    (center as isize + offset).clamp(0, len as isize - 1) as usize
}

/// Start of a length-`size` window centered at `center` and shifted to lie
/// inside `[0, len)`. Requires `size <= len`.
pub fn window_start(center: usize, size: usize, len: usize) -> usize {
    debug_assert!(size <= len);
    center.saturating_sub(size / 2).min(len - size)
}

/// Extracts an `h × w` window at `center_t` on the central A-scan column.
/// Windows overhanging an edge are shifted inside, never padded.
pub fn extract_patch(
    bscan: &BScan,
    center_t: usize,
    h: usize,
    w: usize,
) -> Result<Patch, ExtractError> {
    let (rows, cols) = bscan.data.dim();
    if h == 0 || w == 0 {
        return Err(ExtractError::EmptyPatch);
    }
    if h > rows || w > cols {
        return Err(ExtractError::PatchTooLarge { h, w, rows, cols });
    }
    let row0 = window_start(center_t, h, rows);
    let col0 = window_start(bscan.central_column(), w, cols);
    Ok(Patch {
        data: bscan.data.slice(s![row0..row0 + h, col0..col0 + w]).to_owned(),
        row0,
        col0,
    })
}

/// Buried object record. Positions are in meters in the lane frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub lane_id: u32,
    pub object_id: u32,
    pub down_m: f64,
    pub cross_m: f64,
    pub depth_m: f64,
    #[serde(with = "bool_as_int")]
    pub is_threat: bool,
}

mod bool_as_int {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("is_threat must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum TruthError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("duplicate object_id {object_id} in lane {lane_id}")]
    DuplicateObject { lane_id: u32, object_id: u32 },
    #[error("object {object_id} in lane {lane_id} has negative depth")]
    NegativeDepth { lane_id: u32, object_id: u32 },
}

pub fn write_truths<W: Write>(truths: &[GroundTruth], w: W) -> Result<(), TruthError> {
    let mut writer = csv::Writer::from_writer(w);
    for t in truths {
        writer.serialize(t)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_truths<R: Read>(r: R) -> Result<Vec<GroundTruth>, TruthError> {
    let mut reader = csv::Reader::from_reader(r);
    let truths: Vec<GroundTruth> = reader.deserialize().collect::<Result<_, _>>()?;
    let mut seen = std::collections::HashSet::new();
    for t in &truths {
        if !seen.insert((t.lane_id, t.object_id)) {
            return Err(TruthError::DuplicateObject {
                lane_id: t.lane_id,
                object_id: t.object_id,
            });
        }
        if t.depth_m < 0.0 {
            return Err(TruthError::NegativeDepth {
                lane_id: t.lane_id,
                object_id: t.object_id,
            });
        }
    }
    Ok(truths)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Threat,
    NonThreat,
}

/// Prescreener-flagged location. The label is derived from `matched_object`,
/// which `associate` fills in when the alarm lies inside a threat's halo.
#[derive(Debug, Clone, PartialEq)]
pub struct Alarm {
    pub lane_id: u32,
    pub down_m: f64,
    pub cross_m: f64,
    pub grid_pos: (usize, usize),
    pub matched_object: Option<u32>,
    pub confidence: Option<f64>,
}

impl Alarm {
    pub fn label(&self) -> Label {
        if self.matched_object.is_some() {
            Label::Threat
        } else {
            Label::NonThreat
        }
    }

    pub fn is_threat(&self) -> bool {
        self.matched_object.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_volume(n_down: usize, n_cross: usize, n_time: usize) -> Volume {
        let data = Array3::from_shape_fn((n_down, n_cross, n_time), |(d, c, t)| {
            (d * 10_000 + c * 100 + t) as f64
        });
        Volume::new(data, 0.1, 0.05, 0.05).unwrap()
    }

    fn to_bytes(v: &Volume) -> Vec<u8> {
        let mut buf = Vec::new();
        write_volume(v, &mut buf).unwrap();
        buf
    }

    #[test]
    fn roundtrip_small_volume() {
        let v = ramp_volume(4, 3, 8);
        let back = read_volume(&mut to_bytes(&v).as_slice()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lane.gprv");
        let v = ramp_volume(2, 5, 3);
        save_volume(&v, &path).unwrap();
        assert_eq!(load_volume(&path).unwrap(), v);
    }

    #[test]
    fn file_layout_is_time_fastest() {
        let v = ramp_volume(2, 2, 3);
        let bytes = to_bytes(&v);
        assert_eq!(&bytes[..4], b"GPRV");
        assert_eq!(bytes.len(), HEADER_LEN + 12 * 4);
        let sample = |i: usize| {
            let o = HEADER_LEN + 4 * i;
            f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap())
        };
        assert_eq!(sample(1), 1.0);
        assert_eq!(sample(3), 100.0);
        assert_eq!(sample(6), 10_000.0);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = to_bytes(&ramp_volume(2, 2, 2));
        bytes[0] = b'X';
        let err = read_volume(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(err, VolumeError::BadMagic(_)), "{err}");
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn short_payload_rejected() {
        let mut bytes = to_bytes(&ramp_volume(2, 2, 2));
        bytes.truncate(bytes.len() - 4);
        let err = read_volume(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(
            err,
            VolumeError::LengthMismatch {
                expected: 8,
                found: 7
            }
        ));
    }

    #[test]
    fn non_finite_spacing_rejected() {
        let mut bytes = to_bytes(&ramp_volume(2, 2, 2));
        bytes[34..42].copy_from_slice(&f64::NAN.to_le_bytes());
        match read_volume(&mut bytes.as_slice()).unwrap_err() {
            VolumeError::InvalidSpacing { field, .. } => assert_eq!(field, "dt"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn zero_dimension_rejected() {
        let mut bytes = to_bytes(&ramp_volume(2, 2, 2));
        bytes[10..14].copy_from_slice(&0u32.to_le_bytes());
        match read_volume(&mut bytes.as_slice()).unwrap_err() {
            VolumeError::ZeroDimension { field } => assert_eq!(field, "n_cross"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn interior_bscan_is_direct_slice() {
        let v = ramp_volume(30, 25, 6);
        let b = extract_bscan(&v, Direction::CrossTrack, 7, 12, 10).unwrap();
        assert_eq!(b.data.dim(), (6, 21));
        for col in 0..21 {
            assert_eq!(b.data.column(col), v.ascan(7, 2 + col));
        }
        let b = extract_bscan(&v, Direction::DownTrack, 15, 3, 10).unwrap();
        for col in 0..21 {
            assert_eq!(b.data.column(col), v.ascan(5 + col, 3));
        }
    }

    #[test]
    fn edge_bscan_clamps_columns() {
        let v = ramp_volume(5, 6, 4);
        let b = extract_bscan(&v, Direction::CrossTrack, 2, 0, 2).unwrap();
        assert_eq!(b.data.column(0), v.ascan(2, 0));
        assert_eq!(b.data.column(1), v.ascan(2, 0));
        assert_eq!(b.data.column(2), v.ascan(2, 0));
        assert_eq!(b.data.column(3), v.ascan(2, 1));
        assert_eq!(b.data.column(4), v.ascan(2, 2));
    }

    #[test]
    fn out_of_bounds_center_rejected() {
        let v = ramp_volume(5, 6, 4);
        assert!(extract_bscan(&v, Direction::DownTrack, 5, 0, 2).is_err());
        assert!(extract_bscan(&v, Direction::DownTrack, 0, 6, 2).is_err());
    }

    #[test]
    fn both_directions_share_central_ascan() {
        let v = ramp_volume(9, 7, 5);
        for d in 0..9 {
            for c in 0..7 {
                let down = extract_bscan(&v, Direction::DownTrack, d, c, 3).unwrap();
                let cross = extract_bscan(&v, Direction::CrossTrack, d, c, 3).unwrap();
                assert_eq!(down.central_ascan(), cross.central_ascan());
                assert_eq!(down.central_ascan(), v.ascan(d, c));
            }
        }
    }

    fn bscan_of(rows: usize, cols: usize) -> BScan {
        BScan {
            data: Array2::from_shape_fn((rows, cols), |(t, x)| (t * 1000 + x) as f64),
            direction: Direction::DownTrack,
            origin: (0, 0),
        }
    }

    #[test]
    fn interior_patch_is_contiguous_slice() {
        let b = bscan_of(330, 21);
        let p = extract_patch(&b, 100, 18, 20).unwrap();
        assert_eq!(p.data.dim(), (18, 20));
        assert_eq!((p.row0, p.col0), (91, 0));
        assert_eq!(p.data[[0, 0]], 91_000.0);
        assert_eq!(p.data[[17, 19]], 108_019.0);
    }

    #[test]
    fn patch_at_top_edge_shifts_down() {
        let b = bscan_of(330, 21);
        let p = extract_patch(&b, 0, 18, 20).unwrap();
        assert_eq!(p.row0, 0);
        assert_eq!(p.data[[17, 0]], 17_000.0);
        let p = extract_patch(&b, 329, 18, 20).unwrap();
        assert_eq!(p.row0, 312);
    }

    #[test]
    fn oversized_patch_rejected() {
        let b = bscan_of(10, 5);
        assert_eq!(
            extract_patch(&b, 0, 11, 5),
            Err(ExtractError::PatchTooLarge {
                h: 11,
                w: 5,
                rows: 10,
                cols: 5
            })
        );
        assert!(extract_patch(&b, 0, 10, 6).is_err());
    }

    #[test]
    fn truths_csv_roundtrip_and_header() {
        let truths = vec![
            GroundTruth {
                lane_id: 3,
                object_id: 0,
                down_m: 1.5,
                cross_m: 0.75,
                depth_m: 0.2,
                is_threat: true,
            },
            GroundTruth {
                lane_id: 3,
                object_id: 1,
                down_m: 4.0,
                cross_m: 0.5,
                depth_m: 0.1,
                is_threat: false,
            },
        ];
        let mut buf = Vec::new();
        write_truths(&truths, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("lane_id,object_id,down_m,cross_m,depth_m,is_threat\n"));
        assert!(text.contains("3,0,1.5,0.75,0.2,1\n"));
        assert_eq!(read_truths(buf.as_slice()).unwrap(), truths);
    }

    #[test]
    fn duplicate_truth_ids_rejected() {
        let csv = "lane_id,object_id,down_m,cross_m,depth_m,is_threat\n0,1,1,1,0.1,1\n0,1,2,1,0.1,0\n";
        assert!(matches!(
            read_truths(csv.as_bytes()),
            Err(TruthError::DuplicateObject { .. })
        ));
    }

    #[test]
    fn alarm_label_follows_match() {
        let mut a = Alarm {
            lane_id: 0,
            down_m: 0.0,
            cross_m: 0.0,
            grid_pos: (0, 0),
            matched_object: None,
            confidence: None,
        };
        assert_eq!(a.label(), Label::NonThreat);
        a.matched_object = Some(4);
        assert_eq!(a.label(), Label::Threat);
    }

    proptest! {
        #[test]
        fn f32_volumes_roundtrip_bit_exact(
            dims in (1usize..5, 1usize..5, 1usize..9),
            seed in any::<u32>(),
        ) {
            let (nd, nc, nt) = dims;
            let data = Array3::from_shape_fn((nd, nc, nt), |(d, c, t)| {
                let h = (seed as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    ^ ((d * 131 + c * 17 + t) as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
                let bits = (h >> 32) as u32;
                let v = f32::from_bits(bits);
                if v.is_finite() { v as f64 } else { (bits % 1000) as f64 - 500.0 }
            });
            let v = Volume::new(data, 0.1, 0.05, 0.025).unwrap();
            let back = read_volume(&mut to_bytes(&v).as_slice()).unwrap();
            prop_assert_eq!(back.dt_ns.to_bits(), v.dt_ns.to_bits());
            for (a, b) in back.data().iter().zip(v.data().iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn patch_always_full_size(rows in 1usize..40, cols in 1usize..30, h in 1usize..40, w in 1usize..30) {
            prop_assume!(h <= rows && w <= cols);
            let b = bscan_of(rows, cols);
            for t in 0..rows {
                let p = extract_patch(&b, t, h, w).unwrap();
                prop_assert_eq!(p.data.dim(), (h, w));
                // brute-force offset oracle
                let r0 = (t as isize - (h / 2) as isize).max(0).min((rows - h) as isize) as usize;
                let c0 = ((cols / 2) as isize - (w / 2) as isize).max(0).min((cols - w) as isize) as usize;
                for i in 0..h {
                    for j in 0..w {
                        prop_assert_eq!(p.data[[i, j]], b.data[[r0 + i, c0 + j]]);
                    }
                }
            }
        }
    }

    #[test]
    fn every_bscan_column_is_some_parent_ascan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data = Array3::from_shape_fn((6, 5, 4), |_| rng.gen::<f64>());
        let v = Volume::new(data, 0.1, 0.05, 0.05).unwrap();
        for dir in Direction::BOTH {
            for d in 0..6 {
                for c in 0..5 {
                    let b = extract_bscan(&v, dir, d, c, 3).unwrap();
                    for col in 0..7 {
                        let found = (0..6).any(|dd| {
                            (0..5).any(|cc| b.data.column(col) == v.ascan(dd, cc))
                        });
                        assert!(found);
                        // and it is the clamped neighbour along the B-scan axis
                        let off = col as isize - 3;
                        let (dd, cc) = match dir {
                            Direction::DownTrack => ((d as isize + off).clamp(0, 5) as usize, c),
                            Direction::CrossTrack => (d, (c as isize + off).clamp(0, 4) as usize),
                        };
                        assert_eq!(b.data.column(col), v.ascan(dd, cc));
                    }
                }
            }
        }
    }
}
