//! Persistence for tensors, dataset manifests, and prediction dumps.
//!
//! Everything on disk is bit-reproducible: tensors use a small binary layout
//! (`VTN1`), manifests and reports are TOML, prediction dumps are CSV. All
//! writers are pure functions of their inputs so re-running a pipeline with
//! the same config produces byte-identical artifacts.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magic bytes opening every tensor file.
pub const VTENSOR_MAGIC: [u8; 4] = *b"VTN1";

/// Refuse to allocate tensors above this element count when reading; protects
/// against garbage headers, not a real capacity limit.
const MAX_ELEMENTS: u64 = 1 << 33;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed tensor at byte {offset}: {what}")]
    Format {
        path: PathBuf,
        offset: u64,
        what: String,
    },
    #[error("{path}: tensor size invalid: {what}")]
    Size { path: PathBuf, what: String },
    #[error("{path}: invalid TOML: {what}")]
    Toml { path: PathBuf, what: String },
    #[error("manifest {path}: {} validation problem(s):\n{}", .problems.len(), .problems.join("\n"))]
    Validation {
        path: PathBuf,
        problems: Vec<String>,
    },
    #[error("{path}:{line}: bad prediction dump: {what}")]
    Dump {
        path: PathBuf,
        line: usize,
        what: String,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// VTENSOR binary files
// ---------------------------------------------------------------------------
// Layout: magic "VTN1" | u32 rank | rank x u32 dims | u8 dtype | payload.
// All integers little-endian; payload row-major (last dim fastest).
// dtype 0 = f32 LE (clips, scene features), dtype 1 = f64 LE (checkpoints).

fn checked_element_count(path: &Path, dims: &[u32]) -> Result<u64, DataError> {
    let mut n: u64 = 1;
    for &d in dims {
        n = n.checked_mul(u64::from(d)).ok_or_else(|| DataError::Size {
            path: path.to_path_buf(),
            what: format!("element count overflows u64 for dims {dims:?}"),
        })?;
    }
    if n > MAX_ELEMENTS {
        return Err(DataError::Size {
            path: path.to_path_buf(),
            what: format!("{n} elements exceeds the {MAX_ELEMENTS} limit"),
        });
    }
    Ok(n)
}

fn write_vtensor(path: &Path, dims: &[u32], dtype: u8, payload: &[u8]) -> Result<(), DataError> {
    checked_element_count(path, dims)?;
    let mut bytes = Vec::with_capacity(4 + 4 + dims.len() * 4 + 1 + payload.len());
    bytes.extend_from_slice(&VTENSOR_MAGIC);
    bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    bytes.push(dtype);
    bytes.extend_from_slice(payload);
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

struct RawTensor {
    dims: Vec<u32>,
    dtype: u8,
    payload: Vec<u8>,
}

fn read_vtensor(path: &Path) -> Result<RawTensor, DataError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let format = |offset: usize, what: String| DataError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        what,
    };
    let take = |off: usize, len: usize| -> Result<&[u8], DataError> {
        bytes.get(off..off + len).ok_or_else(|| {
            format(
                bytes.len(),
                format!("file truncated: needed {} bytes at offset {off}", len),
            )
        })
    };

    let magic = take(0, 4)?;
    if magic != VTENSOR_MAGIC {
        return Err(format(0, format!("bad magic {magic:?}, expected \"VTN1\"")));
    }
    let rank = u32::from_le_bytes(take(4, 4)?.try_into().unwrap()) as usize;
    if rank == 0 || rank > 32 {
        return Err(format(4, format!("implausible rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 8 + 4 * i;
        dims.push(u32::from_le_bytes(take(off, 4)?.try_into().unwrap()));
    }
    let dtype_off = 8 + 4 * rank;
    let dtype = take(dtype_off, 1)?[0];
    let elem_size = match dtype {
        0 => 4,
        1 => 8,
        other => {
            return Err(format(dtype_off, format!("unknown dtype code {other}")));
        }
    };
    let n = checked_element_count(path, &dims)?;
    let payload_off = dtype_off + 1;
    let expected = n * elem_size;
    let actual = (bytes.len() - payload_off) as u64;
    if actual != expected {
        return Err(format(
            payload_off,
            format!("payload holds {actual} bytes, dims {dims:?} require {expected}"),
        ));
    }
    Ok(RawTensor {
        dims,
        dtype,
        payload: bytes[payload_off..].to_vec(),
    })
}

/// Write an f32 tensor (dtype code 0).
pub fn write_tensor_f32(path: &Path, dims: &[u32], data: &[f32]) -> Result<(), DataError> {
    let n = checked_element_count(path, dims)?;
    if n != data.len() as u64 {
        return Err(DataError::Size {
            path: path.to_path_buf(),
            what: format!("{} values do not fill dims {dims:?}", data.len()),
        });
    }
    let mut payload = Vec::with_capacity(data.len() * 4);
    for v in data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_vtensor(path, dims, 0, &payload)
}

/// Read an f32 tensor, returning its dims and row-major values.
pub fn read_tensor_f32(path: &Path) -> Result<(Vec<u32>, Vec<f32>), DataError> {
    let raw = read_vtensor(path)?;
    if raw.dtype != 0 {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            offset: (8 + 4 * raw.dims.len()) as u64,
            what: format!("expected dtype 0 (f32), found {}", raw.dtype),
        });
    }
    let values = raw
        .payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((raw.dims, values))
}

/// Write an f64 tensor (dtype code 1, used for checkpoints).
pub fn write_tensor_f64(path: &Path, dims: &[u32], data: &[f64]) -> Result<(), DataError> {
    let n = checked_element_count(path, dims)?;
    if n != data.len() as u64 {
        return Err(DataError::Size {
            path: path.to_path_buf(),
            what: format!("{} values do not fill dims {dims:?}", data.len()),
        });
    }
    let mut payload = Vec::with_capacity(data.len() * 8);
    for v in data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_vtensor(path, dims, 1, &payload)
}

/// Read an f64 tensor.
pub fn read_tensor_f64(path: &Path) -> Result<(Vec<u32>, Vec<f64>), DataError> {
    let raw = read_vtensor(path)?;
    if raw.dtype != 1 {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            offset: (8 + 4 * raw.dims.len()) as u64,
            what: format!("expected dtype 1 (f64), found {}", raw.dtype),
        });
    }
    let values = raw
        .payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((raw.dims, values))
}

// ---------------------------------------------------------------------------
// Clips
// ---------------------------------------------------------------------------

/// One video clip: a rank-4 f32 array in (H, W, T, D) order, D = channels.
/// Generator-produced clips hold normalized pixel intensities in [0, 1];
/// every value must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTensor {
    pub data: Array4<f32>,
}

impl ClipTensor {
    /// Wrap an array as a clip. Panics on empty axes or non-finite values —
    /// those are construction bugs, not runtime conditions.
    pub fn new(data: Array4<f32>) -> Self {
        let dims = data.dim();
        assert!(
            dims.0 > 0 && dims.1 > 0 && dims.2 > 0 && dims.3 > 0,
            "clip dims must be strictly positive, got {dims:?}"
        );
        assert!(
            data.iter().all(|v| v.is_finite()),
            "clip contains non-finite values"
        );
        ClipTensor { data }
    }

    /// (H, W, T, D)
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let (h, w, t, d) = self.dims();
        let dims = [h as u32, w as u32, t as u32, d as u32];
        let flat = self.data.as_standard_layout();
        write_tensor_f32(path, &dims, flat.as_slice().unwrap())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let (dims, values) = read_tensor_f32(path)?;
        if dims.len() != 4 || dims.contains(&0) {
            return Err(DataError::Format {
                path: path.to_path_buf(),
                offset: 4,
                what: format!("clip requires 4 positive dims, found {dims:?}"),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Format {
                path: path.to_path_buf(),
                offset: (9 + 4 * dims.len() + 4 * pos) as u64,
                what: "non-finite value in payload".to_string(),
            });
        }
        let shape = (
            dims[0] as usize,
            dims[1] as usize,
            dims[2] as usize,
            dims[3] as usize,
        );
        let data = Array4::from_shape_vec(shape, values).expect("length checked by reader");
        Ok(ClipTensor { data })
    }
}

// ---------------------------------------------------------------------------
// Dataset manifests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ClosedTest,
    OpenTest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ClosedTest => "closed_test",
            Split::OpenTest => "open_test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub clip_id: String,
    /// Clip file, relative to the manifest's directory.
    pub path: String,
    pub action_label: u32,
    pub scene_label: u32,
    pub split: Split,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_feature_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Number of known action classes; train/closed_test labels lie below it,
    /// open_test labels at or above it.
    pub c_known: u32,
    pub n_scenes: u32,
    pub clips: Vec<ClipRecord>,
}

impl DatasetManifest {
    /// Records of one split, in manifest order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.clips.iter().filter(move |c| c.split == split)
    }
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), DataError> {
    let text = toml::to_string(manifest).map_err(|e| DataError::Toml {
        path: path.to_path_buf(),
        what: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Load a manifest and check every invariant eagerly. All problems are
/// collected before failing so one pass reports every offending record.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| DataError::Toml {
        path: path.to_path_buf(),
        what: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for (i, clip) in manifest.clips.iter().enumerate() {
        let tag = format!("clip '{}' (index {i})", clip.clip_id);
        if !seen.insert(clip.clip_id.as_str()) {
            problems.push(format!("{tag}: duplicate clip_id"));
        }
        match clip.split {
            Split::Train | Split::ClosedTest => {
                if clip.action_label >= manifest.c_known {
                    problems.push(format!(
                        "{tag}: {} action_label {} must be < c_known {}",
                        clip.split.as_str(),
                        clip.action_label,
                        manifest.c_known
                    ));
                }
            }
            Split::OpenTest => {
                if clip.action_label < manifest.c_known {
                    problems.push(format!(
                        "{tag}: open_test action_label {} must be >= c_known {}",
                        clip.action_label, manifest.c_known
                    ));
                }
            }
        }
        if clip.scene_label >= manifest.n_scenes {
            problems.push(format!(
                "{tag}: scene_label {} must be < n_scenes {}",
                clip.scene_label, manifest.n_scenes
            ));
        }
        for p in std::iter::once(&clip.path).chain(clip.scene_feature_path.iter()) {
            if !base.join(p).exists() {
                problems.push(format!("{tag}: referenced file '{p}' does not exist"));
            }
        }
    }
    if problems.is_empty() {
        Ok(manifest)
    } else {
        Err(DataError::Validation {
            path: path.to_path_buf(),
            problems,
        })
    }
}

// ---------------------------------------------------------------------------
// Prediction dumps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub clip_id: String,
    pub true_action: u32,
    pub uncertainty: f64,
    pub probs: Vec<f64>,
    pub feature: Vec<f64>,
    pub scene_feature: Option<Vec<f64>>,
}

/// Per-clip inference results plus the provenance needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDump {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<PredictionRow>,
}

impl PredictionDump {
    fn check_rows(&self) -> Result<(), String> {
        let Some(first) = self.rows.first() else {
            return Ok(());
        };
        let (c, d, s) = (
            first.probs.len(),
            first.feature.len(),
            first.scene_feature.as_ref().map(Vec::len),
        );
        for row in &self.rows {
            if row.clip_id.contains([',', '\n', '\r']) {
                return Err(format!("clip_id '{}' contains a separator", row.clip_id));
            }
            if row.probs.len() != c
                || row.feature.len() != d
                || row.scene_feature.as_ref().map(Vec::len) != s
            {
                return Err(format!("row '{}' has inconsistent column counts", row.clip_id));
            }
            let sum: f64 = row.probs.iter().sum();
            if (sum - 1.0).abs() > 1e-5 {
                return Err(format!("row '{}': probs sum to {sum}, not 1", row.clip_id));
            }
            if !(row.uncertainty > 0.0 && row.uncertainty <= 1.0) {
                return Err(format!(
                    "row '{}': uncertainty {} outside (0, 1]",
                    row.clip_id, row.uncertainty
                ));
            }
            let all = row
                .probs
                .iter()
                .chain(&row.feature)
                .chain(row.scene_feature.iter().flatten());
            if !all.clone().all(|v| v.is_finite()) {
                return Err(format!("row '{}' holds non-finite values", row.clip_id));
            }
            drop(all);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        self.check_rows().map_err(|what| DataError::Dump {
            path: path.to_path_buf(),
            line: 0,
            what,
        })?;
        let mut out = String::new();
        let _ = writeln!(out, "# config_hash={} seed={}", self.config_hash, self.seed);
        out.push_str("clip_id,true_action,uncertainty");
        let (c, d, s) = self
            .rows
            .first()
            .map(|r| {
                (
                    r.probs.len(),
                    r.feature.len(),
                    r.scene_feature.as_ref().map_or(0, Vec::len),
                )
            })
            .unwrap_or((0, 0, 0));
        for i in 0..c {
            let _ = write!(out, ",p{i}");
        }
        for i in 0..d {
            let _ = write!(out, ",f{i}");
        }
        for i in 0..s {
            let _ = write!(out, ",s{i}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{},{}", row.clip_id, row.true_action, row.uncertainty);
            for v in row.probs.iter().chain(&row.feature) {
                let _ = write!(out, ",{v}");
            }
            for v in row.scene_feature.iter().flatten() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let dump_err = |line: usize, what: String| DataError::Dump {
            path: path.to_path_buf(),
            line,
            what,
        };

        let mut config_hash = String::new();
        let mut seed = 0u64;
        let mut lines = text.lines().enumerate().peekable();
        while let Some((no, line)) = lines.peek().copied() {
            if !line.starts_with('#') {
                break;
            }
            for token in line.trim_start_matches('#').split_whitespace() {
                if let Some(h) = token.strip_prefix("config_hash=") {
                    config_hash = h.to_string();
                } else if let Some(s) = token.strip_prefix("seed=") {
                    seed = s
                        .parse()
                        .map_err(|e| dump_err(no + 1, format!("bad seed: {e}")))?;
                }
            }
            lines.next();
        }

        let (header_no, header) = lines
            .next()
            .ok_or_else(|| dump_err(1, "missing header row".to_string()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "clip_id" || cols[1] != "true_action" || cols[2] != "uncertainty"
        {
            return Err(dump_err(
                header_no + 1,
                format!("unexpected header start: {:?}", &cols[..cols.len().min(3)]),
            ));
        }
        let count_block = |prefix: char, start: usize| -> usize {
            cols[start..]
                .iter()
                .take_while(|c| {
                    c.starts_with(prefix) && c[1..].chars().all(|ch| ch.is_ascii_digit())
                })
                .count()
        };
        let c = count_block('p', 3);
        let d = count_block('f', 3 + c);
        let s = count_block('s', 3 + c + d);
        if 3 + c + d + s != cols.len() {
            return Err(dump_err(
                header_no + 1,
                format!("unrecognized column '{}'", cols[3 + c + d + s]),
            ));
        }

        let mut rows = Vec::new();
        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(dump_err(
                    no + 1,
                    format!("{} fields, header has {}", fields.len(), cols.len()),
                ));
            }
            let parse_f64 = |idx: usize| -> Result<f64, DataError> {
                fields[idx]
                    .parse::<f64>()
                    .map_err(|e| dump_err(no + 1, format!("column {}: {e}", cols[idx])))
            };
            let true_action = fields[1]
                .parse::<u32>()
                .map_err(|e| dump_err(no + 1, format!("column true_action: {e}")))?;
            let uncertainty = parse_f64(2)?;
            let mut probs = Vec::with_capacity(c);
            for i in 0..c {
                probs.push(parse_f64(3 + i)?);
            }
            let mut feature = Vec::with_capacity(d);
            for i in 0..d {
                feature.push(parse_f64(3 + c + i)?);
            }
            let scene_feature = if s > 0 {
                let mut sf = Vec::with_capacity(s);
                for i in 0..s {
                    sf.push(parse_f64(3 + c + d + i)?);
                }
                Some(sf)
            } else {
                None
            };
            rows.push(PredictionRow {
                clip_id: fields[0].to_string(),
                true_action,
                uncertainty,
                probs,
                feature,
                scene_feature,
            });
        }
        let dump = PredictionDump {
            config_hash,
            seed,
            rows,
        };
        dump.check_rows()
            .map_err(|what| dump_err(0, what))?;
        Ok(dump)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    #[test]
    fn roundtrip_identity_on_single_element() {
        let dir = tmp();
        let path = dir.path().join("one.vtn");
        let clip = ClipTensor::new(Array4::from_elem((1, 1, 1, 1), 0.5));
        clip.save(&path).unwrap();
        assert_eq!(ClipTensor::load(&path).unwrap(), clip);
    }

    #[test]
    fn file_bytes_match_hand_packed_layout() {
        // Independently pack header + payload and compare byte-for-byte.
        let dir = tmp();
        let path = dir.path().join("t.vtn");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values: Vec<f32> = (0..4 * 4 * 2 * 3).map(|_| rng.gen::<f32>()).collect();
        let clip = ClipTensor::new(
            Array4::from_shape_vec((4, 4, 2, 3), values.clone()).unwrap(),
        );
        clip.save(&path).unwrap();

        let mut expected = Vec::new();
        expected.extend_from_slice(b"VTN1");
        expected.extend_from_slice(&4u32.to_le_bytes());
        for d in [4u32, 4, 2, 3] {
            expected.extend_from_slice(&d.to_le_bytes());
        }
        expected.push(0);
        for v in &values {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(std::fs::read(&path).unwrap(), expected);

        let back = ClipTensor::load(&path).unwrap();
        for (a, b) in back.data.iter().zip(clip.data.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let dir = tmp();
        let path = dir.path().join("bad.vtn");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00\x01\x00\x00\x00\x00").unwrap();
        match ClipTensor::load(&path) {
            Err(DataError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let dir = tmp();
        let path = dir.path().join("short.vtn");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"VTN1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes()); // dims [2] => 8 payload bytes
        bytes.push(0);
        bytes.extend_from_slice(&[0u8; 4]); // only one element
        std::fs::write(&path, &bytes).unwrap();
        match read_tensor_f32(&path) {
            Err(DataError::Format { offset, what, .. }) => {
                assert_eq!(offset, 13); // payload start
                assert!(what.contains("payload"), "{what}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn dtype_mismatch_is_a_format_error() {
        let dir = tmp();
        let path = dir.path().join("f64.vtn");
        write_tensor_f64(&path, &[3], &[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            read_tensor_f32(&path),
            Err(DataError::Format { .. })
        ));
        let (dims, vals) = read_tensor_f64(&path).unwrap();
        assert_eq!(dims, vec![3]);
        assert_eq!(vals, vec![1.0, 2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn tensor_roundtrip_is_bitwise_identity(
            h in 1usize..5, w in 1usize..5, t in 1usize..4, d in 1usize..4,
            seed in 0u64..1000
        ) {
            let dir = tmp();
            let path = dir.path().join("p.vtn");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..h * w * t * d).map(|_| rng.gen_range(-1.0e6..1.0e6)).collect();
            write_tensor_f32(&path, &[h as u32, w as u32, t as u32, d as u32], &data).unwrap();
            let (dims, back) = read_tensor_f32(&path).unwrap();
            prop_assert_eq!(dims, vec![h as u32, w as u32, t as u32, d as u32]);
            prop_assert_eq!(back.len(), data.len());
            for (a, b) in back.iter().zip(&data) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    fn write_dummy(dir: &Path, name: &str) {
        std::fs::write(dir.join(name), b"x").unwrap();
    }

    fn record(id: &str, path: &str, action: u32, scene: u32, split: Split) -> ClipRecord {
        ClipRecord {
            clip_id: id.to_string(),
            path: path.to_string(),
            action_label: action,
            scene_label: scene,
            split,
            seed: 11,
            scene_feature_path: None,
        }
    }

    #[test]
    fn small_manifest_loads() {
        let dir = tmp();
        write_dummy(dir.path(), "a.vtn");
        write_dummy(dir.path(), "b.vtn");
        let m = DatasetManifest {
            c_known: 2,
            n_scenes: 2,
            clips: vec![
                record("a", "a.vtn", 0, 0, Split::Train),
                record("b", "b.vtn", 1, 1, Split::Train),
            ],
        };
        let path = dir.path().join("manifest.toml");
        save_manifest(&m, &path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.clips.len(), 2);
        assert_eq!(loaded, m);
    }

    #[test]
    fn open_label_below_c_known_fails_validation() {
        let dir = tmp();
        write_dummy(dir.path(), "a.vtn");
        let m = DatasetManifest {
            c_known: 2,
            n_scenes: 2,
            clips: vec![record("a", "a.vtn", 1, 0, Split::OpenTest)],
        };
        let path = dir.path().join("manifest.toml");
        save_manifest(&m, &path).unwrap();
        match load_manifest(&path) {
            Err(DataError::Validation { problems, .. }) => {
                assert_eq!(problems.len(), 1);
                assert!(problems[0].contains("open_test action_label 1"), "{problems:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn validation_lists_every_problem() {
        let dir = tmp();
        write_dummy(dir.path(), "a.vtn");
        let m = DatasetManifest {
            c_known: 2,
            n_scenes: 2,
            clips: vec![
                record("a", "a.vtn", 0, 0, Split::Train),
                record("a", "missing.vtn", 5, 9, Split::Train), // dup id, bad labels, missing file
            ],
        };
        let path = dir.path().join("manifest.toml");
        save_manifest(&m, &path).unwrap();
        match load_manifest(&path) {
            Err(DataError::Validation { problems, .. }) => {
                assert_eq!(problems.len(), 4, "{problems:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn manifest_roundtrip_is_identity(
            n_train in 1usize..5,
            n_open in 1usize..3,
            c_known in 1u32..4,
            seed_base in 0u64..1 << 40
        ) {
            let dir = tmp();
            let mut clips = Vec::new();
            for i in 0..n_train + n_open {
                let name = format!("c{i}.vtn");
                write_dummy(dir.path(), &name);
                let open = i >= n_train;
                clips.push(ClipRecord {
                    clip_id: format!("c{i}"),
                    path: name,
                    action_label: if open { c_known + i as u32 } else { i as u32 % c_known },
                    scene_label: i as u32 % 3,
                    split: if open { Split::OpenTest } else { Split::Train },
                    seed: seed_base + i as u64,
                    scene_feature_path: None,
                });
            }
            let m = DatasetManifest { c_known, n_scenes: 3, clips };
            let path = dir.path().join("manifest.toml");
            save_manifest(&m, &path).unwrap();
            prop_assert_eq!(load_manifest(&path).unwrap(), m);
        }
    }

    #[test]
    fn dump_roundtrips_and_validates() {
        let dir = tmp();
        let path = dir.path().join("pred.csv");
        let dump = PredictionDump {
            config_hash: "cafe01".to_string(),
            seed: 9,
            rows: vec![
                PredictionRow {
                    clip_id: "a".into(),
                    true_action: 0,
                    uncertainty: 0.5,
                    probs: vec![0.75, 0.25],
                    feature: vec![1.5, -2.0, 0.25],
                    scene_feature: Some(vec![0.0, 1.0]),
                },
                PredictionRow {
                    clip_id: "b".into(),
                    true_action: 3,
                    uncertainty: 1.0,
                    probs: vec![0.5, 0.5],
                    feature: vec![0.0, 0.125, 3.0],
                    scene_feature: Some(vec![0.6, 0.8]),
                },
            ],
        };
        dump.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=cafe01 seed=9\n"));
        assert!(text.contains("clip_id,true_action,uncertainty,p0,p1,f0,f1,f2,s0,s1"));
        let back = PredictionDump::load(&path).unwrap();
        assert_eq!(back, dump);
    }

    #[test]
    fn dump_rejects_invariant_violations() {
        let dir = tmp();
        let path = dir.path().join("pred.csv");
        let mut dump = PredictionDump {
            config_hash: String::new(),
            seed: 0,
            rows: vec![PredictionRow {
                clip_id: "a".into(),
                true_action: 0,
                uncertainty: 0.5,
                probs: vec![0.9, 0.2], // sums to 1.1
                feature: vec![],
                scene_feature: None,
            }],
        };
        assert!(matches!(dump.save(&path), Err(DataError::Dump { .. })));
        dump.rows[0].probs = vec![0.8, 0.2];
        dump.rows[0].uncertainty = 0.0; // outside (0, 1]
        assert!(matches!(dump.save(&path), Err(DataError::Dump { .. })));
        dump.rows[0].uncertainty = 1.0;
        dump.save(&path).unwrap();
    }
}
