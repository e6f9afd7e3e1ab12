//! On-disk sample format.
//!
//! A sample directory holds `manifest.json` plus one raw little-endian,
//! row-major file per tensor. Clips are `f32`; depth, tracks and poses are
//! `f64`; masks are one byte per entry.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Clip;
use crate::geom::{CameraPath, CameraPose, DepthMap};
use crate::synth::{MotionLabel, Sample, SceneSpec, SupervisionMode};
use crate::tracks::{Role, TrackSet};

pub const SAMPLE_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("unsupported schema version {found} (this build reads {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("corrupt tensor file {file}: {reason}")]
    Corrupt { file: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    U32,
    U8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl TensorEntry {
    fn new(name: &str, dtype: DType, shape: Vec<usize>) -> Self {
        let ext = match dtype {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::U32 => "u32",
            DType::U8 => "u8",
        };
        Self {
            name: name.into(),
            file: format!("{name}.{ext}"),
            dtype,
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub schema_version: u32,
    pub mode: SupervisionMode,
    pub label: MotionLabel,
    pub spec: SceneSpec,
    pub tensors: Vec<TensorEntry>,
}

pub fn f32_to_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn f64_to_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn u32_to_bytes(v: &[u32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn bytes_to_f32(b: &[u8]) -> Vec<f32> {
    b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

pub fn bytes_to_f64(b: &[u8]) -> Vec<f64> {
    b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}

pub fn bytes_to_u32(b: &[u8]) -> Vec<u32> {
    b.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()
}

fn bools_to_bytes(v: &[bool]) -> Vec<u8> {
    v.iter().map(|&b| b as u8).collect()
}

/// Writes `value` as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value).expect("manifest types serialize");
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads the raw bytes of one tensor, checking the byte count against its
/// declared shape and dtype.
pub fn read_tensor_bytes(dir: &Path, entry: &TensorEntry) -> Result<Vec<u8>, IoError> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let want = entry.numel() * entry.dtype.size();
    if bytes.len() != want {
        return Err(IoError::Corrupt {
            file: entry.file.clone(),
            reason: format!("expected {want} bytes for shape {:?}, found {}", entry.shape, bytes.len()),
        });
    }
    Ok(bytes)
}

pub fn write_sample(dir: &Path, s: &Sample) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let [t, h, w, c] = s.canonical.shape();
    let n = s.tracks.len();
    let tt = s.tracks.frames;
    let poses: Vec<f64> = s.path.poses.iter().flat_map(|p| p.to_row_major()).collect();
    let roles: Vec<u8> = s.tracks.role.iter().map(|r| (*r == Role::Passive) as u8).collect();
    let flat = |ts: &TrackSet| -> Vec<f64> { ts.positions.iter().flat_map(|p| *p).collect() };
    let items: Vec<(TensorEntry, Vec<u8>)> = vec![
        (TensorEntry::new("canonical", DType::F32, vec![t, h, w, c]), f32_to_bytes(&s.canonical.data)),
        (TensorEntry::new("target", DType::F32, s.target.shape().to_vec()), f32_to_bytes(&s.target.data)),
        (TensorEntry::new("depth0", DType::F64, vec![s.depth0.height, s.depth0.width]), f64_to_bytes(&s.depth0.values)),
        (
            TensorEntry::new("depth0_valid", DType::U8, vec![s.depth0.height, s.depth0.width]),
            bools_to_bytes(&s.depth0.valid),
        ),
        (TensorEntry::new("poses", DType::F64, vec![s.path.len(), 12]), f64_to_bytes(&poses)),
        (TensorEntry::new("tracks", DType::F64, vec![n, tt, 2]), f64_to_bytes(&flat(&s.tracks))),
        (TensorEntry::new("tracks_visible", DType::U8, vec![n, tt]), bools_to_bytes(&s.tracks.visible)),
        (TensorEntry::new("object_id", DType::U32, vec![n]), u32_to_bytes(&s.tracks.object_id)),
        (TensorEntry::new("role", DType::U8, vec![n]), roles),
        (TensorEntry::new("target_tracks", DType::F64, vec![n, tt, 2]), f64_to_bytes(&flat(&s.target_tracks))),
        (
            TensorEntry::new("target_tracks_visible", DType::U8, vec![n, tt]),
            bools_to_bytes(&s.target_tracks.visible),
        ),
        (TensorEntry::new("target_depths", DType::F64, vec![n, tt]), f64_to_bytes(&s.target_depths)),
    ];
    for (e, bytes) in &items {
        let p = dir.join(&e.file);
        fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    let manifest = SampleManifest {
        schema_version: SAMPLE_SCHEMA_VERSION,
        mode: s.mode,
        label: s.label,
        spec: s.spec.clone(),
        tensors: items.into_iter().map(|(e, _)| e).collect(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_sample(dir: &Path) -> Result<Sample, IoError> {
    let mpath = dir.join(MANIFEST_FILE);
    let raw: serde_json::Value = read_json(&mpath)?;
    let found = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| IoError::Manifest {
            path: mpath.clone(),
            reason: "missing schema_version".into(),
        })? as u32;
    if found != SAMPLE_SCHEMA_VERSION {
        return Err(IoError::SchemaVersion {
            found,
            expected: SAMPLE_SCHEMA_VERSION,
        });
    }
    let m: SampleManifest = serde_json::from_value(raw).map_err(|e| IoError::Manifest {
        path: mpath.clone(),
        reason: e.to_string(),
    })?;
    let entry = |name: &str| -> Result<&TensorEntry, IoError> {
        m.tensors.iter().find(|e| e.name == name).ok_or_else(|| IoError::Manifest {
            path: mpath.clone(),
            reason: format!("missing tensor {name}"),
        })
    };
    let corrupt = |e: &TensorEntry, reason: &str| IoError::Corrupt {
        file: e.file.clone(),
        reason: reason.into(),
    };
    let shape_is = |e: &TensorEntry, rank: usize| -> Result<(), IoError> {
        if e.shape.len() != rank {
            return Err(corrupt(e, &format!("expected rank {rank}, found {:?}", e.shape)));
        }
        Ok(())
    };
    let clip = |name: &str| -> Result<Clip, IoError> {
        let e = entry(name)?;
        shape_is(e, 4)?;
        let data = bytes_to_f32(&read_tensor_bytes(dir, e)?);
        Ok(Clip {
            frames: e.shape[0],
            height: e.shape[1],
            width: e.shape[2],
            channels: e.shape[3],
            data,
        })
    };
    let f64s = |name: &str, rank: usize| -> Result<(Vec<usize>, Vec<f64>), IoError> {
        let e = entry(name)?;
        shape_is(e, rank)?;
        Ok((e.shape.clone(), bytes_to_f64(&read_tensor_bytes(dir, e)?)))
    };
    let bools = |name: &str| -> Result<Vec<bool>, IoError> {
        let e = entry(name)?;
        let b = read_tensor_bytes(dir, e)?;
        b.iter()
            .map(|&x| match x {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(corrupt(e, "mask byte not 0 or 1")),
            })
            .collect()
    };

    let canonical = clip("canonical")?;
    let target = clip("target")?;
    let (dshape, dvals) = f64s("depth0", 2)?;
    let depth0 = DepthMap {
        height: dshape[0],
        width: dshape[1],
        values: dvals,
        valid: bools("depth0_valid")?,
    };
    let (pshape, pvals) = f64s("poses", 2)?;
    if pshape[1] != 12 {
        return Err(corrupt(entry("poses")?, "pose rows must have 12 entries"));
    }
    let poses: Vec<CameraPose> = pvals.chunks_exact(12).map(CameraPose::from_row_major).collect();
    let (tshape, tvals) = f64s("tracks", 3)?;
    let (n, frames) = (tshape[0], tshape[1]);
    let object_id = bytes_to_u32(&read_tensor_bytes(dir, entry("object_id")?)?);
    let role: Vec<Role> = read_tensor_bytes(dir, entry("role")?)?
        .iter()
        .map(|&r| if r == 0 { Role::Active } else { Role::Passive })
        .collect();
    if object_id.len() != n || role.len() != n {
        return Err(corrupt(entry("object_id")?, "track count disagrees with tracks tensor"));
    }
    let build = |vals: Vec<f64>, visible: Vec<bool>| TrackSet {
        frames,
        height: m.spec.height,
        width: m.spec.width,
        positions: vals.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        visible,
        object_id: object_id.clone(),
        role: role.clone(),
    };
    let tracks = build(tvals, bools("tracks_visible")?);
    let (_, ttvals) = f64s("target_tracks", 3)?;
    let target_tracks = build(ttvals, bools("target_tracks_visible")?);
    let (_, target_depths) = f64s("target_depths", 2)?;
    Ok(Sample {
        canonical,
        target,
        depth0,
        path: CameraPath {
            intrinsics: m.spec.intrinsics,
            poses,
        },
        tracks,
        target_tracks,
        target_depths,
        label: m.label,
        mode: m.mode,
        spec: m.spec,
    })
}

/// Directory name of sample `i` inside a dataset directory.
pub fn sample_dir_name(i: usize) -> String {
    format!("sample_{i:05}")
}

/// Sample directories of a dataset, in index order.
pub fn list_samples(dataset: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dataset).map_err(io_err(dataset))? {
        let entry = entry.map_err(io_err(dataset))?;
        let p = entry.path();
        if p.is_dir()
            && p
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("sample_"))
        {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn read_dataset(dataset: &Path) -> Result<Vec<Sample>, IoError> {
    list_samples(dataset)?.iter().map(|d| read_sample(d)).collect()
}
