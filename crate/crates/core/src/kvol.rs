//! KVOL: a JSON header (`<path>.json`) next to a raw little-endian payload
//! (`<path>.bin`).
//!
//! ```json
//! {"magic":"KVOL","version":1,"kind":"volume","dims":[I1,I2,I3],"dtype":"f32le","order":"i1-fastest"}
//! ```
//!
//! Voxels are stored with i1 varying fastest, then i2, then i3. Probability
//! maps prepend the class count to `dims` and store classes slowest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::lowrank::DenseTensor3;
use crate::metrics::{LabelVolume, ProbVolume};

pub const MAGIC: &str = "KVOL";
pub const VERSION: u64 = 1;
pub const ORDER: &str = "i1-fastest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Volume,
    Labels,
    Probmap,
}

impl VolumeKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "volume" => Some(VolumeKind::Volume),
            "labels" => Some(VolumeKind::Labels),
            "probmap" => Some(VolumeKind::Probmap),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "u8")]
    U8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32Le => 4,
            DType::U8 => 1,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "f32le" => Some(DType::F32Le),
            "u8" => Some(DType::U8),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub magic: String,
    pub version: u64,
    pub kind: VolumeKind,
    /// `[I1, I2, I3]`, or `[C, I1, I2, I3]` for probability maps.
    pub dims: Vec<usize>,
    pub dtype: DType,
    pub order: String,
}

impl VolumeHeader {
    pub fn new(kind: VolumeKind, dims: Vec<usize>, dtype: DType) -> Self {
        Self {
            magic: MAGIC.to_string(),
            version: VERSION,
            kind,
            dims,
            dtype,
            order: ORDER.to_string(),
        }
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn byte_length(&self) -> usize {
        self.element_count() * self.dtype.size()
    }

    /// Spatial dims `(I1, I2, I3)`.
    pub fn spatial_dims(&self) -> (usize, usize, usize) {
        let d = &self.dims[self.dims.len() - 3..];
        (d[0], d[1], d[2])
    }

    fn validate(&self) -> Result<()> {
        if self.magic != MAGIC {
            return Err(Error::format("magic", format!("expected {MAGIC:?}, found {:?}", self.magic)));
        }
        if self.version != VERSION {
            return Err(Error::format(
                "version",
                format!("expected {VERSION}, found {}", self.version),
            ));
        }
        if self.order != ORDER {
            return Err(Error::format("order", format!("expected {ORDER:?}, found {:?}", self.order)));
        }
        let rank = if self.kind == VolumeKind::Probmap { 4 } else { 3 };
        if self.dims.len() != rank || self.dims.contains(&0) {
            return Err(Error::format(
                "dims",
                format!("{:?} needs {rank} positive extents, found {:?}", self.kind, self.dims),
            ));
        }
        match (self.kind, self.dtype) {
            (VolumeKind::Probmap, DType::U8) => {
                Err(Error::format("dtype", "probability maps require f32le"))
            }
            (VolumeKind::Labels, DType::F32Le) => Err(Error::format("dtype", "label volumes require u8")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl Payload {
    fn dtype(&self) -> DType {
        match self {
            Payload::F32(_) => DType::F32Le,
            Payload::U8(_) => DType::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::U8(v) => v.len(),
        }
    }
}

pub fn header_path(path: &Path) -> PathBuf {
    with_suffix(path, "json")
}

pub fn payload_path(path: &Path) -> PathBuf {
    with_suffix(path, "bin")
}

fn with_suffix(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, name: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::format(name, "missing from header"))
}

fn str_field(obj: &serde_json::Map<String, Value>, name: &str) -> Result<String> {
    field(obj, name)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::format(name, "expected a string"))
}

/// Parses and validates a header document.
pub fn parse_header(text: &str) -> Result<VolumeHeader> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::format("header", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::format("header", "expected a JSON object"))?;

    let magic = str_field(obj, "magic")?;
    if magic != MAGIC {
        return Err(Error::format("magic", format!("expected {MAGIC:?}, found {magic:?}")));
    }
    let version = field(obj, "version")?
        .as_u64()
        .ok_or_else(|| Error::format("version", "expected a non-negative integer"))?;
    let kind_name = str_field(obj, "kind")?;
    let kind = VolumeKind::parse(&kind_name)
        .ok_or_else(|| Error::format("kind", format!("unknown kind {kind_name:?}")))?;
    let dtype_name = str_field(obj, "dtype")?;
    let dtype = DType::parse(&dtype_name)
        .ok_or_else(|| Error::format("dtype", format!("unknown dtype {dtype_name:?}")))?;
    let dims = field(obj, "dims")?
        .as_array()
        .ok_or_else(|| Error::format("dims", "expected an array"))?
        .iter()
        .map(|d| {
            d.as_u64()
                .map(|d| d as usize)
                .ok_or_else(|| Error::format("dims", "expected non-negative integers"))
        })
        .collect::<Result<Vec<_>>>()?;
    let header = VolumeHeader {
        magic,
        version,
        kind,
        dims,
        dtype,
        order: str_field(obj, "order")?,
    };
    header.validate()?;
    Ok(header)
}

pub fn write_kvol(header: &VolumeHeader, payload: &Payload, path: &Path) -> Result<()> {
    header.validate()?;
    if payload.dtype() != header.dtype {
        return Err(Error::usage(format!(
            "payload dtype {:?} does not match header dtype {:?}",
            payload.dtype(),
            header.dtype
        )));
    }
    if payload.len() != header.element_count() {
        return Err(Error::usage(format!(
            "payload has {} elements, header declares {}",
            payload.len(),
            header.element_count()
        )));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes = match payload {
        Payload::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        Payload::U8(v) => v.clone(),
    };
    let hp = header_path(path);
    let text = serde_json::to_string_pretty(header).expect("header serialises");
    fs::write(&hp, text + "\n").map_err(|e| Error::io(&hp, e))?;
    let bp = payload_path(path);
    fs::write(&bp, bytes).map_err(|e| Error::io(&bp, e))
}

pub fn read_kvol(path: &Path) -> Result<(VolumeHeader, Payload)> {
    let hp = header_path(path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header = parse_header(&text)?;
    let bp = payload_path(path);
    let bytes = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    if bytes.len() != header.byte_length() {
        return Err(Error::format(
            "dims",
            format!(
                "payload {} is {} bytes, header implies {}",
                bp.display(),
                bytes.len(),
                header.byte_length()
            ),
        ));
    }
    let payload = match header.dtype {
        DType::F32Le => Payload::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        DType::U8 => Payload::U8(bytes),
    };
    Ok((header, payload))
}

fn expect_kind(header: &VolumeHeader, kind: VolumeKind) -> Result<()> {
    if header.kind != kind {
        return Err(Error::format(
            "kind",
            format!("expected {kind:?}, found {:?}", header.kind),
        ));
    }
    Ok(())
}

/// Rounds every element to `f32` precision, the precision artifacts are
/// stored at.
pub fn quantize(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v as f32 as f64).collect()
}

pub fn write_volume(volume: &DenseTensor3, path: &Path) -> Result<()> {
    let (a, b, c) = volume.dims();
    let header = VolumeHeader::new(VolumeKind::Volume, vec![a, b, c], DType::F32Le);
    let payload = Payload::F32(volume.data().iter().map(|&v| v as f32).collect());
    write_kvol(&header, &payload, path)
}

/// Reads a `volume` artifact; `u8` payloads are scaled by 1/255.
pub fn read_volume(path: &Path) -> Result<DenseTensor3> {
    let (header, payload) = read_kvol(path)?;
    expect_kind(&header, VolumeKind::Volume)?;
    let data = match payload {
        Payload::F32(v) => v.into_iter().map(f64::from).collect(),
        Payload::U8(v) => v.into_iter().map(|x| x as f64 / 255.0).collect(),
    };
    DenseTensor3::new(header.spatial_dims(), data)
        .map_err(|e| Error::format("payload", e.to_string()))
}

pub fn write_labels(labels: &LabelVolume, path: &Path) -> Result<()> {
    let (a, b, c) = labels.dims();
    let header = VolumeHeader::new(VolumeKind::Labels, vec![a, b, c], DType::U8);
    write_kvol(&header, &Payload::U8(labels.labels().to_vec()), path)
}

/// Reads a `labels` artifact as raw class ids.
pub fn read_label_ids(path: &Path) -> Result<((usize, usize, usize), Vec<u8>)> {
    let (header, payload) = read_kvol(path)?;
    expect_kind(&header, VolumeKind::Labels)?;
    match payload {
        Payload::U8(v) => Ok((header.spatial_dims(), v)),
        Payload::F32(_) => Err(Error::format("dtype", "label volumes require u8")),
    }
}

/// Reads a `labels` artifact. `class_count` defaults to one more than the
/// largest label present (at least 2).
pub fn read_labels(path: &Path, class_count: Option<usize>) -> Result<LabelVolume> {
    let (dims, ids) = read_label_ids(path)?;
    let classes = class_count.unwrap_or_else(|| (ids.iter().copied().max().unwrap_or(0) as usize + 1).max(2));
    LabelVolume::new(dims, classes, ids).map_err(|e| Error::format("payload", e.to_string()))
}

pub fn write_probmap(probs: &ProbVolume, path: &Path) -> Result<()> {
    let (a, b, c) = probs.dims();
    let header = VolumeHeader::new(VolumeKind::Probmap, vec![probs.class_count(), a, b, c], DType::F32Le);
    let payload = Payload::F32(probs.data().iter().map(|&v| v as f32).collect());
    write_kvol(&header, &payload, path)
}

pub fn read_probmap(path: &Path) -> Result<ProbVolume> {
    let (header, payload) = read_kvol(path)?;
    expect_kind(&header, VolumeKind::Probmap)?;
    let Payload::F32(v) = payload else {
        return Err(Error::format("dtype", "probability maps require f32le"));
    };
    ProbVolume::new(
        header.spatial_dims(),
        header.dims[0],
        v.into_iter().map(f64::from).collect(),
    )
    .map_err(|e| Error::format("payload", e.to_string()))
}
