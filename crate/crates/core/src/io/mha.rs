//! MetaImage (`.mha`) reader and writer: an ASCII `Key = Value` header followed
//! by a little-endian raw payload, optionally zlib-compressed.

use std::fmt::Display;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Geometry, ScalarVolume};

const IDENTITY: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    Float,
    Double,
    Short,
    UChar,
}

impl ElementType {
    pub fn size(self) -> usize {
        match self {
            ElementType::Float => 4,
            ElementType::Double => 8,
            ElementType::Short => 2,
            ElementType::UChar => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ElementType::Float => "MET_FLOAT",
            ElementType::Double => "MET_DOUBLE",
            ElementType::Short => "MET_SHORT",
            ElementType::UChar => "MET_UCHAR",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "MET_FLOAT" => ElementType::Float,
            "MET_DOUBLE" => ElementType::Double,
            "MET_SHORT" => ElementType::Short,
            "MET_UCHAR" => ElementType::UChar,
            other => return Err(Error::Format(format!("unsupported ElementType `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VoxelData {
    Float(Vec<f32>),
    Double(Vec<f64>),
    Short(Vec<i16>),
    UChar(Vec<u8>),
}

impl VoxelData {
    pub fn element_type(&self) -> ElementType {
        match self {
            VoxelData::Float(_) => ElementType::Float,
            VoxelData::Double(_) => ElementType::Double,
            VoxelData::Short(_) => ElementType::Short,
            VoxelData::UChar(_) => ElementType::UChar,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VoxelData::Float(v) => v.len(),
            VoxelData::Double(v) => v.len(),
            VoxelData::Short(v) => v.len(),
            VoxelData::UChar(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            VoxelData::Float(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VoxelData::Double(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VoxelData::Short(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VoxelData::UChar(v) => v.clone(),
        }
    }

    fn from_le_bytes(ty: ElementType, bytes: &[u8]) -> Self {
        match ty {
            ElementType::Float => VoxelData::Float(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ElementType::Double => VoxelData::Double(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ElementType::Short => VoxelData::Short(
                bytes
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ElementType::UChar => VoxelData::UChar(bytes.to_vec()),
        }
    }

    fn as_f64(&self) -> Vec<f64> {
        match self {
            VoxelData::Float(v) => v.iter().map(|&x| f64::from(x)).collect(),
            VoxelData::Double(v) => v.clone(),
            VoxelData::Short(v) => v.iter().map(|&x| f64::from(x)).collect(),
            VoxelData::UChar(v) => v.iter().map(|&x| f64::from(x)).collect(),
        }
    }
}

/// A decoded MetaImage: geometry, the (echoed, otherwise unused) direction
/// matrix, and the payload in its on-disk element type.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaImage {
    pub geometry: Geometry,
    pub transform_matrix: [f64; 9],
    pub data: VoxelData,
}

/// Typed view of a loaded image.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Scalar(ScalarVolume),
    Mask(BinaryMask),
}

impl MhaImage {
    pub fn new(geometry: Geometry, data: VoxelData) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::InvalidData(format!(
                "payload has {} voxels, geometry needs {}",
                data.len(),
                geometry.len()
            )));
        }
        Ok(Self {
            geometry,
            transform_matrix: IDENTITY,
            data,
        })
    }

    pub fn from_scalar(v: &ScalarVolume) -> Self {
        Self::new(*v.geometry(), VoxelData::Float(v.data().to_vec())).expect("lengths agree")
    }

    pub fn from_mask(m: &BinaryMask) -> Self {
        Self::new(*m.geometry(), VoxelData::UChar(m.data().to_vec())).expect("lengths agree")
    }

    pub fn from_f64(geometry: Geometry, data: Vec<f64>) -> Result<Self> {
        Self::new(geometry, VoxelData::Double(data))
    }

    /// Casts the payload to 32-bit reals.
    pub fn to_scalar(&self) -> Result<ScalarVolume> {
        let data = match &self.data {
            VoxelData::Float(v) => v.clone(),
            other => other.as_f64().into_iter().map(|x| x as f32).collect(),
        };
        ScalarVolume::new(self.geometry, data)
    }

    /// Requires every voxel to be exactly 0 or 1, whatever the element type.
    pub fn to_mask(&self) -> Result<BinaryMask> {
        let values = self.data.as_f64();
        if let Some(i) = values.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidData(format!(
                "voxel {i} has value {} but a binary mask was requested",
                values[i]
            )));
        }
        BinaryMask::new(self.geometry, values.into_iter().map(|v| v as u8).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.as_f64()
    }

    /// `MET_UCHAR` with values in {0, 1} becomes a mask, anything else a
    /// scalar volume.
    pub fn into_volume(self) -> Result<Volume> {
        if let VoxelData::UChar(v) = &self.data {
            if v.iter().all(|&x| x <= 1) {
                return Ok(Volume::Mask(self.to_mask()?));
            }
        }
        Ok(Volume::Scalar(self.to_scalar()?))
    }
}

fn parse_reals<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let parts: Vec<f64> = value
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format(format!("{key}: cannot parse `{value}`")))?;
    parts.try_into().map_err(|p: Vec<f64>| {
        Error::Format(format!("{key}: expected {N} values, got {}", p.len()))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Format(format!(
            "{key}: expected True or False, got `{value}`"
        ))),
    }
}

/// Decodes an in-memory `.mha` file.
pub fn parse_mha(bytes: &[u8]) -> Result<MhaImage> {
    let mut dims = None;
    let mut spacing = [1.0; 3];
    let mut origin = [0.0; 3];
    let mut transform = IDENTITY;
    let mut element_type = None;
    let mut compressed = false;
    let mut compressed_size: Option<usize> = None;
    let mut ndims_seen = false;
    let mut payload_start = None;

    let mut pos = 0;
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |e| pos + e);
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| Error::Format("header is not valid text".into()))?
            .trim();
        pos = (end + 1).min(bytes.len());
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Format(format!("header line without `=`: `{line}`")))?;
        match key {
            "ObjectType" if value != "Image" => {
                return Err(Error::Format(format!("ObjectType `{value}` is not Image")));
            }
            "NDims" => {
                if value != "3" {
                    return Err(Error::Format(format!(
                        "only 3D images are supported, NDims = {value}"
                    )));
                }
                ndims_seen = true;
            }
            "DimSize" => {
                let d = parse_reals::<3>(key, value)?;
                if d.iter().any(|x| x.fract() != 0.0 || *x < 1.0) {
                    return Err(Error::Format(format!(
                        "DimSize must be positive integers, got `{value}`"
                    )));
                }
                dims = Some(d.map(|x| x as usize));
            }
            "ElementSpacing" | "ElementSize" => spacing = parse_reals::<3>(key, value)?,
            "Offset" | "Origin" | "Position" => origin = parse_reals::<3>(key, value)?,
            "TransformMatrix" | "Rotation" | "Orientation" => {
                transform = parse_reals::<9>(key, value)?
            }
            "ElementType" => element_type = Some(ElementType::from_tag(value)?),
            "CompressedData" => compressed = parse_bool(key, value)?,
            "CompressedDataSize" => {
                compressed_size = Some(value.parse().map_err(|_| {
                    Error::Format(format!("CompressedDataSize: cannot parse `{value}`"))
                })?);
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => {
                if parse_bool(key, value)? {
                    return Err(Error::Format(
                        "big-endian payloads are not supported".into(),
                    ));
                }
            }
            "BinaryData" => {
                if !parse_bool(key, value)? {
                    return Err(Error::Format("ASCII payloads are not supported".into()));
                }
            }
            "ElementNumberOfChannels" if value != "1" => {
                return Err(Error::Format(format!(
                    "{value} channels per voxel; only 1 is supported"
                )));
            }
            "ElementDataFile" => {
                if value != "LOCAL" {
                    return Err(Error::Format(format!(
                        "detached payload `{value}`; only LOCAL is supported"
                    )));
                }
                payload_start = Some(pos);
                break;
            }
            // Remaining keys (AnatomicalOrientation, CenterOfRotation, comments,
            // tool metadata) carry nothing the geometry needs.
            _ => {}
        }
    }

    if !ndims_seen {
        return Err(Error::Format("missing mandatory key NDims".into()));
    }
    let dims = dims.ok_or_else(|| Error::Format("missing mandatory key DimSize".into()))?;
    let element_type =
        element_type.ok_or_else(|| Error::Format("missing mandatory key ElementType".into()))?;
    let start = payload_start
        .ok_or_else(|| Error::Format("missing mandatory key ElementDataFile".into()))?;
    let geometry = Geometry::new(dims, spacing, origin)
        .map_err(|e| Error::Format(format!("invalid geometry in header: {e}")))?;

    let expected = geometry.len() * element_type.size();
    let raw = &bytes[start..];
    let payload = if compressed {
        let raw = match compressed_size {
            Some(n) if n <= raw.len() => &raw[..n],
            Some(n) => {
                return Err(Error::Format(format!(
                    "CompressedDataSize {n} exceeds the {} bytes present",
                    raw.len()
                )))
            }
            None => raw,
        };
        let mut out = Vec::with_capacity(expected);
        ZlibDecoder::new(raw)
            .take(expected as u64 + 1)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("zlib payload: {e}")))?;
        out
    } else {
        raw.to_vec()
    };
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload size mismatch: DimSize {:?} x {} bytes needs {expected} bytes, found {}",
            dims,
            element_type.size(),
            payload.len()
        )));
    }

    Ok(MhaImage {
        geometry,
        transform_matrix: transform,
        data: VoxelData::from_le_bytes(element_type, &payload),
    })
}

pub fn read_mha(path: impl AsRef<Path>) -> Result<MhaImage> {
    parse_mha(&std::fs::read(path)?)
}

fn join<T: Display>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Encodes an image. Reals use the shortest representation that round-trips.
pub fn encode_mha(image: &MhaImage, compressed: bool) -> Result<Vec<u8>> {
    let g = &image.geometry;
    let raw = image.data.to_le_bytes();
    let payload = if compressed {
        let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw)?;
        enc.finish()?
    } else {
        raw
    };
    let header = [
        ("ObjectType", "Image".to_string()),
        ("NDims", "3".to_string()),
        ("BinaryData", "True".to_string()),
        ("BinaryDataByteOrderMSB", "False".to_string()),
        (
            "CompressedData",
            if compressed { "True" } else { "False" }.to_string(),
        ),
        ("TransformMatrix", join(&image.transform_matrix)),
        ("Offset", join(&g.origin())),
        ("CenterOfRotation", "0 0 0".to_string()),
        ("ElementSpacing", join(&g.spacing())),
        ("DimSize", join(&g.dims())),
        ("ElementType", image.data.element_type().tag().to_string()),
        ("ElementDataFile", "LOCAL".to_string()),
    ];
    let mut out = Vec::with_capacity(payload.len() + 512);
    for (k, v) in header {
        writeln!(out, "{k} = {v}")?;
    }
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn write_mha(image: &MhaImage, path: impl AsRef<Path>, compressed: bool) -> Result<()> {
    std::fs::write(path, encode_mha(image, compressed)?)?;
    Ok(())
}
