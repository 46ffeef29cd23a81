//! GRDF: a minimal grid raster file.
//!
//! Byte layout (all integers little-endian):
//!
//! | offset      | size         | content                                    |
//! |-------------|--------------|--------------------------------------------|
//! | 0           | 5            | ASCII `GRDF1`                              |
//! | 5           | 4            | `u32` header length `L`                    |
//! | 9           | `L`          | UTF-8 JSON header ([`GrdfHeader`])         |
//! | 9 + L       | `H*W*S`      | row-major samples, `S` = 8 (`c64`) or 4 (`f32`) |
//! | ...         | `H*ceil(W/8)`| mask rows if `has_mask`, bit `j%8` (LSB first) of byte `j/8` flags column `j` as no-data; rows zero-padded |
//!
//! `c64` samples are interleaved `f32` real/imaginary pairs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{ClipBounds, ComplexRaster, IntensityRaster, Polarization, RadiometricState, RasterMeta};
use crate::slc_sim::RadarParams;

pub const MAGIC: &[u8; 5] = b"GRDF1";
const PREAMBLE: usize = 9;

#[derive(Debug, Error)]
pub enum GrdfError {
    #[error("{path}: bad magic {found:?}, expected \"GRDF1\"")]
    BadMagic { path: PathBuf, found: Vec<u8> },

    #[error("{path}: truncated, expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: {extra} unexpected trailing bytes")]
    TrailingBytes { path: PathBuf, extra: u64 },

    #[error("{path}: unknown dtype {dtype:?} (supported: c64, f32)")]
    UnknownDtype { path: PathBuf, dtype: String },

    #[error("{path}: malformed header: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GrdfError {
    pub fn kind(&self) -> &'static str {
        match self {
            GrdfError::BadMagic { .. } => "bad_magic",
            GrdfError::Truncated { .. } => "truncated",
            GrdfError::TrailingBytes { .. } => "trailing_bytes",
            GrdfError::UnknownDtype { .. } => "unknown_dtype",
            GrdfError::Header { .. } => "header",
            GrdfError::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    C64,
    F32,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::C64 => "c64",
            Dtype::F32 => "f32",
        }
    }

    pub fn sample_bytes(self) -> usize {
        match self {
            Dtype::C64 => 8,
            Dtype::F32 => 4,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "c64" => Some(Dtype::C64),
            "f32" => Some(Dtype::F32),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrdfHeader {
    pub magic: String,
    pub dtype: String,
    pub height_az: usize,
    pub width_rg: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radiometric_state: Option<RadiometricState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_bounds: Option<ClipBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarization: Option<Polarization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default)]
    pub has_mask: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radar: Option<RadarParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub azimuth_weighting_applied: Option<bool>,
    /// Free-form metadata (e.g. the SubapertureSpec or ClipSpec used).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sidecars: BTreeMap<String, serde_json::Value>,
}

impl GrdfHeader {
    fn mask_row_bytes(&self) -> usize {
        self.width_rg.div_ceil(8)
    }

    fn body_len(&self, dtype: Dtype) -> u64 {
        let samples = (self.height_az * self.width_rg * dtype.sample_bytes()) as u64;
        let mask = if self.has_mask {
            (self.height_az * self.mask_row_bytes()) as u64
        } else {
            0
        };
        samples + mask
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Raster {
    Complex(ComplexRaster),
    Intensity(IntensityRaster),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrdfFile {
    pub header: GrdfHeader,
    pub raster: Raster,
}

fn header_for(raster: &Raster, sidecars: BTreeMap<String, serde_json::Value>) -> GrdfHeader {
    let (dims, meta) = match raster {
        Raster::Complex(r) => (r.dims(), &r.meta),
        Raster::Intensity(r) => (r.dims(), &r.meta),
    };
    let mut h = GrdfHeader {
        magic: "GRDF1".into(),
        dtype: String::new(),
        height_az: dims.0,
        width_rg: dims.1,
        radiometric_state: None,
        clip_bounds: None,
        polarization: meta.polarization,
        scene_id: meta.scene_id.clone(),
        has_mask: false,
        radar: None,
        azimuth_weighting_applied: None,
        sidecars,
    };
    match raster {
        Raster::Complex(r) => {
            h.dtype = Dtype::C64.as_str().into();
            h.radar = Some(r.params);
            h.azimuth_weighting_applied = Some(r.azimuth_weighting_applied);
        }
        Raster::Intensity(r) => {
            h.dtype = Dtype::F32.as_str().into();
            h.radiometric_state = Some(r.state);
            h.clip_bounds = r.clip_bounds;
            h.has_mask = r.mask.is_some();
        }
    }
    h
}

pub fn encode(raster: &Raster, sidecars: BTreeMap<String, serde_json::Value>) -> Vec<u8> {
    let header = header_for(raster, sidecars);
    let json = serde_json::to_vec(&header).expect("header serializes");
    let dtype = Dtype::parse(&header.dtype).expect("known dtype");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + header.body_len(dtype) as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    match raster {
        Raster::Complex(r) => {
            for z in r.data.iter() {
                out.extend_from_slice(&(z.re as f32).to_le_bytes());
                out.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
        }
        Raster::Intensity(r) => {
            for v in r.data.iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            if let Some(mask) = &r.mask {
                let row_bytes = header.mask_row_bytes();
                for row in mask.rows() {
                    let mut packed = vec![0u8; row_bytes];
                    for (j, &m) in row.iter().enumerate() {
                        if m {
                            packed[j / 8] |= 1 << (j % 8);
                        }
                    }
                    out.extend_from_slice(&packed);
                }
            }
        }
    }
    out
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(GrdfHeader, Dtype), GrdfError> {
    let header: GrdfHeader = serde_json::from_slice(bytes).map_err(|e| GrdfError::Header {
        path: path.into(),
        reason: e.to_string(),
    })?;
    if header.magic != "GRDF1" {
        return Err(GrdfError::BadMagic {
            path: path.into(),
            found: header.magic.into_bytes(),
        });
    }
    let dtype = Dtype::parse(&header.dtype).ok_or_else(|| GrdfError::UnknownDtype {
        path: path.into(),
        dtype: header.dtype.clone(),
    })?;
    match dtype {
        Dtype::C64 if header.radar.is_none() => {
            return Err(GrdfError::Header {
                path: path.into(),
                reason: "c64 raster without radar parameters".into(),
            })
        }
        Dtype::C64 if header.has_mask => {
            return Err(GrdfError::Header {
                path: path.into(),
                reason: "mask section is only defined for f32 rasters".into(),
            })
        }
        Dtype::F32 if header.radiometric_state.is_none() => {
            return Err(GrdfError::Header {
                path: path.into(),
                reason: "f32 raster without radiometric_state".into(),
            })
        }
        _ => {}
    }
    Ok((header, dtype))
}

fn decode_body(header: &GrdfHeader, dtype: Dtype, body: &[u8]) -> Raster {
    let (h, w) = (header.height_az, header.width_rg);
    let meta = RasterMeta {
        scene_id: header.scene_id.clone(),
        polarization: header.polarization,
    };
    let f32_at = |i: usize| f32::from_le_bytes(body[i..i + 4].try_into().unwrap()) as f64;
    match dtype {
        Dtype::C64 => {
            let data = Array2::from_shape_fn((h, w), |(r, c)| {
                let i = (r * w + c) * 8;
                Complex64::new(f32_at(i), f32_at(i + 4))
            });
            Raster::Complex(ComplexRaster {
                data,
                params: header.radar.expect("checked in parse_header"),
                azimuth_weighting_applied: header.azimuth_weighting_applied.unwrap_or(false),
                meta,
            })
        }
        Dtype::F32 => {
            let data = Array2::from_shape_fn((h, w), |(r, c)| f32_at((r * w + c) * 4));
            let mask = header.has_mask.then(|| {
                let base = h * w * 4;
                let row_bytes = header.mask_row_bytes();
                Array2::from_shape_fn((h, w), |(r, c)| {
                    body[base + r * row_bytes + c / 8] & (1 << (c % 8)) != 0
                })
            });
            Raster::Intensity(IntensityRaster {
                data,
                state: header.radiometric_state.expect("checked in parse_header"),
                clip_bounds: header.clip_bounds,
                mask,
                meta,
            })
        }
    }
}

/// Decodes an in-memory GRDF image; `path` is only used in error messages.
pub fn decode(path: &Path, bytes: &[u8]) -> Result<GrdfFile, GrdfError> {
    if bytes.len() < PREAMBLE || &bytes[..5] != MAGIC {
        if bytes.len() >= 5 && &bytes[..5] != MAGIC {
            return Err(GrdfError::BadMagic {
                path: path.into(),
                found: bytes[..5].to_vec(),
            });
        }
        return Err(GrdfError::Truncated {
            path: path.into(),
            expected: PREAMBLE as u64,
            actual: bytes.len() as u64,
        });
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if bytes.len() < PREAMBLE + header_len {
        return Err(GrdfError::Truncated {
            path: path.into(),
            expected: (PREAMBLE + header_len) as u64,
            actual: bytes.len() as u64,
        });
    }
    let (header, dtype) = parse_header(path, &bytes[PREAMBLE..PREAMBLE + header_len])?;
    let expected = (PREAMBLE + header_len) as u64 + header.body_len(dtype);
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(GrdfError::Truncated {
            path: path.into(),
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(GrdfError::TrailingBytes {
            path: path.into(),
            extra: actual - expected,
        });
    }
    let raster = decode_body(&header, dtype, &bytes[PREAMBLE + header_len..]);
    Ok(GrdfFile { header, raster })
}

/// Reads a GRDF file, validating the header and size before the payload is read.
pub fn read_grdf(path: impl AsRef<Path>) -> Result<GrdfFile, GrdfError> {
    let path = path.as_ref();
    let io = |source| GrdfError::Io {
        path: path.into(),
        source,
    };
    let mut file = File::open(path).map_err(io)?;
    let file_len = file.metadata().map_err(io)?.len();

    let mut preamble = Vec::with_capacity(PREAMBLE);
    Read::by_ref(&mut file).take(PREAMBLE as u64).read_to_end(&mut preamble).map_err(io)?;
    if preamble.len() < PREAMBLE {
        return decode(path, &preamble);
    }
    if &preamble[..5] != MAGIC {
        return Err(GrdfError::BadMagic {
            path: path.into(),
            found: preamble[..5].to_vec(),
        });
    }
    let header_len = u32::from_le_bytes(preamble[5..9].try_into().unwrap()) as u64;
    if file_len < PREAMBLE as u64 + header_len {
        return Err(GrdfError::Truncated {
            path: path.into(),
            expected: PREAMBLE as u64 + header_len,
            actual: file_len,
        });
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    file.read_exact(&mut header_bytes).map_err(io)?;
    let (header, dtype) = parse_header(path, &header_bytes)?;
    let expected = PREAMBLE as u64 + header_len + header.body_len(dtype);
    if file_len < expected {
        return Err(GrdfError::Truncated {
            path: path.into(),
            expected,
            actual: file_len,
        });
    }
    if file_len > expected {
        return Err(GrdfError::TrailingBytes {
            path: path.into(),
            extra: file_len - expected,
        });
    }
    let mut body = vec![0u8; header.body_len(dtype) as usize];
    file.read_exact(&mut body).map_err(io)?;
    let raster = decode_body(&header, dtype, &body);
    Ok(GrdfFile { header, raster })
}

pub fn write_grdf(
    raster: &Raster,
    sidecars: BTreeMap<String, serde_json::Value>,
    path: impl AsRef<Path>,
) -> Result<(), GrdfError> {
    let path = path.as_ref();
    let io = |source| GrdfError::Io {
        path: path.into(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&encode(raster, sidecars)).map_err(io)?;
    w.flush().map_err(io)
}

pub fn write_complex(raster: &ComplexRaster, path: impl AsRef<Path>) -> Result<(), GrdfError> {
    write_grdf(&Raster::Complex(raster.clone()), BTreeMap::new(), path)
}

pub fn write_intensity(raster: &IntensityRaster, path: impl AsRef<Path>) -> Result<(), GrdfError> {
    write_grdf(&Raster::Intensity(raster.clone()), BTreeMap::new(), path)
}

pub fn read_complex(path: impl AsRef<Path>) -> Result<ComplexRaster, GrdfError> {
    let path = path.as_ref();
    match read_grdf(path)?.raster {
        Raster::Complex(r) => Ok(r),
        Raster::Intensity(_) => Err(GrdfError::Header {
            path: path.into(),
            reason: "expected a c64 raster, found f32".into(),
        }),
    }
}

pub fn read_intensity(path: impl AsRef<Path>) -> Result<IntensityRaster, GrdfError> {
    let path = path.as_ref();
    match read_grdf(path)?.raster {
        Raster::Intensity(r) => Ok(r),
        Raster::Complex(_) => Err(GrdfError::Header {
            path: path.into(),
            reason: "expected an f32 raster, found c64".into(),
        }),
    }
}
