//! Raster containers shared by every stage.
//!
//! Rows run along azimuth, columns along range. Masks mark no-data pixels
//! with `true`.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slc_sim::RadarParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarization {
    VV,
    VH,
}

impl Polarization {
    pub const ALL: [Polarization; 2] = [Polarization::VV, Polarization::VH];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarization::VV => "VV",
            Polarization::VH => "VH",
        }
    }
}

impl std::fmt::Display for Polarization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Polarization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VV" => Ok(Polarization::VV),
            "VH" => Ok(Polarization::VH),
            other => Err(Error::InvalidParameter(format!(
                "unknown polarization {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiometricState {
    LinearPower,
    Decibel,
    NormalizedUnit,
}

/// dB interval a normalized raster was mapped from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBounds {
    pub low_db: f64,
    pub high_db: f64,
}

/// Provenance carried along with every raster.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RasterMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarization: Option<Polarization>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexRaster {
    pub data: Array2<Complex64>,
    pub params: RadarParams,
    pub azimuth_weighting_applied: bool,
    pub meta: RasterMeta,
}

impl ComplexRaster {
    pub fn new(data: Array2<Complex64>, params: RadarParams) -> Self {
        Self {
            data,
            params,
            azimuth_weighting_applied: false,
            meta: RasterMeta::default(),
        }
    }

    pub fn height_az(&self) -> usize {
        self.data.nrows()
    }

    pub fn width_rg(&self) -> usize {
        self.data.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn check_finite(&self) -> Result<()> {
        for ((az, rg), z) in self.data.indexed_iter() {
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::NonFinite { az, rg });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityRaster {
    pub data: Array2<f64>,
    pub state: RadiometricState,
    pub clip_bounds: Option<ClipBounds>,
    pub mask: Option<Array2<bool>>,
    pub meta: RasterMeta,
}

impl IntensityRaster {
    pub fn new(data: Array2<f64>, state: RadiometricState) -> Self {
        Self {
            data,
            state,
            clip_bounds: None,
            mask: None,
            meta: RasterMeta::default(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn expect_state(&self, expected: RadiometricState) -> Result<()> {
        if self.state == expected {
            Ok(())
        } else {
            Err(Error::WrongState {
                expected,
                actual: self.state,
            })
        }
    }

    pub fn is_masked(&self, az: usize, rg: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m[(az, rg)])
    }

    /// Values of all pixels not flagged as no-data.
    pub fn valid_values(&self) -> Vec<f64> {
        match &self.mask {
            None => self.data.iter().copied().collect(),
            Some(m) => self
                .data
                .iter()
                .zip(m.iter())
                .filter(|(_, &masked)| !masked)
                .map(|(&v, _)| v)
                .collect(),
        }
    }

    pub fn masked_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(0, |m| m.iter().filter(|&&b| b).count())
    }
}

pub fn check_same_grid(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::GridMismatch { expected, actual })
    }
}

/// Union of two optional no-data masks.
pub fn union_masks(a: Option<&Array2<bool>>, b: Option<&Array2<bool>>) -> Option<Array2<bool>> {
    match (a, b) {
        (None, None) => None,
        (Some(m), None) | (None, Some(m)) => Some(m.clone()),
        (Some(x), Some(y)) => Some(ndarray::Zip::from(x).and(y).map_collect(|&p, &q| p || q)),
    }
}
