//! Azimuth frequency grid, processed Doppler band and azimuth windows.
//!
//! Frequencies are addressed by signed centered bin offsets `n`, with
//! frequency `n * prf / height`. The processed band is the half-open bin
//! interval `[lo, hi)` around zero Doppler.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slc_sim::RadarParams;

/// Half-open interval of centered azimuth-frequency bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinRange {
    pub lo: i64,
    pub hi: i64,
}

impl BinRange {
    pub fn len(&self) -> usize {
        (self.hi - self.lo).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn contains(&self, n: i64) -> bool {
        n >= self.lo && n < self.hi
    }

    /// Center of the interval in bins (may be half-integer).
    pub fn center(&self) -> f64 {
        (self.lo + self.hi - 1) as f64 / 2.0
    }
}

/// FFT-order index of a centered bin offset.
pub fn fft_index(n: i64, len: usize) -> usize {
    n.rem_euclid(len as i64) as usize
}

/// Centered offset of an FFT-order index.
pub fn centered_bin(index: usize, len: usize) -> i64 {
    if index < len.div_ceil(2) {
        index as i64
    } else {
        index as i64 - len as i64
    }
}

/// Bins covering `[-B_D/2, B_D/2)` for an azimuth line of `height` samples.
pub fn processed_band(params: &RadarParams, height: usize) -> Result<BinRange> {
    let bd = params.doppler_bandwidth();
    if bd > params.azimuth_prf * (1.0 + 1e-12) {
        return Err(Error::Aliasing {
            doppler_hz: bd,
            prf_hz: params.azimuth_prf,
        });
    }
    let count = ((bd / params.azimuth_prf) * height as f64).round() as i64;
    let count = count.clamp(0, height as i64);
    let lo = -(count / 2);
    Ok(BinRange {
        lo,
        hi: lo + count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AzimuthWindow {
    /// `a - (1 - a) cos(2 pi u)` with `u` the position across the band in (0, 1).
    GeneralizedHamming { coefficient: f64 },
}

impl AzimuthWindow {
    pub fn hamming(coefficient: f64) -> Self {
        AzimuthWindow::GeneralizedHamming { coefficient }
    }

    pub fn validate(&self) -> Result<()> {
        let AzimuthWindow::GeneralizedHamming { coefficient } = *self;
        if coefficient > 0.5 && coefficient <= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "Hamming coefficient {coefficient} outside (0.5, 1.0]"
            )))
        }
    }

    pub fn is_flat(&self) -> bool {
        let AzimuthWindow::GeneralizedHamming { coefficient } = *self;
        coefficient == 1.0
    }

    /// Window value at centered bin `n` of `band`; zero outside the band.
    pub fn value(&self, band: BinRange, n: i64) -> f64 {
        if !band.contains(n) {
            return 0.0;
        }
        let AzimuthWindow::GeneralizedHamming { coefficient: a } = *self;
        let u = ((n - band.lo) as f64 + 0.5) / band.len() as f64;
        a - (1.0 - a) * (2.0 * std::f64::consts::PI * u).cos()
    }
}

pub(crate) struct AzimuthFft {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
    pub len: usize,
}

impl AzimuthFft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            len,
        }
    }

    /// Unscaled forward transform in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// Inverse transform in place, scaled by `1/len`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        let scale = 1.0 / self.len as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }
}

/// Runs `f` over every range column in parallel, returning results in column order.
pub(crate) fn map_columns<T, F>(data: &Array2<Complex64>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Vec<Complex64>) -> T + Sync,
{
    (0..data.ncols())
        .into_par_iter()
        .map(|c| f(data.column(c).to_vec()))
        .collect()
}

/// Reassembles column vectors into a `height x columns.len()` array.
pub(crate) fn from_columns(height: usize, columns: &[Vec<Complex64>]) -> Array2<Complex64> {
    let mut out = Array2::zeros((height, columns.len()));
    for (c, col) in columns.iter().enumerate() {
        for (r, &z) in col.iter().enumerate() {
            out[(r, c)] = z;
        }
    }
    out
}
