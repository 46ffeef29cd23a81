//! Overlapping tile extraction and weighted blending.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendWindow {
    /// Separable `sin^2(pi (i + 0.5) / T)`, strictly positive on every tile pixel.
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub tile_size: usize,
    pub overlap_fraction: f64,
    #[serde(default)]
    pub blend_window: BlendWindow,
}

impl Default for TilingPlan {
    fn default() -> Self {
        Self {
            tile_size: 96,
            overlap_fraction: 0.5,
            blend_window: BlendWindow::Hann,
        }
    }
}

/// Placement of tiles along one axis of length `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisLayout {
    pub pad_before: usize,
    pub stride: usize,
    pub tiles: usize,
    pub padded_len: usize,
}

impl TilingPlan {
    pub fn new(tile_size: usize, overlap_fraction: f64) -> Result<Self> {
        let plan = Self {
            tile_size,
            overlap_fraction,
            blend_window: BlendWindow::Hann,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size < 32 {
            return Err(Error::InvalidParameter(format!("tile size {} < 32", self.tile_size)));
        }
        if !(0.0..=0.75).contains(&self.overlap_fraction) {
            return Err(Error::InvalidParameter(format!(
                "overlap fraction {} outside [0, 0.75]",
                self.overlap_fraction
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        let overlap = (self.tile_size as f64 * self.overlap_fraction).round() as usize;
        (self.tile_size - overlap).max(1)
    }

    pub fn layout(&self, n: usize) -> AxisLayout {
        let t = self.tile_size;
        let stride = self.stride();
        let pad_before = t - stride;
        let span = pad_before + n;
        let tiles = if span <= t { 1 } else { (span - t).div_ceil(stride) + 1 };
        AxisLayout {
            pad_before,
            stride,
            tiles,
            padded_len: (tiles - 1) * stride + t,
        }
    }

    pub fn weights(&self) -> Array2<f64> {
        let t = self.tile_size;
        let w: Vec<f64> = match self.blend_window {
            BlendWindow::Hann => (0..t)
                .map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / t as f64).sin().powi(2))
                .collect(),
        };
        Array2::from_shape_fn((t, t), |(i, j)| w[i] * w[j])
    }
}

/// Index into `0..n` for a position `m` of the symmetric (edge-repeating)
/// mirror extension of the axis.
pub fn reflect_index(m: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let r = m.rem_euclid(period) as usize;
    if r < n {
        r
    } else {
        2 * n - 1 - r
    }
}

/// Mirror-pads `a` to `(rows.padded_len, cols.padded_len)` with `pad_before` leading samples.
pub fn reflect_pad(a: &Array2<f64>, rows: AxisLayout, cols: AxisLayout) -> Array2<f64> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((rows.padded_len, cols.padded_len), |(r, c)| {
        let rr = reflect_index(r as isize - rows.pad_before as isize, h);
        let cc = reflect_index(c as isize - cols.pad_before as isize, w);
        a[(rr, cc)]
    })
}

/// Tile origins in the padded frame, row-major.
pub fn tile_origins(rows: AxisLayout, cols: AxisLayout) -> Vec<(usize, usize)> {
    (0..rows.tiles)
        .flat_map(|i| (0..cols.tiles).map(move |j| (i * rows.stride, j * cols.stride)))
        .collect()
}

/// Accumulates weighted tile outputs and normalizes by the summed weights.
pub struct Blender {
    acc: Array2<f64>,
    weight_sum: Array2<f64>,
    weights: Array2<f64>,
    rows: AxisLayout,
    cols: AxisLayout,
    dims: (usize, usize),
}

impl Blender {
    pub fn new(plan: &TilingPlan, dims: (usize, usize)) -> Self {
        let rows = plan.layout(dims.0);
        let cols = plan.layout(dims.1);
        Self {
            acc: Array2::zeros((rows.padded_len, cols.padded_len)),
            weight_sum: Array2::zeros((rows.padded_len, cols.padded_len)),
            weights: plan.weights(),
            rows,
            cols,
            dims,
        }
    }

    pub fn layouts(&self) -> (AxisLayout, AxisLayout) {
        (self.rows, self.cols)
    }

    pub fn add(&mut self, origin: (usize, usize), tile: &Array2<f64>) {
        let t = self.weights.nrows();
        let region = s![origin.0..origin.0 + t, origin.1..origin.1 + t];
        self.acc.slice_mut(region).zip_mut_with(&(tile * &self.weights), |a, b| *a += b);
        self.weight_sum
            .slice_mut(region)
            .zip_mut_with(&self.weights, |a, b| *a += b);
    }

    pub fn finish(self) -> Array2<f64> {
        let (r0, c0) = (self.rows.pad_before, self.cols.pad_before);
        let region = s![r0..r0 + self.dims.0, c0..c0 + self.dims.1];
        ndarray::Zip::from(self.acc.slice(region))
            .and(self.weight_sum.slice(region))
            .map_collect(|a, w| a / w)
    }
}
