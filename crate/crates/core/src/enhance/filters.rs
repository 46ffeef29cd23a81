//! Classical single-raster despeckling filters.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Summed-area tables of values and squared values, one row/column of zero padding.
struct Integral {
    sum: Array2<f64>,
    sq: Array2<f64>,
}

impl Integral {
    fn new(a: &Array2<f64>) -> Self {
        let (h, w) = a.dim();
        let mut sum = Array2::zeros((h + 1, w + 1));
        let mut sq = Array2::zeros((h + 1, w + 1));
        for r in 0..h {
            let (mut rs, mut rq) = (0.0, 0.0);
            for c in 0..w {
                let v = a[(r, c)];
                rs += v;
                rq += v * v;
                sum[(r + 1, c + 1)] = sum[(r, c + 1)] + rs;
                sq[(r + 1, c + 1)] = sq[(r, c + 1)] + rq;
            }
        }
        Self { sum, sq }
    }

    /// (mean, population variance) over the window clipped to the raster.
    fn stats(&self, r: usize, c: usize, half: usize) -> (f64, f64) {
        let (h, w) = (self.sum.nrows() - 1, self.sum.ncols() - 1);
        let (r0, r1) = (r.saturating_sub(half), (r + half + 1).min(h));
        let (c0, c1) = (c.saturating_sub(half), (c + half + 1).min(w));
        let n = ((r1 - r0) * (c1 - c0)) as f64;
        let rect = |t: &Array2<f64>| t[(r1, c1)] - t[(r0, c1)] - t[(r1, c0)] + t[(r0, c0)];
        let mean = rect(&self.sum) / n;
        let var = (rect(&self.sq) / n - mean * mean).max(0.0);
        (mean, var)
    }
}

fn check_window(a: &Array2<f64>, window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidParameter(format!("window must be odd and >= 3, got {window}")));
    }
    let (h, w) = a.dim();
    if window > h || window > w {
        return Err(Error::TooSmall(format!("{window}x{window} window exceeds {h}x{w} raster")));
    }
    Ok(())
}

/// Local-statistics Lee filter: `mean + k (x - mean)` with
/// `k = max(0, 1 - noise_cv^2 / local_cv^2)`.
pub fn lee_filter(a: &Array2<f64>, window: usize, noise_cv: f64) -> Result<Array2<f64>> {
    check_window(a, window)?;
    if !(noise_cv >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise_cv must be >= 0, got {noise_cv}")));
    }
    if noise_cv == 0.0 {
        return Ok(a.clone());
    }
    let integral = Integral::new(a);
    let half = window / 2;
    let nc2 = noise_cv * noise_cv;
    Ok(Array2::from_shape_fn(a.dim(), |(r, c)| {
        let (mean, var) = integral.stats(r, c, half);
        let x = a[(r, c)];
        if var == 0.0 {
            return mean;
        }
        if mean == 0.0 {
            return x;
        }
        let local_cv2 = var / (mean * mean);
        let k = (1.0 - nc2 / local_cv2).max(0.0);
        mean + k * (x - mean)
    }))
}

/// Moving average over a `window x window` neighborhood clipped at the borders.
pub fn boxcar(a: &Array2<f64>, window: usize) -> Result<Array2<f64>> {
    check_window(a, window)?;
    let integral = Integral::new(a);
    let half = window / 2;
    Ok(Array2::from_shape_fn(a.dim(), |(r, c)| integral.stats(r, c, half).0))
}

/// Pixel-wise mean of co-registered looks.
pub fn multilook(inputs: &[&Array2<f64>]) -> Result<Array2<f64>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidParameter("multilook needs at least one input".into()))?;
    let mut acc = (*first).clone();
    for x in &inputs[1..] {
        crate::raster::check_same_grid(first.dim(), x.dim())?;
        acc += *x;
    }
    acc /= inputs.len() as f64;
    Ok(acc)
}
