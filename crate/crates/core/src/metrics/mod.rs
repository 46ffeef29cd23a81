//! Full-reference and no-reference quality metrics.
//!
//! PSNR and SSIM compare normalized rasters (data range 1.0). ENL is
//! measured in linear power over homogeneous regions. The KDE distance is
//! the L1 distance between Gaussian kernel density estimates of two sample
//! sets on `[0, 1]`.

mod report;

pub use report::{Aggregate, EvalRecord, EvalReport};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::raster::{check_same_grid, union_masks, IntensityRaster, RadiometricState};

/// A value that may be the distinguished "infinite" marker (identical
/// inputs for PSNR, zero variance for ENL). Serialized as a number or the
/// string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Finite(f64),
    Infinite,
}

impl Score {
    pub fn finite(self) -> Option<f64> {
        match self {
            Score::Finite(v) => Some(v),
            Score::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Score::Infinite)
    }

    /// Mean of several scores; any infinite member makes the mean infinite.
    pub fn mean(scores: &[Score]) -> Option<Score> {
        if scores.is_empty() {
            return None;
        }
        let mut sum = 0.0;
        for s in scores {
            match s {
                Score::Finite(v) => sum += v,
                Score::Infinite => return Some(Score::Infinite),
            }
        }
        Some(Score::Finite(sum / scores.len() as f64))
    }
}

impl std::fmt::Display for Score {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Score::Finite(v) => write!(f, "{v:.2}"),
            Score::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ScoreRepr {
    Number(f64),
    Text(String),
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Score::Finite(v) => ScoreRepr::Number(*v),
            Score::Infinite => ScoreRepr::Text("inf".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match ScoreRepr::deserialize(d)? {
            ScoreRepr::Number(v) => Ok(Score::Finite(v)),
            ScoreRepr::Text(t) if t == "inf" => Ok(Score::Infinite),
            ScoreRepr::Text(t) => Err(serde::de::Error::custom(format!("bad score {t:?}"))),
        }
    }
}

fn paired_inputs(pred: &IntensityRaster, reference: &IntensityRaster) -> Result<Option<Array2<bool>>> {
    pred.expect_state(RadiometricState::NormalizedUnit)?;
    reference.expect_state(RadiometricState::NormalizedUnit)?;
    check_same_grid(reference.dims(), pred.dims())?;
    Ok(union_masks(pred.mask.as_ref(), reference.mask.as_ref()))
}

/// `10 log10(1 / MSE)` over pixels unmasked in both rasters.
pub fn psnr(pred: &IntensityRaster, reference: &IntensityRaster) -> Result<Score> {
    let mask = paired_inputs(pred, reference)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (idx, (&p, &r)) in pred.data.indexed_iter().map(|(i, p)| (i, (p, &reference.data[i]))) {
        if mask.as_ref().is_some_and(|m| m[idx]) {
            continue;
        }
        sum += (p - r) * (p - r);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("PSNR over zero unmasked pixels".into()));
    }
    let mse = sum / count as f64;
    Ok(if mse == 0.0 {
        Score::Infinite
    } else {
        Score::Finite(-10.0 * mse.log10())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimWindow {
    pub size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimWindow {
    fn default() -> Self {
        Self {
            size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimWindow {
    /// Normalized 2-D Gaussian weights, row-major `size x size`.
    pub fn weights(&self) -> Vec<f64> {
        let half = (self.size as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.size)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let mut w: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }
}

/// Mean SSIM over every window position fully inside the rasters. Masked
/// pixels drop out of each window and the remaining weights are renormalized.
pub fn ssim(pred: &IntensityRaster, reference: &IntensityRaster, window: &SsimWindow) -> Result<f64> {
    let mask = paired_inputs(pred, reference)?;
    ssim_arrays(&pred.data, &reference.data, mask.as_ref(), window)
}

pub fn ssim_arrays(
    x: &Array2<f64>,
    y: &Array2<f64>,
    mask: Option<&Array2<bool>>,
    window: &SsimWindow,
) -> Result<f64> {
    check_same_grid(y.dim(), x.dim())?;
    let (h, w) = x.dim();
    let n = window.size;
    if h < n || w < n {
        return Err(Error::TooSmall(format!("{h}x{w} raster is smaller than the {n}x{n} SSIM window")));
    }
    let weights = window.weights();
    let c1 = (window.k1 * window.data_range).powi(2);
    let c2 = (window.k2 * window.data_range).powi(2);

    let rows: Vec<(f64, usize)> = (0..=h - n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            let mut count = 0usize;
            for j in 0..=w - n {
                let (mut sw, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for a in 0..n {
                    for b in 0..n {
                        let (r, c) = (i + a, j + b);
                        if mask.is_some_and(|m| m[(r, c)]) {
                            continue;
                        }
                        let wt = weights[a * n + b];
                        let (p, q) = (x[(r, c)], y[(r, c)]);
                        sw += wt;
                        sx += wt * p;
                        sy += wt * q;
                        sxx += wt * p * p;
                        syy += wt * q * q;
                        sxy += wt * p * q;
                    }
                }
                if sw <= 0.0 {
                    continue;
                }
                let (mx, my) = (sx / sw, sy / sw);
                let vx = sxx / sw - mx * mx;
                let vy = syy / sw - my * my;
                let cov = sxy / sw - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
            (acc, count)
        })
        .collect();
    let (sum, count) = rows.iter().fold((0.0, 0), |a, r| (a.0 + r.0, a.1 + r.1));
    if count == 0 {
        return Err(Error::Empty("every SSIM window is fully masked".into()));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    pub az: usize,
    pub rg: usize,
    pub height: usize,
    pub width: usize,
}

impl Roi {
    fn overlaps(&self, o: &Roi) -> bool {
        self.az < o.az + o.height && o.az < self.az + self.height && self.rg < o.rg + o.width && o.rg < self.rg + self.width
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiSet {
    pub rois: Vec<Roi>,
}

pub const MIN_ROI_SIZE: usize = 32;
pub const ROI_COUNT_TARGET: usize = 20;

impl RoiSet {
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rois.iter().enumerate() {
            if r.height < MIN_ROI_SIZE || r.width < MIN_ROI_SIZE {
                return Err(Error::InvalidParameter(format!(
                    "ROI {i} is {}x{}, minimum is {MIN_ROI_SIZE}x{MIN_ROI_SIZE}",
                    r.height, r.width
                )));
            }
            for o in &self.rois[..i] {
                if o.scene_id == r.scene_id && o.overlaps(r) {
                    return Err(Error::InvalidParameter(format!("ROI {i} overlaps another ROI")));
                }
            }
        }
        Ok(())
    }

    /// ROIs declared for `scene_id` (ROIs without a scene apply everywhere).
    pub fn for_scene(&self, scene_id: Option<&str>) -> RoiSet {
        RoiSet {
            rois: self
                .rois
                .iter()
                .filter(|r| r.scene_id.is_none() || r.scene_id.as_deref() == scene_id)
                .cloned()
                .collect(),
        }
    }

    /// ROIs from a simulated scene's homogeneous regions, largest first,
    /// capped at the target count. Regions smaller than the minimum size or
    /// overlapped by another region are skipped.
    pub fn from_scene(spec: &crate::slc_sim::SceneSpec) -> RoiSet {
        let regions = &spec.homogeneous_regions;
        let mut picked: Vec<&crate::slc_sim::Region> = regions
            .iter()
            .enumerate()
            .filter(|(i, r)| {
                r.height >= MIN_ROI_SIZE
                    && r.width >= MIN_ROI_SIZE
                    && regions.iter().enumerate().all(|(j, o)| j == *i || !o.overlaps(r))
            })
            .map(|(_, r)| r)
            .collect();
        picked.sort_by_key(|r| std::cmp::Reverse(r.height * r.width));
        picked.truncate(ROI_COUNT_TARGET);
        RoiSet {
            rois: picked
                .into_iter()
                .map(|r| Roi {
                    scene_id: spec.scene_id.clone(),
                    az: r.az,
                    rg: r.rg,
                    height: r.height,
                    width: r.width,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnlResult {
    /// Average over ROIs with finite ENL.
    pub mean: f64,
    pub per_roi: Vec<Score>,
}

/// `mean^2 / variance` of unmasked linear-power pixels in one region.
pub fn enl_region(raster: &IntensityRaster, roi: &Roi) -> Result<Score> {
    let (h, w) = raster.dims();
    if roi.az + roi.height > h || roi.rg + roi.width > w {
        return Err(Error::OutOfBounds {
            what: "ROI",
            az: roi.az,
            rg: roi.rg,
            height: h,
            width: w,
        });
    }
    let mut n = 0usize;
    let mut sum = 0.0;
    for r in roi.az..roi.az + roi.height {
        for c in roi.rg..roi.rg + roi.width {
            if !raster.is_masked(r, c) {
                sum += raster.data[(r, c)];
                n += 1;
            }
        }
    }
    if n < 2 {
        return Err(Error::Empty("ROI has fewer than two unmasked pixels".into()));
    }
    let mean = sum / n as f64;
    let mut var = 0.0;
    for r in roi.az..roi.az + roi.height {
        for c in roi.rg..roi.rg + roi.width {
            if !raster.is_masked(r, c) {
                let d = raster.data[(r, c)] - mean;
                var += d * d;
            }
        }
    }
    var /= n as f64;
    Ok(if var == 0.0 {
        Score::Infinite
    } else {
        Score::Finite(mean * mean / var)
    })
}

/// Average ENL across ROIs; constant regions are reported as infinite and
/// left out of the average.
pub fn enl(raster: &IntensityRaster, rois: &RoiSet) -> Result<EnlResult> {
    raster.expect_state(RadiometricState::LinearPower)?;
    if rois.rois.is_empty() {
        return Err(Error::Empty("no ROIs for ENL".into()));
    }
    let per_roi = rois
        .rois
        .iter()
        .map(|roi| enl_region(raster, roi))
        .collect::<Result<Vec<_>>>()?;
    let finite: Vec<f64> = per_roi.iter().filter_map(|s| s.finite()).collect();
    let excluded = per_roi.len() - finite.len();
    if excluded > 0 {
        log::warn!("{excluded} ROI(s) have zero variance and were excluded from the ENL average");
    }
    if finite.is_empty() {
        return Err(Error::Empty("every ROI has zero variance".into()));
    }
    Ok(EnlResult {
        mean: finite.iter().sum::<f64>() / finite.len() as f64,
        per_roi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    #[default]
    Silverman,
}

pub const KDE_MIN_SAMPLES: usize = 100;
pub const DEFAULT_KDE_GRID: usize = 256;

fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Kernel bandwidth for `samples`, floored at `1 / grid_points`.
pub fn kde_bandwidth(samples: &[f64], rule: BandwidthRule, grid_points: usize) -> f64 {
    let floor = 1.0 / grid_points as f64;
    match rule {
        BandwidthRule::Silverman => {
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let std = var.sqrt();
            let mut sorted = samples.to_vec();
            sorted.sort_by(f64::total_cmp);
            let iqr = sorted_quantile(&sorted, 0.75) - sorted_quantile(&sorted, 0.25);
            let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
            (0.9 * spread * n.powf(-0.2)).max(floor)
        }
    }
}

/// Gaussian KDE of `samples` evaluated on `grid_points` uniform points over `[0, 1]`.
pub fn kde_density(samples: &[f64], bandwidth: f64, grid_points: usize) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    (0..grid_points)
        .into_par_iter()
        .map(|i| {
            let x = i as f64 / (grid_points - 1) as f64;
            samples
                .iter()
                .map(|s| {
                    let u = (x - s) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// L1 distance between the two estimated densities, integrated over the
/// grid spacing. 0 for identical sample sets, approaching 2 when disjoint.
pub fn kde_distance(pred: &[f64], reference: &[f64], rule: BandwidthRule, grid_points: usize) -> Result<f64> {
    if pred.len() < KDE_MIN_SAMPLES || reference.len() < KDE_MIN_SAMPLES {
        return Err(Error::TooSmall(format!(
            "KDE distance needs >= {KDE_MIN_SAMPLES} samples per set, got {} and {}",
            pred.len(),
            reference.len()
        )));
    }
    if grid_points < 2 {
        return Err(Error::InvalidParameter("KDE grid needs at least 2 points".into()));
    }
    let p = kde_density(pred, kde_bandwidth(pred, rule, grid_points), grid_points);
    let q = kde_density(reference, kde_bandwidth(reference, rule, grid_points), grid_points);
    let spacing = 1.0 / (grid_points - 1) as f64;
    Ok(p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>() * spacing)
}

/// Unmasked values of a raster pair, optionally thinned to at most
/// `max_samples` by a fixed stride.
pub fn paired_samples(
    pred: &IntensityRaster,
    reference: &IntensityRaster,
    max_samples: Option<usize>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mask = paired_inputs(pred, reference)?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (idx, &p) in pred.data.indexed_iter() {
        if mask.as_ref().is_some_and(|m| m[idx]) {
            continue;
        }
        a.push(p);
        b.push(reference.data[idx]);
    }
    if let Some(cap) = max_samples {
        if a.len() > cap && cap > 0 {
            let stride = a.len().div_ceil(cap);
            a = a.into_iter().step_by(stride).collect();
            b = b.into_iter().step_by(stride).collect();
        }
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm(data: Array2<f64>) -> IntensityRaster {
        IntensityRaster::new(data, RadiometricState::NormalizedUnit)
    }

    fn random_norm(n: usize, seed: u64) -> IntensityRaster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        norm(Array2::from_shape_fn((n, n), |_| rng.random::<f64>()))
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = random_norm(16, 1);
        assert_eq!(psnr(&a, &a).unwrap(), Score::Infinite);
    }

    #[test]
    fn psnr_constant_offset() {
        let a = norm(Array2::from_elem((8, 8), 0.3));
        let b = norm(Array2::from_elem((8, 8), 0.4));
        let v = psnr(&b, &a).unwrap().finite().unwrap();
        assert!((v - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_ignores_masked_pixels() {
        let a = norm(Array2::from_elem((4, 4), 0.5));
        let mut b = norm(Array2::from_elem((4, 4), 0.6));
        b.data[(0, 0)] = 0.0;
        let mut m = Array2::from_elem((4, 4), false);
        m[(0, 0)] = true;
        b.mask = Some(m);
        assert!((psnr(&b, &a).unwrap().finite().unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_all_masked_is_error() {
        let mut a = random_norm(4, 1);
        a.mask = Some(Array2::from_elem((4, 4), true));
        assert!(matches!(psnr(&a, &a), Err(Error::Empty(_))));
    }

    #[test]
    fn ssim_self_is_one() {
        let a = random_norm(32, 2);
        assert!((ssim(&a, &a, &SsimWindow::default()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_inverted_checkerboard_negative() {
        let a = norm(Array2::from_shape_fn((32, 32), |(i, j)| ((i + j) % 2) as f64));
        let b = norm(a.data.mapv(|v| 1.0 - v));
        assert!(ssim(&b, &a, &SsimWindow::default()).unwrap() < 0.0);
    }

    #[test]
    fn ssim_constant_vs_texture_is_low() {
        let a = random_norm(32, 3);
        let b = norm(Array2::from_elem((32, 32), 0.5));
        assert!(ssim(&b, &a, &SsimWindow::default()).unwrap() < 0.1);
    }

    #[test]
    fn ssim_too_small_raster() {
        let a = random_norm(10, 3);
        assert!(matches!(ssim(&a, &a, &SsimWindow::default()), Err(Error::TooSmall(_))));
    }

    #[test]
    fn ssim_weights_sum_to_one() {
        let w = SsimWindow::default().weights();
        assert_eq!(w.len(), 121);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn enl_constant_roi_excluded() {
        let mut data = Array2::from_elem((64, 128), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for v in data.slice_mut(ndarray::s![.., 64..]).iter_mut() {
            *v = rng.random::<f64>() + 0.5;
        }
        let r = IntensityRaster::new(data, RadiometricState::LinearPower);
        let rois = RoiSet {
            rois: vec![
                Roi { scene_id: None, az: 0, rg: 0, height: 64, width: 64 },
                Roi { scene_id: None, az: 0, rg: 64, height: 64, width: 64 },
            ],
        };
        let res = enl(&r, &rois).unwrap();
        assert!(res.per_roi[0].is_infinite());
        assert_eq!(res.mean, enl_region(&r, &rois.rois[1]).unwrap().finite().unwrap());
    }

    #[test]
    fn enl_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = Array2::from_shape_fn((40, 40), |_| rng.random::<f64>() + 0.1);
        let rois = RoiSet { rois: vec![Roi { scene_id: None, az: 2, rg: 3, height: 32, width: 32 }] };
        let a = enl(&IntensityRaster::new(data.clone(), RadiometricState::LinearPower), &rois).unwrap();
        let b = enl(&IntensityRaster::new(data * 7.5, RadiometricState::LinearPower), &rois).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-9 * a.mean);
    }

    #[test]
    fn enl_requires_linear_power() {
        let r = random_norm(40, 1);
        let rois = RoiSet { rois: vec![Roi { scene_id: None, az: 0, rg: 0, height: 32, width: 32 }] };
        assert!(matches!(enl(&r, &rois), Err(Error::WrongState { .. })));
    }

    #[test]
    fn roi_validation() {
        let small = RoiSet { rois: vec![Roi { scene_id: None, az: 0, rg: 0, height: 31, width: 40 }] };
        assert!(small.validate().is_err());
        let overlap = RoiSet {
            rois: vec![
                Roi { scene_id: None, az: 0, rg: 0, height: 32, width: 32 },
                Roi { scene_id: None, az: 16, rg: 16, height: 32, width: 32 },
            ],
        };
        assert!(overlap.validate().is_err());
        let other_scene = RoiSet {
            rois: vec![
                Roi { scene_id: Some("a".into()), az: 0, rg: 0, height: 32, width: 32 },
                Roi { scene_id: Some("b".into()), az: 16, rg: 16, height: 32, width: 32 },
            ],
        };
        assert!(other_scene.validate().is_ok());
    }

    #[test]
    fn kde_identical_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..400).map(|_| rng.random::<f64>().powi(2)).collect();
        assert!(kde_distance(&a, &a, BandwidthRule::Silverman, 256).unwrap().abs() < 1e-12);
        let d1 = kde_distance(&a, &b, BandwidthRule::Silverman, 256).unwrap();
        let d2 = kde_distance(&b, &a, BandwidthRule::Silverman, 256).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
        assert!(d1 > 0.0 && d1 <= 2.0);
    }

    #[test]
    fn kde_degenerate_samples_use_floor() {
        let a = vec![0.5; 200];
        let h = kde_bandwidth(&a, BandwidthRule::Silverman, 256);
        assert_eq!(h, 1.0 / 256.0);
        assert!(kde_distance(&a, &a, BandwidthRule::Silverman, 256).unwrap() == 0.0);
    }

    #[test]
    fn kde_requires_enough_samples() {
        let a = vec![0.5; 99];
        let b = vec![0.5; 200];
        assert!(matches!(
            kde_distance(&a, &b, BandwidthRule::Silverman, 256),
            Err(Error::TooSmall(_))
        ));
    }

    #[test]
    fn score_json() {
        assert_eq!(serde_json::to_string(&Score::Infinite).unwrap(), "\"inf\"");
        assert_eq!(serde_json::to_string(&Score::Finite(2.5)).unwrap(), "2.5");
        let back: Score = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(back, Score::Infinite);
        assert!(serde_json::from_str::<Score>("\"nan\"").is_err());
    }
}
