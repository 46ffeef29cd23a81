//! Radiometric state transitions: detection, dB conversion, dataset-wide
//! percentile clipping and rescaling to `[0, 1]`.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ClipBounds, ComplexRaster, IntensityRaster, RadiometricState};

/// Linear-power floor for dB conversion (-100 dB).
pub const DEFAULT_DB_FLOOR: f64 = 1e-10;
pub const HISTOGRAM_BINS: usize = 1 << 16;
pub const MIN_CLIP_SAMPLES: usize = 10_000;

pub fn to_intensity(look: &ComplexRaster) -> Result<IntensityRaster> {
    look.check_finite()?;
    let mut out = IntensityRaster::new(look.data.mapv(|z| z.norm_sqr()), RadiometricState::LinearPower);
    out.meta = look.meta.clone();
    Ok(out)
}

/// `10 log10(max(v, floor))`; pixels at or below `floor` join the no-data mask.
pub fn to_db(raster: &IntensityRaster, floor: f64) -> Result<IntensityRaster> {
    raster.expect_state(RadiometricState::LinearPower)?;
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter(format!("dB floor must be > 0, got {floor}")));
    }
    let data = raster.data.mapv(|v| 10.0 * v.max(floor).log10());
    let below = raster.data.mapv(|v| v <= floor);
    let mask = match &raster.mask {
        Some(m) => ndarray::Zip::from(m).and(&below).map_collect(|&a, &b| a || b),
        None => below,
    };
    Ok(IntensityRaster {
        data,
        state: RadiometricState::Decibel,
        clip_bounds: None,
        mask: Some(mask),
        meta: raster.meta.clone(),
    })
}

/// Inverse of [`to_db`] on unmasked pixels.
pub fn from_db(raster: &IntensityRaster) -> Result<IntensityRaster> {
    raster.expect_state(RadiometricState::Decibel)?;
    Ok(IntensityRaster {
        data: raster.data.mapv(|v| 10f64.powf(v / 10.0)),
        state: RadiometricState::LinearPower,
        clip_bounds: None,
        mask: raster.mask.clone(),
        meta: raster.meta.clone(),
    })
}

/// Fixed-resolution histogram the percentile bounds were read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRecord {
    pub low_edge: f64,
    pub high_edge: f64,
    pub bins: usize,
    /// Sparse `(bin, count)` pairs, ascending by bin.
    pub counts: Vec<(u32, u64)>,
}

impl HistogramRecord {
    pub fn bin_width(&self) -> f64 {
        (self.high_edge - self.low_edge) / self.bins as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| c.1).sum()
    }

    /// Linear-interpolated percentile (`0..=100`), numpy "linear" convention.
    pub fn percentile(&self, percent: f64) -> f64 {
        let n = self.total();
        let rank = percent / 100.0 * (n - 1) as f64;
        let lower = rank.floor() as u64;
        let upper = (lower + 1).min(n - 1);
        let a = self.order_statistic(lower);
        let b = self.order_statistic(upper);
        a + (rank - lower as f64) * (b - a)
    }

    /// Estimate of the `j`-th smallest sample, spread evenly inside its bin.
    fn order_statistic(&self, j: u64) -> f64 {
        let width = self.bin_width();
        let mut below = 0u64;
        for &(bin, count) in &self.counts {
            if j < below + count {
                let within = (j - below) as f64 + 0.5;
                return self.low_edge + width * (bin as f64 + within / count as f64);
            }
            below += count;
        }
        self.high_edge
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    /// Percent, e.g. 0.1.
    pub low_percentile: f64,
    /// Percent, e.g. 99.9.
    pub high_percentile: f64,
    pub per_polarization: bool,
    /// Keyed by polarization name, or `"all"` when pooling polarizations.
    #[serde(default)]
    pub computed_bounds: BTreeMap<String, ClipBounds>,
    #[serde(default)]
    pub histograms: BTreeMap<String, HistogramRecord>,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            low_percentile: 0.1,
            high_percentile: 99.9,
            per_polarization: true,
            computed_bounds: BTreeMap::new(),
            histograms: BTreeMap::new(),
        }
    }
}

impl ClipSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.low_percentile, self.high_percentile);
        if !(0.0 <= lo && lo < hi && hi <= 100.0) {
            return Err(Error::InvalidParameter(format!(
                "clip percentiles must satisfy 0 <= low < high <= 100, got ({lo}, {hi})"
            )));
        }
        for (k, b) in &self.computed_bounds {
            if !(b.low_db.is_finite() && b.high_db.is_finite()) {
                return Err(Error::InvalidParameter(format!("non-finite bounds for {k}")));
            }
        }
        Ok(())
    }

    pub fn group_key(&self, raster: &IntensityRaster) -> String {
        if self.per_polarization {
            raster
                .meta
                .polarization
                .map_or_else(|| "unspecified".to_string(), |p| p.to_string())
        } else {
            "all".to_string()
        }
    }

    pub fn bounds_for(&self, raster: &IntensityRaster) -> Result<ClipBounds> {
        let key = self.group_key(raster);
        self.computed_bounds
            .get(&key)
            .copied()
            .ok_or(Error::MissingBounds(key))
    }
}

fn histogram_of(rasters: &[&IntensityRaster], low: f64, high: f64) -> Vec<u64> {
    let width = (high - low) / HISTOGRAM_BINS as f64;
    rasters
        .par_iter()
        .map(|r| {
            let mut counts = vec![0u64; HISTOGRAM_BINS];
            for v in r.valid_values() {
                let b = if width > 0.0 {
                    (((v - low) / width) as usize).min(HISTOGRAM_BINS - 1)
                } else {
                    0
                };
                counts[b] += 1;
            }
            counts
        })
        .reduce(
            || vec![0u64; HISTOGRAM_BINS],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// Fits dataset-wide clip bounds per group from a `2^16`-bin histogram.
pub fn fit_clip(dataset: &[&IntensityRaster], spec: &ClipSpec) -> Result<ClipSpec> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("no rasters to fit clip bounds on".into()));
    }
    let mut groups: BTreeMap<String, Vec<&IntensityRaster>> = BTreeMap::new();
    for r in dataset {
        r.expect_state(RadiometricState::Decibel)?;
        groups.entry(spec.group_key(r)).or_default().push(r);
    }

    let mut out = spec.clone();
    for (key, rasters) in groups {
        let (low, high, count) = rasters
            .par_iter()
            .map(|r| {
                r.valid_values()
                    .into_iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY, 0usize), |acc, v| {
                        (acc.0.min(v), acc.1.max(v), acc.2 + 1)
                    })
            })
            .reduce(
                || (f64::INFINITY, f64::NEG_INFINITY, 0),
                |a, b| (a.0.min(b.0), a.1.max(b.1), a.2 + b.2),
            );
        if count == 0 {
            return Err(Error::Empty(format!("group {key} is fully masked")));
        }
        if count < MIN_CLIP_SAMPLES {
            return Err(Error::TooSmall(format!(
                "group {key} has {count} unmasked pixels, need {MIN_CLIP_SAMPLES}"
            )));
        }
        if !(low.is_finite() && high.is_finite()) {
            return Err(Error::Empty(format!("group {key} has non-finite values")));
        }
        let counts = histogram_of(&rasters, low, high);
        let record = HistogramRecord {
            low_edge: low,
            high_edge: high,
            bins: HISTOGRAM_BINS,
            counts: counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(b, &c)| (b as u32, c))
                .collect(),
        };
        let bounds = ClipBounds {
            low_db: record.percentile(spec.low_percentile),
            high_db: record.percentile(spec.high_percentile),
        };
        out.computed_bounds.insert(key.clone(), bounds);
        out.histograms.insert(key, record);
    }
    Ok(out)
}

/// Clamps to the fitted bounds and maps them affinely onto `[0, 1]`.
pub fn clip_and_normalize(raster: &IntensityRaster, spec: &ClipSpec) -> Result<IntensityRaster> {
    raster.expect_state(RadiometricState::Decibel)?;
    let bounds = spec.bounds_for(raster)?;
    normalize_with(raster, bounds)
}

pub fn normalize_with(raster: &IntensityRaster, bounds: ClipBounds) -> Result<IntensityRaster> {
    raster.expect_state(RadiometricState::Decibel)?;
    let ClipBounds { low_db: low, high_db: high } = bounds;
    if high == low {
        return Err(Error::DegenerateBounds(low));
    }
    let span = high - low;
    Ok(IntensityRaster {
        data: raster.data.mapv(|v| (v.clamp(low, high) - low) / span),
        state: RadiometricState::NormalizedUnit,
        clip_bounds: Some(bounds),
        mask: raster.mask.clone(),
        meta: raster.meta.clone(),
    })
}

/// Maps a normalized raster back to dB using its recorded clip bounds.
pub fn denormalize(raster: &IntensityRaster) -> Result<IntensityRaster> {
    raster.expect_state(RadiometricState::NormalizedUnit)?;
    let bounds = raster
        .clip_bounds
        .ok_or_else(|| Error::MissingBounds("normalized raster without clip bounds".into()))?;
    let span = bounds.high_db - bounds.low_db;
    Ok(IntensityRaster {
        data: raster.data.mapv(|v| bounds.low_db + v * span),
        state: RadiometricState::Decibel,
        clip_bounds: None,
        mask: raster.mask.clone(),
        meta: raster.meta.clone(),
    })
}

/// Normalized `[0, 1]` back to linear power.
pub fn normalized_to_linear(raster: &IntensityRaster) -> Result<IntensityRaster> {
    from_db(&denormalize(raster)?)
}

/// Convenience chain: complex look -> normalized intensity.
pub fn look_to_normalized(look: &ComplexRaster, spec: &ClipSpec, floor: f64) -> Result<IntensityRaster> {
    clip_and_normalize(&to_db(&to_intensity(look)?, floor)?, spec)
}

/// Exact percentile by full sort (numpy "linear" convention). Reference
/// implementation for checking the histogram route.
pub fn sorted_percentile(values: &[f64], percent: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = percent / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
}

pub fn db_raster(data: Array2<f64>) -> IntensityRaster {
    IntensityRaster::new(data, RadiometricState::Decibel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Polarization;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_db(n: usize, seed: u64) -> IntensityRaster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array2::from_shape_fn((n, n), |_| rng.random_range(-30.0..0.0));
        db_raster(data)
    }

    #[test]
    fn intensity_is_magnitude_squared() {
        let slc = ComplexRaster::new(
            Array2::from_elem((2, 2), Complex64::new(3.0, 4.0)),
            crate::RadarParams::default(),
        );
        let i = to_intensity(&slc).unwrap();
        assert!(i.data.iter().all(|&v| v == 25.0));
        assert_eq!(i.state, RadiometricState::LinearPower);
    }

    #[test]
    fn db_values_and_floor_masking() {
        let r = IntensityRaster::new(
            Array2::from_shape_vec((1, 3), vec![1.0, 100.0, 0.0]).unwrap(),
            RadiometricState::LinearPower,
        );
        let d = to_db(&r, DEFAULT_DB_FLOOR).unwrap();
        assert_eq!(d.data[(0, 0)], 0.0);
        assert_eq!(d.data[(0, 1)], 20.0);
        let mask = d.mask.as_ref().unwrap();
        assert_eq!(mask.as_slice().unwrap(), &[false, false, true]);
    }

    #[test]
    fn all_zero_raster_fully_masked() {
        let slc = ComplexRaster::new(Array2::zeros((4, 4)), crate::RadarParams::default());
        let i = to_intensity(&slc).unwrap();
        assert!(i.data.iter().all(|&v| v == 0.0));
        let d = to_db(&i, DEFAULT_DB_FLOOR).unwrap();
        assert_eq!(d.masked_count(), 16);
    }

    #[test]
    fn wrong_state_rejected() {
        let d = uniform_db(4, 1);
        assert!(matches!(to_db(&d, 1e-10), Err(Error::WrongState { .. })));
        let lin = IntensityRaster::new(Array2::zeros((2, 2)), RadiometricState::LinearPower);
        assert!(matches!(
            clip_and_normalize(&lin, &ClipSpec::default()),
            Err(Error::WrongState { .. })
        ));
    }

    #[test]
    fn mask_survives_db_and_normalize() {
        let mut r = IntensityRaster::new(Array2::from_elem((2, 2), 1.0), RadiometricState::LinearPower);
        let mut m = Array2::from_elem((2, 2), false);
        m[(1, 1)] = true;
        r.mask = Some(m);
        let d = to_db(&r, 1e-10).unwrap();
        assert!(d.is_masked(1, 1));
        let n = normalize_with(&d, ClipBounds { low_db: -1.0, high_db: 1.0 }).unwrap();
        assert!(n.is_masked(1, 1));
        assert_eq!(n.masked_count(), 1);
    }

    #[test]
    fn uniform_percentiles_match_analytic_and_sort_oracle() {
        let r = uniform_db(400, 3);
        let fitted = fit_clip(&[&r], &ClipSpec::default()).unwrap();
        let b = fitted.computed_bounds["unspecified"];
        let width = fitted.histograms["unspecified"].bin_width();
        let values = r.valid_values();
        assert!((b.low_db - sorted_percentile(&values, 0.1)).abs() <= width);
        assert!((b.high_db - sorted_percentile(&values, 99.9)).abs() <= width);
        // analytic: -30 + 30 * p
        assert!((b.low_db + 29.97).abs() < 0.02);
        assert!((b.high_db + 0.03).abs() < 0.02);
    }

    #[test]
    fn duplicating_dataset_leaves_bounds_unchanged() {
        let r = uniform_db(200, 5);
        let one = fit_clip(&[&r], &ClipSpec::default()).unwrap();
        let two = fit_clip(&[&r, &r], &ClipSpec::default()).unwrap();
        let (a, b) = (one.computed_bounds["unspecified"], two.computed_bounds["unspecified"]);
        let width = one.histograms["unspecified"].bin_width();
        assert!((a.low_db - b.low_db).abs() <= width);
        assert!((a.high_db - b.high_db).abs() <= width);
    }

    #[test]
    fn tail_fractions_respect_percentiles() {
        let r = uniform_db(300, 8);
        let fitted = fit_clip(&[&r], &ClipSpec::default()).unwrap();
        let b = fitted.computed_bounds["unspecified"];
        let n = r.data.len() as f64;
        let below = r.data.iter().filter(|&&v| v < b.low_db).count() as f64;
        let above = r.data.iter().filter(|&&v| v > b.high_db).count() as f64;
        assert!(below / n <= 0.001 + 1.0 / n);
        assert!(above / n <= 0.001 + 1.0 / n);
    }

    #[test]
    fn polarizations_fitted_separately() {
        let mut vv = uniform_db(120, 1);
        vv.meta.polarization = Some(Polarization::VV);
        let mut vh = db_raster(uniform_db(120, 2).data.mapv(|v| v - 10.0));
        vh.meta.polarization = Some(Polarization::VH);
        let fitted = fit_clip(&[&vv, &vh], &ClipSpec::default()).unwrap();
        assert!(fitted.computed_bounds["VH"].low_db < fitted.computed_bounds["VV"].low_db - 5.0);
        assert!(clip_and_normalize(&vh, &fitted).is_ok());
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_clip(&[], &ClipSpec::default()), Err(Error::Empty(_))));
        let mut r = uniform_db(120, 1);
        r.mask = Some(Array2::from_elem((120, 120), true));
        assert!(matches!(fit_clip(&[&r], &ClipSpec::default()), Err(Error::Empty(_))));
        let bad = ClipSpec {
            low_percentile: 50.0,
            high_percentile: 10.0,
            ..ClipSpec::default()
        };
        assert!(fit_clip(&[&uniform_db(120, 1)], &bad).is_err());
    }

    #[test]
    fn normalize_endpoints_clamp_and_inverse() {
        let bounds = ClipBounds { low_db: -25.0, high_db: 5.0 };
        let r = db_raster(Array2::from_shape_vec((1, 4), vec![-25.0, 5.0, -40.0, -7.3]).unwrap());
        let n = normalize_with(&r, bounds).unwrap();
        assert_eq!(n.data[(0, 0)], 0.0);
        assert_eq!(n.data[(0, 1)], 1.0);
        assert_eq!(n.data[(0, 2)], 0.0);
        let back = denormalize(&n).unwrap();
        assert!((back.data[(0, 3)] + 7.3).abs() < 1e-12);
    }

    #[test]
    fn normalize_errors() {
        let r = uniform_db(4, 1);
        assert!(matches!(
            clip_and_normalize(&r, &ClipSpec::default()),
            Err(Error::MissingBounds(_))
        ));
        assert!(matches!(
            normalize_with(&r, ClipBounds { low_db: 1.0, high_db: 1.0 }),
            Err(Error::DegenerateBounds(_))
        ));
    }

    #[test]
    fn normalized_raster_stays_in_unit_interval() {
        let r = uniform_db(150, 4);
        let fitted = fit_clip(&[&r], &ClipSpec::default()).unwrap();
        let n = clip_and_normalize(&r, &fitted).unwrap();
        assert!(n.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(n.data.iter().cloned().fold(f64::MIN, f64::max), 1.0);
        assert_eq!(n.data.iter().cloned().fold(f64::MAX, f64::min), 0.0);
    }

    #[test]
    fn clipspec_json_round_trip() {
        let r = uniform_db(120, 6);
        let fitted = fit_clip(&[&r], &ClipSpec::default()).unwrap();
        let text = serde_json::to_string(&fitted).unwrap();
        let back: ClipSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, fitted);
    }

    proptest::proptest! {
        #[test]
        fn normalization_is_monotone(a in -60.0f64..20.0, b in -60.0f64..20.0) {
            let bounds = ClipBounds { low_db: -30.0, high_db: 0.0 };
            let r = db_raster(Array2::from_shape_vec((1, 2), vec![a, b]).unwrap());
            let n = normalize_with(&r, bounds).unwrap();
            if a <= b {
                proptest::prop_assert!(n.data[(0, 0)] <= n.data[(0, 1)]);
            }
        }
    }
}
