//! Azimuth subaperture decomposition.
//!
//! Each range column is taken to the Doppler domain, de-weighted by the
//! focusing window, and split into `K` contiguous sub-bands. Every sub-band
//! is moved to zero Doppler, inverse transformed and circularly shifted so
//! its impulse response sits on the source grid.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::doppler::{self, AzimuthFft, AzimuthWindow, BinRange};
use crate::error::{Error, Result};
use crate::raster::{check_same_grid, ComplexRaster};

pub const DEFAULT_DEWEIGHT_FLOOR: f64 = 1e-3;
pub const MIN_BAND_BINS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubapertureSpec {
    pub num_looks: usize,
    /// Azimuth line length the bin indices refer to.
    pub azimuth_len: usize,
    /// `num_looks + 1` centered bin offsets; band `k` is `[edges[k], edges[k+1])`.
    pub band_edges: Vec<i64>,
    /// `B_{D,k} / B_D` per look.
    pub alpha: Vec<f64>,
    pub deweight_window: AzimuthWindow,
    pub deweight_floor_epsilon: f64,
    /// Circular azimuth shift (samples) applied to each reconstructed look.
    pub look_shifts: Vec<i64>,
}

impl SubapertureSpec {
    pub fn processed_band(&self) -> BinRange {
        BinRange {
            lo: self.band_edges[0],
            hi: self.band_edges[self.num_looks],
        }
    }

    pub fn band(&self, k: usize) -> BinRange {
        BinRange {
            lo: self.band_edges[k],
            hi: self.band_edges[k + 1],
        }
    }

    pub fn band_sizes(&self) -> Vec<usize> {
        (0..self.num_looks).map(|k| self.band(k).len()).collect()
    }

    /// Bin translation that moves band `k` to zero Doppler.
    pub fn recenter_offset(&self, k: usize) -> i64 {
        self.band(k).center().round() as i64
    }

    /// Replaces the de-weighting window (coefficient 1.0 disables de-weighting).
    pub fn with_window(mut self, window: AzimuthWindow) -> Self {
        self.deweight_window = window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_looks;
        if k < 2 {
            return Err(Error::InvalidParameter(format!("num_looks must be >= 2, got {k}")));
        }
        if self.band_edges.len() != k + 1 || self.alpha.len() != k || self.look_shifts.len() != k {
            return Err(Error::InvalidParameter(
                "band_edges / alpha / look_shifts lengths disagree with num_looks".into(),
            ));
        }
        for w in self.band_edges.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidParameter("band edges must be strictly increasing".into()));
            }
            if ((w[1] - w[0]) as usize) < MIN_BAND_BINS {
                return Err(Error::TooSmall(format!(
                    "band [{}, {}) narrower than {MIN_BAND_BINS} bins",
                    w[0], w[1]
                )));
            }
        }
        if self.processed_band().len() > self.azimuth_len {
            return Err(Error::InvalidParameter(
                "processed band wider than the azimuth line".into(),
            ));
        }
        let sum: f64 = self.alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("alpha fractions sum to {sum}")));
        }
        if !(self.deweight_floor_epsilon > 0.0) {
            return Err(Error::InvalidParameter("deweight floor must be > 0".into()));
        }
        self.deweight_window.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubapertureSet {
    pub looks: Vec<ComplexRaster>,
    pub spec: SubapertureSpec,
    pub source_id: String,
}

/// Splits `total` bins into `k` contiguous sizes; the last band takes the remainder.
pub fn split_sizes(total: usize, k: usize) -> Vec<usize> {
    let base = total / k;
    let mut sizes = vec![base; k];
    sizes[k - 1] += total % k;
    sizes
}

/// Circular shift that brings the peak of a look's impulse response back to
/// sample zero, given the complex transfer of the chain in FFT order.
pub fn impulse_recentering_shift(transfer: &[Complex64]) -> i64 {
    let n = transfer.len();
    let mut h = transfer.to_vec();
    AzimuthFft::new(n).inverse(&mut h);
    let peak = h
        .iter()
        .enumerate()
        .fold((0usize, -1.0f64), |acc, (i, z)| {
            let p = z.norm_sqr();
            if p > acc.1 + 1e-12 * p.max(1.0) {
                (i, p)
            } else {
                acc
            }
        })
        .0;
    -doppler::centered_bin(peak, n)
}

/// Builds a `k`-look spec spanning the raster's processed Doppler band.
pub fn make_spec(raster: &ComplexRaster, k: usize) -> Result<SubapertureSpec> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 looks, got {k}")));
    }
    let height = raster.height_az();
    if height < MIN_BAND_BINS * k {
        return Err(Error::TooSmall(format!(
            "azimuth size {height} < {} required for {k} looks",
            MIN_BAND_BINS * k
        )));
    }
    raster.params.validate()?;
    let band = doppler::processed_band(&raster.params, height)?;
    let sizes = split_sizes(band.len(), k);
    if sizes.iter().any(|&s| s < MIN_BAND_BINS) {
        return Err(Error::TooSmall(format!(
            "processed band of {} bins cannot hold {k} bands of {MIN_BAND_BINS} bins",
            band.len()
        )));
    }
    let mut edges = vec![band.lo];
    for s in &sizes {
        edges.push(edges.last().unwrap() + *s as i64);
    }
    let total = band.len() as f64;
    let mut alpha: Vec<f64> = sizes.iter().map(|&s| s as f64 / total).collect();
    // absorb rounding so the fractions sum to one exactly
    let head: f64 = alpha[..k - 1].iter().sum();
    alpha[k - 1] = 1.0 - head;

    let mut spec = SubapertureSpec {
        num_looks: k,
        azimuth_len: height,
        band_edges: edges,
        alpha,
        deweight_window: raster.params.azimuth_window(),
        deweight_floor_epsilon: DEFAULT_DEWEIGHT_FLOOR,
        look_shifts: vec![0; k],
    };
    for i in 0..k {
        let mut transfer = vec![Complex64::new(0.0, 0.0); height];
        let s = spec.recenter_offset(i);
        for n in spec.band(i).lo..spec.band(i).hi {
            transfer[doppler::fft_index(n - s, height)] = Complex64::new(1.0, 0.0);
        }
        spec.look_shifts[i] = impulse_recentering_shift(&transfer);
    }
    spec.validate()?;
    Ok(spec)
}

fn check_compatible(slc: &ComplexRaster, spec: &SubapertureSpec) -> Result<()> {
    spec.validate()?;
    if slc.height_az() != spec.azimuth_len {
        return Err(Error::GridMismatch {
            expected: (spec.azimuth_len, slc.width_rg()),
            actual: slc.dims(),
        });
    }
    Ok(())
}

/// Per-bin de-weighting gains in FFT order (zero outside the processed band).
fn deweight_gains(spec: &SubapertureSpec) -> Vec<f64> {
    let n = spec.azimuth_len;
    let band = spec.processed_band();
    let mut gains = vec![0.0; n];
    for b in band.lo..band.hi {
        let w = spec.deweight_window.value(band, b);
        gains[doppler::fft_index(b, n)] = 1.0 / w.max(spec.deweight_floor_epsilon);
    }
    gains
}

fn rotate(col: &[Complex64], shift: i64) -> Vec<Complex64> {
    let n = col.len() as i64;
    (0..n)
        .map(|m| col[(m - shift).rem_euclid(n) as usize])
        .collect()
}

pub fn decompose(slc: &ComplexRaster, spec: &SubapertureSpec) -> Result<SubapertureSet> {
    check_compatible(slc, spec)?;
    slc.check_finite()?;
    let n = spec.azimuth_len;
    let k = spec.num_looks;
    let gains = deweight_gains(spec);
    let fft = AzimuthFft::new(n);

    let per_column: Vec<Vec<Vec<Complex64>>> = doppler::map_columns(&slc.data, |mut col| {
        fft.forward(&mut col);
        for (z, g) in col.iter_mut().zip(&gains) {
            *z *= *g;
        }
        (0..k)
            .map(|look| {
                let band = spec.band(look);
                let s = spec.recenter_offset(look);
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                for b in band.lo..band.hi {
                    buf[doppler::fft_index(b - s, n)] = col[doppler::fft_index(b, n)];
                }
                fft.inverse(&mut buf);
                rotate(&buf, spec.look_shifts[look])
            })
            .collect()
    });

    let looks = (0..k)
        .map(|look| {
            let cols: Vec<Vec<Complex64>> = per_column.iter().map(|c| c[look].clone()).collect();
            ComplexRaster {
                data: doppler::from_columns(n, &cols),
                params: slc.params,
                azimuth_weighting_applied: false,
                meta: slc.meta.clone(),
            }
        })
        .collect();
    Ok(SubapertureSet {
        looks,
        spec: spec.clone(),
        source_id: slc
            .meta
            .scene_id
            .clone()
            .unwrap_or_else(|| "anonymous".to_string()),
    })
}

/// Relative L2 residual between the spectrum reassembled from the looks and
/// the directly de-weighted processed-band spectrum of `slc`.
pub fn recompose_check(set: &SubapertureSet, slc: &ComplexRaster) -> Result<f64> {
    let spec = &set.spec;
    check_compatible(slc, spec)?;
    if set.looks.len() != spec.num_looks {
        return Err(Error::InvalidParameter(format!(
            "set holds {} looks, spec declares {}",
            set.looks.len(),
            spec.num_looks
        )));
    }
    for look in &set.looks {
        check_same_grid(slc.dims(), look.dims())?;
    }
    let n = spec.azimuth_len;
    let gains = deweight_gains(spec);
    let fft = AzimuthFft::new(n);

    let sums: Vec<(f64, f64)> = (0..slc.width_rg())
        .map(|c| {
            let mut direct = slc.data.column(c).to_vec();
            fft.forward(&mut direct);
            for (z, g) in direct.iter_mut().zip(&gains) {
                *z *= *g;
            }
            let mut rebuilt = vec![Complex64::new(0.0, 0.0); n];
            for (look, raster) in set.looks.iter().enumerate() {
                let mut spectrum = rotate(&raster.data.column(c).to_vec(), -spec.look_shifts[look]);
                fft.forward(&mut spectrum);
                let s = spec.recenter_offset(look);
                let band = spec.band(look);
                for b in band.lo..band.hi {
                    rebuilt[doppler::fft_index(b, n)] += spectrum[doppler::fft_index(b - s, n)];
                }
            }
            let err: f64 = rebuilt.iter().zip(&direct).map(|(r, d)| (r - d).norm_sqr()).sum();
            let energy: f64 = direct.iter().map(|d| d.norm_sqr()).sum();
            (err, energy)
        })
        .collect();
    let (err, energy) = sums
        .iter()
        .fold((0.0, 0.0), |acc, &(e, d)| (acc.0 + e, acc.1 + d));
    if energy == 0.0 {
        return Ok(if err == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((err / energy).sqrt())
}

/// De-weighted processed-band azimuth spectrum of `slc`, FFT order along
/// each column, zero outside the band.
pub fn deweighted_spectrum(slc: &ComplexRaster, spec: &SubapertureSpec) -> Result<Array2<Complex64>> {
    check_compatible(slc, spec)?;
    let n = spec.azimuth_len;
    let gains = deweight_gains(spec);
    let fft = AzimuthFft::new(n);
    let cols = doppler::map_columns(&slc.data, |mut col| {
        fft.forward(&mut col);
        for (z, g) in col.iter_mut().zip(&gains) {
            *z *= *g;
        }
        col
    });
    Ok(doppler::from_columns(n, &cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slc_sim::{simulate_slc, PointTarget, RadarParams, SceneSpec};

    fn params(fraction: f64, hamming: f64) -> RadarParams {
        RadarParams {
            hamming_coefficient: hamming,
            ..RadarParams::default()
        }
        .with_doppler_fraction(fraction)
    }

    fn zeros(h: usize, w: usize, p: RadarParams) -> ComplexRaster {
        ComplexRaster::new(Array2::zeros((h, w)), p)
    }

    #[test]
    fn even_split_of_900_bins() {
        let spec = make_spec(&zeros(900, 2, params(1.0, 0.75)), 3).unwrap();
        assert_eq!(spec.band_sizes(), vec![300, 300, 300]);
        for a in &spec.alpha {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn remainder_goes_to_last_band() {
        let spec = make_spec(&zeros(901, 2, params(1.0, 0.75)), 3).unwrap();
        assert_eq!(spec.band_sizes(), vec![300, 300, 301]);
        assert!((spec.alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn bands_tile_the_processed_interval_exhaustively() {
        for total in 24..=1024usize {
            for k in 2..=4usize {
                if total / k < MIN_BAND_BINS {
                    continue;
                }
                let sizes = split_sizes(total, k);
                assert_eq!(sizes.iter().sum::<usize>(), total);
                let max = *sizes.iter().max().unwrap();
                let min = *sizes.iter().min().unwrap();
                assert!(max - min < k);
                assert!(sizes[..k - 1].iter().all(|&s| s == total / k));
            }
        }
    }

    #[test]
    fn default_three_looks_are_non_overlapping() {
        let spec = make_spec(&zeros(512, 2, RadarParams::default()), 3).unwrap();
        assert_eq!(spec.num_looks, 3);
        for k in 0..2 {
            assert_eq!(spec.band(k).hi, spec.band(k + 1).lo);
        }
    }

    #[test]
    fn too_small_raster_rejected() {
        assert!(matches!(
            make_spec(&zeros(23, 2, params(1.0, 1.0)), 3),
            Err(Error::TooSmall(_))
        ));
    }

    #[test]
    fn shift_probe_finds_linear_phase_delay() {
        let n = 64;
        let transfer: Vec<Complex64> = (0..n)
            .map(|i| {
                let f = doppler::centered_bin(i, n) as f64;
                Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * 5.0 / n as f64)
            })
            .collect();
        assert_eq!(impulse_recentering_shift(&transfer), -5);
    }

    #[test]
    fn constant_signal_lands_in_dc_look_only() {
        // the DC look is the constant times a unit-modulus ramp from recentering
        let p = params(0.75, 0.75);
        let mut slc = zeros(96, 3, p);
        slc.data.fill(Complex64::new(2.0, -1.0));
        let spec = make_spec(&slc, 3).unwrap();
        let set = decompose(&slc, &spec).unwrap();
        let dc = (0..3).find(|&k| spec.band(k).contains(0)).unwrap();
        let gain = set.looks[dc].data[(0, 0)].norm() / slc.data[(0, 0)].norm();
        for (k, look) in set.looks.iter().enumerate() {
            for (z, s) in look.data.iter().zip(slc.data.iter()) {
                if k == dc {
                    assert!((z.norm() - s.norm() * gain).abs() < 1e-10 * s.norm());
                } else {
                    assert!(z.norm() <= 1e-10 * s.norm());
                }
            }
        }
    }

    #[test]
    fn looks_share_source_grid() {
        let (slc, _) = simulate_slc(&SceneSpec::homogeneous(100, 7, 1.0, 2), &RadarParams::default()).unwrap();
        for k in 2..=4 {
            let set = decompose(&slc, &make_spec(&slc, k).unwrap()).unwrap();
            assert_eq!(set.looks.len(), k);
            assert!(set.looks.iter().all(|l| l.dims() == slc.dims()));
        }
    }

    #[test]
    fn energy_partition_on_flat_spectrum() {
        // Unit impulse: flat spectrum across the band.
        let p = params(0.8, 1.0);
        let mut slc = zeros(257, 1, p);
        slc.data[(0, 0)] = Complex64::new(1.0, 0.0);
        let spec = make_spec(&slc, 3).unwrap();
        let set = decompose(&slc, &spec).unwrap();
        let energies: Vec<f64> = set
            .looks
            .iter()
            .map(|l| l.data.iter().map(|z| z.norm_sqr()).sum())
            .collect();
        let total: f64 = energies.iter().sum();
        for (e, a) in energies.iter().zip(&spec.alpha) {
            assert!(((e / total) - a).abs() / a < 1e-6);
        }
    }

    #[test]
    fn zeroed_look_leaves_its_energy_share() {
        let (slc, _) = simulate_slc(&SceneSpec::homogeneous(240, 16, 1.0, 9), &params(0.9, 1.0)).unwrap();
        let spec = make_spec(&slc, 3).unwrap();
        let mut set = decompose(&slc, &spec).unwrap();
        let spectrum = deweighted_spectrum(&slc, &spec).unwrap();
        let total: f64 = spectrum.iter().map(|z| z.norm_sqr()).sum();
        let band = spec.band(1);
        let share: f64 = (band.lo..band.hi)
            .map(|b| {
                spectrum
                    .row(doppler::fft_index(b, 240))
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / total;
        set.looks[1].data.fill(Complex64::new(0.0, 0.0));
        let residual = recompose_check(&set, &slc).unwrap();
        assert!(residual > 0.0);
        assert!((residual - share.sqrt()).abs() < 1e-10);
        // roughly one third of the energy for a white spectrum
        assert!((share - spec.alpha[1]).abs() < 0.05);
    }

    #[test]
    fn zero_input_residual_is_zero() {
        let slc = zeros(64, 4, params(0.8, 0.75));
        let spec = make_spec(&slc, 2).unwrap();
        let set = decompose(&slc, &spec).unwrap();
        assert!(set.looks.iter().all(|l| l.data.iter().all(|z| z.norm() == 0.0)));
        assert_eq!(recompose_check(&set, &slc).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut slc = zeros(64, 4, params(0.8, 0.75));
        let spec = make_spec(&slc, 2).unwrap();
        slc.data[(3, 2)] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(decompose(&slc, &spec), Err(Error::NonFinite { az: 3, rg: 2 })));
    }

    #[test]
    fn spec_raster_mismatch_rejected() {
        let slc = zeros(64, 4, params(0.8, 0.75));
        let spec = make_spec(&slc, 2).unwrap();
        let other = zeros(80, 4, params(0.8, 0.75));
        assert!(matches!(decompose(&other, &spec), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn point_target_stays_on_grid_in_every_look() {
        let mut scene = SceneSpec::homogeneous(256, 2, 0.0, 1);
        scene.point_targets.push(PointTarget {
            az: 77,
            rg: 0,
            amplitude: 1.0,
        });
        let (slc, _) = simulate_slc(&scene, &params(0.8, 0.75)).unwrap();
        let set = decompose(&slc, &make_spec(&slc, 3).unwrap()).unwrap();
        for look in &set.looks {
            let peak = look
                .data
                .column(0)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .unwrap()
                .0;
            assert_eq!(peak, 77);
        }
    }
}
