//! Synthetic single-look-complex scenes with known clean reflectivity.
//!
//! Speckle is fully developed circular complex Gaussian, drawn
//! independently per pixel and then shaped along azimuth: band-limited to
//! the Doppler bandwidth and weighted by a generalized Hamming window. The
//! shaping filter is normalized to unit power gain so a homogeneous region
//! of reflectivity `s` has expected intensity `s`.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::doppler::{self, AzimuthFft, AzimuthWindow, BinRange};
use crate::error::{Error, Result};
use crate::raster::{ComplexRaster, IntensityRaster, Polarization, RadiometricState, RasterMeta};
use crate::subaperture::SubapertureSpec;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarParams {
    /// m/s
    pub platform_velocity: f64,
    /// m
    pub antenna_length: f64,
    /// Hz
    pub transmitted_bandwidth: f64,
    /// Hz
    pub azimuth_prf: f64,
    pub hamming_coefficient: f64,
    #[serde(default = "default_c")]
    pub speed_of_light: f64,
}

fn default_c() -> f64 {
    SPEED_OF_LIGHT
}

impl Default for RadarParams {
    /// Stripmap-like geometry: B_D ~ 1236 Hz inside a 1700 Hz PRF.
    fn default() -> Self {
        Self {
            platform_velocity: 7600.0,
            antenna_length: 12.3,
            transmitted_bandwidth: 85.0e6,
            azimuth_prf: 1700.0,
            hamming_coefficient: 0.75,
            speed_of_light: SPEED_OF_LIGHT,
        }
    }
}

impl RadarParams {
    /// `B_D = 2 v / L`
    pub fn doppler_bandwidth(&self) -> f64 {
        2.0 * self.platform_velocity / self.antenna_length
    }

    /// Slant-range resolution `c / (2 B)`.
    pub fn range_resolution(&self) -> f64 {
        self.speed_of_light / (2.0 * self.transmitted_bandwidth)
    }

    /// Full-aperture azimuth resolution `L / 2`.
    pub fn azimuth_resolution(&self) -> f64 {
        self.antenna_length / 2.0
    }

    pub fn azimuth_window(&self) -> AzimuthWindow {
        AzimuthWindow::hamming(self.hamming_coefficient)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("platform_velocity", self.platform_velocity),
            ("antenna_length", self.antenna_length),
            ("transmitted_bandwidth", self.transmitted_bandwidth),
            ("azimuth_prf", self.azimuth_prf),
            ("speed_of_light", self.speed_of_light),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        self.azimuth_window().validate()?;
        let bd = self.doppler_bandwidth();
        if bd > self.azimuth_prf * (1.0 + 1e-12) {
            return Err(Error::Aliasing {
                doppler_hz: bd,
                prf_hz: self.azimuth_prf,
            });
        }
        Ok(())
    }

    /// Same geometry with the antenna length chosen so `B_D = fraction * PRF`.
    pub fn with_doppler_fraction(mut self, fraction: f64) -> Self {
        self.antenna_length = 2.0 * self.platform_velocity / (fraction * self.azimuth_prf);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointTarget {
    pub az: usize,
    pub rg: usize,
    /// Linear amplitude.
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub az: usize,
    pub rg: usize,
    pub height: usize,
    pub width: usize,
    /// Linear power.
    pub reflectivity: f64,
}

impl Region {
    pub fn overlaps(&self, other: &Region) -> bool {
        self.az < other.az + other.height
            && other.az < self.az + self.height
            && self.rg < other.rg + other.width
            && other.rg < self.rg + self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height_az: usize,
    pub width_rg: usize,
    pub background_reflectivity: f64,
    #[serde(default)]
    pub point_targets: Vec<PointTarget>,
    /// Later regions paint over earlier ones.
    #[serde(default)]
    pub homogeneous_regions: Vec<Region>,
    pub rng_seed: u64,
    #[serde(default)]
    pub scene_id: Option<String>,
    #[serde(default)]
    pub polarization: Option<Polarization>,
}

impl SceneSpec {
    pub fn homogeneous(height: usize, width: usize, reflectivity: f64, seed: u64) -> Self {
        Self {
            height_az: height,
            width_rg: width,
            background_reflectivity: reflectivity,
            point_targets: Vec::new(),
            homogeneous_regions: Vec::new(),
            rng_seed: seed,
            scene_id: None,
            polarization: None,
        }
    }

    /// 512x512 scene with a grid of homogeneous patches, textured strips and
    /// bright point targets. `seed` varies the layout and the speckle.
    pub fn bundled(seed: u64) -> Self {
        let mut spec = Self::homogeneous(512, 512, 0.05, seed);
        let levels = [0.01, 0.2, 0.6, 1.5, 0.03];
        // 5x5 grid of 48x48 homogeneous patches with 8-pixel streets.
        for i in 0..5 {
            for j in 0..5 {
                let pick = (i * 5 + j + seed as usize) % levels.len();
                spec.homogeneous_regions.push(Region {
                    az: 16 + i * 56,
                    rg: 16 + j * 56,
                    height: 48,
                    width: 48,
                    reflectivity: levels[pick],
                });
            }
        }
        // Thin strips carry the fine detail that over-smoothing destroys.
        for s in 0..12 {
            spec.homogeneous_regions.push(Region {
                az: 300 + s * 16,
                rg: 16,
                height: 6,
                width: 480,
                reflectivity: if s % 2 == 0 { 2.0 } else { 0.4 },
            });
        }
        for t in 0..8 {
            spec.point_targets.push(PointTarget {
                az: 24 + t * 60,
                rg: 300 + (t * 37 + seed as usize) % 180,
                amplitude: 20.0,
            });
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.height_az == 0 || self.width_rg == 0 {
            return Err(Error::InvalidParameter("scene has zero size".into()));
        }
        if !(self.background_reflectivity >= 0.0 && self.background_reflectivity.is_finite()) {
            return Err(Error::InvalidParameter(
                "background reflectivity must be >= 0".into(),
            ));
        }
        for t in &self.point_targets {
            if t.az >= self.height_az || t.rg >= self.width_rg {
                return Err(Error::OutOfBounds {
                    what: "point target",
                    az: t.az,
                    rg: t.rg,
                    height: self.height_az,
                    width: self.width_rg,
                });
            }
            if !(t.amplitude >= 0.0 && t.amplitude.is_finite()) {
                return Err(Error::InvalidParameter("target amplitude must be >= 0".into()));
            }
        }
        for r in &self.homogeneous_regions {
            if r.height == 0 || r.width == 0 {
                return Err(Error::InvalidParameter("degenerate region".into()));
            }
            if r.az + r.height > self.height_az || r.rg + r.width > self.width_rg {
                return Err(Error::OutOfBounds {
                    what: "region",
                    az: r.az,
                    rg: r.rg,
                    height: self.height_az,
                    width: self.width_rg,
                });
            }
            if !(r.reflectivity >= 0.0 && r.reflectivity.is_finite()) {
                return Err(Error::InvalidParameter("region reflectivity must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn reflectivity_map(&self) -> Array2<f64> {
        let mut map = Array2::from_elem((self.height_az, self.width_rg), self.background_reflectivity);
        for r in &self.homogeneous_regions {
            map.slice_mut(ndarray::s![r.az..r.az + r.height, r.rg..r.rg + r.width])
                .fill(r.reflectivity);
        }
        map
    }

    fn meta(&self) -> RasterMeta {
        RasterMeta {
            scene_id: self.scene_id.clone(),
            polarization: self.polarization,
        }
    }
}

/// Azimuth transfer function of the simulated focusing: the Doppler window
/// inside the processed band, scaled to unit mean power gain.
pub fn azimuth_transfer(params: &RadarParams, height: usize) -> Result<(BinRange, Vec<f64>)> {
    let band = doppler::processed_band(params, height)?;
    let window = params.azimuth_window();
    let mut transfer = vec![0.0; height];
    for n in band.lo..band.hi {
        transfer[doppler::fft_index(n, height)] = window.value(band, n);
    }
    let power: f64 = transfer.iter().map(|w| w * w).sum::<f64>() / height as f64;
    if power > 0.0 {
        let gain = power.sqrt().recip();
        transfer.iter_mut().for_each(|w| *w *= gain);
    }
    Ok((band, transfer))
}

/// Simulates an SLC and returns it with its clean reflectivity.
///
/// The clean raster holds the region reflectivity map plus `amplitude^2` at
/// each point-target pixel.
pub fn simulate_slc(spec: &SceneSpec, params: &RadarParams) -> Result<(ComplexRaster, IntensityRaster)> {
    params.validate()?;
    spec.validate()?;
    let (h, w) = (spec.height_az, spec.width_rg);
    let reflectivity = spec.reflectivity_map();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut field = Array2::<Complex64>::zeros((h, w));
    for (z, &s) in field.iter_mut().zip(reflectivity.iter()) {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *z = Complex64::new(re, im) * (s / 2.0).sqrt();
    }
    let mut clean = reflectivity;
    for t in &spec.point_targets {
        field[(t.az, t.rg)] += Complex64::new(t.amplitude, 0.0);
        clean[(t.az, t.rg)] += t.amplitude * t.amplitude;
    }

    let (_, transfer) = azimuth_transfer(params, h)?;
    let fft = AzimuthFft::new(h);
    let columns = doppler::map_columns(&field, |mut col| {
        fft.forward(&mut col);
        for (z, &g) in col.iter_mut().zip(&transfer) {
            *z *= g;
        }
        fft.inverse(&mut col);
        col
    });

    let slc = ComplexRaster {
        data: doppler::from_columns(h, &columns),
        params: *params,
        azimuth_weighting_applied: !params.azimuth_window().is_flat(),
        meta: spec.meta(),
    };
    let mut clean = IntensityRaster::new(clean, RadiometricState::LinearPower);
    clean.meta = spec.meta();
    Ok((slc, clean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionSummary {
    pub range_m: f64,
    pub azimuth_m: f64,
    pub look_azimuth_m: Vec<f64>,
}

/// Range, full-aperture azimuth and per-look azimuth resolution.
pub fn resolution_summary(params: &RadarParams, subspec: &SubapertureSpec) -> Result<ResolutionSummary> {
    params.validate()?;
    subspec.validate()?;
    let azimuth_m = params.azimuth_resolution();
    Ok(ResolutionSummary {
        range_m: params.range_resolution(),
        azimuth_m,
        look_azimuth_m: subspec.alpha.iter().map(|a| azimuth_m / a).collect(),
    })
}

/// -3 dB width, in samples, of the intensity peak of a complex azimuth
/// profile. The profile is FFT-interpolated by `upsample` before the
/// half-power crossings are located.
pub fn measure_3db_width(profile: &[Complex64], upsample: usize) -> f64 {
    let n = profile.len();
    let m = n * upsample.max(1);
    let fft = AzimuthFft::new(n);
    let mut spec = profile.to_vec();
    fft.forward(&mut spec);

    let mut padded = vec![Complex64::new(0.0, 0.0); m];
    for (i, &z) in spec.iter().enumerate() {
        let k = doppler::centered_bin(i, n);
        if n % 2 == 0 && k == -(n as i64) / 2 {
            // split the Nyquist bin
            padded[doppler::fft_index(k, m)] += z * 0.5;
            padded[doppler::fft_index(-k, m)] += z * 0.5;
        } else {
            padded[doppler::fft_index(k, m)] = z;
        }
    }
    let big = AzimuthFft::new(m);
    big.inverse(&mut padded);
    let scale = m as f64 / n as f64;
    let power: Vec<f64> = padded.iter().map(|z| (z * scale).norm_sqr()).collect();

    let (peak_idx, peak) = power
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
    let half = peak / 2.0;
    let at = |i: isize| power[i.rem_euclid(m as isize) as usize];

    let crossing = |step: isize| -> f64 {
        let mut i = peak_idx as isize;
        let mut dist = 0isize;
        while at(i + step) > half && dist < m as isize / 2 {
            i += step;
            dist += 1;
        }
        let (p0, p1) = (at(i), at(i + step));
        let frac = if p0 == p1 { 0.0 } else { (p0 - half) / (p0 - p1) };
        dist as f64 + frac
    };
    (crossing(1) + crossing(-1)) / upsample.max(1) as f64
}
