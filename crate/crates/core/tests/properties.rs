use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subap_core::dataset::dihedral;
use subap_core::enhance::{enhance_tiled, EnhancerBinding, TilingPlan};
use subap_core::grdf;
use subap_core::metrics::{self, BandwidthRule, Roi, RoiSet, SsimWindow};
use subap_core::slc_sim::RadarParams;
use subap_core::subaperture::{decompose, make_spec};
use subap_core::{ComplexRaster, IntensityRaster, RadiometricState};

fn random_slc(h: usize, w: usize, seed: u64, params: RadarParams) -> ComplexRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array2::from_shape_fn((h, w), |_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    ComplexRaster::new(data, params)
}

fn unit(h: usize, w: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
}

fn normalized(a: Array2<f64>) -> IntensityRaster {
    IntensityRaster::new(a, RadiometricState::NormalizedUnit)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn decomposition_is_linear(
        seed in any::<u64>(),
        h in 64usize..160,
        k in 2usize..5,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        hamming in 0.55f64..=1.0,
    ) {
        let params = RadarParams { hamming_coefficient: hamming, ..RadarParams::default() };
        let x = random_slc(h, 5, seed, params);
        let y = random_slc(h, 5, seed.wrapping_add(1), params);
        let mut combo = x.clone();
        combo.data = &x.data * Complex64::new(a, 0.0) + &y.data * Complex64::new(b, 0.0);
        let spec = make_spec(&x, k).unwrap();
        let (dx, dy, dc) = (
            decompose(&x, &spec).unwrap(),
            decompose(&y, &spec).unwrap(),
            decompose(&combo, &spec).unwrap(),
        );
        for i in 0..k {
            let expected = &dx.looks[i].data * Complex64::new(a, 0.0) + &dy.looks[i].data * Complex64::new(b, 0.0);
            let scale = expected.iter().map(|z| z.norm()).fold(1.0, f64::max);
            for (p, q) in dc.looks[i].data.iter().zip(expected.iter()) {
                prop_assert!((p - q).norm() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn psnr_and_ssim_dihedral_invariant(seed in any::<u64>(), e in 0u8..8) {
        let x = unit(24, 24, seed);
        let y = x.mapv(|v| (v * 0.8 + 0.1).clamp(0.0, 1.0)) + unit(24, 24, seed ^ 1) * 0.05;
        let w = SsimWindow::default();
        let base = (
            metrics::psnr(&normalized(x.clone()), &normalized(y.clone())).unwrap(),
            metrics::ssim(&normalized(x.clone()), &normalized(y.clone()), &w).unwrap(),
        );
        let tx = normalized(dihedral(&x, e));
        let ty = normalized(dihedral(&y, e));
        let psnr = metrics::psnr(&tx, &ty).unwrap().finite().unwrap();
        prop_assert!((psnr - base.0.finite().unwrap()).abs() < 1e-9);
        prop_assert!((metrics::ssim(&tx, &ty, &w).unwrap() - base.1).abs() < 1e-9);
    }

    #[test]
    fn enl_scale_invariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let a = unit(40, 40, seed) + 0.01;
        let rois = RoiSet { rois: vec![Roi { scene_id: None, az: 4, rg: 4, height: 32, width: 32 }] };
        let lin = |d: Array2<f64>| IntensityRaster::new(d, RadiometricState::LinearPower);
        let e1 = metrics::enl(&lin(a.clone()), &rois).unwrap().mean;
        let e2 = metrics::enl(&lin(a * c), &rois).unwrap().mean;
        prop_assert!((e1 - e2).abs() <= 1e-9 * e1);
    }

    #[test]
    fn kde_distance_is_a_bounded_symmetric_divergence(s1 in any::<u64>(), s2 in any::<u64>(), p in 0.2f64..3.0) {
        let a: Vec<f64> = unit(15, 15, s1).iter().copied().collect();
        let b: Vec<f64> = unit(15, 15, s2).iter().map(|v| v.powf(p)).collect();
        let d = |x: &[f64], y: &[f64]| metrics::kde_distance(x, y, BandwidthRule::Silverman, 128).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
        prop_assert!((0.0..=2.0).contains(&d(&a, &b)));
    }

    #[test]
    fn identity_tiling_for_any_plan(
        seed in any::<u64>(),
        h in 1usize..150,
        w in 1usize..150,
        tile in 32usize..100,
        overlap in 0.0f64..=0.75,
    ) {
        let x = normalized(unit(h, w, seed));
        let plan = TilingPlan::new(tile, overlap).unwrap();
        let out = enhance_tiled(std::slice::from_ref(&x), &EnhancerBinding::identity(), &plan).unwrap();
        prop_assert_eq!(out.dims(), (h, w));
        for (p, q) in out.data.iter().zip(x.data.iter()) {
            prop_assert!((p - q).abs() <= 1e-6);
        }
    }

    #[test]
    fn grdf_round_trip_random_rasters(seed in any::<u64>(), h in 1usize..40, w in 1usize..40, masked in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = IntensityRaster::new(
            Array2::from_shape_fn((h, w), |_| (rng.random::<f32>() * 40.0 - 30.0) as f64),
            RadiometricState::Decibel,
        );
        if masked {
            r.mask = Some(Array2::from_shape_fn((h, w), |_| rng.random::<bool>()));
        }
        let path = dir.path().join("r.grdf");
        grdf::write_intensity(&r, &path).unwrap();
        prop_assert_eq!(grdf::read_intensity(&path).unwrap(), r);
    }
}

#[test]
fn lee_raises_enl_on_single_look_speckle() {
    use subap_core::slc_sim::{simulate_slc, SceneSpec};
    let params = RadarParams { hamming_coefficient: 1.0, ..RadarParams::default() }.with_doppler_fraction(1.0);
    let (slc, _) = simulate_slc(&SceneSpec::homogeneous(128, 128, 1.0, 4), &params).unwrap();
    let intensity = slc.data.mapv(|z| z.norm_sqr());
    let filtered = subap_core::enhance::lee_filter(&intensity, 7, 1.0).unwrap();
    let rois = RoiSet { rois: vec![Roi { scene_id: None, az: 8, rg: 8, height: 112, width: 112 }] };
    let lin = |d: Array2<f64>| IntensityRaster::new(d, RadiometricState::LinearPower);
    let before = metrics::enl(&lin(intensity), &rois).unwrap().mean;
    let after = metrics::enl(&lin(filtered), &rois).unwrap().mean;
    assert!(after > before, "{before} -> {after}");
}
