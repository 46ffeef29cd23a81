use std::path::Path;

use subap_core::config::PipelineConfig;
use subap_core::dataset::{self, PackedPairs, PairIndex};
use subap_core::metrics::{EvalReport, Score};
use subap_core::pipeline::{self, run_pipeline};

fn config(dir: &Path) -> PipelineConfig {
    PipelineConfig {
        run_dir: dir.to_path_buf(),
        passes: 2,
        ..Default::default()
    }
}

#[test]
fn default_run_directory_contents() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let report = run_pipeline(&config(&run)).unwrap();

    let scene = run.join("scenes/scene00_VV");
    for k in 0..3 {
        assert!(scene.join(format!("look{k}.grdf")).exists());
    }
    assert!(!scene.join("look3.grdf").exists());
    for f in ["MANIFEST", "config.json", "clipspec.json", "pipeline.log", "eval_report.json", "report.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest = std::fs::read_to_string(run.join("MANIFEST")).unwrap();
    assert!(manifest.starts_with(pipeline::RUN_LAYOUT_VERSION));

    let index: PairIndex = dataset::read_json(&run.join("pairs/pairs_index.json")).unwrap();
    assert_eq!(index.looks, 3);
    // 512 / 96 = 5 full tiles per axis
    assert_eq!(index.entries.len(), 25);
    assert_eq!(PackedPairs::open(run.join("pairs")).unwrap().len(), 25);

    let on_disk: EvalReport = dataset::read_json(&run.join("eval_report.json")).unwrap();
    assert_eq!(on_disk, report);
    assert!(!report.records.is_empty());
    for r in &report.records {
        assert!(matches!(r.psnr_db, Score::Finite(v) if v.is_finite()));
        assert!(r.ssim.is_finite() && r.enl > 0.0 && r.kde_distance >= 0.0);
    }
    let passes: Vec<usize> = report
        .records
        .iter()
        .filter(|r| r.method == "multilook")
        .map(|r| r.refinement_pass)
        .collect();
    assert_eq!(passes, vec![0, 1, 2]);
}

#[test]
fn two_looks_recorded_in_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = PipelineConfig {
        looks: 2,
        passes: 0,
        ..config(&run)
    };
    run_pipeline(&cfg).unwrap();
    let sidecar: serde_json::Value = dataset::read_json(&run.join("scenes/scene00_VV/subaperture.json")).unwrap();
    let alpha: Vec<f64> = serde_json::from_value(sidecar["subaperture_spec"]["alpha"].clone()).unwrap();
    assert_eq!(alpha, vec![0.5, 0.5]);
    assert!(sidecar["recompose_residual"].as_f64().unwrap() <= 1e-10);
    assert!(run.join("scenes/scene00_VV/look1.grdf").exists());
    assert!(!run.join("scenes/scene00_VV/look2.grdf").exists());
}

#[test]
fn splits_are_leakage_free() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = PipelineConfig {
        scenes: subap_core::config::SceneSource::Simulated { count: 3 },
        polarizations: vec![subap_core::Polarization::VV, subap_core::Polarization::VH],
        train_scenes: 1,
        validation_scenes: 1,
        passes: 0,
        ..config(&run)
    };
    let report = run_pipeline(&cfg).unwrap();
    let manifest: dataset::SplitManifest = dataset::read_json(&run.join("pairs/split_manifest.json")).unwrap();
    let index: PairIndex = dataset::read_json(&run.join("pairs/pairs_index.json")).unwrap();
    assert!(manifest.is_leakage_free(index.entries.iter().map(|e| (e.scene_id.as_str(), e.split))));
    assert_eq!(index.entries.len(), 3 * 2 * 25);
    // only the test scene is evaluated, in both polarizations
    assert!(report.records.iter().all(|r| r.scene_id == "scene02"));
    assert!(report.table().lines().count() >= 4);
}
