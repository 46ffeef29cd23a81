use std::path::Path;
use std::process::{Command, Output};

fn subap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subap"))
        .args(args)
        .env("SUBAP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = subap(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_scene(dir: &Path) -> std::path::PathBuf {
    let scene = dir.join("scene.json");
    std::fs::write(
        &scene,
        r#"{
            "height_az": 192, "width_rg": 192, "background_reflectivity": 0.5,
            "point_targets": [{"az": 40, "rg": 50, "amplitude": 10.0}],
            "homogeneous_regions": [{"az": 96, "rg": 96, "height": 64, "width": 64, "reflectivity": 2.0}],
            "rng_seed": 9, "scene_id": "tiny", "polarization": "VV"
        }"#,
    )
    .unwrap();
    scene
}

#[test]
fn simulate_decompose_preprocess_enhance_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let scene = small_scene(d);
    let slc = d.join("slc.grdf");
    let clean = d.join("clean.grdf");
    ok(&["simulate", "--scene", p(&scene), "--out", p(&slc), "--clean", p(&clean)]);

    let looks = d.join("looks");
    ok(&["decompose", "--input", p(&slc), "--looks", "2", "--out-dir", p(&looks)]);
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(looks.join("subaperture.json")).unwrap()).unwrap();
    assert_eq!(sidecar["subaperture_spec"]["alpha"], serde_json::json!([0.5, 0.5]));
    assert!(looks.join("look1.grdf").exists() && !looks.join("look2.grdf").exists());

    let manifest = d.join("fit.json");
    std::fs::write(
        &manifest,
        serde_json::to_string(&[p(&slc), p(&looks.join("look0.grdf")), p(&looks.join("look1.grdf"))]).unwrap(),
    )
    .unwrap();
    let clip = d.join("clipspec.json");
    ok(&["preprocess", "fit-clip", "--manifest", p(&manifest), "--out", p(&clip)]);
    let norm = d.join("norm");
    std::fs::create_dir(&norm).unwrap();
    let refs = d.join("refs");
    std::fs::create_dir(&refs).unwrap();
    for k in 0..2 {
        let input = looks.join(format!("look{k}.grdf"));
        ok(&["preprocess", "apply", "--clipspec", p(&clip), "--input", p(&input), "--out", p(&norm.join(format!("look{k}.grdf")))]);
    }
    ok(&["preprocess", "apply", "--clipspec", p(&clip), "--input", p(&slc), "--out", p(&norm.join("full.grdf"))]);

    let out = d.join("out");
    let inputs = format!("{},{}", p(&norm.join("look0.grdf")), p(&norm.join("look1.grdf")));
    ok(&["enhance", "--inputs", &inputs, "--enhancer", "multilook", "--tile", "64", "--overlap", "0.5", "--out-dir", p(&out)]);
    ok(&["refine", "--inputs", &inputs, "--init", "multilook", "--enhancer", "boxcar", "--window", "3", "--passes", "2", "--out-dir", p(&out)]);
    assert!(out.join("look0_multilook.grdf").exists());
    for t in 0..3 {
        assert!(out.join(format!("look0_multilook_pass{t}.grdf")).exists());
    }

    // evaluate the multilook output against the full aperture under the same name
    let pred = d.join("pred");
    std::fs::create_dir(&pred).unwrap();
    std::fs::copy(out.join("look0_multilook.grdf"), pred.join("tiny.grdf")).unwrap();
    std::fs::copy(norm.join("full.grdf"), refs.join("tiny.grdf")).unwrap();
    let rois = d.join("rois.json");
    std::fs::write(&rois, r#"{"rois": [{"az": 100, "rg": 100, "height": 56, "width": 56}]}"#).unwrap();
    let report_dir = d.join("report");
    let o = ok(&["evaluate", "--pred", p(&pred), "--reference", p(&refs), "--rois", p(&rois), "--clipspec", p(&clip), "--out", p(&report_dir)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("pred"));
    let o = ok(&["report", "--input", p(&report_dir.join("eval_report.json"))]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("SSIM"));
}

#[test]
fn identity_enhance_reproduces_input() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let scene = small_scene(d);
    let slc = d.join("slc.grdf");
    ok(&["simulate", "--scene", p(&scene), "--out", p(&slc)]);
    let fit = d.join("fit.json");
    std::fs::write(&fit, serde_json::to_string(&[p(&slc)]).unwrap()).unwrap();
    let clip = d.join("clip.json");
    ok(&["preprocess", "fit-clip", "--manifest", p(&fit), "--out", p(&clip)]);
    let norm = d.join("norm.grdf");
    ok(&["preprocess", "apply", "--clipspec", p(&clip), "--input", p(&slc), "--out", p(&norm)]);
    let out = d.join("out");
    ok(&["enhance", "--inputs", p(&norm), "--enhancer", "identity", "--out-dir", p(&out)]);
    let a = std::fs::read(&norm).unwrap();
    let b = std::fs::read(out.join("norm_identity.grdf")).unwrap();
    assert_eq!(a.len(), b.len());
}

#[test]
fn pairs_build_from_scene_list() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let scene = small_scene(d);
    let slc = d.join("slc.grdf");
    ok(&["simulate", "--scene", p(&scene), "--out", p(&slc)]);
    let looks = d.join("looks");
    ok(&["decompose", "--input", p(&slc), "--out-dir", p(&looks)]);
    let fit = d.join("fit.json");
    std::fs::write(&fit, serde_json::to_string(&[p(&slc)]).unwrap()).unwrap();
    let clip = d.join("clip.json");
    ok(&["preprocess", "fit-clip", "--manifest", p(&fit), "--out", p(&clip)]);
    let mut look_paths = Vec::new();
    for k in 0..3 {
        let out = d.join(format!("n{k}.grdf"));
        ok(&["preprocess", "apply", "--clipspec", p(&clip), "--input", p(&looks.join(format!("look{k}.grdf"))), "--out", p(&out)]);
        look_paths.push(p(&out).to_string());
    }
    let full = d.join("full.grdf");
    ok(&["preprocess", "apply", "--clipspec", p(&clip), "--input", p(&slc), "--out", p(&full)]);
    let list = d.join("scenes.json");
    std::fs::write(
        &list,
        serde_json::json!([{"scene_id": "tiny", "full": p(&full), "looks": look_paths, "split": "train"}]).to_string(),
    )
    .unwrap();
    let out = d.join("pairs");
    let o = ok(&["pairs", "build", "--scenes", p(&list), "--looks", "3", "--out", p(&out)]);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("4 pairs"));
    let bin = std::fs::metadata(out.join("pairs.bin")).unwrap().len();
    assert_eq!(bin, 4 * 4 * 96 * 96 * 4);
}

#[test]
fn pipeline_with_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    std::fs::write(&cfg, r#"{"looks": 2, "passes": 1}"#).unwrap();
    let run = tmp.path().join("run");
    let o = ok(&["--config", p(&cfg), "pipeline", "--run-dir", p(&run)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("multilook"));
    assert!(run.join("eval_report.json").exists());
    assert!(run.join("scenes/scene00_VV/look1.grdf").exists());
}

#[test]
fn exit_codes_by_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // usage
    assert_eq!(subap(&["decompose"]).status.code(), Some(2));
    // I/O
    let missing = d.join("missing.grdf");
    assert_eq!(subap(&["decompose", "--input", p(&missing), "--out-dir", p(d)]).status.code(), Some(3));

    let scene = small_scene(d);
    let slc = d.join("slc.grdf");
    ok(&["simulate", "--scene", p(&scene), "--out", p(&slc)]);
    // validation
    let o = subap(&["decompose", "--input", p(&slc), "--looks", "1", "--out-dir", p(d)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("looks"));

    let fit = d.join("fit.json");
    std::fs::write(&fit, serde_json::to_string(&[p(&slc)]).unwrap()).unwrap();
    let clip = d.join("clip.json");
    ok(&["preprocess", "fit-clip", "--manifest", p(&fit), "--out", p(&clip)]);
    let norm = d.join("norm.grdf");
    ok(&["preprocess", "apply", "--clipspec", p(&clip), "--input", p(&slc), "--out", p(&norm)]);
    // external enhancer failure
    let o = subap(&[
        "enhance", "--inputs", p(&norm), "--enhancer", "external", "--cmd", "exit 9 # {inputs} {output}",
        "--out-dir", p(&d.join("x")),
    ]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("9"));
    // external copy enhancer succeeds
    ok(&["enhance", "--inputs", p(&norm), "--enhancer", "external", "--cmd", "cp {input0} {output}", "--out-dir", p(&d.join("y"))]);

    let bad_cfg = d.join("bad.json");
    std::fs::write(&bad_cfg, r#"{"looks": 1}"#).unwrap();
    assert_eq!(subap(&["--config", p(&bad_cfg), "report", "--input", "x"]).status.code(), Some(4));
}
