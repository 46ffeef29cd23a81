//! End-to-end driver: simulate or ingest -> decompose -> preprocess -> pairs
//! -> enhance / refine -> evaluate, writing everything into one run directory.
//!
//! Run directory layout (version recorded in `MANIFEST`):
//!
//! ```text
//! MANIFEST                 layout version and artifact list
//! config.json              configuration snapshot
//! pipeline.log
//! scenes/<scene>_<pol>/    slc.grdf, clean.grdf (simulated), scene.json,
//!                          look{k}.grdf, subaperture.json,
//!                          full_norm.grdf, look{k}_norm.grdf
//! clipspec.json
//! pairs/                   pairs.bin, pairs_index.json, split_manifest.json
//! enhanced/<method>/       enhanced test-scene rasters
//! eval_report.json, report.txt
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::{PipelineConfig, ReferenceKind, SceneSource, VH_REFLECTIVITY_SCALE};
use crate::dataset::{self, PairWriter, Split, SplitManifest};
use crate::enhance::{self, Arity, EnhancerBinding, EnhancerKind};
use crate::error::{Error, Result};
use crate::grdf::{self, Raster};
use crate::metrics::{self, BandwidthRule, EvalRecord, EvalReport, RoiSet, Score, SsimWindow};
use crate::preprocess::{self, ClipSpec};
use crate::raster::{ComplexRaster, IntensityRaster, Polarization, RadiometricState};
use crate::slc_sim::{self, SceneSpec};
use crate::subaperture;

pub const RUN_LAYOUT_VERSION: &str = "subap-run 1";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const REPORT_TABLE: &str = "report.txt";
pub const CLIPSPEC: &str = "clipspec.json";

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

struct RunLog {
    file: File,
    path: PathBuf,
}

impl RunLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { file, path })
    }

    fn line(&mut self, stage: &str, msg: impl AsRef<str>) -> Result<()> {
        log::info!("[{stage}] {}", msg.as_ref());
        writeln!(self.file, "[{stage}] {}", msg.as_ref()).map_err(|e| Error::io(&self.path, e))
    }
}

/// One acquisition (scene, polarization) moving through the pipeline.
struct Acquisition {
    scene_id: String,
    polarization: Polarization,
    dir: PathBuf,
    slc: ComplexRaster,
    clean: Option<IntensityRaster>,
    rois: RoiSet,
    looks: Vec<ComplexRaster>,
    full_db: Option<IntensityRaster>,
    looks_db: Vec<IntensityRaster>,
    full_norm: Option<IntensityRaster>,
    looks_norm: Vec<IntensityRaster>,
}

impl Acquisition {
    fn name(&self) -> String {
        format!("{}_{}", self.scene_id, self.polarization)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Speckle seed per (pipeline seed, scene, polarization).
fn acquisition_seed(seed: u64, scene: usize, pol: Polarization) -> u64 {
    let pol_index = Polarization::ALL.iter().position(|&p| p == pol).unwrap_or(0) as u64;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((scene as u64) << 8)
        .wrapping_add(pol_index)
}

/// The bundled scene for one polarization; the cross-polarized channel is darker.
pub fn bundled_acquisition(seed: u64, scene: usize, pol: Polarization) -> SceneSpec {
    let mut spec = SceneSpec::bundled(seed.wrapping_add(scene as u64));
    spec.rng_seed = acquisition_seed(seed, scene, pol);
    spec.scene_id = Some(format!("scene{scene:02}"));
    spec.polarization = Some(pol);
    if pol == Polarization::VH {
        spec.background_reflectivity *= VH_REFLECTIVITY_SCALE;
        for r in &mut spec.homogeneous_regions {
            r.reflectivity *= VH_REFLECTIVITY_SCALE;
        }
        for t in &mut spec.point_targets {
            t.amplitude *= VH_REFLECTIVITY_SCALE.sqrt();
        }
    }
    spec
}

fn load_scenes(config: &PipelineConfig, run_dir: &Path, log: &mut RunLog) -> Result<Vec<Acquisition>> {
    let mut out = Vec::new();
    match &config.scenes {
        SceneSource::Simulated { count } => {
            for i in 0..*count {
                for &pol in &config.polarizations {
                    let spec = bundled_acquisition(config.seed, i, pol);
                    let (slc, clean) = slc_sim::simulate_slc(&spec, &config.radar)?;
                    let scene_id = spec.scene_id.clone().expect("set above");
                    let dir = run_dir.join("scenes").join(format!("{scene_id}_{pol}"));
                    create_dir(&dir)?;
                    dataset::write_json(&dir.join("scene.json"), &spec)?;
                    let mut sidecars = BTreeMap::new();
                    sidecars.insert("scene_spec".to_string(), json!(spec));
                    grdf::write_grdf(&Raster::Complex(slc.clone()), sidecars, dir.join("slc.grdf"))?;
                    grdf::write_intensity(&clean, dir.join("clean.grdf"))?;
                    log.line("simulate", format!("{scene_id} {pol}: seed {}", spec.rng_seed))?;
                    out.push(Acquisition {
                        rois: RoiSet::from_scene(&spec),
                        scene_id,
                        polarization: pol,
                        dir,
                        slc,
                        clean: Some(clean),
                        looks: Vec::new(),
                        full_db: None,
                        looks_db: Vec::new(),
                        full_norm: None,
                        looks_norm: Vec::new(),
                    });
                }
            }
        }
        SceneSource::Ingest { slcs } => {
            let rois: RoiSet = match &config.rois {
                Some(p) => dataset::read_json(p)?,
                None => RoiSet::default(),
            };
            rois.validate()?;
            for entry in slcs {
                let mut slc = grdf::read_complex(&entry.path)?;
                slc.check_finite()?;
                slc.meta.scene_id = Some(entry.scene_id.clone());
                slc.meta.polarization = Some(entry.polarization);
                let clean = match &entry.clean {
                    Some(p) => {
                        let c = grdf::read_intensity(p)?;
                        c.expect_state(RadiometricState::LinearPower)?;
                        crate::raster::check_same_grid(slc.dims(), c.dims())?;
                        Some(c)
                    }
                    None => None,
                };
                let dir = run_dir
                    .join("scenes")
                    .join(format!("{}_{}", entry.scene_id, entry.polarization));
                create_dir(&dir)?;
                log.line("ingest", format!("{} {}", entry.scene_id, entry.path.display()))?;
                out.push(Acquisition {
                    scene_id: entry.scene_id.clone(),
                    polarization: entry.polarization,
                    rois: rois.for_scene(Some(&entry.scene_id)),
                    dir,
                    slc,
                    clean,
                    looks: Vec::new(),
                    full_db: None,
                    looks_db: Vec::new(),
                    full_norm: None,
                    looks_norm: Vec::new(),
                });
            }
        }
    }
    Ok(out)
}

fn decompose_all(config: &PipelineConfig, acqs: &mut [Acquisition], log: &mut RunLog) -> Result<()> {
    for a in acqs.iter_mut() {
        let spec = subaperture::make_spec(&a.slc, config.looks)?;
        let set = subaperture::decompose(&a.slc, &spec)?;
        let residual = subaperture::recompose_check(&set, &a.slc)?;
        let resolution = slc_sim::resolution_summary(&a.slc.params, &spec)?;
        let sidecar = json!({
            "subaperture_spec": spec,
            "resolution": resolution,
            "recompose_residual": residual,
            "source": a.name(),
        });
        dataset::write_json(&a.dir.join("subaperture.json"), &sidecar)?;
        for (k, look) in set.looks.iter().enumerate() {
            let mut sidecars = BTreeMap::new();
            sidecars.insert("subaperture_spec".to_string(), json!(spec));
            sidecars.insert("look_index".to_string(), json!(k));
            grdf::write_grdf(&Raster::Complex(look.clone()), sidecars, a.dir.join(format!("look{k}.grdf")))?;
        }
        log.line(
            "decompose",
            format!("{}: {} looks, alpha {:?}, residual {residual:.3e}", a.name(), spec.num_looks, spec.alpha),
        )?;
        a.looks = set.looks;
    }
    Ok(())
}

fn preprocess_all(
    config: &PipelineConfig,
    acqs: &mut [Acquisition],
    manifest: &SplitManifest,
    run_dir: &Path,
    log: &mut RunLog,
) -> Result<ClipSpec> {
    for a in acqs.iter_mut() {
        a.full_db = Some(preprocess::to_db(&preprocess::to_intensity(&a.slc)?, config.db_floor)?);
        a.looks_db = a
            .looks
            .iter()
            .map(|l| preprocess::to_db(&preprocess::to_intensity(l)?, config.db_floor))
            .collect::<Result<_>>()?;
    }
    // bounds come from training acquisitions only, unless there are none
    let has_train = acqs
        .iter()
        .any(|a| manifest.split_of(&a.scene_id).ok() == Some(Split::Train));
    let mut fit_set: Vec<&IntensityRaster> = Vec::new();
    for a in acqs.iter() {
        if has_train && manifest.split_of(&a.scene_id)? != Split::Train {
            continue;
        }
        fit_set.push(a.full_db.as_ref().expect("set above"));
        fit_set.extend(a.looks_db.iter());
    }
    let clip = preprocess::fit_clip(&fit_set, &config.clip_spec())?;
    dataset::write_json(&run_dir.join(CLIPSPEC), &clip)?;
    for (key, b) in &clip.computed_bounds {
        log.line("preprocess", format!("{key}: [{:.4}, {:.4}] dB", b.low_db, b.high_db))?;
    }
    for a in acqs.iter_mut() {
        let full = preprocess::clip_and_normalize(a.full_db.as_ref().expect("set above"), &clip)?;
        grdf::write_intensity(&full, a.dir.join("full_norm.grdf"))?;
        a.full_norm = Some(full);
        a.looks_norm = a
            .looks_db
            .iter()
            .map(|l| preprocess::clip_and_normalize(l, &clip))
            .collect::<Result<_>>()?;
        for (k, l) in a.looks_norm.iter().enumerate() {
            grdf::write_intensity(l, a.dir.join(format!("look{k}_norm.grdf")))?;
        }
    }
    Ok(clip)
}

fn build_pairs(config: &PipelineConfig, acqs: &[Acquisition], manifest: &SplitManifest, run_dir: &Path, log: &mut RunLog) -> Result<()> {
    let dir = run_dir.join("pairs");
    let mut writer = PairWriter::create(&dir, config.patch_size, config.looks, config.histogram_match)?;
    let mut count = 0usize;
    for a in acqs {
        let full = a.full_norm.as_ref().expect("preprocessed");
        for mut pair in dataset::extract_pairs(full, &a.looks_norm, manifest, &a.scene_id)? {
            if config.histogram_match {
                dataset::match_pair_inputs(&mut pair, config.match_levels)?;
            }
            writer.push(&pair)?;
            count += 1;
        }
    }
    let index = writer.finish(manifest)?;
    log.line("pairs", format!("{count} pairs, {} bytes per record", index.record_bytes))
}

/// Metrics of one enhanced raster against a reference on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub psnr_db: Score,
    pub ssim: f64,
    pub enl: f64,
    pub kde_distance: f64,
}

/// PSNR, SSIM and KDE distance in normalized space against `reference`; ENL
/// in linear power over `rois` (needs clip bounds on `pred`).
pub fn evaluate_pair(
    pred: &IntensityRaster,
    reference: &IntensityRaster,
    rois: &RoiSet,
    kde_grid: usize,
    kde_max_samples: Option<usize>,
) -> Result<Metrics> {
    pred.expect_state(RadiometricState::NormalizedUnit)?;
    reference.expect_state(RadiometricState::NormalizedUnit)?;
    let psnr_db = metrics::psnr(pred, reference)?;
    let ssim = metrics::ssim(pred, reference, &SsimWindow::default())?;
    let linear = preprocess::normalized_to_linear(pred)?;
    let enl = metrics::enl(&linear, rois)?.mean;
    let (p, r) = metrics::paired_samples(pred, reference, kde_max_samples)?;
    let kde_distance = metrics::kde_distance(&p, &r, BandwidthRule::Silverman, kde_grid)?;
    Ok(Metrics {
        psnr_db,
        ssim,
        enl,
        kde_distance,
    })
}

/// Averages per-output metrics into one record ("computed per output, then averaged").
fn record(scene_id: &str, polarization: Polarization, method: &str, pass: usize, ms: &[Metrics]) -> EvalRecord {
    let n = ms.len() as f64;
    let psnr: Vec<Score> = ms.iter().map(|m| m.psnr_db).collect();
    let ssim = ms.iter().map(|m| m.ssim).sum::<f64>() / n;
    EvalRecord {
        scene_id: scene_id.to_string(),
        polarization,
        method: method.to_string(),
        refinement_pass: pass,
        psnr_db: Score::mean(&psnr).expect("at least one output"),
        ssim,
        ssim_pct: ssim * 100.0,
        enl: ms.iter().map(|m| m.enl).sum::<f64>() / n,
        kde_distance: ms.iter().map(|m| m.kde_distance).sum::<f64>() / n,
    }
}

fn reference_for(config: &PipelineConfig, a: &Acquisition) -> Result<IntensityRaster> {
    let full = a.full_norm.as_ref().expect("preprocessed");
    match (&a.clean, config.reference) {
        (Some(clean), ReferenceKind::Clean) => {
            let bounds = full
                .clip_bounds
                .ok_or_else(|| Error::MissingBounds(a.name()))?;
            let mut r = preprocess::normalize_with(&preprocess::to_db(clean, config.db_floor)?, bounds)?;
            r.meta = full.meta.clone();
            Ok(r)
        }
        _ => Ok(full.clone()),
    }
}

fn evaluate_all(config: &PipelineConfig, acqs: &[Acquisition], manifest: &SplitManifest, run_dir: &Path, log: &mut RunLog) -> Result<Vec<EvalRecord>> {
    let plan = &config.tiling;
    let enhanced = run_dir.join("enhanced");
    let mut records = Vec::new();
    let eval = |pred: &IntensityRaster, reference: &IntensityRaster, rois: &RoiSet| {
        evaluate_pair(pred, reference, rois, config.kde_grid, config.kde_max_samples)
    };
    let save = |method: &str, file: String, r: &IntensityRaster| -> Result<()> {
        let dir = enhanced.join(method);
        create_dir(&dir)?;
        Ok(grdf::write_intensity(r, dir.join(file))?)
    };
    for a in acqs {
        if manifest.split_of(&a.scene_id)? != Split::Test {
            continue;
        }
        let name = a.name();
        let reference = reference_for(config, a)?;

        // raw looks, each an SI "output"
        let ms = a
            .looks_norm
            .iter()
            .map(|l| eval(l, &reference, &a.rois))
            .collect::<Result<Vec<_>>>()?;
        records.push(record(&a.scene_id, a.polarization, "subaperture", 0, &ms));

        let lee = config.lee_binding();
        let mut ms = Vec::new();
        for (k, l) in a.looks_norm.iter().enumerate() {
            let out = enhance::enhance_tiled(std::slice::from_ref(l), &lee, plan)?;
            save("lee", format!("{name}_look{k}.grdf"), &out)?;
            ms.push(eval(&out, &reference, &a.rois)?);
        }
        records.push(record(&a.scene_id, a.polarization, "lee", 0, &ms));

        let stages = enhance::iterate_refine(
            &a.looks_norm,
            &EnhancerBinding::multilook(config.looks),
            &config.refine_enhancer,
            config.passes,
            plan,
        )?;
        for (t, s) in stages.iter().enumerate() {
            save("multilook", format!("{name}_pass{t}.grdf"), s)?;
            let m = eval(s, &reference, &a.rois)?;
            log.line(
                "evaluate",
                format!("{name} multilook pass {t}: PSNR {} ENL {:.3}", m.psnr_db, m.enl),
            )?;
            records.push(record(&a.scene_id, a.polarization, "multilook", t, &[m]));
        }

        if let Some(ext) = &config.external {
            let binding = EnhancerBinding {
                kind: EnhancerKind::External(ext.command.clone()),
                arity: ext.arity,
                workdir: Some(run_dir.join("scratch")),
            };
            create_dir(&run_dir.join("scratch"))?;
            let outputs = match ext.arity {
                Arity::Si => a
                    .looks_norm
                    .iter()
                    .map(|l| enhance::enhance_tiled(std::slice::from_ref(l), &binding, plan))
                    .collect::<Result<Vec<_>>>()?,
                Arity::Mf { .. } => vec![enhance::enhance_tiled(&a.looks_norm, &binding, plan)?],
            };
            let mut ms = Vec::new();
            for (k, out) in outputs.iter().enumerate() {
                save(&ext.name, format!("{name}_{k}.grdf"), out)?;
                ms.push(eval(out, &reference, &a.rois)?);
            }
            records.push(record(&a.scene_id, a.polarization, &ext.name, 0, &ms));
        }
    }
    Ok(records)
}

fn write_manifest(run_dir: &Path) -> Result<()> {
    let mut files = Vec::new();
    let mut stack = vec![run_dir.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if let Ok(rel) = path.strip_prefix(run_dir) {
                files.push(rel.display().to_string());
            }
        }
    }
    files.retain(|f| f != "MANIFEST");
    files.sort();
    let text = format!("{RUN_LAYOUT_VERSION}\n{}\n", files.join("\n"));
    let path = run_dir.join("MANIFEST");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Runs every stage in order; a failure is reported with its stage name.
pub fn run_pipeline(config: &PipelineConfig) -> Result<EvalReport> {
    stage("config", config.validate())?;
    let run_dir = config.run_dir.clone();
    stage("config", create_dir(&run_dir))?;
    stage("config", dataset::write_json(&run_dir.join("config.json"), config))?;
    let mut log = stage("config", RunLog::create(run_dir.join("pipeline.log")))?;

    let mut acqs = stage("simulate", load_scenes(config, &run_dir, &mut log))?;
    let mut scene_ids: Vec<String> = Vec::new();
    for a in &acqs {
        if !scene_ids.contains(&a.scene_id) {
            scene_ids.push(a.scene_id.clone());
        }
    }
    let mut manifest = SplitManifest::from_ordered(&scene_ids, config.train_scenes, config.validation_scenes);
    manifest.patch_size = config.patch_size;

    stage("decompose", decompose_all(config, &mut acqs, &mut log))?;
    stage("preprocess", preprocess_all(config, &mut acqs, &manifest, &run_dir, &mut log))?;
    stage("pairs", build_pairs(config, &acqs, &manifest, &run_dir, &mut log))?;
    let records = stage("evaluate", evaluate_all(config, &acqs, &manifest, &run_dir, &mut log))?;

    let mut rois = RoiSet::default();
    for a in &acqs {
        for r in &a.rois.rois {
            if !rois.rois.contains(r) {
                rois.rois.push(r.clone());
            }
        }
    }
    let report = EvalReport::new(records, rois);
    stage("report", write_report(&report, &run_dir))?;
    stage("report", log.line("report", format!("{} records", report.records.len())))?;
    stage("report", write_manifest(&run_dir))?;
    Ok(report)
}

pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    dataset::write_json(&dir.join(EVAL_REPORT), report)?;
    let path = dir.join(REPORT_TABLE);
    std::fs::write(&path, report.table()).map_err(|e| Error::io(&path, e))
}

/// Evaluates every GRDF in `pred_dir` against the same-named file in
/// `ref_dir`. Predictions without clip bounds take them from `clip`.
pub fn evaluate_dirs(
    pred_dir: &Path,
    ref_dir: &Path,
    rois: &RoiSet,
    clip: Option<&ClipSpec>,
    method: &str,
    kde_grid: usize,
    kde_max_samples: Option<usize>,
) -> Result<EvalReport> {
    rois.validate()?;
    let mut names: Vec<PathBuf> = std::fs::read_dir(pred_dir)
        .map_err(|e| Error::io(pred_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "grdf"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Empty(format!("no .grdf files in {}", pred_dir.display())));
    }
    let mut records = Vec::new();
    for path in names {
        let mut pred = grdf::read_intensity(&path)?;
        let file = path.file_name().expect("listed file");
        let reference = grdf::read_intensity(ref_dir.join(file))?;
        if pred.clip_bounds.is_none() {
            if let Some(c) = clip {
                pred.clip_bounds = Some(c.bounds_for(&pred)?);
            }
        }
        let scene_id = pred
            .meta
            .scene_id
            .clone()
            .unwrap_or_else(|| Path::new(file).with_extension("").display().to_string());
        let polarization = pred.meta.polarization.unwrap_or(Polarization::VV);
        let m = evaluate_pair(&pred, &reference, &rois.for_scene(Some(&scene_id)), kde_grid, kde_max_samples)?;
        records.push(record(&scene_id, polarization, method, 0, &[m]));
    }
    Ok(EvalReport::new(records, rois.clone()))
}
