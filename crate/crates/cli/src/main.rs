use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use subap_core::config::{self, PipelineConfig};
use subap_core::dataset::{self, PairWriter, Split, SplitManifest};
use subap_core::enhance::{self, EnhancerBinding, TilingPlan};
use subap_core::grdf::{self, Raster};
use subap_core::metrics::{EvalReport, RoiSet};
use subap_core::pipeline;
use subap_core::preprocess::{self, ClipSpec};
use subap_core::slc_sim::{self, SceneSpec};
use subap_core::subaperture;
use subap_core::{Error, IntensityRaster, Polarization, RadiometricState, Result};

const THREADS_ENV: &str = "SUBAP_THREADS";

#[derive(Parser)]
#[command(name = "subap", version, about = "Subaperture training pairs and enhancer evaluation for SAR")]
struct Cli {
    /// Pipeline configuration JSON supplying defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an SLC and its clean reflectivity.
    Simulate(SimulateArgs),
    /// Split an SLC into azimuth subaperture looks.
    Decompose(DecomposeArgs),
    #[command(subcommand)]
    Preprocess(PreprocessCommand),
    #[command(subcommand)]
    Pairs(PairsCommand),
    /// Tiled inference, optionally followed by refinement passes.
    Enhance(EnhanceArgs),
    /// Iterative refinement: an initial enhancer, then SI passes.
    Refine(RefineArgs),
    /// Score enhanced rasters against references.
    Evaluate(EvaluateArgs),
    /// Print the table of an EvalReport.
    Report(ReportArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// SceneSpec JSON; the bundled scene is used when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hamming: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the clean linear-power reflectivity.
    #[arg(long)]
    clean: Option<PathBuf>,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    looks: Option<usize>,
    /// De-weighting window coefficient; defaults to the one in the raster's radar metadata.
    #[arg(long)]
    hamming: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum PreprocessCommand {
    /// Fit percentile clip bounds over a JSON list of GRDF paths.
    FitClip {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a raster to the normalized [0, 1] state with fitted bounds.
    Apply {
        #[arg(long)]
        clipspec: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PairsCommand {
    /// Build a packed pair dataset from normalized rasters.
    Build {
        /// JSON list of {scene_id, full, looks: [...], split?}.
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        looks: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_histogram_match: bool,
    },
}

#[derive(Args, Clone)]
struct TilingArgs {
    #[arg(long)]
    tile: Option<usize>,
    #[arg(long)]
    overlap: Option<f64>,
}

#[derive(Args)]
struct EnhanceArgs {
    /// Comma-separated normalized GRDF rasters.
    #[arg(long, value_delimiter = ',', required = true)]
    inputs: Vec<PathBuf>,
    /// identity, lee, boxcar, multilook or external.
    #[arg(long, default_value = "identity")]
    enhancer: String,
    /// Command template for the external enhancer.
    #[arg(long)]
    cmd: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    noise_cv: Option<f64>,
    #[arg(long)]
    timeout: Option<u64>,
    #[command(flatten)]
    tiling: TilingArgs,
    /// Refinement passes with the configured SI enhancer.
    #[arg(long, default_value_t = 0)]
    passes: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "multilook")]
    init: String,
    #[arg(long, default_value = "lee")]
    enhancer: String,
    #[arg(long)]
    cmd: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    noise_cv: Option<f64>,
    #[command(flatten)]
    tiling: TilingArgs,
    #[arg(long)]
    passes: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, name = "ref")]
    reference: PathBuf,
    #[arg(long)]
    rois: PathBuf,
    #[arg(long)]
    clipspec: Option<PathBuf>,
    /// Method label; defaults to the prediction directory name.
    #[arg(long)]
    method: Option<String>,
    /// Directory for eval_report.json and report.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct SceneEntry {
    scene_id: String,
    full: PathBuf,
    looks: Vec<PathBuf>,
    #[serde(default)]
    split: Option<Split>,
}

fn read_norm(path: &Path) -> Result<IntensityRaster> {
    let r = grdf::read_intensity(path)?;
    r.expect_state(RadiometricState::NormalizedUnit)?;
    Ok(r)
}

/// Any GRDF raster brought to the decibel state.
fn read_as_db(path: &Path, floor: f64) -> Result<IntensityRaster> {
    match grdf::read_grdf(path)?.raster {
        Raster::Complex(c) => preprocess::to_db(&preprocess::to_intensity(&c)?, floor),
        Raster::Intensity(r) => match r.state {
            RadiometricState::LinearPower => preprocess::to_db(&r, floor),
            RadiometricState::Decibel => Ok(r),
            RadiometricState::NormalizedUnit => preprocess::denormalize(&r),
        },
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn plan(cfg: &PipelineConfig, t: &TilingArgs) -> Result<TilingPlan> {
    TilingPlan::new(
        t.tile.unwrap_or(cfg.tiling.tile_size),
        t.overlap.unwrap_or(cfg.tiling.overlap_fraction),
    )
}

fn binding(cfg: &PipelineConfig, name: &str, arity: usize, window: Option<usize>, noise_cv: Option<f64>, cmd: Option<&str>) -> Result<EnhancerBinding> {
    config::parse_enhancer(
        name,
        arity,
        window.unwrap_or(cfg.lee_window),
        noise_cv.unwrap_or(cfg.lee_noise_cv),
        cmd,
    )
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "raster".into(), |s| s.to_string_lossy().into_owned())
}

fn simulate(cfg: &PipelineConfig, a: SimulateArgs) -> Result<()> {
    let spec: SceneSpec = match &a.scene {
        Some(p) => dataset::read_json(p)?,
        None => SceneSpec::bundled(a.seed.unwrap_or(cfg.seed)),
    };
    let mut params = cfg.radar;
    if let Some(h) = a.hamming {
        params.hamming_coefficient = h;
    }
    let (slc, clean) = slc_sim::simulate_slc(&spec, &params)?;
    let mut sidecars = std::collections::BTreeMap::new();
    sidecars.insert("scene_spec".into(), serde_json::to_value(&spec).expect("serializable"));
    grdf::write_grdf(&Raster::Complex(slc), sidecars, &a.out)?;
    if let Some(p) = &a.clean {
        grdf::write_intensity(&clean, p)?;
    }
    Ok(())
}

fn decompose(cfg: &PipelineConfig, a: DecomposeArgs) -> Result<()> {
    let mut slc = grdf::read_complex(&a.input)?;
    if let Some(h) = a.hamming {
        slc.params.hamming_coefficient = h;
    }
    let spec = subaperture::make_spec(&slc, a.looks.unwrap_or(cfg.looks))?;
    let set = subaperture::decompose(&slc, &spec)?;
    let residual = subaperture::recompose_check(&set, &slc)?;
    create_dir(&a.out_dir)?;
    let sidecar = serde_json::json!({
        "subaperture_spec": spec,
        "resolution": slc_sim::resolution_summary(&slc.params, &spec)?,
        "recompose_residual": residual,
        "source": a.input,
    });
    dataset::write_json(&a.out_dir.join("subaperture.json"), &sidecar)?;
    for (k, look) in set.looks.into_iter().enumerate() {
        let mut sidecars = std::collections::BTreeMap::new();
        sidecars.insert("subaperture_spec".into(), serde_json::to_value(&spec).expect("serializable"));
        sidecars.insert("look_index".into(), k.into());
        grdf::write_grdf(&Raster::Complex(look), sidecars, a.out_dir.join(format!("look{k}.grdf")))?;
    }
    log::info!("{} looks, recompose residual {residual:.3e}", spec.num_looks);
    Ok(())
}

fn preprocess_cmd(cfg: &PipelineConfig, c: PreprocessCommand) -> Result<()> {
    match c {
        PreprocessCommand::FitClip { manifest, out } => {
            let paths: Vec<PathBuf> = dataset::read_json(&manifest)?;
            let rasters = paths
                .iter()
                .map(|p| read_as_db(p, cfg.db_floor))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&IntensityRaster> = rasters.iter().collect();
            let fitted = preprocess::fit_clip(&refs, &cfg.clip_spec())?;
            dataset::write_json(&out, &fitted)
        }
        PreprocessCommand::Apply { clipspec, input, out } => {
            let clip: ClipSpec = dataset::read_json(&clipspec)?;
            let db = read_as_db(&input, cfg.db_floor)?;
            grdf::write_intensity(&preprocess::clip_and_normalize(&db, &clip)?, &out)?;
            Ok(())
        }
    }
}

fn pairs_cmd(cfg: &PipelineConfig, c: PairsCommand) -> Result<()> {
    let PairsCommand::Build {
        scenes,
        looks,
        out,
        no_histogram_match,
    } = c;
    let entries: Vec<SceneEntry> = dataset::read_json(&scenes)?;
    let looks = looks.unwrap_or(cfg.looks);
    let mut ids: Vec<String> = Vec::new();
    for e in &entries {
        if !ids.contains(&e.scene_id) {
            ids.push(e.scene_id.clone());
        }
    }
    let mut manifest = SplitManifest::from_ordered(&ids, cfg.train_scenes, cfg.validation_scenes);
    manifest.patch_size = cfg.patch_size;
    for e in &entries {
        if let Some(s) = e.split {
            manifest.assignments.insert(e.scene_id.clone(), s);
        }
    }
    let matched = cfg.histogram_match && !no_histogram_match;
    let mut writer = PairWriter::create(&out, cfg.patch_size, looks, matched)?;
    for e in &entries {
        if e.looks.len() != looks {
            return Err(Error::Arity {
                expected: looks,
                actual: e.looks.len(),
            });
        }
        let mut full = read_norm(&e.full)?;
        if full.meta.polarization.is_none() {
            full.meta.polarization = Some(Polarization::VV);
        }
        let look_rasters = e.looks.iter().map(|p| read_norm(p)).collect::<Result<Vec<_>>>()?;
        for mut pair in dataset::extract_pairs(&full, &look_rasters, &manifest, &e.scene_id)? {
            if matched {
                dataset::match_pair_inputs(&mut pair, cfg.match_levels)?;
            }
            writer.push(&pair)?;
        }
    }
    let index = writer.finish(&manifest)?;
    println!("{} pairs written to {}", index.entries.len(), out.display());
    Ok(())
}

fn write_stages(out_dir: &Path, base: &str, stages: &[IntensityRaster]) -> Result<()> {
    create_dir(out_dir)?;
    for (t, s) in stages.iter().enumerate() {
        let name = if stages.len() == 1 {
            format!("{base}.grdf")
        } else {
            format!("{base}_pass{t}.grdf")
        };
        grdf::write_intensity(s, out_dir.join(name))?;
    }
    Ok(())
}

fn enhance_cmd(cfg: &PipelineConfig, a: EnhanceArgs) -> Result<()> {
    let inputs = a.inputs.iter().map(|p| read_norm(p)).collect::<Result<Vec<_>>>()?;
    let mut b = binding(cfg, &a.enhancer, inputs.len(), a.window, a.noise_cv, a.cmd.as_deref())?;
    if let (Some(t), enhance::EnhancerKind::External(c)) = (a.timeout, &mut b.kind) {
        c.timeout_secs = t;
    }
    let plan = plan(cfg, &a.tiling)?;
    let stages = if a.passes == 0 {
        vec![enhance::enhance_tiled(&inputs, &b, &plan)?]
    } else {
        enhance::iterate_refine(&inputs, &b, &cfg.refine_enhancer, a.passes, &plan)?
    };
    write_stages(&a.out_dir, &format!("{}_{}", stem(&a.inputs[0]), a.enhancer), &stages)
}

fn refine_cmd(cfg: &PipelineConfig, a: RefineArgs) -> Result<()> {
    let inputs = a.inputs.iter().map(|p| read_norm(p)).collect::<Result<Vec<_>>>()?;
    let init = binding(cfg, &a.init, inputs.len(), a.window, a.noise_cv, a.cmd.as_deref())?;
    let si = binding(cfg, &a.enhancer, 1, a.window, a.noise_cv, a.cmd.as_deref())?;
    let plan = plan(cfg, &a.tiling)?;
    let stages = enhance::iterate_refine(&inputs, &init, &si, a.passes.unwrap_or(cfg.passes), &plan)?;
    write_stages(&a.out_dir, &format!("{}_{}", stem(&a.inputs[0]), a.init), &stages)
}

fn evaluate_cmd(cfg: &PipelineConfig, a: EvaluateArgs) -> Result<()> {
    let rois: RoiSet = dataset::read_json(&a.rois)?;
    let clip: Option<ClipSpec> = a.clipspec.as_deref().map(dataset::read_json).transpose()?;
    let method = a.method.unwrap_or_else(|| stem(&a.pred));
    let report = pipeline::evaluate_dirs(
        &a.pred,
        &a.reference,
        &rois,
        clip.as_ref(),
        &method,
        cfg.kde_grid,
        cfg.kde_max_samples,
    )?;
    create_dir(&a.out)?;
    pipeline::write_report(&report, &a.out)?;
    print!("{}", report.table());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => simulate(&cfg, a),
        Command::Decompose(a) => decompose(&cfg, a),
        Command::Preprocess(c) => preprocess_cmd(&cfg, c),
        Command::Pairs(c) => pairs_cmd(&cfg, c),
        Command::Enhance(a) => enhance_cmd(&cfg, a),
        Command::Refine(a) => refine_cmd(&cfg, a),
        Command::Evaluate(a) => evaluate_cmd(&cfg, a),
        Command::Report(a) => {
            let report: EvalReport = dataset::read_json(&a.input)?;
            print!("{}", report.table());
            Ok(())
        }
        Command::Pipeline(a) => {
            if let Some(d) = a.run_dir {
                cfg.run_dir = d;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let report = pipeline::run_pipeline(&cfg)?;
            print!("{}", report.table());
            Ok(())
        }
    }
}

fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("ignoring {THREADS_ENV}: {e}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    init_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
