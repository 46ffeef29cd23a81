//! Pipeline configuration, serialized as JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{self, DEFAULT_MATCH_LEVELS, PATCH_SIZE};
use crate::enhance::{Arity, EnhancerBinding, EnhancerKind, ExternalCommand, TilingPlan, DEFAULT_MAX_PASSES};
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_KDE_GRID;
use crate::preprocess::{ClipSpec, DEFAULT_DB_FLOOR};
use crate::raster::Polarization;
use crate::slc_sim::RadarParams;
use crate::subaperture::MIN_BAND_BINS;

/// Cross-polarized backscatter relative to the co-polarized channel.
pub const VH_REFLECTIVITY_SCALE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestEntry {
    pub path: PathBuf,
    pub scene_id: String,
    pub polarization: Polarization,
    /// Optional clean linear-power reference on the same grid.
    #[serde(default)]
    pub clean: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum SceneSource {
    /// `count` bundled synthetic scenes, seeded from the pipeline seed.
    Simulated { count: usize },
    /// Pre-made complex GRDF rasters.
    Ingest { slcs: Vec<IngestEntry> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Clean reflectivity when available, full aperture otherwise.
    Clean,
    FullAperture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub looks: usize,
    pub radar: RadarParams,
    pub scenes: SceneSource,
    pub polarizations: Vec<Polarization>,
    pub train_scenes: usize,
    pub validation_scenes: usize,
    pub clip_low_percentile: f64,
    pub clip_high_percentile: f64,
    pub per_polarization_clip: bool,
    pub db_floor: f64,
    pub patch_size: usize,
    pub histogram_match: bool,
    pub match_levels: usize,
    pub tiling: TilingPlan,
    pub lee_window: usize,
    pub lee_noise_cv: f64,
    /// SI enhancer fed back during refinement.
    pub refine_enhancer: EnhancerBinding,
    pub passes: usize,
    /// Optional externally trained enhancer evaluated alongside the built-ins.
    pub external: Option<ExternalMethod>,
    pub reference: ReferenceKind,
    pub rois: Option<PathBuf>,
    pub kde_grid: usize,
    /// Stride-thin KDE samples to at most this many pixels.
    pub kde_max_samples: Option<usize>,
    pub seed: u64,
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalMethod {
    pub name: String,
    pub command: ExternalCommand,
    pub arity: Arity,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            looks: 3,
            radar: RadarParams::default(),
            scenes: SceneSource::Simulated { count: 1 },
            polarizations: vec![Polarization::VV],
            train_scenes: 0,
            validation_scenes: 0,
            clip_low_percentile: 0.1,
            clip_high_percentile: 99.9,
            per_polarization_clip: true,
            db_floor: DEFAULT_DB_FLOOR,
            patch_size: PATCH_SIZE,
            histogram_match: true,
            match_levels: DEFAULT_MATCH_LEVELS,
            tiling: TilingPlan::default(),
            lee_window: 7,
            lee_noise_cv: 0.5,
            refine_enhancer: EnhancerBinding::lee(7, 0.5),
            passes: 4,
            external: None,
            reference: ReferenceKind::Clean,
            rois: None,
            kde_grid: DEFAULT_KDE_GRID,
            kde_max_samples: Some(1 << 16),
            seed: 0,
            run_dir: PathBuf::from("run"),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let config: Self = dataset::read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn clip_spec(&self) -> ClipSpec {
        ClipSpec {
            low_percentile: self.clip_low_percentile,
            high_percentile: self.clip_high_percentile,
            per_polarization: self.per_polarization_clip,
            ..ClipSpec::default()
        }
    }

    pub fn lee_binding(&self) -> EnhancerBinding {
        EnhancerBinding::lee(self.lee_window, self.lee_noise_cv)
    }

    pub fn scene_count(&self) -> usize {
        match &self.scenes {
            SceneSource::Simulated { count } => *count,
            SceneSource::Ingest { slcs } => {
                let mut ids: Vec<&str> = slcs.iter().map(|s| s.scene_id.as_str()).collect();
                ids.sort_unstable();
                ids.dedup();
                ids.len()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.looks < 2 {
            return bad(format!("looks must be >= 2, got {}", self.looks));
        }
        self.radar.validate()?;
        self.clip_spec().validate()?;
        self.tiling.validate()?;
        self.refine_enhancer.validate()?;
        if self.refine_enhancer.arity != Arity::Si {
            return bad("refine_enhancer must have SI arity".into());
        }
        self.lee_binding().validate()?;
        if let Some(ext) = &self.external {
            EnhancerBinding::external(ext.command.clone(), ext.arity)?;
            if let Arity::Mf { looks } = ext.arity {
                if looks != self.looks {
                    return bad(format!("external MF arity {looks} differs from looks {}", self.looks));
                }
            }
        }
        if self.passes > DEFAULT_MAX_PASSES {
            return bad(format!("passes {} exceed {DEFAULT_MAX_PASSES}", self.passes));
        }
        if self.patch_size < MIN_BAND_BINS {
            return bad(format!("patch size {} too small", self.patch_size));
        }
        if self.match_levels < 2 || self.kde_grid < 2 {
            return bad("match_levels and kde_grid must be >= 2".into());
        }
        if !(self.db_floor > 0.0) {
            return bad("db_floor must be > 0".into());
        }
        if self.polarizations.is_empty() {
            return bad("no polarizations configured".into());
        }
        let scenes = self.scene_count();
        if scenes == 0 {
            return bad("no scenes configured".into());
        }
        if self.train_scenes + self.validation_scenes >= scenes {
            return bad(format!(
                "{} train + {} validation scenes leave no test scene out of {scenes}",
                self.train_scenes, self.validation_scenes
            ));
        }
        if let SceneSource::Ingest { slcs } = &self.scenes {
            if self.rois.is_none() {
                return bad("ingested scenes need an ROI file for ENL".into());
            }
            if slcs.iter().any(|s| !s.path.exists()) {
                return Err(Error::InvalidParameter("an ingest path does not exist".into()));
            }
        }
        Ok(())
    }
}

/// `identity`, `lee`, `boxcar`, `multilook` or `external` with a command.
pub fn parse_enhancer(name: &str, looks: usize, window: usize, noise_cv: f64, command: Option<&str>) -> Result<EnhancerBinding> {
    let binding = match name {
        "identity" => EnhancerBinding::identity(),
        "lee" => EnhancerBinding::lee(window, noise_cv),
        "boxcar" => EnhancerBinding::boxcar(window),
        "multilook" => EnhancerBinding::multilook(looks),
        "external" => {
            let template = command.ok_or_else(|| Error::InvalidParameter("external enhancer needs --cmd".into()))?;
            let arity = if looks > 1 { Arity::Mf { looks } } else { Arity::Si };
            EnhancerBinding {
                kind: EnhancerKind::External(ExternalCommand::new(template)),
                arity,
                workdir: None,
            }
        }
        other => return Err(Error::InvalidParameter(format!("unknown enhancer '{other}'"))),
    };
    binding.validate()?;
    Ok(binding)
}
