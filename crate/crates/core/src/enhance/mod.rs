//! Enhancer bindings, tiled inference and iterative refinement.
//!
//! Built-in enhancers other than `identity` operate in linear power when
//! the input carries clip bounds: tiles are mapped back through the bounds,
//! filtered, converted to dB and re-normalized with the same bounds.

pub mod external;
pub mod filters;
pub mod tiling;

use std::path::PathBuf;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use external::{run_external, ExternalCommand};
pub use filters::{boxcar, lee_filter, multilook};
pub use tiling::{Blender, TilingPlan};

use crate::error::{Error, Result};
use crate::raster::{check_same_grid, union_masks, ClipBounds, IntensityRaster, RadiometricState};

pub const DEFAULT_MAX_PASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Arity {
    /// One input raster.
    Si,
    /// `looks` input rasters processed jointly.
    Mf { looks: usize },
}

impl Arity {
    pub fn count(self) -> usize {
        match self {
            Arity::Si => 1,
            Arity::Mf { looks } => looks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnhancerKind {
    /// Pixel-wise mean of the inputs (plain identity for one input).
    Identity,
    SubapMultilook,
    LeeFilter { window: usize, noise_cv: f64 },
    Boxcar { window: usize },
    External(ExternalCommand),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancerBinding {
    pub kind: EnhancerKind,
    pub arity: Arity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<PathBuf>,
}

impl EnhancerBinding {
    pub fn new(kind: EnhancerKind, arity: Arity) -> Result<Self> {
        let binding = Self {
            kind,
            arity,
            workdir: None,
        };
        binding.validate()?;
        Ok(binding)
    }

    pub fn identity() -> Self {
        Self {
            kind: EnhancerKind::Identity,
            arity: Arity::Si,
            workdir: None,
        }
    }

    pub fn lee(window: usize, noise_cv: f64) -> Self {
        Self {
            kind: EnhancerKind::LeeFilter { window, noise_cv },
            arity: Arity::Si,
            workdir: None,
        }
    }

    pub fn boxcar(window: usize) -> Self {
        Self {
            kind: EnhancerKind::Boxcar { window },
            arity: Arity::Si,
            workdir: None,
        }
    }

    pub fn multilook(looks: usize) -> Self {
        Self {
            kind: EnhancerKind::SubapMultilook,
            arity: Arity::Mf { looks },
            workdir: None,
        }
    }

    pub fn external(command: ExternalCommand, arity: Arity) -> Result<Self> {
        Self::new(EnhancerKind::External(command), arity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arity.count() == 0 {
            return Err(Error::InvalidParameter("arity must be >= 1".into()));
        }
        match &self.kind {
            EnhancerKind::External(cmd) => cmd.validate(),
            EnhancerKind::LeeFilter { window, .. } | EnhancerKind::Boxcar { window } => {
                if *window < 3 || window % 2 == 0 {
                    Err(Error::InvalidParameter(format!("window must be odd and >= 3, got {window}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn linear_domain(&self) -> bool {
        matches!(
            self.kind,
            EnhancerKind::SubapMultilook | EnhancerKind::LeeFilter { .. } | EnhancerKind::Boxcar { .. }
        )
    }

    /// Runs the enhancer on one set of same-grid tiles.
    pub fn apply_tile(&self, tiles: &[Array2<f64>], bounds: Option<ClipBounds>) -> Result<Array2<f64>> {
        if tiles.len() != self.arity.count() {
            return Err(Error::Arity {
                expected: self.arity.count(),
                actual: tiles.len(),
            });
        }
        if let EnhancerKind::External(cmd) = &self.kind {
            return run_external(cmd, tiles, self.workdir.as_deref());
        }
        let domain = bounds.filter(|_| self.linear_domain()).map(PowerDomain::new);
        let owned: Vec<Array2<f64>>;
        let inputs: Vec<&Array2<f64>> = match &domain {
            Some(d) => {
                owned = tiles.iter().map(|t| d.to_linear(t)).collect();
                owned.iter().collect()
            }
            None => tiles.iter().collect(),
        };
        let out = match &self.kind {
            EnhancerKind::Identity | EnhancerKind::SubapMultilook => multilook(&inputs)?,
            EnhancerKind::LeeFilter { window, noise_cv } => lee_filter(inputs[0], *window, *noise_cv)?,
            EnhancerKind::Boxcar { window } => boxcar(inputs[0], *window)?,
            EnhancerKind::External(_) => unreachable!("handled above"),
        };
        Ok(match &domain {
            Some(d) => d.to_normalized(&out),
            None => out,
        })
    }
}

/// Conversion between normalized dB values and linear power for fixed bounds.
struct PowerDomain {
    low: f64,
    span: f64,
}

impl PowerDomain {
    fn new(b: ClipBounds) -> Self {
        Self {
            low: b.low_db,
            span: b.high_db - b.low_db,
        }
    }

    fn to_linear(&self, a: &Array2<f64>) -> Array2<f64> {
        a.mapv(|v| 10f64.powf((self.low + v * self.span) / 10.0))
    }

    fn to_normalized(&self, a: &Array2<f64>) -> Array2<f64> {
        a.mapv(|p| ((10.0 * p.log10() - self.low) / self.span).clamp(0.0, 1.0))
    }
}

/// Replicates one raster `looks` times for an MF enhancer fed a single acquisition.
pub fn replicate_for_mf(raster: &IntensityRaster, looks: usize) -> Vec<IntensityRaster> {
    vec![raster.clone(); looks]
}

/// Sliding-window inference: overlapping tiles, per-tile enhancement and
/// Hann-weighted blending normalized per pixel. Edges are mirror-padded so
/// every tile is full size; the result is cropped back to the input grid.
pub fn enhance_tiled(inputs: &[IntensityRaster], binding: &EnhancerBinding, plan: &TilingPlan) -> Result<IntensityRaster> {
    binding.validate()?;
    plan.validate()?;
    if inputs.len() != binding.arity.count() {
        return Err(Error::Arity {
            expected: binding.arity.count(),
            actual: inputs.len(),
        });
    }
    let first = &inputs[0];
    let dims = first.dims();
    for r in inputs {
        r.expect_state(RadiometricState::NormalizedUnit)?;
        check_same_grid(dims, r.dims())?;
    }
    let bounds = first.clip_bounds;

    let mut blender = Blender::new(plan, dims);
    let (rows, cols) = blender.layouts();
    let padded: Vec<Array2<f64>> = inputs
        .iter()
        .map(|r| tiling::reflect_pad(&r.data, rows, cols))
        .collect();
    let t = plan.tile_size;
    let origins = tiling::tile_origins(rows, cols);
    let outputs: Vec<Result<Array2<f64>>> = origins
        .par_iter()
        .map(|&(r, c)| {
            let tiles: Vec<Array2<f64>> = padded
                .iter()
                .map(|p| p.slice(s![r..r + t, c..c + t]).to_owned())
                .collect();
            let out = binding.apply_tile(&tiles, bounds)?;
            check_same_grid((t, t), out.dim())?;
            Ok(out)
        })
        .collect();
    // no partial blends: any failing tile fails the whole raster
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;
    for (origin, tile) in origins.iter().zip(&outputs) {
        blender.add(*origin, tile);
    }

    let mut mask = None;
    for r in inputs {
        mask = union_masks(mask.as_ref(), r.mask.as_ref());
    }
    Ok(IntensityRaster {
        data: blender.finish(),
        state: RadiometricState::NormalizedUnit,
        clip_bounds: bounds,
        mask,
        meta: first.meta.clone(),
    })
}

/// Stage 0 is `binding_init` on `initial`; stage `t` feeds stage `t - 1`
/// back through the SI enhancer. Returns every stage.
pub fn iterate_refine(
    initial: &[IntensityRaster],
    binding_init: &EnhancerBinding,
    binding_si: &EnhancerBinding,
    passes: usize,
    plan: &TilingPlan,
) -> Result<Vec<IntensityRaster>> {
    if binding_si.arity != Arity::Si {
        return Err(Error::Arity {
            expected: 1,
            actual: binding_si.arity.count(),
        });
    }
    if passes > DEFAULT_MAX_PASSES {
        return Err(Error::InvalidParameter(format!(
            "{passes} refinement passes exceed the maximum of {DEFAULT_MAX_PASSES}"
        )));
    }
    let abort = |completed: usize| {
        move |e: Error| Error::RefineAborted {
            completed,
            source: Box::new(e),
        }
    };
    let mut stages = vec![enhance_tiled(initial, binding_init, plan).map_err(abort(0))?];
    for pass in 1..=passes {
        let next = enhance_tiled(std::slice::from_ref(&stages[pass - 1]), binding_si, plan)
            .map_err(abort(pass))?;
        log::debug!("refinement pass {pass} done");
        stages.push(next);
    }
    Ok(stages)
}
