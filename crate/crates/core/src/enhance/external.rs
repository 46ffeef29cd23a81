//! Process boundary for externally trained enhancers.
//!
//! Protocol: input tiles are written as GRDF `f32` rasters in the
//! `normalized_unit` state; the command template has `{inputs}` replaced by
//! the space-separated input paths (`{input0}`, `{input1}`, ... address them
//! individually) and `{output}` by the path the enhancer must write a single
//! GRDF `f32` raster to. The command runs under `sh -c`. Exit code 0 means
//! success; anything else is reported as a failure. The output must match
//! the input grid, be finite, and lie in `[0, 1]` within `1e-3` (it is then
//! clamped).

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grdf;
use crate::raster::{IntensityRaster, RadiometricState};

pub const DEFAULT_TIMEOUT_SECS: u64 = 300;
pub const RANGE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalCommand {
    pub template: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

impl ExternalCommand {
    pub fn new(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.template.contains("{output}") {
            return Err(Error::InvalidParameter(
                "external command template must contain {output}".into(),
            ));
        }
        if !(self.template.contains("{inputs}") || self.template.contains("{input0}")) {
            return Err(Error::InvalidParameter(
                "external command template must reference {inputs} or {input0}".into(),
            ));
        }
        Ok(())
    }

    pub fn render(&self, inputs: &[PathBuf], output: &Path) -> String {
        let quote = |p: &Path| format!("'{}'", p.display().to_string().replace('\'', "'\\''"));
        let joined = inputs.iter().map(|p| quote(p)).collect::<Vec<_>>().join(" ");
        let mut cmd = self.template.replace("{inputs}", &joined);
        for (i, p) in inputs.iter().enumerate() {
            cmd = cmd.replace(&format!("{{input{i}}}"), &quote(p));
        }
        cmd.replace("{output}", &quote(output))
    }
}

static CALL_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Fresh scratch directory for one invocation.
fn scratch_dir(workdir: Option<&Path>) -> Result<PathBuf> {
    let base = workdir.map_or_else(std::env::temp_dir, Path::to_path_buf);
    let id = CALL_COUNTER.fetch_add(1, Ordering::Relaxed);
    let dir = base.join(format!("subap-ext-{}-{id}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn wait_with_timeout(cmd: &ExternalCommand, rendered: &str) -> Result<()> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(rendered)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .spawn()
        .map_err(|e| Error::io("sh", e))?;
    let deadline = Instant::now() + Duration::from_secs(cmd.timeout_secs);
    loop {
        match child.try_wait().map_err(|e| Error::io("sh", e))? {
            Some(status) if status.success() => return Ok(()),
            Some(status) => {
                return Err(Error::ExternalExit {
                    command: rendered.to_string(),
                    code: status.code(),
                })
            }
            None if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::ExternalTimeout {
                    command: rendered.to_string(),
                    seconds: cmd.timeout_secs,
                });
            }
            None => std::thread::sleep(Duration::from_millis(5)),
        }
    }
}

/// Validates an enhancer output against the input grid and clamps it to `[0, 1]`.
pub fn validate_output(path: &Path, raster: &IntensityRaster, dims: (usize, usize)) -> Result<Array2<f64>> {
    let violation = |reason: String| Error::Protocol {
        path: path.to_path_buf(),
        reason,
    };
    if raster.dims() != dims {
        return Err(violation(format!(
            "output is {:?}, expected {:?}",
            raster.dims(),
            dims
        )));
    }
    for ((r, c), &v) in raster.data.indexed_iter() {
        if !v.is_finite() {
            return Err(violation(format!("non-finite value at ({r}, {c})")));
        }
        if v < -RANGE_TOLERANCE || v > 1.0 + RANGE_TOLERANCE {
            return Err(violation(format!("value {v} at ({r}, {c}) outside [0, 1]")));
        }
    }
    Ok(raster.data.mapv(|v| v.clamp(0.0, 1.0)))
}

/// Runs one external invocation on a set of same-grid tiles.
pub fn run_external(cmd: &ExternalCommand, inputs: &[Array2<f64>], workdir: Option<&Path>) -> Result<Array2<f64>> {
    cmd.validate()?;
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidParameter("external enhancer needs at least one input".into()))?;
    let dims = first.dim();
    let dir = scratch_dir(workdir)?;
    let mut paths = Vec::with_capacity(inputs.len());
    for (i, tile) in inputs.iter().enumerate() {
        let path = dir.join(format!("input{i}.grdf"));
        grdf::write_intensity(
            &IntensityRaster::new(tile.clone(), RadiometricState::NormalizedUnit),
            &path,
        )?;
        paths.push(path);
    }
    let output = dir.join("output.grdf");
    let rendered = cmd.render(&paths, &output);
    let result = wait_with_timeout(cmd, &rendered).and_then(|()| {
        let raster = grdf::read_intensity(&output).map_err(|e| Error::Protocol {
            path: output.clone(),
            reason: e.to_string(),
        })?;
        validate_output(&output, &raster, dims)
    });
    let _ = std::fs::remove_dir_all(&dir);
    result
}
