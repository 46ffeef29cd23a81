//! Self-supervised pair datasets: acquisition-level splits, non-overlapping
//! patch extraction, histogram matching, dihedral augmentation and input
//! sampling descriptors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{check_same_grid, IntensityRaster, Polarization, RadiometricState};

pub const PATCH_SIZE: usize = 96;
pub const DEFAULT_MATCH_LEVELS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub inputs: Vec<Array2<f64>>,
    pub target: Array2<f64>,
    pub scene_id: String,
    pub polarization: Polarization,
    /// (azimuth, range) offset of the patch's top-left pixel.
    pub patch_origin: (usize, usize),
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub assignments: BTreeMap<String, Split>,
    pub patch_size: usize,
    #[serde(default)]
    pub counts: BTreeMap<Split, usize>,
}

impl SplitManifest {
    pub fn new(assignments: BTreeMap<String, Split>) -> Self {
        Self {
            assignments,
            patch_size: PATCH_SIZE,
            counts: BTreeMap::new(),
        }
    }

    /// First `train` scenes to train, next `validation` to validation, the rest to test.
    pub fn from_ordered(scene_ids: &[String], train: usize, validation: usize) -> Self {
        let assignments = scene_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let split = if i < train {
                    Split::Train
                } else if i < train + validation {
                    Split::Validation
                } else {
                    Split::Test
                };
                (id.clone(), split)
            })
            .collect();
        Self::new(assignments)
    }

    pub fn split_of(&self, scene_id: &str) -> Result<Split> {
        self.assignments
            .get(scene_id)
            .copied()
            .ok_or_else(|| Error::UnknownScene(scene_id.to_string()))
    }

    pub fn scenes_in(&self, split: Split) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// True when no pair's recorded split disagrees with its scene's
    /// assignment, i.e. no scene contributes to two splits.
    pub fn is_leakage_free<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, Split)>) -> bool {
        pairs
            .into_iter()
            .all(|(scene, split)| self.assignments.get(scene) == Some(&split))
    }
}

/// Tiles the grid into non-overlapping `patch_size` windows from (0, 0) in
/// row-major order, skipping partial edge tiles and tiles containing any
/// no-data pixel in the target or any look.
pub fn extract_pairs<'a>(
    full: &'a IntensityRaster,
    looks: &'a [IntensityRaster],
    manifest: &SplitManifest,
    scene_id: &str,
) -> Result<impl Iterator<Item = PatchPair> + 'a> {
    full.expect_state(RadiometricState::NormalizedUnit)?;
    for look in looks {
        look.expect_state(RadiometricState::NormalizedUnit)?;
        check_same_grid(full.dims(), look.dims())?;
    }
    if looks.is_empty() {
        return Err(Error::InvalidParameter("no subaperture looks given".into()));
    }
    let split = manifest.split_of(scene_id)?;
    let polarization = full
        .meta
        .polarization
        .ok_or_else(|| Error::InvalidParameter("full-aperture raster has no polarization".into()))?;
    let size = manifest.patch_size;
    if size == 0 {
        return Err(Error::InvalidParameter("patch size must be > 0".into()));
    }
    let (h, w) = full.dims();
    let scene_id = scene_id.to_string();
    let origins = (0..h / size).flat_map(move |i| (0..w / size).map(move |j| (i * size, j * size)));

    let valid = move |r: &IntensityRaster, (az, rg): (usize, usize)| match &r.mask {
        None => true,
        Some(m) => !m.slice(s![az..az + size, rg..rg + size]).iter().any(|&b| b),
    };
    Ok(origins.filter_map(move |origin| {
        if !valid(full, origin) || !looks.iter().all(|l| valid(l, origin)) {
            return None;
        }
        let cut = |r: &IntensityRaster| {
            r.data
                .slice(s![origin.0..origin.0 + size, origin.1..origin.1 + size])
                .to_owned()
        };
        Some(PatchPair {
            inputs: looks.iter().map(cut).collect(),
            target: cut(full),
            scene_id: scene_id.clone(),
            polarization,
            patch_origin: origin,
            split,
        })
    }))
}

fn edge_cdf(values: &Array2<f64>, levels: usize) -> Vec<f64> {
    let mut counts = vec![0usize; levels];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * levels as f64) as usize).min(levels - 1);
        counts[b] += 1;
    }
    let n = values.len() as f64;
    let mut cdf = Vec::with_capacity(levels + 1);
    cdf.push(0.0);
    let mut acc = 0usize;
    for c in counts {
        acc += c;
        cdf.push(acc as f64 / n);
    }
    cdf
}

/// Maps `source` so its value distribution follows `reference`, through the
/// inverse reference CDF composed with the source CDF. Both CDFs are built
/// on `levels` uniform bins over `[0, 1]` and interpolated linearly inside
/// each bin. A constant reference yields that constant everywhere.
pub fn histogram_match(source: &Array2<f64>, reference: &Array2<f64>, levels: usize) -> Result<Array2<f64>> {
    check_same_grid(reference.dim(), source.dim())?;
    if levels < 64 {
        return Err(Error::InvalidParameter(format!("need at least 64 levels, got {levels}")));
    }
    if reference.is_empty() {
        return Err(Error::Empty("empty reference patch".into()));
    }
    let (ref_min, ref_max) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |a, &v| (a.0.min(v), a.1.max(v)));
    if ref_min == ref_max {
        return Ok(Array2::from_elem(source.dim(), ref_min));
    }
    let src_cdf = edge_cdf(source, levels);
    let ref_cdf = edge_cdf(reference, levels);
    let lv = levels as f64;

    let forward = |v: f64| {
        let t = v.clamp(0.0, 1.0) * lv;
        let b = (t as usize).min(levels - 1);
        src_cdf[b] + (t - b as f64) * (src_cdf[b + 1] - src_cdf[b])
    };
    let inverse = |p: f64| {
        // first edge whose CDF reaches p
        let e = ref_cdf.partition_point(|&c| c < p).clamp(1, levels);
        let (c0, c1) = (ref_cdf[e - 1], ref_cdf[e]);
        let frac = if c1 > c0 { ((p - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.0 };
        (e as f64 - 1.0 + frac) / lv
    };
    Ok(source.mapv(|v| inverse(forward(v)).clamp(ref_min, ref_max)))
}

/// Matches every input of `pair` to its target.
pub fn match_pair_inputs(pair: &mut PatchPair, levels: usize) -> Result<()> {
    for input in pair.inputs.iter_mut() {
        *input = histogram_match(input, &pair.target, levels)?;
    }
    Ok(())
}

/// Element `e` of the dihedral group of the square: an optional left-right
/// flip (`e >= 4`) followed by `e % 4` counter-clockwise quarter turns.
pub fn dihedral(a: &Array2<f64>, element: u8) -> Array2<f64> {
    assert!(element < 8, "dihedral element must be in 0..8");
    let mut out = if element >= 4 {
        a.slice(s![.., ..;-1]).to_owned()
    } else {
        a.clone()
    };
    for _ in 0..element % 4 {
        out = out.t().slice(s![..;-1, ..]).to_owned();
    }
    out
}

pub fn dihedral_inverse(element: u8) -> u8 {
    if element >= 4 {
        element
    } else {
        (4 - element) % 4
    }
}

/// Applies the same dihedral element to every input and the target.
pub fn dihedral_augment(pair: &PatchPair, element: u8) -> PatchPair {
    PatchPair {
        inputs: pair.inputs.iter().map(|x| dihedral(x, element)).collect(),
        target: dihedral(&pair.target, element),
        ..pair.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Single input look per step.
    #[serde(rename = "si")]
    Si,
    /// All looks jointly, in some order.
    #[serde(rename = "mf")]
    Mf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    Look(usize),
    Order(Vec<usize>),
}

/// Deterministic per-step input selection: a uniform look index (SI) or a
/// uniform permutation of `0..looks` (MF).
pub struct InputSampler {
    rng: ChaCha8Rng,
    mode: InferenceMode,
    looks: usize,
}

pub fn sampling_descriptor(mode: InferenceMode, looks: usize, seed: u64) -> InputSampler {
    InputSampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
        mode,
        looks,
    }
}

impl Iterator for InputSampler {
    type Item = Selection;

    fn next(&mut self) -> Option<Selection> {
        Some(match self.mode {
            InferenceMode::Si => Selection::Look(self.rng.random_range(0..self.looks)),
            InferenceMode::Mf => {
                let mut order: Vec<usize> = (0..self.looks).collect();
                order.shuffle(&mut self.rng);
                Selection::Order(order)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairIndexEntry {
    pub scene_id: String,
    pub polarization: Polarization,
    pub patch_origin: (usize, usize),
    pub split: Split,
}

/// JSON index of a packed pair file.
///
/// `pairs.bin` holds fixed-size records, one per entry in order: the `looks`
/// input patches followed by the target, each `patch_size^2` little-endian
/// `f32` values in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairIndex {
    pub format: String,
    pub patch_size: usize,
    pub looks: usize,
    pub record_bytes: usize,
    pub histogram_matched: bool,
    pub entries: Vec<PairIndexEntry>,
}

pub const PAIRS_BIN: &str = "pairs.bin";
pub const PAIRS_INDEX: &str = "pairs_index.json";
pub const SPLIT_MANIFEST: &str = "split_manifest.json";

/// Single writer for a packed pair dataset directory.
pub struct PairWriter {
    dir: PathBuf,
    bin: BufWriter<File>,
    index: PairIndex,
}

impl PairWriter {
    pub fn create(dir: impl AsRef<Path>, patch_size: usize, looks: usize, histogram_matched: bool) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(PAIRS_BIN);
        let bin = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        Ok(Self {
            dir,
            bin,
            index: PairIndex {
                format: "subap-pairs-1".into(),
                patch_size,
                looks,
                record_bytes: (looks + 1) * patch_size * patch_size * 4,
                histogram_matched,
                entries: Vec::new(),
            },
        })
    }

    pub fn push(&mut self, pair: &PatchPair) -> Result<()> {
        let size = self.index.patch_size;
        if pair.inputs.len() != self.index.looks {
            return Err(Error::Arity {
                expected: self.index.looks,
                actual: pair.inputs.len(),
            });
        }
        let path = self.dir.join(PAIRS_BIN);
        for patch in pair.inputs.iter().chain(std::iter::once(&pair.target)) {
            check_same_grid((size, size), patch.dim())?;
            for v in patch.iter() {
                self.bin
                    .write_all(&(*v as f32).to_le_bytes())
                    .map_err(|e| Error::io(&path, e))?;
            }
        }
        self.index.entries.push(PairIndexEntry {
            scene_id: pair.scene_id.clone(),
            polarization: pair.polarization,
            patch_origin: pair.patch_origin,
            split: pair.split,
        });
        Ok(())
    }

    /// Flushes records and writes the index and the manifest (with counts).
    pub fn finish(mut self, manifest: &SplitManifest) -> Result<PairIndex> {
        let path = self.dir.join(PAIRS_BIN);
        self.bin.flush().map_err(|e| Error::io(&path, e))?;
        let mut manifest = manifest.clone();
        manifest.counts.clear();
        for e in &self.index.entries {
            *manifest.counts.entry(e.split).or_default() += 1;
        }
        write_json(&self.dir.join(PAIRS_INDEX), &self.index)?;
        write_json(&self.dir.join(SPLIT_MANIFEST), &manifest)?;
        Ok(self.index)
    }
}

/// Random-access reader over a packed pair dataset.
pub struct PackedPairs {
    pub index: PairIndex,
    path: PathBuf,
}

impl PackedPairs {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let index: PairIndex = read_json(&dir.join(PAIRS_INDEX))?;
        let path = dir.join(PAIRS_BIN);
        let len = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        let expected = (index.entries.len() * index.record_bytes) as u64;
        if len != expected {
            return Err(Error::InvalidParameter(format!(
                "{}: {len} bytes, index expects {expected}",
                path.display()
            )));
        }
        Ok(Self { index, path })
    }

    pub fn len(&self) -> usize {
        self.index.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.entries.is_empty()
    }

    pub fn read(&self, i: usize) -> Result<PatchPair> {
        let entry = self
            .index
            .entries
            .get(i)
            .ok_or_else(|| Error::InvalidParameter(format!("record {i} out of range")))?;
        let mut file = BufReader::new(File::open(&self.path).map_err(|e| Error::io(&self.path, e))?);
        file.seek(SeekFrom::Start((i * self.index.record_bytes) as u64))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = vec![0u8; self.index.record_bytes];
        file.read_exact(&mut buf).map_err(|e| Error::io(&self.path, e))?;
        let size = self.index.patch_size;
        let plane = size * size * 4;
        let patch = |k: usize| {
            Array2::from_shape_fn((size, size), |(r, c)| {
                let o = k * plane + (r * size + c) * 4;
                f32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as f64
            })
        };
        Ok(PatchPair {
            inputs: (0..self.index.looks).map(patch).collect(),
            target: patch(self.index.looks),
            scene_id: entry.scene_id.clone(),
            polarization: entry.polarization,
            patch_origin: entry.patch_origin,
            split: entry.split,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
