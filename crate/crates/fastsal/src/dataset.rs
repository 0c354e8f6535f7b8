//! Manifests, fixation files and loading samples from disk.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fastsal_core::data::{default_sigma, fixations_to_density, resize_bilinear, split_random, Sample};
use fastsal_core::metrics::{DensityMap, FixationData};
use fastsal_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split {other:?}"))),
        }
    }
}

/// One manifest row. `ground_truth` is either a fixation CSV, from which the
/// density is built with `sigma`, or a precomputed PGM density. An optional
/// `fixations` column adds fixations to a PGM ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub ground_truth: PathBuf,
    pub split: Split,
    #[serde(default)]
    pub fixations: Option<PathBuf>,
    /// Blur for fixation ground truth; `H / 16` when absent.
    #[serde(default)]
    pub sigma: Option<f64>,
}

impl ManifestEntry {
    /// Identifier shared by an image and its prediction: the image file stem.
    pub fn id(&self) -> String {
        self.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

fn is_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

impl Manifest {
    pub fn of_split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    fn paths(e: &ManifestEntry) -> impl Iterator<Item = &PathBuf> {
        [&e.image, &e.ground_truth].into_iter().chain(e.fixations.iter())
    }
}

/// Reads a manifest CSV with header `image,ground_truth,split` (plus the
/// optional `fixations` and `sigma` columns). Relative paths resolve
/// against the manifest's directory and must exist.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut entries = Vec::new();
    for row in rd.deserialize::<ManifestEntry>() {
        let mut e = row.map_err(|e| Error::format(path, e.to_string()))?;
        e.image = base.join(&e.image);
        e.ground_truth = base.join(&e.ground_truth);
        e.fixations = e.fixations.map(|f| base.join(f));
        entries.push(e);
    }
    let missing: Vec<String> = entries
        .iter()
        .flat_map(Manifest::paths)
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("{}: missing files: {}", path.display(), missing.join(", "))));
    }
    Ok(Manifest { entries })
}

/// Writes a manifest; paths inside `path`'s directory are stored relative.
pub fn save_manifest(path: &Path, m: &Manifest) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &PathBuf| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.clone());
    let mut wr = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for e in &m.entries {
        wr.serialize(ManifestEntry {
            image: rel(&e.image),
            ground_truth: rel(&e.ground_truth),
            split: e.split,
            fixations: e.fixations.as_ref().map(rel),
            sigma: e.sigma,
        })?;
    }
    wr.flush().map_err(|e| Error::io(path, e))
}

/// Reassigns splits by a seeded permutation: the first `train` entries go
/// to train, the next `val` to val and the rest to test.
pub fn split_manifest(m: &Manifest, train: usize, val: usize, seed: u64) -> Result<Manifest> {
    let parts = split_random(m.entries.len(), &[train, val], seed)?;
    let mut out = m.clone();
    out.entries.iter_mut().for_each(|e| e.split = Split::Test);
    for (part, split) in parts.iter().zip([Split::Train, Split::Val]) {
        for &i in part {
            out.entries[i].split = split;
        }
    }
    Ok(out)
}

/// Fixations as `row,col` lines; a leading `row,col` header is accepted.
pub fn read_fixations(path: &Path, size: (usize, usize)) -> Result<FixationData> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (k == 0 && line.eq_ignore_ascii_case("row,col")) {
            continue;
        }
        let mut it = line.split(',').map(|s| s.trim().parse::<usize>());
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(r)), Some(Ok(c)), None) => points.push((r, c)),
            _ => return Err(Error::format(path, format!("line {}: expected `row,col`, got {line:?}", k + 1))),
        }
    }
    FixationData::new(size.0, size.1, points).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_fixations(path: &Path, f: &FixationData) -> Result<()> {
    let mut s = String::from("row,col\n");
    for (r, c) in f.points() {
        s.push_str(&format!("{r},{c}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Ground truth of an entry for an image of the given size.
pub fn load_ground_truth(e: &ManifestEntry, size: (usize, usize)) -> Result<(DensityMap, Option<FixationData>)> {
    if is_csv(&e.ground_truth) {
        let f = read_fixations(&e.ground_truth, size)?;
        if f.is_empty() {
            return Err(Error::format(&e.ground_truth, "no fixations"));
        }
        let sigma = e.sigma.unwrap_or_else(|| default_sigma(size.0));
        return Ok((fixations_to_density(&f, sigma)?, Some(f)));
    }
    let d = pnm::load_density(&e.ground_truth)?;
    if d.size() != size {
        return Err(Error::Data(format!(
            "{}: density {:?} does not match image {:?}",
            e.ground_truth.display(),
            d.size(),
            size
        )));
    }
    let f = e.fixations.as_ref().map(|p| read_fixations(p, size)).transpose()?;
    Ok((d, f))
}

/// Bilinear resize of a density followed by renormalization.
pub fn resize_density(d: &DensityMap, size: (usize, usize)) -> Result<DensityMap> {
    if d.size() == size {
        return Ok(d.clone());
    }
    let t = Tensor::new(&[1, d.height(), d.width()], d.values().to_vec()).map_err(Error::from)?;
    let r = resize_bilinear(&t, size)?;
    Ok(DensityMap::new(size.0, size.1, r.into_data())?)
}

fn scale_fixations(f: &FixationData, size: (usize, usize)) -> Result<FixationData> {
    let (h, w) = f.size();
    let pts = f
        .points()
        .iter()
        .map(|&(r, c)| (r * size.0 / h, c * size.1 / w))
        .collect();
    Ok(FixationData::new(size.0, size.1, pts)?)
}

/// Loads the entries as samples. With `resize`, images, densities and
/// fixations are brought to that size; otherwise sizes are kept.
pub fn load_samples(entries: &[&ManifestEntry], resize: Option<(usize, usize)>) -> Result<Vec<Sample>> {
    entries
        .iter()
        .map(|e| {
            let mut image = pnm::load_image(&e.image)?;
            let size = (image.shape()[1], image.shape()[2]);
            let (mut density, fixations) = load_ground_truth(e, size)?;
            let mut fixations = fixations.unwrap_or_else(|| FixationData::new(size.0, size.1, Vec::new()).unwrap());
            if let Some(target) = resize.filter(|&t| t != size) {
                image = resize_bilinear(&image, target)?;
                density = resize_density(&density, target)?;
                fixations = scale_fixations(&fixations, target)?;
            }
            Ok(Sample {
                id: e.id(),
                image,
                density,
                fixations,
            })
        })
        .collect()
}

/// Writes samples as PPM images, PGM densities and fixation CSVs under
/// `dir`, and returns a manifest that lists them with the given splits.
pub fn write_samples(dir: &Path, samples: &[Sample], splits: &[Split]) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (s, &split) in samples.iter().zip(splits) {
        let image = dir.join(format!("{}.ppm", s.id));
        let gt = dir.join(format!("{}_density.pgm", s.id));
        let fix = dir.join(format!("{}_fixations.csv", s.id));
        pnm::save_image(&image, &s.image)?;
        pnm::save_density(&gt, &s.density)?;
        write_fixations(&fix, &s.fixations)?;
        entries.push(ManifestEntry {
            image,
            ground_truth: gt,
            split,
            fixations: Some(fix),
            sigma: None,
        });
    }
    Ok(Manifest { entries })
}
