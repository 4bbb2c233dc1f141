//! Colour conversion, augmentation, the synthetic texture set and on-disk
//! datasets (a directory of VTEN samples, CSV manifests and a JSON sidecar).

mod augment;
mod color;
mod synth;

pub use augment::{flip_horizontal, flip_vertical, rotate, translate, AugmentConfig, Augmentation, Flip};
pub use color::{hsv_to_rgb, hsv_to_rgb_pixel, rgb_to_hsv, rgb_to_hsv_pixel};
pub use synth::synthetic_textures;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{embed_color, ColorEmbedding};
use crate::scalar::Real;
use crate::tensor::{read_vten, write_vten, Tensor};

pub const SIDECAR: &str = "dataset.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    #[default]
    Rgb,
    Hsv,
}

/// JSON sidecar describing a prepared dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub num_classes: usize,
    pub classes: Vec<String>,
    /// `[H, W, real channels]` of every stored sample.
    pub input_shape: [usize; 3],
    pub encoding: Encoding,
    /// Vector dimension of the stored layout (1 = plain colour channels).
    pub vector_dim: usize,
    pub embedding: Option<ColorEmbedding>,
    pub split: f64,
    pub seed: u64,
    /// Training-time augmentation, if requested at preparation.
    pub augment: Option<AugmentConfig>,
    pub train: String,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dir: PathBuf,
    pub sidecar: DatasetSidecar,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    path: String,
    label: usize,
}

fn write_manifest(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn read_manifest(dir: &Path, file: &str, num_classes: usize) -> Result<Vec<Sample>> {
    let mut r = csv::Reader::from_path(dir.join(file)).map_err(|e| Error::Format(format!("{file}: {e}")))?;
    let mut out = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Format(format!("{file}: {e}")))?;
        if row.label >= num_classes {
            return Err(invalid!("{file}: label {} outside [0, {num_classes})", row.label));
        }
        let path = dir.join(&row.path);
        if !path.is_file() {
            return Err(invalid!("{file}: missing sample {}", path.display()));
        }
        out.push(Sample { path, label: row.label });
    }
    Ok(out)
}

/// Deterministic shuffled split: the first `round(frac·n)` indices train.
pub fn split_indices(n: usize, frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(invalid!("split fraction must lie in [0, 1], got {frac}"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = (frac * n as f64).round() as usize;
    let test = idx.split_off(k);
    Ok((idx, test))
}

/// Options for [`prepare_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOptions {
    pub encoding: Encoding,
    /// Vector dimension to embed into (`None` keeps 3 real channels).
    pub embed: Option<(usize, ColorEmbedding)>,
    pub augment: Option<AugmentConfig>,
    pub split: f64,
    pub seed: u64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            encoding: Encoding::Rgb,
            embed: Some((4, ColorEmbedding::ZeroScalar)),
            augment: None,
            split: 0.5,
            seed: 0,
        }
    }
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| if want_dirs { p.is_dir() } else { p.extension().is_some_and(|e| e == "vten") })
        .collect();
    v.sort();
    Ok(v)
}

/// Reads `input_dir/<class>/*.vten` (H×W×3 colour in `[0, 1]`; classes are
/// the sorted subdirectory names), converts and embeds every image, splits,
/// and writes samples, `train.csv`, `test.csv` and `dataset.json` to `out_dir`.
pub fn prepare_dataset(input_dir: &Path, out_dir: &Path, opts: &PrepareOptions) -> Result<Dataset> {
    let class_dirs = sorted_entries(input_dir, true)?;
    let mut items = Vec::new();
    let mut classes = Vec::new();
    for (label, cd) in class_dirs.iter().enumerate() {
        classes.push(cd.file_name().unwrap().to_string_lossy().into_owned());
        for f in sorted_entries(cd, false)? {
            items.push((f, label));
        }
    }
    if items.is_empty() {
        return Err(invalid!("no .vten images under {}/<class>/", input_dir.display()));
    }
    if let Some(a) = &opts.augment {
        a.validate()?;
    }
    std::fs::create_dir_all(out_dir.join("samples"))?;
    let mut shape = None;
    let mut rows = Vec::new();
    for (i, (path, label)) in items.iter().enumerate() {
        let img: Tensor<f64> = read_vten(path)?;
        if img.ndim() != 3 || img.channels() != 3 {
            return Err(invalid!("{}: expected H×W×3, got {:?}", path.display(), img.shape()));
        }
        if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid!("{}: colour values must lie in [0, 1]", path.display()));
        }
        let img = match opts.encoding {
            Encoding::Rgb => img,
            Encoding::Hsv => rgb_to_hsv(&img)?,
        };
        let stored = match opts.embed {
            Some((d, mode)) => embed_color(&img, d, mode)?.into_base(),
            None => img,
        };
        let s: [usize; 3] = stored.shape().try_into().expect("3-D");
        if *shape.get_or_insert(s) != s {
            return Err(invalid!("{}: shape {s:?} differs from earlier samples", path.display()));
        }
        let rel = format!("samples/{i:05}.vten");
        write_vten(out_dir.join(&rel), &stored)?;
        rows.push(Row { path: rel, label: *label });
    }
    let (tr, te) = split_indices(rows.len(), opts.split, opts.seed)?;
    let pick = |ix: &[usize]| -> Vec<Row> {
        ix.iter().map(|&i| Row { path: rows[i].path.clone(), label: rows[i].label }).collect()
    };
    write_manifest(&out_dir.join("train.csv"), &pick(&tr))?;
    write_manifest(&out_dir.join("test.csv"), &pick(&te))?;
    let sidecar = DatasetSidecar {
        num_classes: classes.len(),
        classes,
        input_shape: shape.unwrap(),
        encoding: opts.encoding,
        vector_dim: opts.embed.map_or(1, |(d, _)| d),
        embedding: opts.embed.map(|(_, m)| m),
        split: opts.split,
        seed: opts.seed,
        augment: opts.augment,
        train: "train.csv".into(),
        test: "test.csv".into(),
    };
    std::fs::write(out_dir.join(SIDECAR), serde_json::to_string_pretty(&sidecar)?)?;
    Dataset::open(out_dir.join(SIDECAR))
}

impl Dataset {
    /// Opens a dataset from its sidecar path (or the directory holding it).
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar_path = if path.is_dir() { path.join(SIDECAR) } else { path.to_path_buf() };
        let dir = sidecar_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let sidecar: DatasetSidecar = serde_json::from_str(&std::fs::read_to_string(&sidecar_path)?)?;
        if sidecar.num_classes == 0 {
            return Err(invalid!("dataset declares no classes"));
        }
        let train = read_manifest(&dir, &sidecar.train, sidecar.num_classes)?;
        let test = read_manifest(&dir, &sidecar.test, sidecar.num_classes)?;
        Ok(Dataset { dir, sidecar, train, test })
    }

    /// Loads and shape-checks samples.
    pub fn load<T: Real>(&self, samples: &[Sample]) -> Result<Vec<(Tensor<T>, usize)>> {
        samples
            .iter()
            .map(|s| {
                let t = read_vten::<T>(&s.path)?;
                if t.shape() != self.sidecar.input_shape {
                    return Err(invalid!(
                        "{}: shape {:?}, sidecar says {:?}",
                        s.path.display(),
                        t.shape(),
                        self.sidecar.input_shape
                    ));
                }
                Ok((t, s.label))
            })
            .collect()
    }
}

/// Writes `samples` as `dir/class<label>/<index>.vten`, the layout
/// [`prepare_dataset`] reads.
pub fn write_image_folder(dir: &Path, samples: &[(Tensor<f64>, usize)]) -> Result<()> {
    for (i, (t, label)) in samples.iter().enumerate() {
        let cd = dir.join(format!("class{label}"));
        std::fs::create_dir_all(&cd)?;
        write_vten(cd.join(format!("{i:05}.vten")), t)?;
    }
    Ok(())
}
