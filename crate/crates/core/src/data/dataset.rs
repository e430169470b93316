use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::image::{
    plane_to_gray, read_gray, read_rgb, resize_bilinear, tensor_to_rgb, write_gray, write_rgb,
};
use super::{Label, Sample, SynthSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Subdirectory holding ground-truth hole masks next to the class folders.
pub const MASK_DIR: &str = "masks";

/// Samples read from disk plus the files that could not be decoded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub skipped: Vec<PathBuf>,
}

/// `*.png` files directly inside `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads `<root>/trypophobic/*.png` then `<root>/neutral/*.png`, each resized to
/// `target_size`². Undecodable files are skipped with a warning. Both classes must
/// be present.
pub fn load_dataset(root: impl AsRef<Path>, target_size: usize) -> Result<Dataset> {
    load_classes(root.as_ref(), target_size, true)
}

/// Like [`load_dataset`], but a class folder may be missing or empty as long as the
/// dataset holds at least one image. Used for evaluating single-class sets.
pub fn load_dataset_partial(root: impl AsRef<Path>, target_size: usize) -> Result<Dataset> {
    let root = root.as_ref();
    let ds = load_classes(root, target_size, false)?;
    if ds.samples.is_empty() {
        return Err(Error::Dataset(format!(
            "no readable images in {}",
            root.display()
        )));
    }
    Ok(ds)
}

fn load_classes(root: &Path, target_size: usize, require_both: bool) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for label in [Label::Trypophobic, Label::Neutral] {
        let dir = root.join(label.dir_name());
        if !dir.is_dir() {
            if !require_both {
                continue;
            }
            return Err(Error::Dataset(format!(
                "missing class directory `{}`",
                dir.display()
            )));
        }
        let before = samples.len();
        for path in list_pngs(&dir)? {
            match read_rgb(&path) {
                Ok(img) => samples.push(Sample {
                    image: resize_bilinear(&img, target_size, target_size),
                    label,
                    source_id: stem(&path),
                }),
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    skipped.push(path);
                }
            }
        }
        if require_both && samples.len() == before {
            return Err(Error::Dataset(format!(
                "class `{}` has no readable images in {}",
                label.dir_name(),
                dir.display()
            )));
        }
    }
    Ok(Dataset { samples, skipped })
}

/// Writes samples into the class-folder layout and, when present, masks into
/// `<root>/masks/<source_id>.png` (255 = hole).
pub fn write_synthetic(root: impl AsRef<Path>, set: &SynthSet) -> Result<()> {
    let root = root.as_ref();
    for label in [Label::Trypophobic, Label::Neutral] {
        let dir = root.join(label.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for s in &set.samples {
        let path = root
            .join(s.label.dir_name())
            .join(format!("{}.png", s.source_id));
        write_rgb(&path, &tensor_to_rgb(&s.image))?;
    }
    if let Some(masks) = &set.masks {
        let dir = root.join(MASK_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (s, m) in set.samples.iter().zip(masks) {
            let [_, _, h, w] = m.shape();
            write_gray(
                &dir.join(format!("{}.png", s.source_id)),
                &plane_to_gray(m.data(), h, w),
            )?;
        }
    }
    Ok(())
}

/// Reads a mask PNG, resized to `size`² and binarized at 0.5, as (1, 1, size, size).
pub fn load_mask(path: &Path, size: usize) -> Result<Tensor> {
    let m = resize_bilinear(&read_gray(path)?, size, size);
    Ok(m.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }))
}
