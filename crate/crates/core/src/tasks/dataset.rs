//! Dataset directories: images plus optional sibling `<name>.kernel` and
//! `<name>.mask.pgm` files, ground truth under `gt/` with matching names.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{BlurKernel, ImageGrid};
use crate::io::{read_image, read_kernel, write_image, write_kernel};

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub name: String,
    pub path: PathBuf,
    pub y: ImageGrid,
    pub kernel: Option<BlurKernel>,
    pub mask: Option<ImageGrid>,
    pub ground_truth: Option<ImageGrid>,
}

fn is_image(p: &Path) -> bool {
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
    (name.ends_with(".pgm") || name.ends_with(".ppm")) && !name.ends_with(".mask.pgm")
}

/// Loads every image of `dir` (sorted by name) with its side files.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetItem>> {
    if !dir.is_dir() {
        return Err(Error::param(format!(
            "dataset directory {} does not exist",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let file = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let stem = path
                .file_stem()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let side = |suffix: &str| dir.join(format!("{stem}{suffix}"));
            let kernel = side(".kernel");
            let mask = side(".mask.pgm");
            let gt = dir.join("gt").join(&file);
            Ok(DatasetItem {
                y: read_image(&path)?,
                kernel: kernel.is_file().then(|| read_kernel(&kernel)).transpose()?,
                mask: mask.is_file().then(|| read_image(&mask)).transpose()?,
                ground_truth: gt.is_file().then(|| read_image(&gt)).transpose()?,
                name: stem,
                path,
            })
        })
        .collect()
}

/// Writes one item in the dataset layout.
pub fn write_item(
    dir: &Path,
    name: &str,
    y: &ImageGrid,
    gt: Option<&ImageGrid>,
    kernel: Option<&BlurKernel>,
    mask: Option<&ImageGrid>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_image(&dir.join(format!("{name}.pgm")), y)?;
    if let Some(gt) = gt {
        std::fs::create_dir_all(dir.join("gt"))?;
        write_image(&dir.join("gt").join(format!("{name}.pgm")), gt)?;
    }
    if let Some(k) = kernel {
        write_kernel(&dir.join(format!("{name}.kernel")), k)?;
    }
    if let Some(m) = mask {
        write_image(&dir.join(format!("{name}.mask.pgm")), m)?;
    }
    Ok(())
}
