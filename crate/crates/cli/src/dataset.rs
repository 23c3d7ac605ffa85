use std::path::{Path, PathBuf};

use adk_core::image::{read_png, resize_bilinear, Mask};
use adk_core::numerics::Tensor;
use anyhow::{bail, ensure, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TestEntry {
    pub image: PathBuf,
    pub defect: String,
    /// `None` for normal images, whose mask is all zeros.
    pub mask: Option<PathBuf>,
}

impl TestEntry {
    pub fn label(&self) -> bool {
        self.mask.is_some()
    }
}

/// Files of one category in the `train/good`, `test/<defect>`,
/// `ground_truth/<defect>/<stem>_mask.png` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub train: Vec<PathBuf>,
    pub test: Vec<TestEntry>,
}

fn pngs_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn ingest(root: &Path, category: &str) -> Result<DatasetIndex> {
    let base = root.join(category);
    ensure!(base.is_dir(), "category directory {} does not exist", base.display());
    let train = pngs_in(&base.join("train").join("good"))?;
    let mut test = Vec::new();
    let test_dir = base.join("test");
    if test_dir.is_dir() {
        for defect_dir in subdirs(&test_dir)? {
            let defect = defect_dir
                .file_name()
                .and_then(|n| n.to_str())
                .context("non-UTF-8 defect directory name")?
                .to_string();
            for image in pngs_in(&defect_dir)? {
                let mask = if defect == "good" {
                    None
                } else {
                    let stem = image.file_stem().and_then(|s| s.to_str()).context("bad file name")?;
                    let mask = base
                        .join("ground_truth")
                        .join(&defect)
                        .join(format!("{stem}_mask.png"));
                    if !mask.is_file() {
                        bail!("missing mask {} for anomalous image {}", mask.display(), image.display());
                    }
                    let (a, b) = (adk_core::image::png_dimensions(&image)?, adk_core::image::png_dimensions(&mask)?);
                    ensure!(
                        a == b,
                        "mask {} is {}x{} but image {} is {}x{}",
                        mask.display(),
                        b.0,
                        b.1,
                        image.display(),
                        a.0,
                        a.1
                    );
                    Some(mask)
                };
                test.push(TestEntry { image, defect: defect.clone(), mask });
            }
        }
    }
    Ok(DatasetIndex { train, test })
}

/// Decodes to `[−1, 1]` and resizes to `size × size` bilinearly.
pub fn load_image(path: &Path, size: usize, channels: usize) -> Result<Tensor<f32>> {
    let img = read_png::<f32>(path, channels)?;
    Ok(resize_bilinear(&img, size, size)?)
}

pub fn load_mask(entry: &TestEntry, size: usize) -> Result<Mask> {
    match &entry.mask {
        None => Ok(Mask::empty(size, size)),
        Some(path) => {
            let gray = adk_core::image::read_gray(path)?;
            Ok(Mask::from_gray(&gray).resize(size, size))
        }
    }
}
