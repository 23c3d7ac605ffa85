use std::path::{Path, PathBuf};

use crate::error::{ensure, Error, Result};
use crate::image::{image_dims, read_png, resize_bilinear};
use crate::numerics::{Element, Rng, Tensor};

/// Directory of texture PNGs used as anomaly appearance.
#[derive(Debug, Clone)]
pub struct TextureCorpus {
    paths: Vec<PathBuf>,
}

impl TextureCorpus {
    /// Collects every `.png` under `dir`, recursively, in sorted order.
    pub fn open(dir: &Path) -> Result<Self> {
        let mut paths = Vec::new();
        for entry in walkdir::WalkDir::new(dir).follow_links(true) {
            let entry = entry.map_err(|e| {
                Error::Io(e.into_io_error().unwrap_or_else(|| {
                    std::io::Error::other(format!("cannot walk {}", dir.display()))
                }))
            })?;
            let is_png = entry
                .path()
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if entry.file_type().is_file() && is_png {
                paths.push(entry.into_path());
            }
        }
        paths.sort();
        ensure!(!paths.is_empty(), "texture corpus {} holds no PNG files", dir.display());
        Ok(TextureCorpus { paths })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

/// Self-augmentations that turn a normal image into an anomaly source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Augment {
    /// Counter-clockwise rotation by 90° times the count (1, 2 or 3).
    Rotate(u8),
    /// Output channel `c` takes input channel `perm[c]`.
    Permute(Vec<usize>),
    /// Splits into a `grid` by `grid` tiling and moves tile `order[i]` to slot `i`.
    Shuffle { grid: usize, order: Vec<usize> },
}

pub fn apply_augment<F: Element>(image: &Tensor<F>, aug: &Augment) -> Result<Tensor<F>> {
    let (c, h, w) = image_dims(image)?;
    let src = image.data();
    let at = |ch: usize, y: usize, x: usize| src[(ch * h + y) * w + x];
    let data: Vec<F> = match aug {
        Augment::Rotate(k) => {
            ensure!((1..=3).contains(k), "rotation count must be 1, 2 or 3");
            ensure!(*k == 2 || h == w, "quarter rotations need a square image");
            let mut out = Vec::with_capacity(src.len());
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out.push(match k {
                            1 => at(ch, x, w - 1 - y),
                            2 => at(ch, h - 1 - y, w - 1 - x),
                            _ => at(ch, h - 1 - x, y),
                        });
                    }
                }
            }
            out
        }
        Augment::Permute(perm) => {
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            ensure!(
                sorted == (0..c).collect::<Vec<_>>(),
                "{perm:?} is not a permutation of {c} channels"
            );
            perm.iter()
                .flat_map(|&p| src[p * h * w..(p + 1) * h * w].iter().copied())
                .collect()
        }
        Augment::Shuffle { grid, order } => {
            let g = *grid;
            ensure!(g >= 1 && h % g == 0 && w % g == 0, "grid {g} does not tile {h}x{w}");
            let mut sorted = order.clone();
            sorted.sort_unstable();
            ensure!(sorted == (0..g * g).collect::<Vec<_>>(), "bad tile order");
            let (th, tw) = (h / g, w / g);
            let mut out = vec![F::zero(); src.len()];
            for ch in 0..c {
                for (slot, &tile) in order.iter().enumerate() {
                    let (sy, sx) = (slot / g * th, slot % g * tw);
                    let (ty, tx) = (tile / g * th, tile % g * tw);
                    for dy in 0..th {
                        for dx in 0..tw {
                            out[(ch * h + sy + dy) * w + sx + dx] = at(ch, ty + dy, tx + dx);
                        }
                    }
                }
            }
            out
        }
    };
    Tensor::new(image.shape().to_vec(), data)
}

/// Draws a self-augmentation: rotation, channel permutation or tile shuffle,
/// picked uniformly among those that apply to the image's shape.
pub fn random_augment(c: usize, h: usize, w: usize, rng: &mut Rng) -> Augment {
    let grids: Vec<usize> = [2, 4, 8]
        .into_iter()
        .filter(|g| h.is_multiple_of(*g) && w.is_multiple_of(*g))
        .collect();
    let mut modes = vec![0];
    if c > 1 {
        modes.push(1);
    }
    if !grids.is_empty() {
        modes.push(2);
    }
    match modes[rng.below(modes.len())] {
        0 => {
            if h == w {
                Augment::Rotate(1 + rng.below(3) as u8)
            } else {
                Augment::Rotate(2)
            }
        }
        1 => loop {
            let mut perm: Vec<usize> = (0..c).collect();
            rng.shuffle(&mut perm);
            if perm.iter().enumerate().any(|(i, &p)| i != p) {
                break Augment::Permute(perm);
            }
        },
        _ => {
            let grid = grids[rng.below(grids.len())];
            let mut order: Vec<usize> = (0..grid * grid).collect();
            while order.iter().enumerate().all(|(i, &t)| i == t) {
                rng.shuffle(&mut order);
            }
            Augment::Shuffle { grid, order }
        }
    }
}

/// Anomaly appearance `A` for a normal image: a random corpus texture resized
/// to the image, or a self-augmentation when no corpus is given.
pub fn appearance_source<F: Element>(
    normal: &Tensor<F>,
    corpus: Option<&TextureCorpus>,
    rng: &mut Rng,
) -> Result<Tensor<F>> {
    let (c, h, w) = image_dims(normal)?;
    match corpus {
        Some(corpus) => {
            let path = &corpus.paths[rng.below(corpus.paths.len())];
            let texture = read_png::<F>(path, c)?;
            resize_bilinear(&texture, h, w)
        }
        None => apply_augment(normal, &random_augment(c, h, w, rng)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::write_png;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(&[c, h, w], |i| (i as f32 * 0.37).sin())
    }

    fn sorted_values(t: &Tensor<f32>) -> Vec<f32> {
        let mut v = t.data().to_vec();
        v.sort_by(f32::total_cmp);
        v
    }

    #[test]
    fn rotation_180_matches_oracle() {
        let img = ramp(2, 4, 6);
        let out = apply_augment(&img, &Augment::Rotate(2)).unwrap();
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..6 {
                    assert_eq!(out.data()[(c * 4 + y) * 6 + x], img.data()[(c * 4 + 3 - y) * 6 + 5 - x]);
                }
            }
        }
        let quarter = apply_augment(&ramp(1, 5, 5), &Augment::Rotate(1)).unwrap();
        let back = apply_augment(&quarter, &Augment::Rotate(3)).unwrap();
        assert_eq!(back, ramp(1, 5, 5));
        assert!(apply_augment(&img, &Augment::Rotate(1)).is_err());
    }

    #[test]
    fn augmentations_preserve_histogram() {
        let mut rng = Rng::new(1, "aug");
        let img = ramp(3, 16, 16);
        for _ in 0..50 {
            let aug = random_augment(3, 16, 16, &mut rng);
            let out = apply_augment(&img, &aug).unwrap();
            assert_eq!(sorted_values(&out), sorted_values(&img), "{aug:?}");
            assert_ne!(out, img, "{aug:?}");
        }
    }

    #[test]
    fn single_channel_never_permutes() {
        let mut rng = Rng::new(2, "aug");
        for _ in 0..50 {
            assert!(!matches!(random_augment(1, 8, 8, &mut rng), Augment::Permute(_)));
        }
    }

    #[test]
    fn single_texture_corpus_is_resized() {
        let dir = tempfile::tempdir().unwrap();
        let nested = dir.path().join("a/b");
        std::fs::create_dir_all(&nested).unwrap();
        let texture = Tensor::<f32>::from_fn(&[3, 32, 32], |i| ((i % 255) as f32 / 127.5) - 1.0);
        let path = nested.join("tex.PNG");
        write_png(&texture, &path).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let corpus = TextureCorpus::open(dir.path()).unwrap();
        assert_eq!(corpus.paths(), std::slice::from_ref(&path));
        let normal = Tensor::<f32>::zeros(&[3, 64, 64]);
        let a = appearance_source(&normal, Some(&corpus), &mut Rng::new(0, "a")).unwrap();
        let expected = resize_bilinear(&read_png::<f32>(&path, 3).unwrap(), 64, 64).unwrap();
        assert_eq!(a, expected);
    }

    #[test]
    fn missing_or_empty_corpus_errors() {
        assert!(TextureCorpus::open(Path::new("/definitely/not/here")).is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(TextureCorpus::open(dir.path()).is_err());
    }
}
