//! Image tensors, binary masks and 8-bit PNG conversion.
//!
//! An image is a `[C, H, W]` tensor with values in `[-1, 1]`; an 8-bit value
//! `v` maps to `v / 127.5 - 1`.

use std::path::Path;

use ::image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{ensure, Error, Result};
use crate::numerics::{Element, Tensor};

/// Binary `H x W` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        ensure!(
            bits.len() == height * width,
            "mask of {height}x{width} needs {} bits, got {}",
            height * width,
            bits.len()
        );
        Ok(Mask {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Mask {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.same_dims(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect();
        Mask::new(self.height, self.width, bits)
    }

    pub fn same_dims(&self, other: &Mask) -> Result<()> {
        ensure!(
            self.height == other.height && self.width == other.width,
            "mask dims {}x{} differ from {}x{}",
            self.height,
            self.width,
            other.height,
            other.width
        );
        Ok(())
    }

    /// `[1, H, W]` tensor of zeros and ones.
    pub fn to_tensor<F: Element>(&self) -> Tensor<F> {
        Tensor::from_fn(&[1, self.height, self.width], |i| {
            if self.bits[i] {
                F::one()
            } else {
                F::zero()
            }
        })
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        })
    }

    /// Pixels above mid-grey count as anomalous.
    pub fn from_gray(img: &GrayImage) -> Mask {
        let (w, h) = (img.width() as usize, img.height() as usize);
        Mask::from_fn(h, w, |y, x| img.get_pixel(x as u32, y as u32)[0] > 127)
    }

    /// Nearest-neighbour resampling.
    pub fn resize(&self, height: usize, width: usize) -> Mask {
        if height == self.height && width == self.width {
            return self.clone();
        }
        Mask::from_fn(height, width, |y, x| {
            let sy = ((y as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            let sx = ((x as f64 + 0.5) * self.width as f64 / width as f64) as usize;
            self.get(sy.min(self.height - 1), sx.min(self.width - 1))
        })
    }
}

/// Dimensions of a `[C, H, W]` image tensor.
pub fn image_dims<F: Element>(img: &Tensor<F>) -> Result<(usize, usize, usize)> {
    let s = img.shape();
    ensure!(s.len() == 3, "image tensor must be [C,H,W], got {s:?}");
    Ok((s[0], s[1], s[2]))
}

pub fn u8_to_unit<F: Element>(v: u8) -> F {
    F::lit(v as f64 / 127.5 - 1.0)
}

pub fn unit_to_u8<F: Element>(v: F) -> u8 {
    ((v.as_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Decodes to `channels` (1 or 3) channels in `[-1, 1]`.
pub fn from_dynamic<F: Element>(img: &DynamicImage, channels: usize) -> Result<Tensor<F>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match channels {
        1 => {
            let g = img.to_luma8();
            Tensor::new(vec![1, h, w], g.as_raw().iter().map(|&v| u8_to_unit(v)).collect())
        }
        3 => {
            let rgb = img.to_rgb8();
            let raw = rgb.as_raw();
            let plane = h * w;
            Ok(Tensor::from_fn(&[3, h, w], |i| {
                let (c, p) = (i / plane, i % plane);
                u8_to_unit(raw[p * 3 + c])
            }))
        }
        other => Err(Error::invalid(format!("unsupported channel count {other}"))),
    }
}

pub fn to_dynamic<F: Element>(img: &Tensor<F>) -> Result<DynamicImage> {
    let (c, h, w) = image_dims(img)?;
    let d = img.data();
    let plane = h * w;
    match c {
        1 => {
            let buf: Vec<u8> = d.iter().map(|&v| unit_to_u8(v)).collect();
            let g: GrayImage = ImageBuffer::from_raw(w as u32, h as u32, buf).expect("sized buffer");
            Ok(DynamicImage::ImageLuma8(g))
        }
        3 => {
            let rgb: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let p = y as usize * w + x as usize;
                Rgb([unit_to_u8(d[p]), unit_to_u8(d[plane + p]), unit_to_u8(d[2 * plane + p])])
            });
            Ok(DynamicImage::ImageRgb8(rgb))
        }
        other => Err(Error::invalid(format!("cannot encode {other}-channel image"))),
    }
}

pub fn read_png<F: Element>(path: &Path, channels: usize) -> Result<Tensor<F>> {
    let img = ::image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    from_dynamic(&img, channels)
}

/// Width and height of an image file without decoding its pixels.
pub fn png_dimensions(path: &Path) -> Result<(u32, u32)> {
    ::image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = ::image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_luma8())
}

pub fn write_gray(img: &GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ::image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn write_png<F: Element>(img: &Tensor<F>, path: &Path) -> Result<()> {
    to_dynamic(img)?
        .save_with_format(path, ::image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Heatmap scores in `[0, 1]` as 8-bit grey (`round(score * 255)`).
pub fn heatmap_to_gray(scores: &[f64], height: usize, width: usize) -> GrayImage {
    GrayImage::from_fn(width as u32, height as u32, |x, y| {
        let s = scores[y as usize * width + x as usize];
        Luma([(s * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear<F: Element>(img: &Tensor<F>, height: usize, width: usize) -> Result<Tensor<F>> {
    let (c, h, w) = image_dims(img)?;
    ensure!(height > 0 && width > 0, "target size must be positive");
    if h == height && w == width {
        return Ok(img.clone());
    }
    let src = img.data();
    let sample_axis = |i: usize, dst: usize, src_len: usize| {
        let pos = ((i as f64 + 0.5) * src_len as f64 / dst as f64 - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(src_len - 1);
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let plane = &src[ch * h * w..][..h * w];
        for y in 0..height {
            let (y0, y1, fy) = sample_axis(y, height, h);
            for x in 0..width {
                let (x0, x1, fx) = sample_axis(x, width, w);
                let v = |yy: usize, xx: usize| plane[yy * w + xx].as_f64();
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                out.push(F::lit(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Tensor::new(vec![c, height, width], out)
}

/// Mean over channels, `[C,H,W] -> H*W` values.
pub fn grayscale<F: Element>(img: &Tensor<F>) -> Result<Vec<f64>> {
    let (c, h, w) = image_dims(img)?;
    let plane = h * w;
    Ok((0..plane)
        .map(|p| (0..c).map(|ch| img.data()[ch * plane + p].as_f64()).sum::<f64>() / c as f64)
        .collect())
}
