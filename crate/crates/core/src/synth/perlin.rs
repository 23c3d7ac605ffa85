use crate::error::{ensure, Result};
use crate::numerics::Rng;

/// Gradient-noise field sampled on a pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PerlinField {
    width: usize,
    height: usize,
    resolution: (usize, usize),
    values: Vec<f64>,
}

impl PerlinField {
    /// Wraps hand-built values, mainly for tests.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        ensure!(
            height > 0 && width > 0 && values.len() == height * width,
            "field of {} values does not fit {height}x{width}",
            values.len()
        );
        Ok(PerlinField {
            width,
            height,
            resolution: (1, 1),
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.resolution
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Classic 2-D Perlin noise with `rx` by `ry` lattice cells over the image,
/// random unit gradients and quintic fade. Scaled by √2 so values span `[−1, 1]`.
pub fn perlin2d(rng: &mut Rng, width: usize, height: usize, rx: usize, ry: usize) -> Result<PerlinField> {
    ensure!(width > 0 && height > 0, "perlin field must be nonempty");
    ensure!(
        rx > 0 && ry > 0 && width.is_multiple_of(rx) && height.is_multiple_of(ry),
        "perlin resolution ({rx}, {ry}) must divide the field size {width}x{height}"
    );
    let gw = rx + 1;
    let gradients: Vec<(f64, f64)> = (0..(ry + 1) * gw)
        .map(|_| {
            let angle = std::f64::consts::TAU * rng.uniform();
            (angle.cos(), angle.sin())
        })
        .collect();
    let (cell_w, cell_h) = (width / rx, height / ry);
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        let (gy, fy) = (y / cell_h, (y % cell_h) as f64 / cell_h as f64);
        for x in 0..width {
            let (gx, fx) = (x / cell_w, (x % cell_w) as f64 / cell_w as f64);
            let dot = |cy: usize, cx: usize, dy: f64, dx: f64| {
                let (gxv, gyv) = gradients[(gy + cy) * gw + gx + cx];
                gxv * dx + gyv * dy
            };
            let n00 = dot(0, 0, fy, fx);
            let n01 = dot(0, 1, fy, fx - 1.0);
            let n10 = dot(1, 0, fy - 1.0, fx);
            let n11 = dot(1, 1, fy - 1.0, fx - 1.0);
            let (u, v) = (fade(fx), fade(fy));
            let top = lerp(n00, n01, u);
            let bottom = lerp(n10, n11, u);
            values.push(std::f64::consts::SQRT_2 * lerp(top, bottom, v));
        }
    }
    Ok(PerlinField {
        width,
        height,
        resolution: (rx, ry),
        values,
    })
}
