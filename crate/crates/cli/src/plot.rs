use adk_core::numerics::Tensor;

const WIDTH: usize = 480;
const HEIGHT: usize = 300;
const MARGIN: usize = 30;

/// Line chart of one or more series on a white canvas, as an RGB tensor in
/// `[−1, 1]`. Series share the y range; x is the sample index.
pub fn line_chart(series: &[(&[f64], [f32; 3])]) -> Tensor<f32> {
    let mut img = Tensor::full(&[3, HEIGHT, WIDTH], 1.0f32);
    let put = |img: &mut Tensor<f32>, y: usize, x: usize, rgb: [f32; 3]| {
        if y < HEIGHT && x < WIDTH {
            for (ch, v) in rgb.iter().enumerate() {
                img.data_mut()[(ch * HEIGHT + y) * WIDTH + x] = *v;
            }
        }
    };
    let axis = [-0.4f32; 3];
    for x in MARGIN..WIDTH - MARGIN / 2 {
        put(&mut img, HEIGHT - MARGIN, x, axis);
    }
    for y in MARGIN / 2..=HEIGHT - MARGIN {
        put(&mut img, y, MARGIN, axis);
    }
    let finite = series
        .iter()
        .flat_map(|(s, _)| s.iter().copied())
        .filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return img;
    }
    let lo = lo.min(0.0);
    let span = (hi - lo).max(1e-12);
    let plot_w = (WIDTH - MARGIN - MARGIN / 2 - 1) as f64;
    let plot_h = (HEIGHT - MARGIN - MARGIN / 2 - 1) as f64;
    for (values, rgb) in series {
        let n = values.len();
        let point = |i: usize| {
            let x = MARGIN as f64 + 1.0 + if n > 1 { i as f64 / (n - 1) as f64 * plot_w } else { 0.0 };
            let y = (HEIGHT - MARGIN) as f64 - 1.0 - (values[i] - lo) / span * plot_h;
            (x, y)
        };
        for i in 0..n {
            if !values[i].is_finite() {
                continue;
            }
            let (x0, y0) = point(i);
            let (x1, y1) = if i + 1 < n && values[i + 1].is_finite() { point(i + 1) } else { (x0, y0) };
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
                put(&mut img, y.round() as usize, x.round() as usize, *rgb);
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_series_and_handles_empty() {
        let blank = line_chart(&[]);
        let data = [3.0, 2.0, 1.5, 1.0];
        let chart = line_chart(&[(&data, [1.0, -1.0, -1.0])]);
        assert_eq!(chart.shape(), &[3, HEIGHT, WIDTH]);
        assert_ne!(chart, blank);
        let empty: [f64; 0] = [];
        assert_eq!(line_chart(&[(&empty, [0.0; 3])]), blank);
    }
}
