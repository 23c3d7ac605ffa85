//! Slice-level forward and backward kernels behind the tape operations.
//!
//! Accumulation order inside every reduction is fixed, so results are bitwise
//! reproducible for a given precision. For `conv2d` each output element is
//! accumulated starting from zero with input channel outermost and the kernel
//! window walked row-major, which is also the order a naive nested loop uses.

use crate::error::{ensure, Result};

use super::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        ensure!(input.len() == 4, "conv2d input must be [N,C,H,W], got {input:?}");
        ensure!(kernel.len() == 4, "conv2d kernel must be [K,C,kh,kw], got {kernel:?}");
        ensure!(stride >= 1, "conv2d stride must be positive");
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (k, kc, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        ensure!(
            c == kc,
            "conv2d channel mismatch: input has {c}, kernel expects {kc}"
        );
        ensure!(
            kh <= h + 2 * padding && kw <= w + 2 * padding,
            "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        );
        Ok(ConvGeometry {
            batch: n,
            in_channels: c,
            height: h,
            width: w,
            out_channels: k,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    pub fn padded_h(&self) -> usize {
        self.height + 2 * self.padding
    }

    pub fn padded_w(&self) -> usize {
        self.width + 2 * self.padding
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn kernel_index(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + c) * self.kernel_h + ky) * self.kernel_w + kx
    }
}

/// Copies sample `n` into a zero-padded `[C, H+2p, W+2p]` buffer.
fn pad_sample<F: Element>(x: &[F], g: &ConvGeometry, n: usize, buf: &mut Vec<F>) {
    let (hp, wp, p) = (g.padded_h(), g.padded_w(), g.padding);
    buf.clear();
    buf.resize(g.in_channels * hp * wp, F::zero());
    let plane = g.height * g.width;
    for c in 0..g.in_channels {
        let src = &x[(n * g.in_channels + c) * plane..][..plane];
        let dst = &mut buf[c * hp * wp..][..hp * wp];
        for y in 0..g.height {
            dst[(y + p) * wp + p..][..g.width].copy_from_slice(&src[y * g.width..][..g.width]);
        }
    }
}

#[inline]
fn axpy<F: Element>(out: &mut [F], alpha: F, x: &[F]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// Dot product with eight interleaved accumulators combined in a fixed order.
#[inline]
pub fn dot<F: Element>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = F::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    let mut s = F::zero();
    for v in acc {
        s += v;
    }
    s + tail
}

pub fn conv2d_forward<F: Element>(x: &[F], kernel: &[F], g: &ConvGeometry) -> Vec<F> {
    let (ho, wo, wp, hp) = (g.out_h, g.out_w, g.padded_w(), g.padded_h());
    let out_plane = ho * wo;
    let mut out = vec![F::zero(); g.batch * g.out_channels * out_plane];
    let mut xp = Vec::new();
    for n in 0..g.batch {
        pad_sample(x, g, n, &mut xp);
        for o in 0..g.out_channels {
            let oplane = &mut out[(n * g.out_channels + o) * out_plane..][..out_plane];
            for c in 0..g.in_channels {
                let xc = &xp[c * hp * wp..][..hp * wp];
                for ky in 0..g.kernel_h {
                    for kx in 0..g.kernel_w {
                        let wv = kernel[g.kernel_index(o, c, ky, kx)];
                        if g.stride == 1 {
                            for y in 0..ho {
                                let row = &xc[(y + ky) * wp + kx..][..wo];
                                axpy(&mut oplane[y * wo..][..wo], wv, row);
                            }
                        } else {
                            for y in 0..ho {
                                let base = (y * g.stride + ky) * wp + kx;
                                for xo in 0..wo {
                                    oplane[y * wo + xo] += wv * xc[base + xo * g.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d input, d kernel)`; either may be skipped.
pub fn conv2d_backward<F: Element>(
    x: &[F],
    kernel: &[F],
    dy: &[F],
    g: &ConvGeometry,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>) {
    let (ho, wo, wp, hp, p) = (g.out_h, g.out_w, g.padded_w(), g.padded_h(), g.padding);
    let out_plane = ho * wo;
    let in_plane = g.height * g.width;
    let mut dx = need_dx.then(|| vec![F::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![F::zero(); kernel.len()]);
    let mut xp = Vec::new();
    let mut dxp = Vec::new();
    for n in 0..g.batch {
        if let Some(dw) = dw.as_mut() {
            pad_sample(x, g, n, &mut xp);
            for o in 0..g.out_channels {
                let dplane = &dy[(n * g.out_channels + o) * out_plane..][..out_plane];
                for c in 0..g.in_channels {
                    let xc = &xp[c * hp * wp..][..hp * wp];
                    for ky in 0..g.kernel_h {
                        for kx in 0..g.kernel_w {
                            let mut acc = F::zero();
                            for y in 0..ho {
                                let drow = &dplane[y * wo..][..wo];
                                if g.stride == 1 {
                                    acc += dot(drow, &xc[(y + ky) * wp + kx..][..wo]);
                                } else {
                                    let base = (y * g.stride + ky) * wp + kx;
                                    for (xo, &d) in drow.iter().enumerate() {
                                        acc += d * xc[base + xo * g.stride];
                                    }
                                }
                            }
                            dw[g.kernel_index(o, c, ky, kx)] += acc;
                        }
                    }
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            dxp.clear();
            dxp.resize(g.in_channels * hp * wp, F::zero());
            for o in 0..g.out_channels {
                let dplane = &dy[(n * g.out_channels + o) * out_plane..][..out_plane];
                for c in 0..g.in_channels {
                    let dxc = &mut dxp[c * hp * wp..][..hp * wp];
                    for ky in 0..g.kernel_h {
                        for kx in 0..g.kernel_w {
                            let wv = kernel[g.kernel_index(o, c, ky, kx)];
                            for y in 0..ho {
                                let drow = &dplane[y * wo..][..wo];
                                if g.stride == 1 {
                                    axpy(&mut dxc[(y + ky) * wp + kx..][..wo], wv, drow);
                                } else {
                                    let base = (y * g.stride + ky) * wp + kx;
                                    for (xo, &d) in drow.iter().enumerate() {
                                        dxc[base + xo * g.stride] += wv * d;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for c in 0..g.in_channels {
                let dst = &mut dx[(n * g.in_channels + c) * in_plane..][..in_plane];
                let src = &dxp[c * hp * wp..][..hp * wp];
                for y in 0..g.height {
                    dst[y * g.width..][..g.width].copy_from_slice(&src[(y + p) * wp + p..][..g.width]);
                }
            }
        }
    }
    (dx, dw)
}

/// `[M,K] x [K,N] -> [M,N]`.
pub fn matmul<F: Element>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..][..n];
        for kk in 0..k {
            axpy(orow, a[i * k + kk], &b[kk * n..][..n]);
        }
    }
    out
}

/// Gradients of `matmul` with respect to both operands.
pub fn matmul_backward<F: Element>(
    a: &[F],
    b: &[F],
    dc: &[F],
    m: usize,
    k: usize,
    n: usize,
) -> (Vec<F>, Vec<F>) {
    let mut da = vec![F::zero(); m * k];
    let mut db = vec![F::zero(); k * n];
    for i in 0..m {
        let drow = &dc[i * n..][..n];
        for kk in 0..k {
            da[i * k + kk] = dot(drow, &b[kk * n..][..n]);
            axpy(&mut db[kk * n..][..n], a[i * k + kk], drow);
        }
    }
    (da, db)
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Group normalisation over `[N, C, S]` data. Returns output plus per-(n, group)
/// mean and reciprocal standard deviation.
pub fn group_norm_forward<F: Element>(
    x: &[F],
    gamma: &[F],
    beta: &[F],
    n: usize,
    c: usize,
    spatial: usize,
    groups: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let cg = c / groups;
    let m = F::lit((cg * spatial) as f64);
    let eps = F::lit(GROUP_NORM_EPS);
    let mut out = vec![F::zero(); x.len()];
    let mut means = Vec::with_capacity(n * groups);
    let mut rstds = Vec::with_capacity(n * groups);
    for s in 0..n {
        for gi in 0..groups {
            let start = (s * c + gi * cg) * spatial;
            let chunk = &x[start..start + cg * spatial];
            let mean = chunk.iter().copied().sum::<F>() / m;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / m;
            let rstd = F::one() / (var + eps).sqrt();
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let (ga, be) = (gamma[ch], beta[ch]);
                let off = start + ci * spatial;
                for j in 0..spatial {
                    out[off + j] = (x[off + j] - mean) * rstd * ga + be;
                }
            }
            means.push(mean);
            rstds.push(rstd);
        }
    }
    (out, means, rstds)
}

/// Returns `(dx, dgamma, dbeta)`.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<F: Element>(
    x: &[F],
    gamma: &[F],
    means: &[F],
    rstds: &[F],
    dy: &[F],
    n: usize,
    c: usize,
    spatial: usize,
    groups: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let cg = c / groups;
    let m = F::lit((cg * spatial) as f64);
    let mut dx = vec![F::zero(); x.len()];
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for s in 0..n {
        for gi in 0..groups {
            let (mean, rstd) = (means[s * groups + gi], rstds[s * groups + gi]);
            let start = (s * c + gi * cg) * spatial;
            let mut sum_dxhat = F::zero();
            let mut sum_dxhat_xhat = F::zero();
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let off = start + ci * spatial;
                let mut dg = F::zero();
                let mut db = F::zero();
                for j in 0..spatial {
                    let xhat = (x[off + j] - mean) * rstd;
                    let d = dy[off + j];
                    dg += d * xhat;
                    db += d;
                    let dxhat = d * gamma[ch];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                dgamma[ch] += dg;
                dbeta[ch] += db;
            }
            let mean_dxhat = sum_dxhat / m;
            let mean_dxhat_xhat = sum_dxhat_xhat / m;
            for ci in 0..cg {
                let ch = gi * cg + ci;
                let off = start + ci * spatial;
                for j in 0..spatial {
                    let xhat = (x[off + j] - mean) * rstd;
                    let dxhat = dy[off + j] * gamma[ch];
                    dx[off + j] = rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Copies head `h` of sample `s` from channel-major `[C, L]` into token-major `[L, d]`.
fn gather_head<F: Element>(src: &[F], s: usize, h: usize, c: usize, d: usize, l: usize) -> Vec<F> {
    let mut out = vec![F::zero(); l * d];
    for j in 0..d {
        let row = &src[(s * c + h * d + j) * l..][..l];
        for (t, &v) in row.iter().enumerate() {
            out[t * d + j] = v;
        }
    }
    out
}

fn scatter_head<F: Element>(dst: &mut [F], tok: &[F], s: usize, h: usize, c: usize, d: usize, l: usize) {
    for j in 0..d {
        let row = &mut dst[(s * c + h * d + j) * l..][..l];
        for (t, v) in row.iter_mut().enumerate() {
            *v = tok[t * d + j];
        }
    }
}

/// Multi-head scaled dot-product self-attention on `[N, C, L]` inputs.
/// Returns the output and the softmax probabilities `[N, heads, L, L]`.
pub fn attention_forward<F: Element>(
    q: &[F],
    k: &[F],
    v: &[F],
    n: usize,
    c: usize,
    l: usize,
    heads: usize,
) -> (Vec<F>, Vec<F>) {
    let d = c / heads;
    let scale = F::lit(1.0 / (d as f64).sqrt());
    let mut out = vec![F::zero(); n * c * l];
    let mut probs = vec![F::zero(); n * heads * l * l];
    for s in 0..n {
        for h in 0..heads {
            let qh = gather_head(q, s, h, c, d, l);
            let kh = gather_head(k, s, h, c, d, l);
            let vh = gather_head(v, s, h, c, d, l);
            let p = &mut probs[(s * heads + h) * l * l..][..l * l];
            let mut oh = vec![F::zero(); l * d];
            for i in 0..l {
                let prow = &mut p[i * l..][..l];
                let qi = &qh[i * d..][..d];
                let mut max = F::neg_infinity();
                for (jj, pv) in prow.iter_mut().enumerate() {
                    *pv = dot(qi, &kh[jj * d..][..d]) * scale;
                    max = max.max(*pv);
                }
                let mut total = F::zero();
                for pv in prow.iter_mut() {
                    *pv = (*pv - max).exp();
                    total += *pv;
                }
                for pv in prow.iter_mut() {
                    *pv /= total;
                }
                let orow = &mut oh[i * d..][..d];
                for (jj, &pv) in prow.iter().enumerate() {
                    axpy(orow, pv, &vh[jj * d..][..d]);
                }
            }
            scatter_head(&mut out, &oh, s, h, c, d, l);
        }
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Element>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dout: &[F],
    n: usize,
    c: usize,
    l: usize,
    heads: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let d = c / heads;
    let scale = F::lit(1.0 / (d as f64).sqrt());
    let mut dq = vec![F::zero(); q.len()];
    let mut dk = vec![F::zero(); k.len()];
    let mut dv = vec![F::zero(); v.len()];
    for s in 0..n {
        for h in 0..heads {
            let qh = gather_head(q, s, h, c, d, l);
            let kh = gather_head(k, s, h, c, d, l);
            let vh = gather_head(v, s, h, c, d, l);
            let doh = gather_head(dout, s, h, c, d, l);
            let p = &probs[(s * heads + h) * l * l..][..l * l];
            let mut dqh = vec![F::zero(); l * d];
            let mut dkh = vec![F::zero(); l * d];
            let mut dvh = vec![F::zero(); l * d];
            let mut ds = vec![F::zero(); l];
            for i in 0..l {
                let prow = &p[i * l..][..l];
                let doi = &doh[i * d..][..d];
                let mut weighted = F::zero();
                for jj in 0..l {
                    let dp = dot(doi, &vh[jj * d..][..d]);
                    ds[jj] = dp;
                    weighted += dp * prow[jj];
                    axpy(&mut dvh[jj * d..][..d], prow[jj], doi);
                }
                let qi = &qh[i * d..][..d];
                for jj in 0..l {
                    let g = prow[jj] * (ds[jj] - weighted) * scale;
                    axpy(&mut dqh[i * d..][..d], g, &kh[jj * d..][..d]);
                    axpy(&mut dkh[jj * d..][..d], g, qi);
                }
            }
            scatter_head(&mut dq, &dqh, s, h, c, d, l);
            scatter_head(&mut dk, &dkh, s, h, c, d, l);
            scatter_head(&mut dv, &dvh, s, h, c, d, l);
        }
    }
    (dq, dk, dv)
}

/// 2x2 mean pooling over `[P, H, W]` planes.
pub fn avg_pool2<F: Element>(x: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = F::lit(0.25);
    let mut out = vec![F::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * ho * wo..][..ho * wo];
        for y in 0..ho {
            for xo in 0..wo {
                let i = 2 * y * w + 2 * xo;
                dst[y * wo + xo] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<F: Element>(dy: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = F::lit(0.25);
    let mut dx = vec![F::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy[p * ho * wo..][..ho * wo];
        let dst = &mut dx[p * h * w..][..h * w];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y / 2) * wo + xx / 2] * quarter;
            }
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling over `[P, H, W]` planes.
pub fn upsample2<F: Element>(x: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![F::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * ho * wo..][..ho * wo];
        for y in 0..ho {
            for xx in 0..wo {
                dst[y * wo + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<F: Element>(dy: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![F::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy[p * ho * wo..][..ho * wo];
        let dst = &mut dx[p * h * w..][..h * w];
        for y in 0..h {
            for xx in 0..w {
                let i = 2 * y * wo + 2 * xx;
                dst[y * w + xx] = src[i] + src[i + 1] + src[i + wo] + src[i + wo + 1];
            }
        }
    }
    dx
}
