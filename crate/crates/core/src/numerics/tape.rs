use crate::error::{ensure, Error, Result};

use super::kernels::{self, ConvGeometry};
use super::{Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    ScaleRows(Var, Vec<F>),
    MulConst(Var, Vec<F>),
    Square(Var),
    Silu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Reshape(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geometry: ConvGeometry,
    },
    AddBias {
        input: Var,
        bias: Var,
    },
    Matmul(Var, Var),
    GroupNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        means: Vec<F>,
        rstds: Vec<F>,
    },
    AvgPool2(Var),
    Upsample2(Var),
    ConcatChannels(Var, Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<F>,
    },
    SmoothL1 {
        pred: Var,
        target: Vec<F>,
        transition: F,
    },
    Focal {
        pred: Var,
        target: Vec<F>,
        focusing: F,
        alpha: F,
        clamp: F,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Wengert list for reverse-mode differentiation.
///
/// Operations are recorded in execution order; [`Tape::gradient`] walks the list
/// backwards. Nodes built only from non-differentiable inputs skip the
/// backward pass entirely, so a tape with no trainable leaves is a plain
/// forward evaluator.
#[derive(Debug, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Output spatial extent and channel count of `[N, C, ...]`.
fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    ensure!(shape.len() >= 2, "expected at least [N, C], got {shape:?}");
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn expect_4d(shape: &[usize], what: &str) -> Result<[usize; 4]> {
    ensure!(shape.len() == 4, "{what} expects [N,C,H,W], got {shape:?}");
    Ok([shape[0], shape[1], shape[2], shape[3]])
}

fn sigmoid<F: Element>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

impl<F: Element> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; it is differentiable when `tensor.requires_grad()` is set.
    pub fn leaf(&mut self, tensor: Tensor<F>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor<F>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn param(&mut self, tensor: Tensor<F>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), f)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = F::lit(factor);
        let value = self.value(a).map(|x| x * f);
        self.push(value, Op::Scale(a, f), &[a])
    }

    /// Multiplies every element of sample `i` (leading dimension) by `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: &[F]) -> Result<Var> {
        let v = self.value(a);
        ensure!(
            factors.len() == v.batch(),
            "scale_rows: {} factors for batch of {}",
            factors.len(),
            v.batch()
        );
        let len = v.sample_len();
        let data = v
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * factors[i / len])
            .collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(value, Op::ScaleRows(a, factors.to_vec()), &[a]))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: Var, c: &Tensor<F>) -> Result<Var> {
        let value = self.value(a).zip_map(c, |x, y| x * y)?;
        Ok(self.push(value, Op::MulConst(a, c.data().to_vec()), &[a]))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * sigmoid(x));
        self.push(value, Op::Silu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<F>();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().copied().sum::<F>() / F::lit(v.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sums each sample: `[N, ...] -> [N]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data: Vec<F> = (0..v.batch())
            .map(|i| v.sample(i).iter().copied().sum::<F>())
            .collect();
        let value = Tensor::new(vec![data.len()], data).expect("nonempty batch");
        self.push(value, Op::SumRows(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().with_requires_grad(false).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Cross-correlation of `[N,C,H,W]` input with `[K,C,kh,kw]` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let geometry = ConvGeometry::new(self.shape(input), self.shape(kernel), stride, padding)?;
        let data = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            &geometry,
        );
        let value = Tensor::new(geometry.output_shape().to_vec(), data)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geometry,
            },
            &[input, kernel],
        ))
    }

    /// Adds a per-channel bias `[C]` or per-sample-per-channel bias `[N, C]`
    /// to `[N, C, ...]`, broadcasting over the trailing dimensions.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (n, c, spatial) = channel_layout(self.shape(input))?;
        let bshape = self.shape(bias).to_vec();
        let per_sample = match bshape.as_slice() {
            [bc] if *bc == c => false,
            [bn, bc] if *bn == n && *bc == c => true,
            _ => {
                return Err(Error::invalid(format!(
                    "add_bias: bias {bshape:?} does not fit input {:?}",
                    self.shape(input)
                )))
            }
        };
        let b = self.value(bias).data();
        let mut data = self.value(input).data().to_vec();
        for s in 0..n {
            for ch in 0..c {
                let bv = if per_sample { b[s * c + ch] } else { b[ch] };
                for v in &mut data[(s * c + ch) * spatial..][..spatial] {
                    *v += bv;
                }
            }
        }
        let value = Tensor::new(self.shape(input).to_vec(), data)?;
        Ok(self.push(value, Op::AddBias { input, bias }, &[input, bias]))
    }

    /// `[M,K] x [K,N] -> [M,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        ensure!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul: incompatible shapes {sa:?} x {sb:?}"
        );
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), sa[0], sa[1], sb[1]);
        let value = Tensor::new(vec![sa[0], sb[1]], data)?;
        Ok(self.push(value, Op::Matmul(a, b), &[a, b]))
    }

    pub fn group_norm(&mut self, input: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (n, c, spatial) = channel_layout(self.shape(input))?;
        ensure!(
            groups > 0 && c % groups == 0,
            "group_norm: {c} channels not divisible into {groups} groups"
        );
        self.value(gamma).expect_shape(&[c])?;
        self.value(beta).expect_shape(&[c])?;
        let (data, means, rstds) = kernels::group_norm_forward(
            self.value(input).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            n,
            c,
            spatial,
            groups,
        );
        let value = Tensor::new(self.shape(input).to_vec(), data)?;
        Ok(self.push(
            value,
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                means,
                rstds,
            },
            &[input, gamma, beta],
        ))
    }

    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = expect_4d(self.shape(input), "avg_pool2")?;
        ensure!(
            h % 2 == 0 && w % 2 == 0,
            "avg_pool2 needs even spatial dims, got {h}x{w}"
        );
        let data = kernels::avg_pool2(self.value(input).data(), n * c, h, w);
        let value = Tensor::new(vec![n, c, h / 2, w / 2], data)?;
        Ok(self.push(value, Op::AvgPool2(input), &[input]))
    }

    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = expect_4d(self.shape(input), "upsample2")?;
        let data = kernels::upsample2(self.value(input).data(), n * c, h, w);
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], data)?;
        Ok(self.push(value, Op::Upsample2(input), &[input]))
    }

    /// Concatenates `[N, Ca, ...]` and `[N, Cb, ...]` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        ensure!(
            sa.len() >= 2 && sa.len() == sb.len() && sa[0] == sb[0] && sa[2..] == sb[2..],
            "concat_channels: incompatible shapes {sa:?} and {sb:?}"
        );
        let n = sa[0];
        let (la, lb) = (self.value(a).sample_len(), self.value(b).sample_len());
        let mut data = Vec::with_capacity(n * (la + lb));
        for s in 0..n {
            data.extend_from_slice(self.value(a).sample(s));
            data.extend_from_slice(self.value(b).sample(s));
        }
        let mut shape = sa.clone();
        shape[1] = sa[1] + sb[1];
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::ConcatChannels(a, b), &[a, b]))
    }

    /// Multi-head self-attention over the spatial positions of `[N,C,H,W]`
    /// query, key and value maps.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let [n, c, h, w] = expect_4d(self.shape(q), "attention")?;
        self.value(k).expect_shape(self.shape(q))?;
        self.value(v).expect_shape(self.shape(q))?;
        ensure!(
            heads > 0 && c % heads == 0,
            "attention: {c} channels not divisible into {heads} heads"
        );
        let (data, probs) = kernels::attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            n,
            c,
            h * w,
            heads,
        );
        let value = Tensor::new(vec![n, c, h, w], data)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Mean smooth-L1 penalty of `target - pred`, quadratic below `transition`.
    pub fn smooth_l1_mean(&mut self, pred: Var, target: &Tensor<F>, transition: f64) -> Result<Var> {
        ensure!(transition > 0.0, "smooth-L1 transition must be positive");
        self.value(pred).same_shape(target)?;
        let beta = F::lit(transition);
        let half = F::lit(0.5);
        let p = self.value(pred);
        let total: F = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&m_hat, &m)| {
                let d = m - m_hat;
                if d.abs() < beta {
                    half * d * d / beta
                } else {
                    d.abs() - half * beta
                }
            })
            .sum();
        let value = Tensor::scalar(total / F::lit(p.numel() as f64));
        Ok(self.push(
            value,
            Op::SmoothL1 {
                pred,
                target: target.data().to_vec(),
                transition: beta,
            },
            &[pred],
        ))
    }

    /// Mean binary focal loss. `pred` holds probabilities, clamped into
    /// `[clamp, 1 - clamp]`; targets above one half count as positives.
    pub fn focal_mean(
        &mut self,
        pred: Var,
        target: &Tensor<F>,
        focusing: f64,
        alpha: f64,
        clamp: f64,
    ) -> Result<Var> {
        ensure!(focusing >= 0.0, "focal focusing must be nonnegative");
        ensure!(alpha > 0.0 && alpha < 1.0, "focal alpha must lie in (0, 1)");
        ensure!(clamp > 0.0 && clamp < 0.5, "focal clamp must lie in (0, 0.5)");
        self.value(pred).same_shape(target)?;
        let (g, a, eps) = (F::lit(focusing), F::lit(alpha), F::lit(clamp));
        let p = self.value(pred);
        let total: F = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&m_hat, &m)| {
                let (pt, at) = focal_terms(m_hat, m, a, eps);
                -at * (F::one() - pt).powf(g) * pt.ln()
            })
            .sum();
        let value = Tensor::scalar(total / F::lit(p.numel() as f64));
        Ok(self.push(
            value,
            Op::Focal {
                pred,
                target: target.data().to_vec(),
                focusing: g,
                alpha: a,
                clamp: eps,
            },
            &[pred],
        ))
    }

    /// Gradients of a scalar `loss` with respect to `params`. Parameters the
    /// loss does not depend on receive zero tensors.
    pub fn gradient(&self, loss: Var, params: &[Var]) -> Result<Vec<Tensor<F>>> {
        ensure!(
            self.value(loss).numel() == 1,
            "gradient needs a scalar loss, got shape {:?}",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Vec<F>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads)?;
        }
        params
            .iter()
            .map(|p| {
                let shape = self.shape(*p).to_vec();
                match grads.get_mut(p.0).and_then(Option::take) {
                    Some(g) => Tensor::new(shape, g),
                    None => Ok(Tensor::zeros(&shape)),
                }
            })
            .collect()
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<F>>], v: Var, contribution: Vec<F>) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn backward_node(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) -> Result<()> {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = g.iter().zip(val(*b)).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let d = g.iter().zip(val(*a)).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, f) => {
                self.accumulate(grads, *a, g.iter().map(|&x| x * *f).collect());
            }
            Op::ScaleRows(a, factors) => {
                let len = g.len() / factors.len();
                let d = g
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| x * factors[i / len])
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::MulConst(a, c) => {
                self.accumulate(grads, *a, g.iter().zip(c).map(|(&x, &y)| x * y).collect());
            }
            Op::Square(a) => {
                let two = F::lit(2.0);
                let d = g.iter().zip(val(*a)).map(|(&x, &y)| two * y * x).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Silu(a) => {
                let d = g
                    .iter()
                    .zip(val(*a))
                    .map(|(&x, &y)| {
                        let s = sigmoid(y);
                        x * s * (F::one() + y * (F::one() - s))
                    })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&x, &s)| x * s * (F::one() - s))
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, vec![g[0]; val(*a).len()]);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                self.accumulate(grads, *a, vec![g[0] / F::lit(n as f64); n]);
            }
            Op::SumRows(a) => {
                let len = val(*a).len() / g.len();
                let d = (0..val(*a).len()).map(|i| g[i / len]).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Conv2d {
                input,
                kernel,
                geometry,
            } => {
                let (dx, dw) = kernels::conv2d_backward(
                    val(*input),
                    val(*kernel),
                    g,
                    geometry,
                    self.wants(*input),
                    self.wants(*kernel),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *input, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *kernel, dw);
                }
            }
            Op::AddBias { input, bias } => {
                self.accumulate(grads, *input, g.to_vec());
                if self.wants(*bias) {
                    let (n, c, spatial) = channel_layout(self.shape(*input))?;
                    let per_sample = self.shape(*bias).len() == 2;
                    let mut db = vec![F::zero(); if per_sample { n * c } else { c }];
                    for s in 0..n {
                        for ch in 0..c {
                            let part = g[(s * c + ch) * spatial..][..spatial].iter().copied().sum::<F>();
                            db[if per_sample { s * c + ch } else { ch }] += part;
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (da, db) = kernels::matmul_backward(val(*a), val(*b), g, sa[0], sa[1], sb[1]);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                means,
                rstds,
            } => {
                let (n, c, spatial) = channel_layout(self.shape(*input))?;
                let (dx, dgamma, dbeta) = kernels::group_norm_backward(
                    val(*input),
                    val(*gamma),
                    means,
                    rstds,
                    g,
                    n,
                    c,
                    spatial,
                    *groups,
                );
                self.accumulate(grads, *input, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::AvgPool2(a) => {
                let [n, c, h, w] = expect_4d(self.shape(*a), "avg_pool2")?;
                self.accumulate(grads, *a, kernels::avg_pool2_backward(g, n * c, h, w));
            }
            Op::Upsample2(a) => {
                let [n, c, h, w] = expect_4d(self.shape(*a), "upsample2")?;
                self.accumulate(grads, *a, kernels::upsample2_backward(g, n * c, h, w));
            }
            Op::ConcatChannels(a, b) => {
                let n = self.shape(*a)[0];
                let (la, lb) = (val(*a).len() / n, val(*b).len() / n);
                let mut da = Vec::with_capacity(n * la);
                let mut db = Vec::with_capacity(n * lb);
                for s in 0..n {
                    let chunk = &g[s * (la + lb)..][..la + lb];
                    da.extend_from_slice(&chunk[..la]);
                    db.extend_from_slice(&chunk[la..]);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let [n, c, h, w] = expect_4d(self.shape(*q), "attention")?;
                let (dq, dk, dv) = kernels::attention_backward(
                    val(*q),
                    val(*k),
                    val(*v),
                    probs,
                    g,
                    n,
                    c,
                    h * w,
                    *heads,
                );
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::SmoothL1 {
                pred,
                target,
                transition,
            } => {
                let p = val(*pred);
                let scale = g[0] / F::lit(p.len() as f64);
                let d = p
                    .iter()
                    .zip(target)
                    .map(|(&m_hat, &m)| {
                        let diff = m - m_hat;
                        let slope = if diff.abs() < *transition {
                            diff / *transition
                        } else {
                            diff.signum()
                        };
                        -slope * scale
                    })
                    .collect();
                self.accumulate(grads, *pred, d);
            }
            Op::Focal {
                pred,
                target,
                focusing,
                alpha,
                clamp,
            } => {
                let p = val(*pred);
                let scale = g[0] / F::lit(p.len() as f64);
                let d = p
                    .iter()
                    .zip(target)
                    .map(|(&m_hat, &m)| {
                        if m_hat < *clamp || m_hat > F::one() - *clamp {
                            return F::zero();
                        }
                        let (pt, at) = focal_terms(m_hat, m, *alpha, *clamp);
                        let q = F::one() - pt;
                        // d/dpt of -at * q^g * ln(pt)
                        let focus_term = if *focusing == F::zero() {
                            F::zero()
                        } else {
                            *focusing * q.powf(*focusing - F::one()) * pt.ln()
                        };
                        let dpt = at * (focus_term - q.powf(*focusing) / pt);
                        let sign = if m > F::lit(0.5) { F::one() } else { -F::one() };
                        dpt * sign * scale
                    })
                    .collect();
                self.accumulate(grads, *pred, d);
            }
        }
        Ok(())
    }
}

/// `(p_t, alpha_t)` for one pixel of the focal loss.
fn focal_terms<F: Element>(m_hat: F, m: F, alpha: F, clamp: F) -> (F, F) {
    let p = m_hat.max(clamp).min(F::one() - clamp);
    if m > F::lit(0.5) {
        (p, alpha)
    } else {
        (F::one() - p, F::one() - alpha)
    }
}
