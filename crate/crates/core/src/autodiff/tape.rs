//! Reverse-mode tape.
//!
//! A [`Tape`] is an append-only arena of nodes. Each op evaluates eagerly,
//! stores its value and records how to route gradients back to its inputs.
//! Nodes are appended after their inputs, so the arena order is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.

use std::cell::{Ref, RefCell};

use crate::autodiff::conv::{self, ConvDims, ConvGeometry};
use crate::autodiff::pool;
use crate::error::{Error, Result};
use crate::tensor::{dims2, dims5, numel, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Square(Var),
    Abs(Var),
    Log10(Var),
    ClampMin(Var, f64),
    ClampMax(Var, f64),
    Softmax(Var),
    SumAll(Var),
    MeanAll(Var),
    MeanPerSample(Var),
    Reshape(Var),
    Conv3d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        dims: ConvDims,
    },
    Upsample {
        input: Var,
        factor: [usize; 3],
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        input: Var,
        window: [usize; 3],
    },
    GlobalAvgPool(Var),
    GlobalMaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    ChannelMean(Var),
    ChannelMax {
        input: Var,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    ChannelGate(Var, Var),
    SpatialMask(Var, Var),
    Concat(Vec<Var>),
    Ssim {
        x: Var,
        y: Var,
        c1: Vec<f64>,
        c2: Vec<f64>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Records differentiable computation for one forward/backward pass.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every leaf that requires them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{op}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node. Outstanding [`Var`]s become invalid.
    pub fn reset(&self) {
        self.nodes.borrow_mut().clear();
    }

    fn push(&self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Ref<'_, Node<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0])
    }

    fn requires(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.node(v).value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> Result<T> {
        self.node(v).value.item()
    }

    fn unary(&self, x: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let value = self.node(x).value.map(f);
        let rg = self.requires(&[x]);
        self.push(value, op, rg)
    }

    fn binary(&self, name: &str, a: Var, b: Var, op: Op, f: impl Fn(T, T) -> T) -> Result<Var> {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            same_shape(name, va.shape(), vb.shape())?;
            let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| f(p, q)).collect();
            Tensor::from_parts(va.shape().to_vec(), data)
        };
        let rg = self.requires(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |p, q| p * q)
    }

    pub fn scale(&self, x: Var, factor: f64) -> Var {
        let f = T::of_f64(factor);
        self.unary(x, Op::Scale(x, factor), |v| v * f)
    }

    pub fn add_scalar(&self, x: Var, c: f64) -> Var {
        let c = T::of_f64(c);
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), |v| v.abs())
    }

    pub fn log10(&self, x: Var) -> Var {
        self.unary(x, Op::Log10(x), |v| v.log10())
    }

    pub fn clamp_min(&self, x: Var, min: f64) -> Var {
        let m = T::of_f64(min);
        self.unary(x, Op::ClampMin(x, min), |v| if v < m { m } else { v })
    }

    pub fn clamp_max(&self, x: Var, max: f64) -> Var {
        let m = T::of_f64(max);
        self.unary(x, Op::ClampMax(x, max), |v| if v > m { m } else { v })
    }

    /// Row-wise softmax of an `[N, K]` tensor, computed with max subtraction.
    pub fn softmax(&self, x: Var) -> Result<Var> {
        let value = {
            let v = self.value(x);
            let [_, k] = dims2(v.shape())?;
            let mut out = Vec::with_capacity(v.numel());
            for row in v.data().chunks(k) {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
                let total: T = exps.iter().copied().sum();
                out.extend(exps.into_iter().map(|e| e / total));
            }
            Tensor::from_parts(v.shape().to_vec(), out)
        };
        let rg = self.requires(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    pub fn sum_all(&self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.requires(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let s = {
            let v = self.value(x);
            v.data().iter().copied().sum::<T>() / T::of_f64(v.numel() as f64)
        };
        let rg = self.requires(&[x]);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// Mean over every axis except the leading batch axis: `[N, ...] -> [N]`.
    pub fn mean_per_sample(&self, x: Var) -> Var {
        let value = {
            let v = self.value(x);
            let n = v.shape()[0];
            let per = v.numel() / n;
            let inv = T::of_f64(1.0 / per as f64);
            let data = v.data().chunks(per).map(|c| c.iter().copied().sum::<T>() * inv).collect();
            Tensor::from_parts(vec![n], data)
        };
        let rg = self.requires(&[x]);
        self.push(value, Op::MeanPerSample(x), rg)
    }

    pub fn reshape(&self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.requires(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Flattens `[N, ...]` to `[N, prod(...)]`.
    pub fn flatten(&self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let n = shape[0];
        self.reshape(x, vec![n, numel(&shape[1..])])
    }

    /// 3D convolution of `[N, C, D, H, W]` with `[F, C, kd, kh, kw]` plus optional bias `[F]`.
    pub fn conv3d(&self, input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let (dims, value) = {
            let (vi, vk) = (self.value(input), self.value(kernel));
            let dims = ConvDims::resolve(vi.shape(), vk.shape(), geom)?;
            let vb = bias.map(|b| self.value(b));
            if let Some(vb) = &vb {
                if vb.shape() != [dims.f] {
                    return Err(Error::Shape(format!(
                        "conv3d bias must have shape [{}], got {:?}",
                        dims.f,
                        vb.shape()
                    )));
                }
            }
            let out = conv::conv3d_forward(&dims, vi.data(), vk.data(), vb.as_ref().map(|b| b.data()));
            (dims, Tensor::from_parts(dims.output_shape(), out))
        };
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.requires(&deps);
        Ok(self.push(
            value,
            Op::Conv3d {
                input,
                kernel,
                bias,
                dims,
            },
            rg,
        ))
    }

    pub fn upsample_nearest(&self, input: Var, factor: [usize; 3]) -> Result<Var> {
        if factor.contains(&0) {
            return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
        }
        let value = {
            let v = self.value(input);
            let [n, c, d, h, w] = v.dims5()?;
            let out = pool::upsample_forward(v.data(), n * c, [d, h, w], factor);
            Tensor::from_parts(vec![n, c, d * factor[0], h * factor[1], w * factor[2]], out)
        };
        let rg = self.requires(&[input]);
        Ok(self.push(value, Op::Upsample { input, factor }, rg))
    }

    pub fn maxpool3d(&self, input: Var, window: [usize; 3]) -> Result<Var> {
        let (value, argmax) = {
            let v = self.value(input);
            let [n, c, d, h, w] = v.dims5()?;
            let od = pool::pooled_dims([d, h, w], window)?;
            let (out, arg) = pool::maxpool_forward(v.data(), n * c, [d, h, w], window);
            (Tensor::from_parts(vec![n, c, od[0], od[1], od[2]], out), arg)
        };
        let rg = self.requires(&[input]);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    pub fn avgpool3d(&self, input: Var, window: [usize; 3]) -> Result<Var> {
        let value = {
            let v = self.value(input);
            let [n, c, d, h, w] = v.dims5()?;
            let od = pool::pooled_dims([d, h, w], window)?;
            let out = pool::avgpool_forward(v.data(), n * c, [d, h, w], window);
            Tensor::from_parts(vec![n, c, od[0], od[1], od[2]], out)
        };
        let rg = self.requires(&[input]);
        Ok(self.push(value, Op::AvgPool { input, window }, rg))
    }

    /// `[N, C, D, H, W] -> [N, C]` mean over space.
    pub fn global_avg_pool(&self, input: Var) -> Result<Var> {
        let value = {
            let v = self.value(input);
            let [n, c, ..] = v.dims5()?;
            let vox = v.numel() / (n * c);
            let inv = T::of_f64(1.0 / vox as f64);
            let data = v.data().chunks(vox).map(|p| p.iter().copied().sum::<T>() * inv).collect();
            Tensor::from_parts(vec![n, c], data)
        };
        let rg = self.requires(&[input]);
        Ok(self.push(value, Op::GlobalAvgPool(input), rg))
    }

    /// `[N, C, D, H, W] -> [N, C]` maximum over space.
    pub fn global_max_pool(&self, input: Var) -> Result<Var> {
        let (value, argmax) = {
            let v = self.value(input);
            let [n, c, ..] = v.dims5()?;
            let (out, arg) = pool::plane_max(v.data(), n * c);
            (Tensor::from_parts(vec![n, c], out), arg)
        };
        let rg = self.requires(&[input]);
        Ok(self.push(value, Op::GlobalMaxPool { input, argmax }, rg))
    }

    /// Mean across channels: `[N, C, D, H, W] -> [N, 1, D, H, W]`.
    pub fn channel_mean(&self, input: Var) -> Result<Var> {
        let value = {
            let v = self.value(input);
            let [n, c, d, h, w] = v.dims5()?;
            Tensor::from_parts(vec![n, 1, d, h, w], pool::channel_mean(v.data(), n, c, d * h * w))
        };
        let rg = self.requires(&[input]);
        Ok(self.push(value, Op::ChannelMean(input), rg))
    }

    /// Maximum across channels: `[N, C, D, H, W] -> [N, 1, D, H, W]`.
    pub fn channel_max(&self, input: Var) -> Result<Var> {
        let (value, argmax) = {
            let v = self.value(input);
            let [n, c, d, h, w] = v.dims5()?;
            let (out, arg) = pool::channel_max(v.data(), n, c, d * h * w);
            (Tensor::from_parts(vec![n, 1, d, h, w], out), arg)
        };
        let rg = self.requires(&[input]);
        Ok(self.push(value, Op::ChannelMax { input, argmax }, rg))
    }

    /// Affine map `[N, K] x [K, M] + [M]`.
    pub fn dense(&self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let value = {
            let (vx, vw) = (self.value(input), self.value(weight));
            let [n, k] = dims2(vx.shape())?;
            let [k2, m] = dims2(vw.shape())?;
            if k != k2 {
                return Err(Error::Shape(format!(
                    "dense: input has {k} features but weight expects {k2}"
                )));
            }
            let mut out = vec![T::zero(); n * m];
            if let Some(b) = bias {
                let vb = self.value(b);
                if vb.shape() != [m] {
                    return Err(Error::Shape(format!("dense bias must be [{m}], got {:?}", vb.shape())));
                }
                for row in out.chunks_mut(m) {
                    row.copy_from_slice(vb.data());
                }
            }
            let (xd, wd) = (vx.data(), vw.data());
            for i in 0..n {
                let row = &mut out[i * m..(i + 1) * m];
                for j in 0..k {
                    let a = xd[i * k + j];
                    for (o, &wv) in row.iter_mut().zip(&wd[j * m..(j + 1) * m]) {
                        *o += a * wv;
                    }
                }
            }
            Tensor::from_parts(vec![n, m], out)
        };
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.requires(&deps);
        Ok(self.push(value, Op::Dense { input, weight, bias }, rg))
    }

    /// Multiplies every channel plane of `x: [N, C, ...]` by `gate: [N, C]`.
    pub fn broadcast_mul_channels(&self, x: Var, gate: Var) -> Result<Var> {
        let value = {
            let (vx, vg) = (self.value(x), self.value(gate));
            let [n, c, ..] = vx.dims5()?;
            if vg.shape() != [n, c] {
                return Err(Error::Shape(format!(
                    "channel gate must be [{n}, {c}], got {:?}",
                    vg.shape()
                )));
            }
            let vox = vx.numel() / (n * c);
            let mut out = vx.data().to_vec();
            for (plane, &g) in out.chunks_mut(vox).zip(vg.data()) {
                plane.iter_mut().for_each(|v| *v *= g);
            }
            Tensor::from_parts(vx.shape().to_vec(), out)
        };
        let rg = self.requires(&[x, gate]);
        Ok(self.push(value, Op::ChannelGate(x, gate), rg))
    }

    /// Multiplies every channel of `x: [N, C, D, H, W]` by `mask: [N, 1, D, H, W]`.
    pub fn broadcast_mul_spatial(&self, x: Var, mask: Var) -> Result<Var> {
        let value = {
            let (vx, vm) = (self.value(x), self.value(mask));
            let [n, c, d, h, w] = vx.dims5()?;
            if vm.shape() != [n, 1, d, h, w] {
                return Err(Error::Shape(format!(
                    "spatial mask must be [{n}, 1, {d}, {h}, {w}], got {:?}",
                    vm.shape()
                )));
            }
            let vox = d * h * w;
            let mut out = vx.data().to_vec();
            for s in 0..n {
                let m = &vm.data()[s * vox..(s + 1) * vox];
                for ch in 0..c {
                    let plane = &mut out[(s * c + ch) * vox..][..vox];
                    plane.iter_mut().zip(m).for_each(|(v, &g)| *v *= g);
                }
            }
            Tensor::from_parts(vx.shape().to_vec(), out)
        };
        let rg = self.requires(&[x, mask]);
        Ok(self.push(value, Op::SpatialMask(x, mask), rg))
    }

    /// Concatenates `[N, C_i, D, H, W]` tensors along the channel axis.
    pub fn concat_channels(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let value = {
            let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
            let [n, _, d, h, w] = vals[0].dims5()?;
            let mut total_c = 0;
            for v in &vals {
                let [vn, vc, vd, vh, vw] = v.dims5()?;
                if [vn, vd, vh, vw] != [n, d, h, w] {
                    return Err(Error::Shape(format!(
                        "concat_channels: non-channel dims {:?} and {:?} differ",
                        vals[0].shape(),
                        v.shape()
                    )));
                }
                total_c += vc;
            }
            let vox = d * h * w;
            let mut out = Vec::with_capacity(n * total_c * vox);
            for s in 0..n {
                for v in &vals {
                    let c = v.shape()[1];
                    out.extend_from_slice(&v.data()[s * c * vox..(s + 1) * c * vox]);
                }
            }
            Tensor::from_parts(vec![n, total_c, d, h, w], out)
        };
        let rg = self.requires(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Per-sample whole-volume SSIM of `x` and `y` (`[N, ...] -> [N]`), with
    /// per-sample stabilising constants.
    pub fn ssim_global(&self, x: Var, y: Var, c1: &[f64], c2: &[f64]) -> Result<Var> {
        let value = {
            let (vx, vy) = (self.value(x), self.value(y));
            same_shape("ssim", vx.shape(), vy.shape())?;
            let n = vx.shape()[0];
            if c1.len() != n || c2.len() != n {
                return Err(Error::Shape(format!("ssim expects {n} constant pairs")));
            }
            let per = vx.numel() / n;
            let data = (0..n)
                .map(|s| {
                    let xs = &vx.data()[s * per..(s + 1) * per];
                    let ys = &vy.data()[s * per..(s + 1) * per];
                    T::of_f64(SsimParts::compute(xs, ys, c1[s], c2[s]).value())
                })
                .collect();
            Tensor::from_parts(vec![n], data)
        };
        let rg = self.requires(&[x, y]);
        Ok(self.push(
            value,
            Op::Ssim {
                x,
                y,
                c1: c1.to_vec(),
                c2: c2.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar. Returns gradients for every leaf that
    /// requires them; all of them are checked to be finite.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("backward on an empty tape".into()));
        }
        if !nodes[loss.0].value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut pending: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        pending[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::non_finite(format!("gradient of leaf {i}")));
                }
                leaves[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            backprop(&nodes, node, &g, &mut pending);
        }
        Ok(Gradients { grads: leaves })
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Whole-volume statistics entering the SSIM formula.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SsimParts {
    pub mu_x: f64,
    pub mu_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov: f64,
    pub c1: f64,
    pub c2: f64,
}

impl SsimParts {
    pub fn compute<T: Scalar>(x: &[T], y: &[T], c1: f64, c2: f64) -> Self {
        let n = x.len() as f64;
        let mu_x = x.iter().map(|v| v.as_f64()).sum::<f64>() / n;
        let mu_y = y.iter().map(|v| v.as_f64()).sum::<f64>() / n;
        let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            let (dx, dy) = (a.as_f64() - mu_x, b.as_f64() - mu_y);
            var_x += dx * dx;
            var_y += dy * dy;
            cov += dx * dy;
        }
        SsimParts {
            mu_x,
            mu_y,
            var_x: var_x / n,
            var_y: var_y / n,
            cov: cov / n,
            c1,
            c2,
        }
    }

    fn terms(&self) -> [f64; 4] {
        [
            2.0 * self.mu_x * self.mu_y + self.c1,
            2.0 * self.cov + self.c2,
            self.mu_x * self.mu_x + self.mu_y * self.mu_y + self.c1,
            self.var_x + self.var_y + self.c2,
        ]
    }

    pub fn value(&self) -> f64 {
        let [a, b, c, d] = self.terms();
        a * b / (c * d)
    }

    /// Per-voxel derivative of SSIM with respect to one of the two volumes,
    /// as a function of (own voxel, other voxel).
    fn grad_fn(&self, wrt_x: bool, n: f64) -> impl Fn(f64, f64) -> f64 {
        let [a, b, c, d] = self.terms();
        let (mu_own, mu_other) = if wrt_x { (self.mu_x, self.mu_y) } else { (self.mu_y, self.mu_x) };
        let den = c * d;
        let num = a * b;
        move |own: f64, other: f64| {
            let da = 2.0 * mu_other / n;
            let db = 2.0 * (other - mu_other) / n;
            let dc = 2.0 * mu_own / n;
            let dd = 2.0 * (own - mu_own) / n;
            (da * b + a * db) / den - num * (dc * d + c * dd) / (den * den)
        }
    }
}

fn add_into<T: Scalar>(pending: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var, contrib: Vec<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut pending[v.0] {
        Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contrib),
    }
}

fn wants<T>(nodes: &[Node<T>], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn backprop<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T], pending: &mut [Option<Vec<T>>]) {
    let val = |v: Var| nodes[v.0].value.data();
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_into(pending, nodes, *a, g.to_vec());
            add_into(pending, nodes, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            add_into(pending, nodes, *a, g.to_vec());
            add_into(pending, nodes, *b, g.iter().map(|&v| -v).collect());
        }
        Op::Mul(a, b) => {
            if wants(nodes, *a) {
                add_into(pending, nodes, *a, g.iter().zip(val(*b)).map(|(&gi, &bi)| gi * bi).collect());
            }
            if wants(nodes, *b) {
                add_into(pending, nodes, *b, g.iter().zip(val(*a)).map(|(&gi, &ai)| gi * ai).collect());
            }
        }
        Op::Scale(x, f) => {
            let f = T::of_f64(*f);
            add_into(pending, nodes, *x, g.iter().map(|&v| v * f).collect());
        }
        Op::AddScalar(x) | Op::Reshape(x) => add_into(pending, nodes, *x, g.to_vec()),
        Op::Relu(x) => {
            let c = g
                .iter()
                .zip(val(*x))
                .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                .collect();
            add_into(pending, nodes, *x, c);
        }
        Op::Sigmoid(x) => {
            let c = g.iter().zip(out).map(|(&gi, &s)| gi * s * (T::one() - s)).collect();
            add_into(pending, nodes, *x, c);
        }
        Op::Square(x) => {
            let two = T::of_f64(2.0);
            let c = g.iter().zip(val(*x)).map(|(&gi, &xi)| gi * two * xi).collect();
            add_into(pending, nodes, *x, c);
        }
        Op::Abs(x) => {
            let c = g
                .iter()
                .zip(val(*x))
                .map(|(&gi, &xi)| {
                    if xi > T::zero() {
                        gi
                    } else if xi < T::zero() {
                        -gi
                    } else {
                        T::zero()
                    }
                })
                .collect();
            add_into(pending, nodes, *x, c);
        }
        Op::Log10(x) => {
            let ln10 = T::of_f64(std::f64::consts::LN_10);
            let c = g
                .iter()
                .zip(val(*x))
                .map(|(&gi, &xi)| if gi == T::zero() { T::zero() } else { gi / (xi * ln10) })
                .collect();
            add_into(pending, nodes, *x, c);
        }
        Op::ClampMin(x, m) => {
            let m = T::of_f64(*m);
            let c = g
                .iter()
                .zip(val(*x))
                .map(|(&gi, &xi)| if xi >= m { gi } else { T::zero() })
                .collect();
            add_into(pending, nodes, *x, c);
        }
        Op::ClampMax(x, m) => {
            let m = T::of_f64(*m);
            let c = g
                .iter()
                .zip(val(*x))
                .map(|(&gi, &xi)| if xi <= m { gi } else { T::zero() })
                .collect();
            add_into(pending, nodes, *x, c);
        }
        Op::Softmax(x) => {
            let k = node.value.shape()[1];
            let mut c = Vec::with_capacity(g.len());
            for (gr, yr) in g.chunks(k).zip(out.chunks(k)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                c.extend(gr.iter().zip(yr).map(|(&gi, &yi)| yi * (gi - dot)));
            }
            add_into(pending, nodes, *x, c);
        }
        Op::SumAll(x) => {
            let n = nodes[x.0].value.numel();
            add_into(pending, nodes, *x, vec![g[0]; n]);
        }
        Op::MeanAll(x) => {
            let n = nodes[x.0].value.numel();
            add_into(pending, nodes, *x, vec![g[0] / T::of_f64(n as f64); n]);
        }
        Op::MeanPerSample(x) => {
            let total = nodes[x.0].value.numel();
            let per = total / g.len();
            let inv = T::of_f64(1.0 / per as f64);
            let c = (0..total).map(|i| g[i / per] * inv).collect();
            add_into(pending, nodes, *x, c);
        }
        Op::Conv3d {
            input,
            kernel,
            bias,
            dims,
        } => {
            let need = [
                wants(nodes, *input),
                wants(nodes, *kernel),
                bias.is_some_and(|b| wants(nodes, b)),
            ];
            let grads = conv::conv3d_backward(dims, val(*input), val(*kernel), g, need);
            if let Some(gi) = grads.input {
                add_into(pending, nodes, *input, gi);
            }
            if let Some(gk) = grads.kernel {
                add_into(pending, nodes, *kernel, gk);
            }
            if let (Some(b), Some(gb)) = (bias, grads.bias) {
                add_into(pending, nodes, *b, gb);
            }
        }
        Op::Upsample { input, factor } => {
            let [n, c, d, h, w] = dims5(nodes[input.0].value.shape()).expect("validated");
            add_into(pending, nodes, *input, pool::upsample_backward(g, n * c, [d, h, w], *factor));
        }
        Op::MaxPool { input, argmax } | Op::GlobalMaxPool { input, argmax } | Op::ChannelMax { input, argmax } => {
            let mut c = vec![T::zero(); nodes[input.0].value.numel()];
            for (&gi, &i) in g.iter().zip(argmax) {
                c[i] += gi;
            }
            add_into(pending, nodes, *input, c);
        }
        Op::AvgPool { input, window } => {
            let [n, c, d, h, w] = dims5(nodes[input.0].value.shape()).expect("validated");
            add_into(pending, nodes, *input, pool::avgpool_backward(g, n * c, [d, h, w], *window));
        }
        Op::GlobalAvgPool(x) => {
            let total = nodes[x.0].value.numel();
            let vox = total / g.len();
            let inv = T::of_f64(1.0 / vox as f64);
            let c = (0..total).map(|i| g[i / vox] * inv).collect();
            add_into(pending, nodes, *x, c);
        }
        Op::ChannelMean(x) => {
            let [n, ch, d, h, w] = dims5(nodes[x.0].value.shape()).expect("validated");
            let vox = d * h * w;
            let inv = T::of_f64(1.0 / ch as f64);
            let mut c = Vec::with_capacity(n * ch * vox);
            for s in 0..n {
                for _ in 0..ch {
                    c.extend(g[s * vox..(s + 1) * vox].iter().map(|&v| v * inv));
                }
            }
            add_into(pending, nodes, *x, c);
        }
        Op::Dense { input, weight, bias } => {
            let [n, k] = dims2(nodes[input.0].value.shape()).expect("validated");
            let m = g.len() / n;
            let (xd, wd) = (val(*input), val(*weight));
            if wants(nodes, *input) {
                let mut gx = vec![T::zero(); n * k];
                for i in 0..n {
                    let go = &g[i * m..(i + 1) * m];
                    for j in 0..k {
                        gx[i * k + j] = go.iter().zip(&wd[j * m..(j + 1) * m]).map(|(&a, &b)| a * b).sum();
                    }
                }
                add_into(pending, nodes, *input, gx);
            }
            if wants(nodes, *weight) {
                let mut gw = vec![T::zero(); k * m];
                for i in 0..n {
                    let go = &g[i * m..(i + 1) * m];
                    for j in 0..k {
                        let a = xd[i * k + j];
                        for (o, &gv) in gw[j * m..(j + 1) * m].iter_mut().zip(go) {
                            *o += a * gv;
                        }
                    }
                }
                add_into(pending, nodes, *weight, gw);
            }
            if let Some(b) = bias {
                let mut gb = vec![T::zero(); m];
                for row in g.chunks(m) {
                    gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                }
                add_into(pending, nodes, *b, gb);
            }
        }
        Op::ChannelGate(x, gate) => {
            let gv = val(*gate);
            let vox = g.len() / gv.len();
            if wants(nodes, *x) {
                let c = g.iter().enumerate().map(|(i, &gi)| gi * gv[i / vox]).collect();
                add_into(pending, nodes, *x, c);
            }
            if wants(nodes, *gate) {
                let xd = val(*x);
                let c = (0..gv.len())
                    .map(|p| {
                        let r = p * vox..(p + 1) * vox;
                        g[r.clone()].iter().zip(&xd[r]).map(|(&a, &b)| a * b).sum()
                    })
                    .collect();
                add_into(pending, nodes, *gate, c);
            }
        }
        Op::SpatialMask(x, mask) => {
            let [n, ch, d, h, w] = dims5(nodes[x.0].value.shape()).expect("validated");
            let vox = d * h * w;
            let md = val(*mask);
            if wants(nodes, *x) {
                let c = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| {
                        let s = i / (ch * vox);
                        gi * md[s * vox + i % vox]
                    })
                    .collect();
                add_into(pending, nodes, *x, c);
            }
            if wants(nodes, *mask) {
                let xd = val(*x);
                let mut c = vec![T::zero(); n * vox];
                for s in 0..n {
                    let dst = &mut c[s * vox..(s + 1) * vox];
                    for k in 0..ch {
                        let base = (s * ch + k) * vox;
                        for (v, o) in dst.iter_mut().enumerate() {
                            *o += g[base + v] * xd[base + v];
                        }
                    }
                }
                add_into(pending, nodes, *mask, c);
            }
        }
        Op::Concat(parts) => {
            let [n, total_c, d, h, w] = dims5(node.value.shape()).expect("validated");
            let vox = d * h * w;
            let mut offset = 0;
            for &p in parts {
                let c = nodes[p.0].value.shape()[1];
                if wants(nodes, p) {
                    let mut contrib = Vec::with_capacity(n * c * vox);
                    for s in 0..n {
                        let base = (s * total_c + offset) * vox;
                        contrib.extend_from_slice(&g[base..base + c * vox]);
                    }
                    add_into(pending, nodes, p, contrib);
                }
                offset += c;
            }
        }
        Op::Ssim { x, y, c1, c2 } => {
            let (xd, yd) = (val(*x), val(*y));
            let n = g.len();
            let per = xd.len() / n;
            for (var, wrt_x) in [(*x, true), (*y, false)] {
                if !wants(nodes, var) {
                    continue;
                }
                let mut contrib = Vec::with_capacity(xd.len());
                for s in 0..n {
                    let xs = &xd[s * per..(s + 1) * per];
                    let ys = &yd[s * per..(s + 1) * per];
                    let parts = SsimParts::compute(xs, ys, c1[s], c2[s]);
                    let dfn = parts.grad_fn(wrt_x, per as f64);
                    let gs = g[s].as_f64();
                    let (own, other) = if wrt_x { (xs, ys) } else { (ys, xs) };
                    contrib.extend(
                        own.iter()
                            .zip(other)
                            .map(|(&o, &t)| T::of_f64(gs * dfn(o.as_f64(), t.as_f64()))),
                    );
                }
                add_into(pending, nodes, var, contrib);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_all_gradient_is_uniform() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_f64(vec![8], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap());
        let loss = tape.mean_all(x);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&g| (g - 0.125).abs() < 1e-15));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_f64(vec![2], &[1.0, -2.0]).unwrap());
        let loss = tape.sum_all(tape.square(x));
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_empty() {
        let tape = Tape::<f64>::new();
        assert!(tape.backward(Var(0)).is_err());
        let x = tape.param(Tensor::zeros(vec![3]));
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(vec![2], 1.0));
        let c = tape.constant(Tensor::full(vec![2], 3.0));
        let loss = tape.sum_all(tape.mul(x, c).unwrap());
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn softmax_zero_row_is_uniform() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 4]));
        let p = tape.softmax(x).unwrap();
        assert!(tape.value(p).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn relu_clips_negative() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_f64(vec![2], &[-3.0, 3.0]).unwrap());
        assert_eq!(tape.value(tape.relu(x)).data(), &[0.0, 3.0]);
    }

    #[test]
    fn concat_counts_channels() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(vec![1, 2, 2, 2, 2]));
        let b = tape.constant(Tensor::zeros(vec![1, 3, 2, 2, 2]));
        let c = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), vec![1, 5, 2, 2, 2]);
        let bad = tape.constant(Tensor::zeros(vec![1, 3, 2, 2, 1]));
        assert!(tape.concat_channels(&[a, bad]).is_err());
    }

    #[test]
    fn conv_zero_output_is_error() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 1, 2, 2, 2]));
        let k = tape.constant(Tensor::zeros(vec![1, 1, 3, 3, 3]));
        assert!(tape.conv3d(x, k, None, ConvGeometry::unit()).is_err());
        let k2 = tape.constant(Tensor::zeros(vec![1, 2, 1, 1, 1]));
        assert!(tape.conv3d(x, k2, None, ConvGeometry::unit()).is_err());
    }
}
