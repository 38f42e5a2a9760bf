//! The computation tape.
//!
//! A [`Graph`] records every forward op as a node holding its output value.
//! [`Graph::backward`] walks the nodes in reverse creation order, so the
//! backward pass is a single linear sweep over the tape. Parameters enter the
//! tape through [`Graph::param`], which copies the current value out of a
//! [`ParamStore`](crate::ParamStore) and remembers where the gradient has to
//! go; [`ParamStore::accumulate_grads`](crate::ParamStore::accumulate_grads)
//! collects it after the sweep.

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Work counters, in scalar multiply-adds (or element visits for pointwise ops).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpStats {
    pub forward_ops: u64,
    pub forward_work: u64,
    pub backward_ops: u64,
    pub backward_work: u64,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamBinding {
    pub store: String,
    pub id: ParamId,
    pub var: Var,
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Clamp(Var, T, T),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    AvgPool2(Var),
    Upsample2(Var),
    SumAxes {
        x: Var,
        keep_shape: Vec<usize>,
    },
    Reshape(Var),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    L2Norm {
        x: Var,
        keep_shape: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased per-channel variance.
    pub var: Vec<T>,
}

#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<ParamBinding>,
    backward_done: bool,
    stats: OpStats,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            backward_done: false,
            stats: OpStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn stats(&self) -> OpStats {
        self.stats
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the loss with respect to `v`, available after [`backward`](Self::backward).
    /// Nodes the loss does not depend on report `None`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn bindings(&self) -> &[ParamBinding] {
        &self.params
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, work: u64) -> Var {
        self.stats.forward_ops += 1;
        self.stats.forward_work += work;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value the loss is never differentiated against.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false, 0)
    }

    /// A free differentiable input (used by finite-difference checks).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, 0)
    }

    /// Binds a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let value = store.read(id).clone();
        let var = self.push(value, Op::Param, true, 0);
        self.params.push(ParamBinding {
            store: store.label().to_string(),
            id,
            var,
        });
        var
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = kernels::broadcast_shape(&sa, &sb).ok_or(TensorError::ShapeMismatch {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data: Vec<T> = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = kernels::broadcast_index_map(&sa, &out_shape);
            let mb = kernels::broadcast_index_map(&sb, &out_shape);
            ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        let n = data.len() as u64;
        let value = Tensor::new(&out_shape, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg, n))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let n = value.numel() as u64;
        let rg = self.rg(x);
        self.push(value, op, rg, n)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// `ln(1 + e^x)`, stable for large `|x|`.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    /// Clamps into `[lo, hi]`; the gradient passes only strictly inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg, (m * k * n) as u64))
    }

    /// Stride-1, same-padded 2-D convolution. `x: [B, Cin, H, W]`,
    /// `w: [Cout, Cin, k, k]` with odd `k`, optional `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: sx.clone(),
            rhs: sw.clone(),
        };
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] || sw[2] % 2 == 0 {
            return Err(mismatch());
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: sw.clone(),
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let (batch, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, k) = (sw[0], sw[2]);
        let hw = h * wd;
        let ckk = cin * k * k;
        let mut out = vec![T::zero(); batch * cout * hw];
        let mut cols = if k == 1 { Vec::new() } else { vec![T::zero(); ckk * hw] };
        let xd = self.value(x).data();
        let wdat = self.value(w).data();
        for n in 0..batch {
            let img = &xd[n * cin * hw..(n + 1) * cin * hw];
            let cols_ref: &[T] = if k == 1 {
                img
            } else {
                kernels::im2col(img, cin, h, wd, k, &mut cols);
                &cols
            };
            T::gemm(
                cout,
                ckk,
                hw,
                T::one(),
                wdat,
                ckk as isize,
                1,
                cols_ref,
                hw as isize,
                1,
                T::zero(),
                &mut out[n * cout * hw..(n + 1) * cout * hw],
                hw as isize,
                1,
            );
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for n in 0..batch {
                for (c, &bias) in bd.iter().enumerate() {
                    let start = (n * cout + c) * hw;
                    for v in &mut out[start..start + hw] {
                        *v += bias;
                    }
                }
            }
        }
        let value = Tensor::new(&[batch, cout, h, wd], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let work = (batch * cout * ckk * hw) as u64;
        Ok(self.push(value, Op::Conv2d { x, w, b }, rg, work))
    }

    /// Batch normalization over every axis except axis 1, using the statistics
    /// of this batch. Returns the normalized output and the batch statistics the
    /// caller folds into its running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats<T>)> {
        let (c, inner, batch) = self.bn_dims(x, gamma, beta)?;
        let m = batch * inner;
        let xd = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = 0.0f64;
            for n in 0..batch {
                let start = (n * c + ch) * inner;
                s += xd[start..start + inner].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let mu = s / m as f64;
            let mut ss = 0.0f64;
            for n in 0..batch {
                let start = (n * c + ch) * inner;
                ss += xd[start..start + inner]
                    .iter()
                    .map(|v| (v.as_f64() - mu).powi(2))
                    .sum::<f64>();
            }
            mean[ch] = T::from_f64(mu);
            var[ch] = T::from_f64(ss / m as f64);
        }
        let unbiased = var
            .iter()
            .map(|&v| {
                if m > 1 {
                    T::from_f64(v.as_f64() * m as f64 / (m - 1) as f64)
                } else {
                    v
                }
            })
            .collect();
        let out = self.bn_apply(x, gamma, beta, &mean, &var, eps, true)?;
        Ok((out, BatchStats { mean, var: unbiased }))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let (c, _, _) = self.bn_dims(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm running stats",
                lhs: vec![c],
                rhs: vec![running_mean.len(), running_var.len()],
            });
        }
        self.bn_apply(x, gamma, beta, running_mean, running_var, eps, false)
    }

    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let sx = self.shape(x);
        if sx.len() < 2 || self.shape(gamma) != [sx[1]] || self.shape(beta) != [sx[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: sx.to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        Ok((sx[1], numel(&sx[2..]), sx[0]))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
        batch_stats: bool,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (batch, c, inner) = (shape[0], shape[1], numel(&shape[2..]));
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::one() / (v + T::from_f64(eps)).sqrt())
            .collect();
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for n in 0..batch {
            for ch in 0..c {
                let start = (n * c + ch) * inner;
                for i in start..start + inner {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gd[ch] * h + bd[ch];
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let work = 3 * xd.len() as u64;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
            work,
        ))
    }

    fn spatial_dims(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(TensorError::Invalid {
                op,
                detail: format!("needs at least 2 spatial dims, got shape {s:?}"),
            });
        }
        let r = s.len();
        Ok((numel(&s[..r - 2]), s[r - 2], s[r - 1]))
    }

    /// 2x2 mean pooling over the last two axes (both must be even).
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (planes, h, w) = self.spatial_dims("avg_pool2", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::Invalid {
                op: "avg_pool2",
                detail: format!("spatial size {h}x{w} is not even"),
            });
        }
        let data = kernels::avg_pool2(self.value(x).data(), planes, h, w);
        let mut shape = self.shape(x).to_vec();
        let r = shape.len();
        shape[r - 2] /= 2;
        shape[r - 1] /= 2;
        let work = data.len() as u64 * 4;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, data)?, Op::AvgPool2(x), rg, work))
    }

    /// Nearest-neighbour 2x upsampling over the last two axes.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (planes, h, w) = self.spatial_dims("upsample2", x)?;
        let data = kernels::upsample2(self.value(x).data(), planes, h, w);
        let mut shape = self.shape(x).to_vec();
        let r = shape.len();
        shape[r - 2] *= 2;
        shape[r - 1] *= 2;
        let work = data.len() as u64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Upsample2(x), rg, work))
    }

    /// Sums over `axes`. With `keepdim` the reduced axes stay as size 1.
    pub fn sum_axes(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if let Some(&bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(TensorError::Invalid {
                op: "sum_axes",
                detail: format!("axis {bad} out of range for shape {shape:?}"),
            });
        }
        let keep_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let data = kernels::reduce_to(self.value(x).data(), &keep_shape, &shape);
        let out_shape: Vec<usize> = if keepdim {
            keep_shape.clone()
        } else {
            shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect()
        };
        let work = self.value(x).numel() as u64;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&out_shape, data)?,
            Op::SumAxes { x, keep_shape },
            rg,
            work,
        ))
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.sum_axes(x, &axes, false)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum(x)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        let shape = self.shape(x);
        let n: usize = axes.iter().map(|&a| shape.get(a).copied().unwrap_or(1)).product();
        let s = self.sum_axes(x, axes, keepdim)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Mean over the last two (spatial) axes, kept as size-1 axes.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(TensorError::Invalid {
                op: "spatial_mean",
                detail: format!("rank {r} input"),
            });
        }
        self.mean_axes(x, &[r - 2, r - 1], true)
    }

    /// Euclidean norm over `axes`. The gradient at a zero vector is taken as zero.
    pub fn l2_norm_axes(&mut self, x: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let keep_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let sq: Vec<T> = self.value(x).data().iter().map(|&v| v * v).collect();
        let data: Vec<T> = kernels::reduce_to(&sq, &keep_shape, &shape)
            .into_iter()
            .map(|v| v.sqrt())
            .collect();
        let out_shape: Vec<usize> = if keepdim {
            keep_shape.clone()
        } else {
            shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect()
        };
        let work = 2 * sq.len() as u64;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&out_shape, data)?,
            Op::L2Norm { x, keep_shape },
            rg,
            work,
        ))
    }

    /// Euclidean norm of all elements.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.l2_norm_axes(x, &axes, false)
    }

    /// `sum(a * b)` over `axes` (all axes when empty).
    pub fn dot(&mut self, a: Var, b: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        let p = self.mul(a, b)?;
        if axes.is_empty() {
            self.sum(p)
        } else {
            self.sum_axes(p, axes, keepdim)
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg, 0))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::Invalid {
                op: "narrow",
                detail: format!("[{start}, {}) on axis {axis} of shape {shape:?}", start + len),
            });
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner;
            data.extend_from_slice(&xd[base + start * inner..base + (start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let work = data.len() as u64;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&out_shape, data)?,
            Op::Narrow { x, axis, start },
            rg,
            work,
        ))
    }

    /// Joins tensors along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or(TensorError::Invalid {
                op: "concat",
                detail: "no inputs".into(),
            })?)
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::Invalid {
                op: "concat",
                detail: format!("axis {axis} out of range for shape {first:?}"),
            });
        }
        let mut total = 0;
        for &p in parts {
            let sp = self.shape(p);
            let agrees = sp.len() == first.len()
                && sp.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !agrees {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: sp.to_vec(),
                });
            }
            total += sp[axis];
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        let work = data.len() as u64;
        Ok(self.push(
            Tensor::new(&shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
            work,
        ))
    }

    /// Numerically stable log-softmax along `axis`.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Invalid {
                op: "log_softmax",
                detail: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let (outer, n, inner) = (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]));
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let mx = (0..n).map(|j| xd[at(j)]).fold(T::neg_infinity(), T::max);
                let lse = mx + (0..n).map(|j| (xd[at(j)] - mx).exp()).sum::<T>().ln();
                for j in 0..n {
                    out[at(j)] = xd[at(j)] - lse;
                }
            }
        }
        let work = 3 * out.len() as u64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::LogSoftmax { x, axis }, rg, work))
    }

    /// Reverse sweep from a single-element `loss`. May run once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let loss_shape = self.shape(loss).to_vec();
        if numel(&loss_shape) != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&loss_shape));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let (contributions, work) = self.node_backward(i, &g)?;
            self.stats.backward_ops += 1;
            self.stats.backward_work += work as u64;
            for (var, delta) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                self.stats.backward_work += delta.numel() as u64;
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn node_backward(&self, i: usize, g: &Tensor<T>) -> Result<(Vec<(Var, Tensor<T>)>, usize)> {
        let out_shape = self.nodes[i].value.shape().to_vec();
        let gd = g.data();
        let mut res = Vec::new();
        let mut work = 0usize;
        let n = gd.len();
        match &self.nodes[i].op {
            Op::Constant | Op::Leaf | Op::Param => {}
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let negate = matches!(self.nodes[i].op, Op::Sub(..));
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                let ga = kernels::reduce_to(gd, &sa, &out_shape);
                let mut gb = kernels::reduce_to(gd, &sb, &out_shape);
                if negate {
                    gb.iter_mut().for_each(|v| *v = -*v);
                }
                res.push((a, Tensor::new(&sa, ga)?));
                res.push((b, Tensor::new(&sb, gb)?));
                work = 2 * n;
            }
            &Op::Mul(a, b) | &Op::Div(a, b) => {
                let is_div = matches!(self.nodes[i].op, Op::Div(..));
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                let ma = kernels::broadcast_index_map(&sa, &out_shape);
                let mb = kernels::broadcast_index_map(&sb, &out_shape);
                let (da, db) = (self.value(a).data(), self.value(b).data());
                let mut ga_full = Vec::with_capacity(n);
                let mut gb_full = Vec::with_capacity(n);
                for k in 0..n {
                    let (x, y) = (da[ma[k]], db[mb[k]]);
                    if is_div {
                        ga_full.push(gd[k] / y);
                        gb_full.push(-gd[k] * x / (y * y));
                    } else {
                        ga_full.push(gd[k] * y);
                        gb_full.push(gd[k] * x);
                    }
                }
                let ga = kernels::reduce_to(&ga_full, &sa, &out_shape);
                let gb = kernels::reduce_to(&gb_full, &sb, &out_shape);
                res.push((a, Tensor::new(&sa, ga)?));
                res.push((b, Tensor::new(&sb, gb)?));
                work = 4 * n;
            }
            &Op::Neg(x) => {
                res.push((x, g.map(|v| -v)));
                work = n;
            }
            &Op::Scale(x, c) => {
                res.push((x, g.map(|v| v * c)));
                work = n;
            }
            &Op::AddScalar(x) => {
                res.push((x, g.clone()));
                work = n;
            }
            &Op::Relu(x) => {
                let xd = self.value(x).data();
                let d = gd
                    .iter()
                    .zip(xd)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                res.push((x, Tensor::new(&out_shape, d)?));
                work = n;
            }
            &Op::Sigmoid(x) => {
                let yd = self.nodes[i].value.data();
                let d = gd
                    .iter()
                    .zip(yd)
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                res.push((x, Tensor::new(&out_shape, d)?));
                work = n;
            }
            &Op::Softplus(x) => {
                let xd = self.value(x).data();
                let d = gd.iter().zip(xd).map(|(&gv, &xv)| gv * sigmoid(xv)).collect();
                res.push((x, Tensor::new(&out_shape, d)?));
                work = n;
            }
            &Op::Exp(x) => {
                let yd = self.nodes[i].value.data();
                let d = gd.iter().zip(yd).map(|(&gv, &y)| gv * y).collect();
                res.push((x, Tensor::new(&out_shape, d)?));
                work = n;
            }
            &Op::Log(x) => {
                let xd = self.value(x).data();
                let d = gd.iter().zip(xd).map(|(&gv, &xv)| gv / xv).collect();
                res.push((x, Tensor::new(&out_shape, d)?));
                work = n;
            }
            &Op::Sqrt(x) => {
                let yd = self.nodes[i].value.data();
                let two = T::from_f64(2.0);
                let d = gd.iter().zip(yd).map(|(&gv, &y)| gv / (two * y)).collect();
                res.push((x, Tensor::new(&out_shape, d)?));
                work = n;
            }
            &Op::Clamp(x, lo, hi) => {
                let xd = self.value(x).data();
                let d = gd
                    .iter()
                    .zip(xd)
                    .map(|(&gv, &xv)| if xv > lo && xv < hi { gv } else { T::zero() })
                    .collect();
                res.push((x, Tensor::new(&out_shape, d)?));
                work = n;
            }
            &Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                let (m, k, nn) = (sa[0], sa[1], sb[1]);
                let mut ga = vec![T::zero(); m * k];
                let mut gb = vec![T::zero(); k * nn];
                // dA = G * B^T
                T::gemm(
                    m,
                    nn,
                    k,
                    T::one(),
                    gd,
                    nn as isize,
                    1,
                    self.value(b).data(),
                    1,
                    nn as isize,
                    T::zero(),
                    &mut ga,
                    k as isize,
                    1,
                );
                // dB = A^T * G
                T::gemm(
                    k,
                    m,
                    nn,
                    T::one(),
                    self.value(a).data(),
                    1,
                    k as isize,
                    gd,
                    nn as isize,
                    1,
                    T::zero(),
                    &mut gb,
                    nn as isize,
                    1,
                );
                res.push((a, Tensor::new(&sa, ga)?));
                res.push((b, Tensor::new(&sb, gb)?));
                work = 2 * m * k * nn;
            }
            &Op::Conv2d { x, w, b } => {
                let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
                let (batch, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
                let (cout, k) = (sw[0], sw[2]);
                let hw = h * wd;
                let ckk = cin * k * k;
                let need_x = self.rg(x);
                let need_w = self.rg(w);
                let mut gx = vec![T::zero(); if need_x { batch * cin * hw } else { 0 }];
                let mut gw = vec![T::zero(); ckk * cout];
                let mut cols = if k == 1 { Vec::new() } else { vec![T::zero(); ckk * hw] };
                let mut gcols = if k == 1 || !need_x {
                    Vec::new()
                } else {
                    vec![T::zero(); ckk * hw]
                };
                let xd = self.value(x).data();
                let wdat = self.value(w).data();
                for nb in 0..batch {
                    let gout = &gd[nb * cout * hw..(nb + 1) * cout * hw];
                    let img = &xd[nb * cin * hw..(nb + 1) * cin * hw];
                    if need_w {
                        let cols_ref: &[T] = if k == 1 {
                            img
                        } else {
                            kernels::im2col(img, cin, h, wd, k, &mut cols);
                            &cols
                        };
                        // dW += G_n * cols^T
                        T::gemm(
                            cout,
                            hw,
                            ckk,
                            T::one(),
                            gout,
                            hw as isize,
                            1,
                            cols_ref,
                            1,
                            hw as isize,
                            T::one(),
                            &mut gw,
                            ckk as isize,
                            1,
                        );
                    }
                    if need_x {
                        let gx_n = &mut gx[nb * cin * hw..(nb + 1) * cin * hw];
                        // dcols = W^T * G_n
                        if k == 1 {
                            T::gemm(
                                ckk,
                                cout,
                                hw,
                                T::one(),
                                wdat,
                                1,
                                ckk as isize,
                                gout,
                                hw as isize,
                                1,
                                T::zero(),
                                gx_n,
                                hw as isize,
                                1,
                            );
                        } else {
                            T::gemm(
                                ckk,
                                cout,
                                hw,
                                T::one(),
                                wdat,
                                1,
                                ckk as isize,
                                gout,
                                hw as isize,
                                1,
                                T::zero(),
                                &mut gcols,
                                hw as isize,
                                1,
                            );
                            kernels::col2im(&gcols, cin, h, wd, k, gx_n);
                        }
                    }
                }
                if need_x {
                    res.push((x, Tensor::new(&sx, gx)?));
                }
                if need_w {
                    res.push((w, Tensor::new(&sw, gw)?));
                }
                if let Some(b) = b {
                    let mut gbias = vec![T::zero(); cout];
                    for nb in 0..batch {
                        for (c, acc) in gbias.iter_mut().enumerate() {
                            let start = (nb * cout + c) * hw;
                            *acc += gd[start..start + hw].iter().copied().sum::<T>();
                        }
                    }
                    res.push((b, Tensor::new(&[cout], gbias)?));
                }
                let per = batch * cout * ckk * hw;
                work = per * (need_x as usize + need_w as usize) + n;
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let sx = self.shape(x).to_vec();
                let (batch, c, inner) = (sx[0], sx[1], numel(&sx[2..]));
                let m = (batch * inner) as f64;
                let gam = self.value(gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for nb in 0..batch {
                    for ch in 0..c {
                        let start = (nb * c + ch) * inner;
                        for k in start..start + inner {
                            dbeta[ch] += gd[k];
                            dgamma[ch] += gd[k] * xhat[k];
                        }
                    }
                }
                let mut dx = vec![T::zero(); n];
                for nb in 0..batch {
                    for ch in 0..c {
                        let start = (nb * c + ch) * inner;
                        let scale = gam[ch] * inv_std[ch];
                        if *batch_stats {
                            let mean_g = dbeta[ch] / T::from_f64(m);
                            let mean_gx = dgamma[ch] / T::from_f64(m);
                            for k in start..start + inner {
                                dx[k] = scale * (gd[k] - mean_g - xhat[k] * mean_gx);
                            }
                        } else {
                            for k in start..start + inner {
                                dx[k] = scale * gd[k];
                            }
                        }
                    }
                }
                res.push((x, Tensor::new(&sx, dx)?));
                res.push((gamma, Tensor::new(&[c], dgamma)?));
                res.push((beta, Tensor::new(&[c], dbeta)?));
                work = 4 * n;
            }
            &Op::AvgPool2(x) => {
                let (planes, h, w) = self.spatial_dims("avg_pool2", x)?;
                let d = kernels::avg_pool2_backward(gd, planes, h, w);
                let sx = self.shape(x).to_vec();
                res.push((x, Tensor::new(&sx, d)?));
                work = 4 * n;
            }
            &Op::Upsample2(x) => {
                let (planes, h, w) = self.spatial_dims("upsample2", x)?;
                let d = kernels::upsample2_backward(gd, planes, h, w);
                let sx = self.shape(x).to_vec();
                res.push((x, Tensor::new(&sx, d)?));
                work = n;
            }
            Op::SumAxes { x, keep_shape } => {
                let x = *x;
                let sx = self.shape(x).to_vec();
                let map = kernels::broadcast_index_map(keep_shape, &sx);
                let d = map.iter().map(|&j| gd[j]).collect();
                res.push((x, Tensor::new(&sx, d)?));
                work = numel(&sx);
            }
            &Op::Reshape(x) => {
                let sx = self.shape(x).to_vec();
                res.push((x, g.clone().reshape(&sx)?));
                work = 0;
            }
            &Op::Narrow { x, axis, start } => {
                let sx = self.shape(x).to_vec();
                let len = out_shape[axis];
                let outer = numel(&sx[..axis]);
                let inner = numel(&sx[axis + 1..]);
                let mut d = vec![T::zero(); numel(&sx)];
                for o in 0..outer {
                    let base = o * sx[axis] * inner;
                    let src = &gd[o * len * inner..(o + 1) * len * inner];
                    d[base + start * inner..base + (start + len) * inner].copy_from_slice(src);
                }
                res.push((x, Tensor::new(&sx, d)?));
                work = n;
            }
            &Op::LogSoftmax { x, axis } => {
                let yd = self.nodes[i].value.data();
                let (outer, nn, inner) = (
                    numel(&out_shape[..axis]),
                    out_shape[axis],
                    numel(&out_shape[axis + 1..]),
                );
                let mut d = vec![T::zero(); n];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |j: usize| (o * nn + j) * inner + ii;
                        let gsum: T = (0..nn).map(|j| gd[at(j)]).sum();
                        for j in 0..nn {
                            d[at(j)] = gd[at(j)] - yd[at(j)].exp() * gsum;
                        }
                    }
                }
                res.push((x, Tensor::new(&out_shape, d)?));
                work = 3 * n;
            }
            Op::L2Norm { x, keep_shape } => {
                let x = *x;
                let sx = self.shape(x).to_vec();
                let map = kernels::broadcast_index_map(keep_shape, &sx);
                let yd = self.nodes[i].value.data();
                let xd = self.value(x).data();
                let d = map
                    .iter()
                    .zip(xd)
                    .map(|(&j, &xv)| {
                        if yd[j] > T::zero() {
                            gd[j] * xv / yd[j]
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                res.push((x, Tensor::new(&sx, d)?));
                work = 2 * numel(&sx);
            }
            Op::Concat { parts, axis } => {
                let axis = *axis;
                let outer = numel(&out_shape[..axis]);
                let inner = numel(&out_shape[axis + 1..]);
                let total = out_shape[axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let sp = self.shape(p).to_vec();
                    let len = sp[axis] * inner;
                    let mut d = Vec::with_capacity(outer * len);
                    for o in 0..outer {
                        let base = o * total + offset;
                        d.extend_from_slice(&gd[base..base + len]);
                    }
                    offset += len;
                    res.push((p, Tensor::new(&sp, d)?));
                }
                work = n;
            }
        }
        Ok((res, work))
    }
}

pub(crate) fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
