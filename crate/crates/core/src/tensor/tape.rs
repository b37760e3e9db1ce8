//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every value produced during one forward pass. Each
//! operation appends a node that remembers its inputs and whatever it needs
//! for the backward pass, so node order is always a topological order.

use super::fft;
use super::ops::{self, BnSaved, ConvGeom, Conv2dSpec, Mode, RunningStats};
use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::wavelet;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        dims: [usize; 4],
        saved: BnSaved<T>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Reshape(Var),
    Concat(Vec<Var>),
    Narrow {
        x: Var,
        start: usize,
    },
    Dwt(Var),
    Idwt(Var),
    Fft(Var),
    IfftReal(Var),
    Bce {
        z: Var,
        labels: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics observed by a train-mode batch norm, to be folded into
/// the layer's running statistics once the step is accepted.
#[derive(Debug, Clone)]
pub struct BnObservation<T> {
    pub key: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    observations: Vec<BnObservation<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Split `[N, C, rest...]` into `(N, C, prod(rest))`.
fn axis1(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = if shape.len() > 1 { shape[1] } else { 1 };
    let inner = shape.iter().skip(2).product();
    (n, c, inner)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            observations: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients are reported for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf without gradient tracking.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn observations(&self) -> &[BnObservation<T>] {
        &self.observations
    }

    pub fn take_observations(&mut self) -> Vec<BnObservation<T>> {
        std::mem::take(&mut self.observations)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), f)?;
        Ok(self.push(v, op, &[a, b]))
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

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = ops::relu(self.value(a));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = ops::sigmoid(self.value(a));
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let geom = ops::conv_geometry(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        let out = ops::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let v = Tensor::from_parts(vec![geom.n, geom.cout, geom.ho, geom.wo], out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(v, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// Batch norm. In train mode the batch statistics are recorded under
    /// `key` (see [`Tape::observations`]); `stats` is only read.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &RunningStats<T>,
        mode: Mode,
        key: &str,
    ) -> Result<Var> {
        let dims = self.value(x).dims4("batch_norm")?;
        let out = ops::batch_norm_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            mode,
        )?;
        if let Some((mean, var)) = out.batch_stats {
            self.observations.push(BnObservation {
                key: key.to_string(),
                mean,
                var,
            });
        }
        let v = Tensor::from_parts(self.value(x).shape().to_vec(), out.y);
        Ok(self.push(
            v,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                dims,
                saved: out.saved,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let out = ops::layer_norm_forward(self.value(x), self.value(gamma).data(), self.value(beta).data())?;
        let v = Tensor::from_parts(self.value(x).shape().to_vec(), out.y);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat: out.xhat,
                inv_std: out.inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        let (v, argmax) = ops::max_pool_forward(self.value(x))?;
        Ok(self.push(v, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let v = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(v, Op::GlobalAvgPool(x), &[x]))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let v = ops::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(v, Op::Linear { x, w, b }, &inputs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Concatenate along axis 1. All other axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat", "nothing to concatenate"))?;
        let base = self.value(*first).shape().to_vec();
        let (n, _, inner) = axis1(&base);
        let mut total_c = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != base.len() || s[0] != base[0] || s[2..] != base[2..] {
                return Err(Error::dim("concat", format!("{s:?} does not align with {base:?} off axis 1")));
            }
            total_c += s[1];
        }
        let mut data = Vec::with_capacity(n * total_c * inner);
        for b in 0..n {
            for p in parts {
                let (_, c, _) = axis1(self.value(*p).shape());
                data.extend_from_slice(&self.value(*p).data()[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = base;
        shape[1] = total_c;
        let v = Tensor::from_parts(shape, data);
        Ok(self.push(v, Op::Concat(parts.to_vec()), parts))
    }

    /// Channels `start..start+len` along axis 1.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (n, c, inner) = axis1(&shape);
        if len == 0 || start + len > c {
            return Err(Error::dim("narrow", format!("channels {start}..{} of {c}", start + len)));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * len * inner);
        for b in 0..n {
            data.extend_from_slice(&src[(b * c + start) * inner..(b * c + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[1] = len;
        let v = Tensor::from_parts(out_shape, data);
        Ok(self.push(v, Op::Narrow { x, start }, &[x]))
    }

    pub fn split(&mut self, x: Var, pieces: usize) -> Result<Vec<Var>> {
        let c = self.value(x).shape().get(1).copied().unwrap_or(1);
        if pieces == 0 || c % pieces != 0 {
            return Err(Error::contract("split", format!("{c} channels into {pieces} equal parts")));
        }
        let len = c / pieces;
        (0..pieces).map(|i| self.narrow(x, i * len, len)).collect()
    }

    /// Haar analysis: `N,C,H,W -> N,4C,H/2,W/2` with bands `ll, lh, hl, hh`.
    pub fn dwt2(&mut self, x: Var) -> Result<Var> {
        let v = wavelet::dwt_stacked(self.value(x))?;
        Ok(self.push(v, Op::Dwt(x), &[x]))
    }

    /// Haar synthesis, inverse of [`Tape::dwt2`].
    pub fn idwt2(&mut self, x: Var) -> Result<Var> {
        let v = wavelet::idwt_stacked(self.value(x))?;
        Ok(self.push(v, Op::Idwt(x), &[x]))
    }

    /// `N,C,H,W -> N,2C,H,W` spectrum with real parts first.
    pub fn fft2d(&mut self, x: Var) -> Result<Var> {
        let v = fft::fft_stacked(self.value(x))?;
        Ok(self.push(v, Op::Fft(x), &[x]))
    }

    /// Real part of the normalized inverse of a stacked spectrum.
    pub fn ifft2d_real(&mut self, x: Var) -> Result<Var> {
        let v = fft::ifft_stacked_real(self.value(x))?;
        Ok(self.push(v, Op::IfftReal(x), &[x]))
    }

    /// Mean binary cross-entropy on logits, one logit per sample.
    pub fn bce_with_logits(&mut self, z: Var, labels: &[T]) -> Result<Var> {
        let zt = self.value(z);
        if zt.len() != labels.len() {
            return Err(Error::dim(
                "bce_with_logits",
                format!("{} logits vs {} labels", zt.len(), labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != T::zero() && y != T::one()) {
            return Err(Error::contract("bce_with_logits", format!("label {bad} not in {{0,1}}")));
        }
        zt.ensure_finite("bce_with_logits")?;
        let n = T::of(labels.len() as f64);
        let loss = zt
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<T>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                z,
                labels: labels.to_vec(),
            },
            &[z],
        ))
    }

    /// Propagate gradients from a scalar `loss` back to every node that
    /// requires them. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, dx) in self.local_grads(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(dx.data()).for_each(|(a, &d)| *a = *a + d),
                    slot @ None => *slot = Some(dx),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let like = |v: Var, data: Vec<T>| Tensor::from_parts(self.value(v).shape().to_vec(), data);
        let gd = g.data();
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-T::one()))],
            Op::Mul(a, b) => vec![
                (*a, g.mul(self.value(*b))?),
                (*b, g.mul(self.value(*a))?),
            ],
            Op::Scale(a, k) => vec![(*a, g.scale(*k))],
            Op::Sum(a) => vec![(*a, Tensor::full(self.value(*a).shape(), gd[0]))],
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(&g, &x)| if x > T::zero() { g } else { T::zero() }).collect();
                vec![(*a, like(*a, d))]
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect();
                vec![(*a, like(*a, d))]
            }
            Op::Conv2d { x, w, b, geom } => {
                let need_dx = self.nodes[x.0].requires_grad;
                let (dx, dw, db) =
                    ops::conv2d_backward(self.value(*x).data(), self.value(*w).data(), gd, geom, need_dx);
                let mut out = vec![(*w, like(*w, dw))];
                if let Some(dx) = dx {
                    out.push((*x, like(*x, dx)));
                }
                if let Some(b) = b {
                    out.push((*b, like(*b, db)));
                }
                out
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                dims,
                saved,
            } => {
                let (dx, dg, db) = ops::batch_norm_backward(*dims, self.value(*gamma).data(), saved, gd);
                vec![(*x, like(*x, dx)), (*gamma, like(*gamma, dg)), (*beta, like(*beta, db))]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (dx, dg, db) =
                    ops::layer_norm_backward(self.value(*x).shape(), self.value(*gamma).data(), xhat, inv_std, gd);
                vec![(*x, like(*x, dx)), (*gamma, like(*gamma, dg)), (*beta, like(*beta, db))]
            }
            Op::MaxPool { x, argmax } => {
                let mut d = vec![T::zero(); self.value(*x).len()];
                for (&src, &gv) in argmax.iter().zip(gd) {
                    d[src] = d[src] + gv;
                }
                vec![(*x, like(*x, d))]
            }
            Op::GlobalAvgPool(x) => {
                let [_, _, h, w] = self.value(*x).dims4("global_avg_pool")?;
                let k = T::one() / T::of((h * w) as f64);
                let d = gd.iter().flat_map(|&gv| std::iter::repeat_n(gv * k, h * w)).collect();
                vec![(*x, like(*x, d))]
            }
            Op::Linear { x, w, b } => {
                let (n, f, o) = ops::linear_dims(self.value(*x), self.value(*w), None)?;
                let mut dx = vec![T::zero(); n * f];
                T::gemm(n, o, f, gd, false, self.value(*w).data(), false, &mut dx, false);
                let mut dw = vec![T::zero(); o * f];
                T::gemm(o, n, f, gd, true, self.value(*x).data(), false, &mut dw, false);
                let mut out = vec![(*x, like(*x, dx)), (*w, like(*w, dw))];
                if let Some(b) = b {
                    let mut db = vec![T::zero(); o];
                    for row in gd.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(a, &r)| *a = *a + r);
                    }
                    out.push((*b, like(*b, db)));
                }
                out
            }
            Op::Reshape(x) => vec![(*x, like(*x, gd.to_vec()))],
            Op::Concat(parts) => {
                let (n, total_c, inner) = axis1(g.shape());
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for p in parts {
                    let (_, c, _) = axis1(self.value(*p).shape());
                    let mut d = Vec::with_capacity(n * c * inner);
                    for b in 0..n {
                        let s = (b * total_c + offset) * inner;
                        d.extend_from_slice(&gd[s..s + c * inner]);
                    }
                    out.push((*p, like(*p, d)));
                    offset += c;
                }
                out
            }
            Op::Narrow { x, start } => {
                let (n, c, inner) = axis1(self.value(*x).shape());
                let (_, len, _) = axis1(g.shape());
                let mut d = vec![T::zero(); n * c * inner];
                for b in 0..n {
                    let dst = (b * c + start) * inner;
                    d[dst..dst + len * inner].copy_from_slice(&gd[b * len * inner..(b + 1) * len * inner]);
                }
                vec![(*x, like(*x, d))]
            }
            // Orthonormal Haar: the adjoint of analysis is synthesis.
            Op::Dwt(x) => vec![(*x, wavelet::idwt_stacked(g)?)],
            Op::Idwt(x) => vec![(*x, wavelet::dwt_stacked(g)?)],
            Op::Fft(x) => {
                let dims = self.value(*x).dims4("fft2d")?;
                let d = fft::fft_stacked_backward(gd, dims);
                vec![(*x, like(*x, d))]
            }
            Op::IfftReal(x) => {
                let dims = node.value.dims4("ifft2d")?;
                let d = fft::ifft_stacked_real_backward(gd, dims);
                vec![(*x, like(*x, d))]
            }
            Op::Bce { z, labels } => {
                let n = T::of(labels.len() as f64);
                let d = self
                    .value(*z)
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&zv, &y)| gd[0] * (ops::sigmoid_scalar(zv) - y) / n)
                    .collect();
                vec![(*z, like(*z, d))]
            }
        })
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
