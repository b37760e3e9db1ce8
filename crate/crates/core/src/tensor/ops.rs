//! Forward and backward kernels on `N,C,H,W` tensors.
//!
//! These are plain functions of their inputs. The tape in [`super::tape`]
//! records which kernel produced a value and calls the matching backward.

use rayon::prelude::*;

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Conv2dSpec {
            stride,
            pad_h: padding,
            pad_w: padding,
            groups,
        }
    }

    /// Stride 1, zero-padding that preserves spatial size for a `kh×kw` kernel.
    pub fn same(kh: usize, kw: usize) -> Self {
        Conv2dSpec {
            stride: 1,
            pad_h: kh / 2,
            pad_w: kw / 2,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub spec: Conv2dSpec,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.cin / self.spec.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.spec.groups
    }
    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.spec.stride == 1
            && self.spec.pad_h == 0
            && self.spec.pad_w == 0
    }
}

pub(crate) fn conv_geometry<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Result<ConvGeom> {
    const OP: &str = "conv2d";
    let [n, cin, h, w] = input.dims4(OP)?;
    let &[cout, cin_g, kh, kw] = weight.shape() else {
        return Err(Error::dim(OP, format!("weight must be rank 4, got {:?}", weight.shape())));
    };
    let g = spec.groups;
    if g == 0 || spec.stride == 0 {
        return Err(Error::contract(OP, "groups and stride must be positive"));
    }
    if cin % g != 0 || cout % g != 0 {
        return Err(Error::dim(
            OP,
            format!("channels in={cin} out={cout} not divisible by groups={g}"),
        ));
    }
    if cin / g != cin_g {
        return Err(Error::dim(
            OP,
            format!("axis 1: weight expects {cin_g} channels per group, input gives {}", cin / g),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::contract(OP, format!("kernel {kh}x{kw} must have odd sides")));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::dim(OP, format!("bias {:?} vs {cout} outputs", b.shape())));
        }
    }
    let (hp, wp) = (h + 2 * spec.pad_h, w + 2 * spec.pad_w);
    if hp < kh || wp < kw {
        return Err(Error::dim(OP, format!("kernel {kh}x{kw} larger than padded input {hp}x{wp}")));
    }
    Ok(ConvGeom {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        ho: (hp - kh) / spec.stride + 1,
        wo: (wp - kw) / spec.stride + 1,
        spec,
    })
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let (ho, wo) = (g.ho, g.wo);
    let s = g.spec.stride;
    for c in 0..g.cin_g() {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - g.spec.pad_h as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - g.spec.pad_w as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (ho, wo) = (g.ho, g.wo);
    let s = g.spec.stride;
    for c in 0..g.cin_g() {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - g.spec.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * s + kx) as isize - g.spec.pad_w as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] = dst[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2D cross-correlation with zero padding, stride and channel groups.
///
/// `input` is `C,H,W` or `N,C,H,W`; `weight` is `C_out, C_in/groups, kh, kw`.
/// A rank-3 input yields a rank-3 output.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weight, bias, spec)?;
    let out = conv2d_forward(input.data(), weight.data(), bias.map(|b| b.data()), &g);
    let shape = if input.rank() == 3 {
        vec![g.cout, g.ho, g.wo]
    } else {
        vec![g.n, g.cout, g.ho, g.wo]
    };
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
) -> Vec<T> {
    let in_sz = g.cin * g.h * g.w;
    let out_plane = g.ho * g.wo;
    let out_sz = g.cout * out_plane;
    let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.k());
    let mut out = vec![T::zero(); g.n * out_sz];
    out.par_chunks_mut(out_sz)
        .zip(x.par_chunks(in_sz))
        .for_each(|(o, xs)| {
            let mut col = if g.is_pointwise() {
                Vec::new()
            } else {
                vec![T::zero(); k * out_plane]
            };
            for grp in 0..g.spec.groups {
                let xg = &xs[grp * cin_g * g.h * g.w..(grp + 1) * cin_g * g.h * g.w];
                let wg = &w[grp * cout_g * k..(grp + 1) * cout_g * k];
                let og = &mut o[grp * cout_g * out_plane..(grp + 1) * cout_g * out_plane];
                let cols: &[T] = if g.is_pointwise() {
                    xg
                } else {
                    im2col(xg, g, &mut col);
                    &col
                };
                T::gemm(cout_g, k, out_plane, wg, false, cols, false, og, false);
            }
            if let Some(b) = bias {
                for (co, plane) in o.chunks_mut(out_plane).enumerate() {
                    plane.iter_mut().for_each(|v| *v = *v + b[co]);
                }
            }
        });
    out
}

/// Returns `(d_input, d_weight, d_bias)`.
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let in_sz = g.cin * g.h * g.w;
    let out_plane = g.ho * g.wo;
    let out_sz = g.cout * out_plane;
    let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.k());
    let mut dx = vec![T::zero(); if need_dx { g.n * in_sz } else { 0 }];

    let per_sample: Vec<Vec<T>> = if need_dx {
        dx.par_chunks_mut(in_sz)
            .zip(x.par_chunks(in_sz))
            .zip(dy.par_chunks(out_sz))
            .map(|((dxs, xs), dys)| conv_sample_backward(xs, w, dys, Some(dxs), g, cin_g, cout_g, k))
            .collect()
    } else {
        x.par_chunks(in_sz)
            .zip(dy.par_chunks(out_sz))
            .map(|(xs, dys)| conv_sample_backward(xs, w, dys, None, g, cin_g, cout_g, k))
            .collect()
    };
    let mut dw = vec![T::zero(); w.len()];
    for part in &per_sample {
        dw.iter_mut().zip(part).for_each(|(a, &b)| *a = *a + b);
    }
    let mut db = vec![T::zero(); g.cout];
    for dys in dy.chunks(out_sz) {
        for (co, plane) in dys.chunks(out_plane).enumerate() {
            db[co] = db[co] + plane.iter().copied().sum::<T>();
        }
    }
    (need_dx.then_some(dx), dw, db)
}

#[allow(clippy::too_many_arguments)]
fn conv_sample_backward<T: Real>(
    xs: &[T],
    w: &[T],
    dys: &[T],
    mut dxs: Option<&mut [T]>,
    g: &ConvGeom,
    cin_g: usize,
    cout_g: usize,
    k: usize,
) -> Vec<T> {
    let out_plane = g.ho * g.wo;
    let mut dw = vec![T::zero(); w.len()];
    let mut col = vec![T::zero(); if g.is_pointwise() { 0 } else { k * out_plane }];
    let mut dcol = vec![T::zero(); k * out_plane];
    let plane_in = g.h * g.w;
    for grp in 0..g.spec.groups {
        let xg = &xs[grp * cin_g * plane_in..(grp + 1) * cin_g * plane_in];
        let wg = &w[grp * cout_g * k..(grp + 1) * cout_g * k];
        let dyg = &dys[grp * cout_g * out_plane..(grp + 1) * cout_g * out_plane];
        let cols: &[T] = if g.is_pointwise() {
            xg
        } else {
            im2col(xg, g, &mut col);
            &col
        };
        // dW_g = dY_g · colᵀ
        T::gemm(
            cout_g,
            out_plane,
            k,
            dyg,
            false,
            cols,
            true,
            &mut dw[grp * cout_g * k..(grp + 1) * cout_g * k],
            false,
        );
        if let Some(dxs) = dxs.as_deref_mut() {
            let dxg = &mut dxs[grp * cin_g * plane_in..(grp + 1) * cin_g * plane_in];
            if g.is_pointwise() {
                T::gemm(k, cout_g, out_plane, wg, true, dyg, false, dxg, false);
            } else {
                T::gemm(k, cout_g, out_plane, wg, true, dyg, false, &mut dcol, false);
                col2im(&dcol, g, dxg);
            }
        }
    }
    dw
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn identity(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
        }
    }
}

/// Saved state needed for batch-norm backward.
#[derive(Debug, Clone)]
pub(crate) struct BnSaved<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

pub(crate) struct BnOut<T> {
    pub y: Vec<T>,
    pub saved: BnSaved<T>,
    /// Batch mean and unbiased variance, train mode only.
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

pub(crate) fn batch_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    stats: &RunningStats<T>,
    mode: Mode,
) -> Result<BnOut<T>> {
    const OP: &str = "batch_norm";
    let [n, c, h, w] = x.dims4(OP)?;
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::dim(OP, format!("axis 1 has {c} channels; affine/stat lengths differ")));
    }
    let plane = h * w;
    let m = n * plane;
    let eps = T::of(BN_EPS);
    let xd = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    let mut unbiased = vec![T::zero(); c];
    match mode {
        Mode::Train => {
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s = s + xd[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().copied().sum();
                }
                let mu = s / T::of(m as f64);
                let mut v = T::zero();
                for b in 0..n {
                    for &val in &xd[(b * c + ch) * plane..(b * c + ch + 1) * plane] {
                        v = v + (val - mu) * (val - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = v / T::of(m as f64);
                unbiased[ch] = if m > 1 { v / T::of((m - 1) as f64) } else { T::zero() };
            }
        }
        Mode::Eval => {
            mean.copy_from_slice(stats.mean.data());
            var.copy_from_slice(stats.var.data());
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut y = vec![T::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
            for i in r {
                let xh = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                y[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok(BnOut {
        y,
        saved: BnSaved {
            xhat,
            inv_std,
            mode,
        },
        batch_stats: (mode == Mode::Train).then_some((mean, unbiased)),
    })
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batch_norm_backward<T: Real>(
    dims: [usize; 4],
    gamma: &[T],
    saved: &BnSaved<T>,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let m = T::of((n * plane) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                dgamma[ch] = dgamma[ch] + dy[i] * saved.xhat[i];
                dbeta[ch] = dbeta[ch] + dy[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for b in 0..n {
        for ch in 0..c {
            let k = gamma[ch] * saved.inv_std[ch];
            for i in (b * c + ch) * plane..(b * c + ch + 1) * plane {
                dx[i] = match saved.mode {
                    Mode::Train => {
                        k * (dy[i] - dbeta[ch] / m - saved.xhat[i] * dgamma[ch] / m)
                    }
                    Mode::Eval => k * dy[i],
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Batch normalization over `N,H,W` per channel.
///
/// In train mode the batch statistics normalize the input and are folded
/// into `stats` with momentum 0.9 (`running = 0.9·running + 0.1·batch`).
pub fn batch_norm<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    let out = batch_norm_forward(input, gamma.data(), beta.data(), stats, mode)?;
    if let Some((mean, var)) = &out.batch_stats {
        update_running(stats, mean, var);
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out.y))
}

pub(crate) fn update_running<T: Real>(stats: &mut RunningStats<T>, mean: &[T], var: &[T]) {
    let mom = T::of(BN_MOMENTUM);
    let rest = T::one() - mom;
    for (r, &b) in stats.mean.data_mut().iter_mut().zip(mean) {
        *r = mom * *r + rest * b;
    }
    for (r, &b) in stats.var.data_mut().iter_mut().zip(var) {
        *r = mom * *r + rest * b;
    }
}

/// Normalize over axis 1 of a `[N, C, ...]` tensor, independently at each
/// remaining position.
pub(crate) struct LnOut<T> {
    pub y: Vec<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
) -> Result<LnOut<T>> {
    const OP: &str = "layer_norm";
    if x.rank() < 2 {
        return Err(Error::dim(OP, format!("need rank >= 2, got {:?}", x.shape())));
    }
    let n = x.shape()[0];
    let c = x.shape()[1];
    let inner: usize = x.shape()[2..].iter().product();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::dim(OP, format!("axis 1 has {c} features; affine lengths differ")));
    }
    let eps = T::of(LN_EPS);
    let cf = T::of(c as f64);
    let xd = x.data();
    let mut y = vec![T::zero(); xd.len()];
    let mut xhat = vec![T::zero(); xd.len()];
    let mut inv_std = vec![T::zero(); n * inner];
    for b in 0..n {
        for s in 0..inner {
            let idx = |ch: usize| (b * c + ch) * inner + s;
            let mu = (0..c).map(|ch| xd[idx(ch)]).sum::<T>() / cf;
            let var = (0..c).map(|ch| (xd[idx(ch)] - mu).powi(2)).sum::<T>() / cf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[b * inner + s] = is;
            for ch in 0..c {
                let xh = (xd[idx(ch)] - mu) * is;
                xhat[idx(ch)] = xh;
                y[idx(ch)] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok(LnOut { y, xhat, inv_std })
}

pub(crate) fn layer_norm_backward<T: Real>(
    shape: &[usize],
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = shape[0];
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    let cf = T::of(c as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for s in 0..inner {
            let idx = |ch: usize| (b * c + ch) * inner + s;
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for ch in 0..c {
                let i = idx(ch);
                let gh = dy[i] * gamma[ch];
                sum_g = sum_g + gh;
                sum_gx = sum_gx + gh * xhat[i];
                dgamma[ch] = dgamma[ch] + dy[i] * xhat[i];
                dbeta[ch] = dbeta[ch] + dy[i];
            }
            let is = inv_std[b * inner + s];
            for ch in 0..c {
                let i = idx(ch);
                let gh = dy[i] * gamma[ch];
                dx[i] = is * (gh - sum_g / cf - xhat[i] * sum_gx / cf);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Layer normalization over the feature axis (axis 1) with affine `gamma`/`beta`.
pub fn layer_norm<T: Real>(input: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
    let out = layer_norm_forward(input, gamma.data(), beta.data())?;
    Ok(Tensor::from_parts(input.shape().to_vec(), out.y))
}

/// 2×2, stride-2 max pooling. Returns values and the flat input index of
/// each selected maximum (first in row-major scan on ties).
pub(crate) fn max_pool_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    const OP: &str = "max_pool2d";
    let [n, c, h, w] = x.dims4(OP)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(OP, format!("spatial size {h}x{w} must be even")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    let shape = if x.rank() == 3 {
        vec![c, ho, wo]
    } else {
        vec![n, c, ho, wo]
    };
    Ok((Tensor::from_parts(shape, out), arg))
}

pub fn max_pool2d<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(max_pool_forward(input)?.0)
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub fn sigmoid_scalar<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

/// Mean over `H,W`: `N,C,H,W -> N,C`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("global_avg_pool")?;
    let k = T::of((h * w) as f64);
    let data = input
        .data()
        .chunks(h * w)
        .map(|p| p.iter().copied().sum::<T>() / k)
        .collect();
    Ok(Tensor::from_parts(vec![n, c], data))
}

/// `x · Wᵀ + b` for `x: N×F`, `W: O×F`, `b: O`.
pub fn linear<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, f, o) = linear_dims(input, weight, bias)?;
    let mut y = vec![T::zero(); n * o];
    T::gemm(n, f, o, input.data(), false, weight.data(), true, &mut y, false);
    if let Some(b) = bias {
        for row in y.chunks_mut(o) {
            row.iter_mut().zip(b.data()).for_each(|(v, &bb)| *v = *v + bb);
        }
    }
    Ok(Tensor::from_parts(vec![n, o], y))
}

pub(crate) fn linear_dims<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<(usize, usize, usize)> {
    const OP: &str = "linear";
    let &[n, f] = input.shape() else {
        return Err(Error::dim(OP, format!("input must be N,F, got {:?}", input.shape())));
    };
    let &[o, fw] = weight.shape() else {
        return Err(Error::dim(OP, format!("weight must be O,F, got {:?}", weight.shape())));
    };
    if f != fw {
        return Err(Error::dim(OP, format!("axis 1: input has {f} features, weight expects {fw}")));
    }
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::dim(OP, format!("bias {:?} vs {o} outputs", b.shape())));
        }
    }
    Ok((n, f, o))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    /// Direct sum-of-products convolution, independent of im2col/GEMM.
    pub(crate) fn naive_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: Option<&Tensor<f64>>,
        spec: Conv2dSpec,
    ) -> Tensor<f64> {
        let [n, cin, h, wd] = x.dims4("t").unwrap();
        let [cout, cin_g, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        let ho = (h + 2 * spec.pad_h - kh) / spec.stride + 1;
        let wo = (wd + 2 * spec.pad_w - kw) / spec.stride + 1;
        let cout_g = cout / spec.groups;
        let mut out = vec![0.0; n * cout * ho * wo];
        for b_ in 0..n {
            for co in 0..cout {
                let grp = co / cout_g;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = b.map_or(0.0, |b| b.data()[co]);
                        for ci in 0..cin_g {
                            let c_in = grp * cin_g + ci;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * spec.stride + ky) as isize - spec.pad_h as isize;
                                    let ix = (ox * spec.stride + kx) as isize - spec.pad_w as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.data()[((b_ * cin + c_in) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((co * cin_g + ci) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                        out[((b_ * cout + co) * ho + oy) * wo + ox] = s;
                    }
                }
            }
        }
        Tensor::from_parts(vec![n, cout, ho, wo], out)
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::<f64>::from_f64(&[1, 4, 4], &(0..16).map(f64::from).collect::<Vec<_>>()).unwrap();
        let w = t(&[1, 1, 1, 1], &[1.0]);
        let y = conv2d(&x, &w, None, Conv2dSpec::new(1, 0, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_box_filter_on_ones() {
        let x = Tensor::<f64>::full(&[1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
        let y = conv2d(&x, &w, None, Conv2dSpec::new(1, 0, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert!((y.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn depthwise_channels_are_separate() {
        let mut rng = rand::rng();
        let x = Tensor::<f64>::uniform(&[2, 4, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(&[2, 1, 3, 3], -1.0, 1.0, &mut rng);
        let spec = Conv2dSpec::new(1, 1, 2);
        let y = conv2d(&x, &w, None, spec).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4]);
        let mut x2 = x.clone();
        x2.data_mut()[16..].fill(0.0);
        let y2 = conv2d(&x2, &w, None, spec).unwrap();
        assert_eq!(&y.data()[..16], &y2.data()[..16]);
    }

    #[test]
    fn conv_matches_naive_across_specs() {
        let mut rng = rand::rng();
        for (cin, cout, k, stride, pad_h, pad_w, groups) in [
            (3, 4, 3, 1, 1, 1, 1),
            (4, 4, 3, 2, 1, 1, 4),
            (4, 6, 1, 2, 0, 0, 2),
            (2, 2, 1, 1, 0, 0, 1),
        ] {
            let x = Tensor::<f64>::uniform(&[2, cin, 7, 6], -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(&[cout, cin / groups, k, k], -1.0, 1.0, &mut rng);
            let b = Tensor::uniform(&[cout], -1.0, 1.0, &mut rng);
            let spec = Conv2dSpec { stride, pad_h, pad_w, groups };
            let got = conv2d(&x, &w, Some(&b), spec).unwrap();
            let want = naive_conv(&x, &w, Some(&b), spec);
            assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
        }
        // asymmetric kernels with per-axis padding
        let x = Tensor::<f64>::uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
        for (kh, kw) in [(1, 3), (3, 1)] {
            let w = Tensor::uniform(&[2, 2, kh, kw], -1.0, 1.0, &mut rng);
            let spec = Conv2dSpec::same(kh, kw);
            let got = conv2d(&x, &w, None, spec).unwrap();
            assert_eq!(got.shape(), &[1, 2, 5, 5]);
            assert!(got.max_abs_diff(&naive_conv(&x, &w, None, spec)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = Tensor::<f64>::zeros(&[3, 4, 4]);
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, None, Conv2dSpec::new(1, 1, 1)),
            Err(Error::Dimension { .. })
        ));
        let w_even = Tensor::zeros(&[2, 3, 2, 2]);
        assert!(conv2d(&x, &w_even, None, Conv2dSpec::new(1, 1, 1)).is_err());
    }

    #[test]
    fn batch_norm_constant_channel_is_zero() {
        let x = Tensor::<f64>::full(&[1, 1, 2, 2], 3.0);
        let mut st = RunningStats::identity(1);
        let y = batch_norm(&x, &t(&[1], &[1.0]), &t(&[1], &[0.0]), &mut st, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_norm_unit_pair() {
        let x = t(&[1, 1, 1, 2], &[-1.0, 1.0]);
        let mut st = RunningStats::identity(1);
        let y = batch_norm(&x, &t(&[1], &[1.0]), &t(&[1], &[0.0]), &mut st, Mode::Train).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-4 && (y.data()[1] - 1.0).abs() < 1e-4);
        // running mean stays 0; running var moves toward the unbiased 2.0
        assert_eq!(st.mean.data()[0], 0.0);
        assert!((st.var.data()[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_eval_identity_stats() {
        let x = t(&[1, 2, 1, 2], &[0.3, -2.0, 5.0, 1.5]);
        let mut st = RunningStats::identity(2);
        let gamma = t(&[2], &[2.0, 1.0]);
        let beta = t(&[2], &[0.5, 0.0]);
        let y = batch_norm(&x, &gamma, &beta, &mut st, Mode::Eval).unwrap();
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        let want = [0.3 * s * 2.0 + 0.5, -2.0 * s * 2.0 + 0.5, 5.0 * s, 1.5 * s];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn small_activation_examples() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        let p = max_pool2d(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(p.data(), &[4.0]);
        assert!(max_pool2d(&Tensor::<f64>::zeros(&[1, 1, 3, 2])).is_err());
        let ln = layer_norm(&t(&[1, 2], &[2.0, 4.0]), &t(&[2], &[1.0, 1.0]), &t(&[2], &[0.0, 0.0])).unwrap();
        assert!((ln.data()[0] + 1.0).abs() < 1e-4 && (ln.data()[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn max_pool_ties_pick_first() {
        let (_, arg) = max_pool_forward(&Tensor::<f64>::full(&[1, 1, 2, 2], 7.0)).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn linear_matches_hand() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 1.0, 1.0]);
        let b = t(&[2], &[0.5, -1.0]);
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[1.5, 2.0]);
    }
}
