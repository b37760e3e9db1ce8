//! The detector graph, built on a [`Tape`] so one definition serves
//! inference, training and gradient checks.

use std::collections::BTreeMap;

use super::params::{ModelParams, STEM_BASE, STEM_LARGE, STEM_SMALL};
use crate::error::{Error, Result};
use crate::tensor::{Conv2dSpec, Mode, Real, Tape, Tensor, Var};
use crate::wavelet::wtconv_tape;

/// Network inputs at each active scale, `N,1,s,s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleInputs<T> {
    pub large: Option<Tensor<T>>,
    pub base: Tensor<T>,
    pub small: Option<Tensor<T>>,
}

impl<T: Real> ScaleInputs<T> {
    pub fn batch(&self) -> usize {
        self.base.shape()[0]
    }
}

/// Central-difference convolution on the tape:
/// `conv(x, w) − x ⊛ Σw`, the second term a 1×1 conv with the per-filter
/// kernel sum. Padding 1, stride 1.
pub fn cdc_tape<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let ws = tape.value(w).shape().to_vec();
    if ws.len() != 4 || ws[2] != 3 || ws[3] != 3 {
        return Err(Error::contract("cdc_conv", format!("kernel must be O,I,3,3, got {ws:?}")));
    }
    let full = tape.conv2d(x, w, b, Conv2dSpec::same(3, 3))?;
    let mean = tape.global_avg_pool(w)?;
    let sum = tape.scale(mean, T::of(9.0));
    let center = tape.reshape(sum, &[ws[0], ws[1], 1, 1])?;
    let c = tape.conv2d(x, center, None, Conv2dSpec::same(1, 1))?;
    tape.sub(full, c)
}

/// Binds named parameters to tape leaves on first use and assembles the
/// blocks of the network.
pub struct Graph<'p, T: Real> {
    pub tape: Tape<T>,
    params: &'p ModelParams<T>,
    vars: BTreeMap<String, Var>,
    mode: Mode,
    trainable: bool,
}

impl<'p, T: Real> Graph<'p, T> {
    /// `trainable` registers parameters as gradient-tracking leaves.
    pub fn new(params: &'p ModelParams<T>, mode: Mode, trainable: bool) -> Self {
        Graph {
            tape: Tape::new(),
            params,
            vars: BTreeMap::new(),
            mode,
            trainable,
        }
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.tape.constant(t)
    }

    pub fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = self.params.get(name)?.clone();
        let v = if self.trainable {
            self.tape.param(t)
        } else {
            self.tape.constant(t)
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn has(&self, name: &str) -> bool {
        self.params.params.contains_key(name)
    }

    fn bias(&mut self, layer: &str) -> Result<Option<Var>> {
        let name = format!("{layer}.bias");
        if self.has(&name) {
            Ok(Some(self.p(&name)?))
        } else {
            Ok(None)
        }
    }

    fn conv(&mut self, x: Var, layer: &str, spec: Conv2dSpec) -> Result<Var> {
        let w = self.p(&format!("{layer}.weight"))?;
        let b = self.bias(layer)?;
        self.tape.conv2d(x, w, b, spec)
    }

    fn bn(&mut self, x: Var, layer: &str) -> Result<Var> {
        let g = self.p(&format!("{layer}.gamma"))?;
        let b = self.p(&format!("{layer}.beta"))?;
        let stats = self.params.stats(layer)?;
        self.tape.batch_norm(x, g, b, stats, self.mode, layer)
    }

    fn cdc(&mut self, x: Var, layer: &str) -> Result<Var> {
        let w = self.p(&format!("{layer}.weight"))?;
        let b = self.bias(layer)?;
        cdc_tape(&mut self.tape, x, w, b)
    }

    /// Depthwise 3×3 then pointwise 1×1.
    fn dsconv(&mut self, x: Var, layer: &str) -> Result<Var> {
        let c = self.tape.value(x).shape()[1];
        let d = self.conv(x, &format!("{layer}.dw"), Conv2dSpec::same(3, 3).with_groups(c))?;
        self.conv(d, &format!("{layer}.pw"), Conv2dSpec::same(1, 1))
    }

    /// Wavelet-enhanced stem: `N,C,H,W -> N,W,H/2,W/2`.
    pub fn stem(&mut self, x: Var, p: &str) -> Result<Var> {
        let cfg = self.params.config;
        let [_, c, h, w] = self.tape.value(x).dims4("stem")?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::dim("stem", format!("spatial size {h}x{w} must be divisible by 4")));
        }
        let enhanced = if cfg.wavelet_branch {
            let s = self.tape.dwt2(x)?;
            let ll = self.tape.narrow(s, 0, c)?;
            let lh = self.tape.narrow(s, c, c)?;
            let hl = self.tape.narrow(s, 2 * c, c)?;
            let hh = self.tape.narrow(s, 3 * c, c)?;
            let hh1 = self.dsconv(hh, &format!("{p}.ds_hh"))?;
            let hl1 = self.dsconv(hl, &format!("{p}.ds_hl"))?;
            let lh1 = self.dsconv(lh, &format!("{p}.ds_lh"))?;
            let base = self.p(&format!("{p}.wt.base"))?;
            let bands = (0..cfg.wtconv_levels)
                .map(|l| self.p(&format!("{p}.wt.band{l}")))
                .collect::<Result<Vec<_>>>()?;
            let ll1 = wtconv_tape(&mut self.tape, ll, base, &bands)?;
            let dxy = self.conv(ll1, &format!("{p}.dir_xy"), Conv2dSpec::same(3, 3))?;
            let dx = self.conv(ll1, &format!("{p}.dir_x"), Conv2dSpec::same(1, 3))?;
            let dy = self.conv(ll1, &format!("{p}.dir_y"), Conv2dSpec::same(3, 1))?;
            let cat = self.tape.concat(&[hh1, dxy, hl1, dx, lh1, dy])?;
            let f = self.conv(cat, &format!("{p}.ffn1"), Conv2dSpec::same(1, 1))?;
            let f = self.tape.relu(f);
            let f = self.conv(f, &format!("{p}.ffn2"), Conv2dSpec::same(1, 1))?;
            let parts = self.tape.split(f, 3)?;
            let (hh2, hl2, lh2) = (parts[0], parts[1], parts[2]);
            let stacked = self.tape.concat(&[ll, lh2, hl2, hh2])?;
            let rec = self.tape.idwt2(stacked)?;
            self.tape.add(x, rec)?
        } else {
            x
        };
        let y = if cfg.central_conv {
            self.cdc(enhanced, &format!("{p}.cdc"))?
        } else {
            self.conv(enhanced, &format!("{p}.cdc"), Conv2dSpec::same(3, 3))?
        };
        let y = self.bn(y, &format!("{p}.bn"))?;
        let y = self.tape.relu(y);
        self.tape.max_pool2d(y)
    }

    /// Two residual blocks, the first with stride 2.
    pub fn spb(&mut self, x: Var, p: &str) -> Result<Var> {
        let [_, _, h, w] = self.tape.value(x).dims4("spatial_process_block")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim("spatial_process_block", format!("spatial size {h}x{w} must be even")));
        }
        let a = self.conv(x, &format!("{p}.conv1"), Conv2dSpec::new(2, 1, 1))?;
        let a = self.bn(a, &format!("{p}.bn1"))?;
        let skip = self.conv(x, &format!("{p}.proj"), Conv2dSpec::new(2, 0, 1))?;
        let y = self.tape.add(a, skip)?;
        let y = self.tape.relu(y);
        let b = self.conv(y, &format!("{p}.conv2"), Conv2dSpec::same(3, 3))?;
        let b = self.bn(b, &format!("{p}.bn2"))?;
        let z = self.tape.add(b, y)?;
        Ok(self.tape.relu(z))
    }

    /// Spectral 1×1 conv, layer norm, gated pointwise pair, residual.
    pub fn fpb(&mut self, x: Var, p: &str) -> Result<Var> {
        let z = self.tape.fft2d(x)?;
        let z = self.conv(z, &format!("{p}.spec"), Conv2dSpec::same(1, 1))?;
        let z = self.tape.relu(z);
        let r = self.tape.ifft2d_real(z)?;
        let g = self.p(&format!("{p}.ln.gamma"))?;
        let b = self.p(&format!("{p}.ln.beta"))?;
        let n = self.tape.layer_norm(r, g, b)?;
        let e = self.conv(n, &format!("{p}.expand"), Conv2dSpec::same(1, 1))?;
        let ch = self.tape.value(e).shape()[1];
        if ch % 2 != 0 {
            return Err(Error::contract("gate", format!("{ch} channels cannot be split in halves")));
        }
        let a = self.tape.narrow(e, 0, ch / 2)?;
        let bb = self.tape.narrow(e, ch / 2, ch / 2)?;
        let gated = self.tape.mul(a, bb)?;
        let o = self.conv(gated, &format!("{p}.out"), Conv2dSpec::same(1, 1))?;
        self.tape.add(o, x)
    }

    /// Global average pool and a two-layer MLP: `N,W,h,w -> N` logits.
    pub fn head(&mut self, x: Var) -> Result<Var> {
        let n = self.tape.value(x).shape()[0];
        let g = self.tape.global_avg_pool(x)?;
        let (w1, b1) = (self.p("head.fc1.weight")?, self.p("head.fc1.bias")?);
        let h = self.tape.linear(g, w1, Some(b1))?;
        let h = self.tape.relu(h);
        let (w2, b2) = (self.p("head.fc2.weight")?, self.p("head.fc2.bias")?);
        let z = self.tape.linear(h, w2, Some(b2))?;
        self.tape.reshape(z, &[n])
    }

    /// Full network: logits `[N]`.
    pub fn forward(&mut self, inputs: &ScaleInputs<T>) -> Result<Var> {
        let cfg = self.params.config;
        let s = cfg.base_scale;
        let n = inputs.batch();
        let expect = |t: &Tensor<T>, side: usize, what: &str| -> Result<()> {
            if t.shape() != [n, 1, side, side] {
                return Err(Error::dim("forward", format!("{what} input {:?}, expected [{n}, 1, {side}, {side}]", t.shape())));
            }
            Ok(())
        };
        expect(&inputs.base, s, "base")?;
        let base = self.input(inputs.base.clone());
        let f = match (&inputs.large, cfg.use_large_scale) {
            (Some(l), true) => {
                expect(l, 2 * s, "large")?;
                let xl = self.input(l.clone());
                let a = self.stem(xl, STEM_LARGE)?;
                let a = self.spb(a, "spb1")?;
                let b = self.stem(base, STEM_BASE)?;
                self.tape.add(a, b)?
            }
            (None, false) => self.stem(base, STEM_BASE)?,
            _ => return Err(Error::contract("forward", "large-scale input does not match the configuration")),
        };
        let mut f = self.spb(f, "spb2")?;
        match (&inputs.small, cfg.use_small_scale) {
            (Some(sm), true) => {
                expect(sm, s / 2, "small")?;
                let xs = self.input(sm.clone());
                let c = self.stem(xs, STEM_SMALL)?;
                f = self.tape.add(f, c)?;
            }
            (None, false) => {}
            _ => return Err(Error::contract("forward", "small-scale input does not match the configuration")),
        }
        for i in 0..cfg.fpb_count {
            f = self.fpb(f, &format!("fpb{i}"))?;
        }
        self.head(f)
    }

    /// Parameter leaves bound so far, by name.
    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn into_parts(self) -> (Tape<T>, BTreeMap<String, Var>) {
        (self.tape, self.vars)
    }
}

fn batched<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("model")?;
    x.reshape(&[n, c, h, w])
}

fn unbatched<T: Real>(like: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    if like.rank() == 3 {
        y.reshape(&y.shape()[1..])
    } else {
        Ok(y.clone())
    }
}

/// Central-difference convolution of `C,H,W` or `N,C,H,W` input with an
/// `O,C,3,3` kernel.
pub fn cdc_conv<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(batched(x)?);
    let wv = tape.constant(w.clone());
    let bv = bias.map(|b| tape.constant(b.clone()));
    let y = cdc_tape(&mut tape, xv, wv, bv)?;
    unbatched(x, tape.value(y))
}

/// Inference-mode block runner shared by the public single-block wrappers.
fn run_block<T: Real>(
    params: &ModelParams<T>,
    x: &Tensor<T>,
    block: impl FnOnce(&mut Graph<'_, T>, Var) -> Result<Var>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new(params, Mode::Eval, false);
    let xv = g.input(batched(x)?);
    let y = block(&mut g, xv)?;
    unbatched(x, g.tape.value(y))
}

/// Stem `prefix` (one of `stem.large`, `stem.base`, `stem.small`) in eval mode.
pub fn wavelet_enhanced_stem<T: Real>(params: &ModelParams<T>, prefix: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
    run_block(params, x, |g, v| g.stem(v, prefix))
}

pub fn spatial_process_block<T: Real>(params: &ModelParams<T>, prefix: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
    run_block(params, x, |g, v| g.spb(v, prefix))
}

pub fn frequency_process_block<T: Real>(params: &ModelParams<T>, prefix: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
    run_block(params, x, |g, v| g.fpb(v, prefix))
}

/// Eval-mode logits for prepared inputs.
pub fn forward_logits<T: Real>(params: &ModelParams<T>, inputs: &ScaleInputs<T>) -> Result<Vec<T>> {
    let mut g = Graph::new(params, Mode::Eval, false);
    let z = g.forward(inputs)?;
    let out = g.tape.value(z);
    out.ensure_finite("forward")?;
    Ok(out.data().to_vec())
}
