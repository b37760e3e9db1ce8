//! Orthonormal 2D Haar transform and wavelet-domain convolution.
//!
//! Band convention on each 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! ll = (a + b + c + d) / 2
//! hl = (a - b + c - d) / 2   column difference (vertical edges)
//! lh = (a + b - c - d) / 2   row difference (horizontal edges)
//! hh = (a - b - c + d) / 2
//! ```
//!
//! Stacked tensors carry the bands along the channel axis in the order
//! `ll, lh, hl, hh`, each block `C` channels wide.

use crate::error::{Error, Result};
use crate::tensor::{Conv2dSpec, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct SubBands<T> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Real> SubBands<T> {
    pub fn energy(&self) -> T {
        self.ll.sum_sq() + self.lh.sum_sq() + self.hl.sum_sq() + self.hh.sum_sq()
    }

    fn check(&self) -> Result<()> {
        let s = self.ll.shape();
        for (name, b) in [("lh", &self.lh), ("hl", &self.hl), ("hh", &self.hh)] {
            if b.shape() != s {
                return Err(Error::dim("idwt2", format!("band {name} {:?} vs ll {s:?}", b.shape())));
            }
        }
        Ok(())
    }
}

const HALF: f64 = 0.5;

/// `N,C,H,W -> N,4C,H/2,W/2`.
pub(crate) fn dwt_stacked<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("dwt2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("dwt2", format!("spatial size {h}x{w} must be even")));
    }
    let (h2, w2) = (h / 2, w / 2);
    let q = h2 * w2;
    let k = T::of(HALF);
    let xd = x.data();
    let mut out = vec![T::zero(); n * 4 * c * q];
    for b in 0..n {
        for ch in 0..c {
            let src = &xd[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            let band = |i: usize| (b * 4 * c + i * c + ch) * q;
            let (ll, lh, hl, hh) = (band(0), band(1), band(2), band(3));
            for y in 0..h2 {
                for xx in 0..w2 {
                    let a = src[2 * y * w + 2 * xx];
                    let bb = src[2 * y * w + 2 * xx + 1];
                    let cc = src[(2 * y + 1) * w + 2 * xx];
                    let d = src[(2 * y + 1) * w + 2 * xx + 1];
                    let o = y * w2 + xx;
                    out[ll + o] = (a + bb + cc + d) * k;
                    out[lh + o] = (a + bb - cc - d) * k;
                    out[hl + o] = (a - bb + cc - d) * k;
                    out[hh + o] = (a - bb - cc + d) * k;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, 4 * c, h2, w2], out))
}

/// `N,4C,H,W -> N,C,2H,2W`.
pub(crate) fn idwt_stacked<T: Real>(s: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c4, h2, w2] = s.dims4("idwt2")?;
    if c4 % 4 != 0 {
        return Err(Error::dim("idwt2", format!("stacked channel count {c4} not divisible by 4")));
    }
    let c = c4 / 4;
    let (h, w) = (2 * h2, 2 * w2);
    let q = h2 * w2;
    let k = T::of(HALF);
    let sd = s.data();
    let mut out = vec![T::zero(); n * c * h * w];
    for b in 0..n {
        for ch in 0..c {
            let dst = &mut out[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            let band = |i: usize| (b * c4 + i * c + ch) * q;
            let (ll, lh, hl, hh) = (band(0), band(1), band(2), band(3));
            for y in 0..h2 {
                for xx in 0..w2 {
                    let o = y * w2 + xx;
                    let (l, v, hz, d) = (sd[ll + o], sd[lh + o], sd[hl + o], sd[hh + o]);
                    dst[2 * y * w + 2 * xx] = (l + hz + v + d) * k;
                    dst[2 * y * w + 2 * xx + 1] = (l - hz + v - d) * k;
                    dst[(2 * y + 1) * w + 2 * xx] = (l + hz - v - d) * k;
                    dst[(2 * y + 1) * w + 2 * xx + 1] = (l - hz - v + d) * k;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, h, w], out))
}

fn band_shape(input_rank: usize, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if input_rank == 3 {
        vec![c, h, w]
    } else {
        vec![n, c, h, w]
    }
}

/// Single-level 2D Haar analysis of a `C,H,W` (or `N,C,H,W`) tensor.
pub fn dwt2<T: Real>(x: &Tensor<T>) -> Result<SubBands<T>> {
    let s = dwt_stacked(x)?;
    let [n, c4, h2, w2] = s.dims4("dwt2")?;
    let c = c4 / 4;
    let q = c * h2 * w2;
    let mut bands: [Vec<T>; 4] = Default::default();
    for b in 0..n {
        for (i, band) in bands.iter_mut().enumerate() {
            let start = b * 4 * q + i * q;
            band.extend_from_slice(&s.data()[start..start + q]);
        }
    }
    let shape = band_shape(x.rank(), n, c, h2, w2);
    let [ll, lh, hl, hh] = bands.map(|d| Tensor::from_parts(shape.clone(), d));
    Ok(SubBands { ll, lh, hl, hh })
}

/// Exact inverse of [`dwt2`].
pub fn idwt2<T: Real>(bands: &SubBands<T>) -> Result<Tensor<T>> {
    bands.check()?;
    let [n, c, h2, w2] = bands.ll.dims4("idwt2")?;
    let q = c * h2 * w2;
    let mut data = Vec::with_capacity(4 * n * q);
    for b in 0..n {
        for band in [&bands.ll, &bands.lh, &bands.hl, &bands.hh] {
            data.extend_from_slice(&band.data()[b * q..(b + 1) * q]);
        }
    }
    let stacked = Tensor::from_parts(vec![n, 4 * c, h2, w2], data);
    let out = idwt_stacked(&stacked)?;
    if bands.ll.rank() == 3 {
        out.reshape(&[c, 2 * h2, 2 * w2])
    } else {
        Ok(out)
    }
}

/// Kernels of a wavelet convolution over `C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct WtConvParams<T> {
    /// Depthwise `C,1,3,3` kernel applied in the pixel domain.
    pub base: Tensor<T>,
    /// One depthwise `4C,1,3,3` kernel per level, over the stacked bands.
    pub bands: Vec<Tensor<T>>,
}

impl<T: Real> WtConvParams<T> {
    pub fn zeros(channels: usize, levels: usize) -> Self {
        WtConvParams {
            base: Tensor::zeros(&[channels, 1, 3, 3]),
            bands: (0..levels).map(|_| Tensor::zeros(&[4 * channels, 1, 3, 3])).collect(),
        }
    }
}

/// Wavelet convolution on the tape.
///
/// `y = dwconv(x, base) + R`, where `R` is rebuilt coarse-to-fine: level
/// `l` convolves the four bands of the previous level's `ll`, the deeper
/// reconstruction is added to its `ll` output, and an inverse transform
/// brings it back up one level.
pub fn wtconv_tape<T: Real>(tape: &mut Tape<T>, x: Var, base: Var, bands: &[Var]) -> Result<Var> {
    const OP: &str = "wtconv";
    let [_, c, h, w] = tape.value(x).dims4(OP)?;
    let levels = bands.len();
    if levels == 0 {
        return Err(Error::contract(OP, "at least one wavelet level is required"));
    }
    let div = 1usize << levels;
    if h % div != 0 || w % div != 0 {
        return Err(Error::dim(
            OP,
            format!("spatial size {h}x{w} must be divisible by {div} for {levels} level(s)"),
        ));
    }
    let dw = Conv2dSpec::new(1, 1, c);
    let dw4 = Conv2dSpec::new(1, 1, 4 * c);
    let mut cur = x;
    let mut outs = Vec::with_capacity(levels);
    for &k in bands {
        let s = tape.dwt2(cur)?;
        outs.push(tape.conv2d(s, k, None, dw4)?);
        cur = tape.narrow(s, 0, c)?;
    }
    let mut recon: Option<Var> = None;
    for y in outs.into_iter().rev() {
        let y = match recon {
            None => y,
            Some(r) => {
                let ll = tape.narrow(y, 0, c)?;
                let rest = tape.narrow(y, c, 3 * c)?;
                let ll = tape.add(ll, r)?;
                tape.concat(&[ll, rest])?
            }
        };
        recon = Some(tape.idwt2(y)?);
    }
    let spatial = tape.conv2d(x, base, None, dw)?;
    tape.add(spatial, recon.expect("levels >= 1"))
}

/// Wavelet convolution of a `C,H,W` or `N,C,H,W` tensor; output keeps the
/// input shape.
pub fn wtconv<T: Real>(x: &Tensor<T>, params: &WtConvParams<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("wtconv")?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.reshape(&[n, c, h, w])?);
    let base = tape.constant(params.base.clone());
    let bands: Vec<Var> = params.bands.iter().map(|b| tape.constant(b.clone())).collect();
    let y = wtconv_tape(&mut tape, xv, base, &bands)?;
    tape.value(y).reshape(x.shape())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::conv2d;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn constant_image() {
        let x = Tensor::<f64>::full(&[1, 4, 6], 4.0);
        let b = dwt2(&x).unwrap();
        assert!(b.ll.data().iter().all(|&v| v == 8.0));
        for band in [&b.lh, &b.hl, &b.hh] {
            assert!(band.data().iter().all(|&v| v == 0.0));
        }
        let back = idwt2(&SubBands {
            ll: Tensor::full(&[1, 2, 3], 2.0 * 1.5),
            lh: Tensor::zeros(&[1, 2, 3]),
            hl: Tensor::zeros(&[1, 2, 3]),
            hh: Tensor::zeros(&[1, 2, 3]),
        })
        .unwrap();
        assert!(back.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn single_block_hand_values() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = dwt2(&x).unwrap();
        assert_eq!(
            (b.ll.data()[0], b.hl.data()[0], b.lh.data()[0], b.hh.data()[0]),
            (5.0, -1.0, -2.0, 0.0)
        );
    }

    #[test]
    fn reconstruction_and_energy() {
        for seed in 0..5 {
            let x = rand_t(&[1, 8, 8], seed);
            let b = dwt2(&x).unwrap();
            assert!(idwt2(&b).unwrap().max_abs_diff(&x).unwrap() < 1e-10);
            assert!((b.energy() - x.sum_sq()).abs() < 1e-10);
        }
    }

    #[test]
    fn orientation_selectivity() {
        // constant along x, varying along y
        let x = Tensor::<f64>::from_f64(&[1, 4, 4], &[
            1.0, 1.0, 1.0, 1.0, //
            3.0, 3.0, 3.0, 3.0, //
            -2.0, -2.0, -2.0, -2.0, //
            0.5, 0.5, 0.5, 0.5,
        ])
        .unwrap();
        let b = dwt2(&x).unwrap();
        assert!(b.hl.data().iter().all(|&v| v == 0.0));
        assert!(b.hh.data().iter().all(|&v| v == 0.0));
        assert!(b.lh.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn idwt_is_linear() {
        let (a, bk) = (0.7, -1.3);
        let b1 = dwt2(&rand_t(&[2, 4, 4], 1)).unwrap();
        let b2 = dwt2(&rand_t(&[2, 4, 4], 2)).unwrap();
        let mix = |p: &Tensor<f64>, q: &Tensor<f64>| p.scale(a).add(&q.scale(bk)).unwrap();
        let combined = SubBands {
            ll: mix(&b1.ll, &b2.ll),
            lh: mix(&b1.lh, &b2.lh),
            hl: mix(&b1.hl, &b2.hl),
            hh: mix(&b1.hh, &b2.hh),
        };
        let lhs = idwt2(&combined).unwrap();
        let rhs = mix(&idwt2(&b1).unwrap(), &idwt2(&b2).unwrap());
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn odd_sizes_and_mismatched_bands_fail() {
        assert!(dwt2(&Tensor::<f64>::zeros(&[1, 3, 4])).is_err());
        let mut b = dwt2(&Tensor::<f64>::zeros(&[1, 4, 4])).unwrap();
        b.hh = Tensor::zeros(&[1, 1, 2]);
        assert!(idwt2(&b).is_err());
    }

    #[test]
    fn wtconv_zero_and_identity() {
        let x = rand_t(&[2, 8, 8], 4);
        let mut p = WtConvParams::zeros(2, 1);
        assert!(wtconv(&x, &p).unwrap().data().iter().all(|&v| v == 0.0));
        for c in 0..2 {
            p.base.data_mut()[c * 9 + 4] = 1.0;
        }
        assert!(wtconv(&x, &p).unwrap().max_abs_diff(&x).unwrap() == 0.0);
    }

    /// Composition oracle from the public pieces: dwt2, grouped conv2d, idwt2.
    fn composed(x: &Tensor<f64>, p: &WtConvParams<f64>) -> Tensor<f64> {
        let c = x.shape()[0];
        let dw = |t: &Tensor<f64>, k: &Tensor<f64>| conv2d(t, k, None, Conv2dSpec::new(1, 1, c)).unwrap();
        let kernel = |level: usize, band: usize| {
            let d = &p.bands[level].data()[band * c * 9..(band + 1) * c * 9];
            Tensor::new(vec![c, 1, 3, 3], d.to_vec()).unwrap()
        };
        let mut lls = vec![x.clone()];
        let mut level_bands = vec![];
        for l in 0..p.bands.len() {
            let b = dwt2(lls.last().unwrap()).unwrap();
            level_bands.push(SubBands {
                ll: dw(&b.ll, &kernel(l, 0)),
                lh: dw(&b.lh, &kernel(l, 1)),
                hl: dw(&b.hl, &kernel(l, 2)),
                hh: dw(&b.hh, &kernel(l, 3)),
            });
            lls.push(b.ll);
        }
        let mut recon: Option<Tensor<f64>> = None;
        for mut b in level_bands.into_iter().rev() {
            if let Some(r) = recon {
                b.ll = b.ll.add(&r).unwrap();
            }
            recon = Some(idwt2(&b).unwrap());
        }
        dw(x, &p.base).add(&recon.unwrap()).unwrap()
    }

    #[test]
    fn wtconv_matches_composition() {
        for (levels, seed) in [(1, 10), (1, 11), (2, 12)] {
            let x = rand_t(&[3, 8, 8], seed);
            let p = WtConvParams {
                base: rand_t(&[3, 1, 3, 3], seed + 100),
                bands: (0..levels).map(|l| rand_t(&[12, 1, 3, 3], seed + 200 + l as u64)).collect(),
            };
            let got = wtconv(&x, &p).unwrap();
            assert_eq!(got.shape(), x.shape());
            assert!(got.max_abs_diff(&composed(&x, &p)).unwrap() < 1e-10);
        }
    }

    #[test]
    fn wtconv_rejects_indivisible_sizes() {
        let p = WtConvParams::<f64>::zeros(1, 2);
        assert!(wtconv(&Tensor::zeros(&[1, 6, 6]), &p).is_err());
    }
}
