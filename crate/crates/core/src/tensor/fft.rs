//! 2D discrete Fourier transforms over the trailing `H,W` axes.
//!
//! Forward is unnormalized; the inverse carries the `1/(H·W)` factor.

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Complex spectrum stored as two real tensors of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPlane<T> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Real> ComplexPlane<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::dim(
                "complex_plane",
                format!("real {:?} vs imaginary {:?}", re.shape(), im.shape()),
            ));
        }
        Ok(ComplexPlane { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn magnitude(&self) -> Tensor<T> {
        self.re.zip_map(&self.im, |a, b| a.hypot(b)).expect("shapes checked at construction")
    }

    /// `sum(|X|²)`.
    pub fn energy(&self) -> T {
        self.re.sum_sq() + self.im.sum_sq()
    }
}

fn plane_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::dim(op, format!("need at least H,W axes, got {shape:?}")));
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    let planes = shape[..shape.len() - 2].iter().product();
    Ok((planes, h, w))
}

/// Unnormalized 2D DFT of every `h×w` plane in `buf`, in place.
pub(crate) fn dft2_inplace<T: Real>(buf: &mut [Complex<T>], h: usize, w: usize, dir: FftDirection) {
    let mut planner = FftPlanner::<T>::new();
    let row = planner.plan_fft(w, dir);
    let colf = planner.plan_fft(h, dir);
    row.process(buf);
    let mut column = vec![Complex::new(T::zero(), T::zero()); h];
    for plane in buf.chunks_mut(h * w) {
        for x in 0..w {
            for y in 0..h {
                column[y] = plane[y * w + x];
            }
            colf.process(&mut column);
            for y in 0..h {
                plane[y * w + x] = column[y];
            }
        }
    }
}

fn to_complex<T: Real>(re: &[T], im: Option<&[T]>) -> Vec<Complex<T>> {
    match im {
        Some(im) => re.iter().zip(im).map(|(&a, &b)| Complex::new(a, b)).collect(),
        None => re.iter().map(|&a| Complex::new(a, T::zero())).collect(),
    }
}

/// Forward 2D FFT of a real tensor (`...,H,W`).
pub fn fft2d<T: Real>(x: &Tensor<T>) -> Result<ComplexPlane<T>> {
    let (_, h, w) = plane_dims(x.shape(), "fft2d")?;
    let mut buf = to_complex(x.data(), None);
    dft2_inplace(&mut buf, h, w, FftDirection::Forward);
    let shape = x.shape().to_vec();
    Ok(ComplexPlane {
        re: Tensor::from_parts(shape.clone(), buf.iter().map(|c| c.re).collect()),
        im: Tensor::from_parts(shape, buf.iter().map(|c| c.im).collect()),
    })
}

/// Normalized inverse transform, keeping the imaginary part.
pub fn ifft2d_complex<T: Real>(z: &ComplexPlane<T>) -> Result<ComplexPlane<T>> {
    let (_, h, w) = plane_dims(z.shape(), "ifft2d")?;
    let mut buf = to_complex(z.re.data(), Some(z.im.data()));
    dft2_inplace(&mut buf, h, w, FftDirection::Inverse);
    let k = T::one() / T::of((h * w) as f64);
    let shape = z.shape().to_vec();
    Ok(ComplexPlane {
        re: Tensor::from_parts(shape.clone(), buf.iter().map(|c| c.re * k).collect()),
        im: Tensor::from_parts(shape, buf.iter().map(|c| c.im * k).collect()),
    })
}

/// Normalized inverse transform, real part.
pub fn ifft2d<T: Real>(z: &ComplexPlane<T>) -> Result<Tensor<T>> {
    Ok(ifft2d_complex(z)?.re)
}

/// `N,C,H,W -> N,2C,H,W`: real parts in channels `0..C`, imaginary in `C..2C`.
pub(crate) fn fft_stacked<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("fft2d")?;
    let mut buf = to_complex(x.data(), None);
    dft2_inplace(&mut buf, h, w, FftDirection::Forward);
    Ok(Tensor::from_parts(vec![n, 2 * c, h, w], unstack(&buf, n, c, h * w, 1.0)))
}

/// Backward of [`fft_stacked`]: `dx = Re(conj-DFT(g_re + i·g_im))`.
pub(crate) fn fft_stacked_backward<T: Real>(dy: &[T], dims: [usize; 4]) -> Vec<T> {
    let [n, c, h, w] = dims;
    let mut buf = stack(dy, n, c, h * w);
    dft2_inplace(&mut buf, h, w, FftDirection::Inverse);
    buf.iter().map(|z| z.re).collect()
}

/// `N,2C,H,W -> N,C,H,W`: real part of the normalized inverse transform.
pub(crate) fn ifft_stacked_real<T: Real>(z: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c2, h, w] = z.dims4("ifft2d")?;
    if c2 % 2 != 0 {
        return Err(Error::dim("ifft2d", format!("stacked channel count {c2} is odd")));
    }
    let c = c2 / 2;
    let mut buf = stack(z.data(), n, c, h * w);
    dft2_inplace(&mut buf, h, w, FftDirection::Inverse);
    let k = T::one() / T::of((h * w) as f64);
    Ok(Tensor::from_parts(vec![n, c, h, w], buf.iter().map(|v| v.re * k).collect()))
}

/// Backward of [`ifft_stacked_real`]: `d(re,im) = DFT(g) / (H·W)`.
pub(crate) fn ifft_stacked_real_backward<T: Real>(dy: &[T], dims_out: [usize; 4]) -> Vec<T> {
    let [n, c, h, w] = dims_out;
    let mut buf = to_complex(dy, None);
    dft2_inplace(&mut buf, h, w, FftDirection::Forward);
    unstack(&buf, n, c, h * w, 1.0 / (h * w) as f64)
}

fn stack<T: Real>(data: &[T], n: usize, c: usize, plane: usize) -> Vec<Complex<T>> {
    let mut out = Vec::with_capacity(n * c * plane);
    for b in 0..n {
        let re = &data[(b * 2 * c) * plane..(b * 2 * c + c) * plane];
        let im = &data[(b * 2 * c + c) * plane..(b * 2 * c + 2 * c) * plane];
        out.extend(re.iter().zip(im).map(|(&a, &b)| Complex::new(a, b)));
    }
    out
}

fn unstack<T: Real>(buf: &[Complex<T>], n: usize, c: usize, plane: usize, k: f64) -> Vec<T> {
    let k = T::of(k);
    let mut out = Vec::with_capacity(2 * buf.len());
    for b in 0..n {
        let s = &buf[b * c * plane..(b + 1) * c * plane];
        out.extend(s.iter().map(|z| z.re * k));
        out.extend(s.iter().map(|z| z.im * k));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Textbook O(N²) DFT, independent of rustfft.
    fn naive_dft(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let mut re = vec![0.0; h * w];
        let mut im = vec![0.0; h * w];
        for ky in 0..h {
            for kx in 0..w {
                for y in 0..h {
                    for xx in 0..w {
                        let a = -2.0 * std::f64::consts::PI
                            * ((ky * y) as f64 / h as f64 + (kx * xx) as f64 / w as f64);
                        re[ky * w + kx] += x[y * w + xx] * a.cos();
                        im[ky * w + kx] += x[y * w + xx] * a.sin();
                    }
                }
            }
        }
        (re, im)
    }

    #[test]
    fn constant_image_is_dc_only() {
        let n = 8;
        let x = Tensor::<f64>::full(&[1, n, n], 3.0);
        let z = fft2d(&x).unwrap();
        assert!((z.re.data()[0] - 3.0 * (n * n) as f64).abs() < 1e-9);
        for i in 1..n * n {
            assert!(z.re.data()[i].abs() < 1e-9 && z.im.data()[i].abs() < 1e-9);
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = Tensor::<f64>::zeros(&[1, 4, 4]);
        x.data_mut()[0] = 1.0;
        let mag = fft2d(&x).unwrap().magnitude();
        assert!(mag.data().iter().all(|&m| (m - 1.0).abs() < 1e-12));
    }

    #[test]
    fn matches_naive_dft_including_non_power_of_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w) in [(8, 8), (6, 10), (7, 7)] {
            let x = Tensor::<f64>::uniform(&[1, h, w], -1.0, 1.0, &mut rng);
            let z = fft2d(&x).unwrap();
            let (re, im) = naive_dft(x.data(), h, w);
            for i in 0..h * w {
                assert!((z.re.data()[i] - re[i]).abs() < 1e-10);
                assert!((z.im.data()[i] - im[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn roundtrip_and_parseval() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::uniform(&[2, 8, 8], -1.0, 1.0, &mut rng);
            let z = fft2d(&x).unwrap();
            assert!(ifft2d(&z).unwrap().max_abs_diff(&x).unwrap() < 1e-10);
            let lhs = x.sum_sq();
            let rhs = z.energy() / 64.0;
            assert!(((lhs - rhs) / lhs).abs() < 1e-8);
        }
    }

    #[test]
    fn stacked_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let s = fft_stacked(&x).unwrap();
        assert_eq!(s.shape(), &[2, 6, 4, 4]);
        let back = ifft_stacked_real(&s).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
    }
}
