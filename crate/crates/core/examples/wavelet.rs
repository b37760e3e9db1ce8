//! Haar sub-bands of a toy image and a wavelet convolution over them.

use esf_detect::data::{toy_image, ToySplit};
use esf_detect::wavelet::{dwt2, idwt2, wtconv, WtConvParams};
use esf_detect::Tensor;

fn main() -> esf_detect::Result<()> {
    let img = toy_image(64, 2, ToySplit::Test, true, 0)?;
    let x = Tensor::<f64>::new(vec![1, 1, 64, 64], img.to_unit())?;
    let bands = dwt2(&x)?;
    for (name, b) in [("ll", &bands.ll), ("lh", &bands.lh), ("hl", &bands.hl), ("hh", &bands.hh)] {
        println!("{name} {:?} energy {:.4}", b.shape(), b.sum_sq());
    }
    println!("reconstruction error {:.2e}", idwt2(&bands)?.max_abs_diff(&x)?);

    // identity base kernel and zero band kernels leave the input unchanged
    let mut p = WtConvParams::<f64>::zeros(1, 2);
    p.base.data_mut()[4] = 1.0;
    println!("identity wtconv error {:.2e}", wtconv(&x, &p)?.max_abs_diff(&x)?);
    Ok(())
}
