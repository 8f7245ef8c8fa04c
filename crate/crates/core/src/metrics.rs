//! Image comparison metrics.

use crate::{Error, Image, Real, Result, VisibilityMask};

/// Mean squared error over the pixels where `mask` is set (all channels).
/// `None` when the mask is empty.
pub fn masked_mse<T: Real>(
    a: &Image<T>,
    b: &Image<T>,
    mask: &VisibilityMask,
) -> Result<Option<f64>> {
    a.check_same_shape(b, "compared images")?;
    mask.check_shape(a.height(), a.width())?;
    let c = a.channels();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, &m) in mask.data().iter().enumerate() {
        if m {
            for k in 0..c {
                let d = a.data()[p * c + k].as_f64() - b.data()[p * c + k].as_f64();
                sum += d * d;
            }
            n += c;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Peak signal-to-noise ratio (peak 1) over the masked pixels.
///
/// Identical images give `f64::INFINITY`; an empty mask is an error.
pub fn masked_psnr<T: Real>(a: &Image<T>, b: &Image<T>, mask: &VisibilityMask) -> Result<f64> {
    let mse = masked_mse(a, b, mask)?.ok_or(Error::InvalidArgument("empty mask"))?;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_constant_offset() {
        let a = Image::<f64>::filled(4, 4, 3, 0.5);
        let b = Image::<f64>::filled(4, 4, 3, 0.6);
        let p = masked_psnr(&a, &b, &VisibilityMask::full(4, 4)).unwrap();
        assert!((p - 20.0).abs() < 1e-9);
        assert_eq!(
            masked_psnr(&a, &a, &VisibilityMask::full(4, 4)).unwrap(),
            f64::INFINITY
        );
        assert!(masked_psnr(&a, &b, &VisibilityMask::empty(4, 4)).is_err());
    }
}
