//! Image quality and capacity measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

fn check_shape(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )))
    }
}

/// Sum of squared differences over all samples.
pub fn squared_error(a: &Image, b: &Image) -> Result<f64> {
    check_shape(a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    Ok(squared_error(a, b)? / a.data().len() as f64)
}

/// PSNR in dB from a pooled squared error over `samples` values.
/// Returns `f64::INFINITY` when the error is zero.
pub fn psnr_from_sse(sse: f64, samples: usize) -> f64 {
    if sse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (samples as f64 * 255.0 * 255.0 / sse).log10()
    }
}

/// Peak signal-to-noise ratio with channels pooled; infinite for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let sse = squared_error(a, b)?;
    Ok(psnr_from_sse(sse, a.data().len()))
}

pub fn histogram(image: &Image) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in image.data() {
        h[v as usize] += 1;
    }
    h
}

/// Shannon entropy of the intensity histogram in bits per sample.
pub fn entropy(image: &Image) -> f64 {
    let h = histogram(image);
    let n = image.data().len() as f64;
    h.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// L1 distance between normalised histograms, in `[0, 2]`.
pub fn histogram_deviation(a: &Image, b: &Image) -> Result<f64> {
    check_shape(a, b)?;
    let (ha, hb) = (histogram(a), histogram(b));
    let n = a.data().len() as f64;
    Ok(ha.iter().zip(hb.iter()).map(|(&x, &y)| (x as f64 - y as f64).abs() / n).sum())
}

pub fn capacity_bpp(bits: usize, width: usize, height: usize) -> f64 {
    bits as f64 / (width * height) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// `None` when the images are identical.
    pub psnr_db: Option<f64>,
    pub psnr_infinite: bool,
    pub mse: f64,
    pub entropy_reference: f64,
    pub entropy_test: f64,
    pub histogram_l1: f64,
    pub capacity_bpp: Option<f64>,
}

impl QualityReport {
    pub fn compare(reference: &Image, test: &Image, payload_bits: Option<usize>) -> Result<Self> {
        let p = psnr(reference, test)?;
        Ok(Self {
            psnr_db: p.is_finite().then_some(p),
            psnr_infinite: p.is_infinite(),
            mse: mse(reference, test)?,
            entropy_reference: entropy(reference),
            entropy_test: entropy(test),
            histogram_l1: histogram_deviation(reference, test)?,
            capacity_bpp: payload_bits.map(|b| capacity_bpp(b, reference.width(), reference.height())),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_cases() {
        let a = Image::filled(8, 8, 1, 100).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);

        let black = Image::filled(4, 4, 1, 0).unwrap();
        let white = Image::filled(4, 4, 1, 255).unwrap();
        assert!(psnr(&black, &white).unwrap().abs() < 1e-12);

        let mut b = a.clone();
        b.set(3, 3, 0, 116);
        let expected = 10.0 * (64.0 * 65025.0 / 256.0f64).log10();
        let got = psnr(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 42.11).abs() < 0.01);
        assert_eq!(psnr(&b, &a).unwrap(), got);

        let other = Image::filled(4, 8, 1, 0).unwrap();
        assert!(matches!(psnr(&a, &other), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn psnr_decreases_with_mse() {
        assert!(psnr_from_sse(10.0, 64) > psnr_from_sse(11.0, 64));
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(entropy(&Image::filled(4, 4, 1, 7).unwrap()), 0.0);
        let uniform = Image::gray_from_fn(16, 16, |x, y| (y * 16 + x) as u8).unwrap();
        assert!((entropy(&uniform) - 8.0).abs() < 1e-12);
        let two = Image::gray_from_fn(2, 2, |x, _| if x == 0 { 10 } else { 200 }).unwrap();
        assert!((entropy(&two) - 1.0).abs() < 1e-12);
        // permutation invariance
        let shuffled = Image::gray_from_fn(16, 16, |x, y| (x * 16 + y) as u8).unwrap();
        assert_eq!(entropy(&shuffled), entropy(&uniform));
    }

    #[test]
    fn histogram_deviation_cases() {
        let a = Image::filled(4, 4, 1, 7).unwrap();
        assert_eq!(histogram_deviation(&a, &a).unwrap(), 0.0);
        let b = Image::filled(4, 4, 1, 9).unwrap();
        assert!((histogram_deviation(&a, &b).unwrap() - 2.0).abs() < 1e-12);
        let mut c = a.clone();
        c.set(0, 0, 0, 8);
        assert!((histogram_deviation(&a, &c).unwrap() - 2.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn mse_and_capacity() {
        let a = Image::filled(4, 4, 1, 7).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.set(0, 0, 0, 9);
        let mut c = a.clone();
        c.set(0, 0, 0, 11);
        assert_eq!(mse(&a, &c).unwrap(), 4.0 * mse(&a, &b).unwrap());
        assert_eq!(capacity_bpp(131072, 512, 512), 0.5);
    }

    #[test]
    fn report_flags_infinite_psnr() {
        let a = Image::filled(4, 4, 1, 7).unwrap();
        let r = QualityReport::compare(&a, &a, Some(8)).unwrap();
        assert!(r.psnr_infinite && r.psnr_db.is_none());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"psnr_db\":null"));
    }
}
