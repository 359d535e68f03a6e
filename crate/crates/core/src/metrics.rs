//! Full-reference quality metrics for images in `[0, 1]`.

use crate::error::Result;
use crate::grid::ImageGrid;

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
const WINDOW: usize = 8;
const STRIDE: usize = 4;

pub fn mse(u: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    u.ensure_same_shape(reference, "mse")?;
    Ok(u.distance(reference).powi(2) / u.len() as f64)
}

/// `10 log10(1 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(u: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    let m = mse(u, reference)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / m).log10()
    })
}

/// PSNR with infinite values replaced by `cap`, for averaging.
pub fn psnr_capped(u: &ImageGrid, reference: &ImageGrid, cap: f64) -> Result<f64> {
    Ok(psnr(u, reference)?.min(cap))
}

/// Mean SSIM over 8×8 windows at stride 4, averaged across channels and
/// clamped to `[0, 1]`. Images smaller than a window use one window covering
/// the whole plane.
pub fn ssim(u: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    u.ensure_same_shape(reference, "ssim")?;
    let (h, w) = (u.height(), u.width());
    let (wh, ww) = (WINDOW.min(h), WINDOW.min(w));
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..u.channels() {
        let (a, b) = (u.plane(c), reference.plane(c));
        let mut i = 0;
        loop {
            let mut j = 0;
            loop {
                total += window_ssim(a, b, w, i, j, wh, ww);
                count += 1;
                if j + ww >= w {
                    break;
                }
                j = (j + STRIDE).min(w - ww);
            }
            if i + wh >= h {
                break;
            }
            i = (i + STRIDE).min(h - wh);
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}

fn window_ssim(a: &[f64], b: &[f64], stride: usize, i0: usize, j0: usize, wh: usize, ww: usize) -> f64 {
    let n = (wh * ww) as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in i0..i0 + wh {
        for j in j0..j0 + ww {
            let (x, y) = (a[i * stride + j], b[i * stride + j]);
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let va = (saa / n - ma * ma).max(0.0);
    let vb = (sbb / n - mb * mb).max(0.0);
    let cov = sab / n - ma * mb;
    ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_images() {
        let u = ImageGrid::from_fn(16, 16, |i, j| ((i + j) % 5) as f64 / 5.0);
        assert_eq!(psnr(&u, &u).unwrap(), f64::INFINITY);
        assert!((ssim(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(psnr_capped(&u, &u, 100.0).unwrap(), 100.0);
    }

    #[test]
    fn psnr_formula() {
        let a = ImageGrid::filled(10, 10, 1, 0.5);
        let b = ImageGrid::filled(10, 10, 1, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = ImageGrid::from_fn(9, 7, |_, _| rng.random::<f64>());
        let b = ImageGrid::from_fn(9, 7, |_, _| rng.random::<f64>());
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a.data()[i] - b.data()[i]).powi(2);
        }
        let expect = 10.0 * (1.0 / (s / 63.0)).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_drops_with_noise_and_rejects_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = ImageGrid::from_fn(32, 32, |i, _| i as f64 / 32.0);
        let noise: Vec<f64> = (0..a.len()).map(|_| 0.2 * (rng.random::<f64>() - 0.5)).collect();
        let b = a.with_data(
            a.data()
                .iter()
                .zip(&noise)
                .map(|(v, n)| (v + n).clamp(0.0, 1.0))
                .collect(),
        );
        let s = ssim(&a, &b).unwrap();
        assert!(s > 0.0 && s < 0.9);
        assert!(ssim(&a, &ImageGrid::zeros(8, 8, 1)).is_err());
    }
}
