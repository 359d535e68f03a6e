//! Orthonormal multi-level Haar transform, Mallat layout.

use super::ImageGrid;
use crate::error::{Error, Result};

/// Haar coefficients stored in Mallat layout: after one level the
/// approximation band occupies the top-left quadrant, horizontal detail the
/// top-right, vertical detail the bottom-left and diagonal detail the
/// bottom-right; further levels recurse into the top-left quadrant.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    pub levels: usize,
    pub coeffs: ImageGrid,
}

impl WaveletCoeffs {
    /// Size of the coarsest approximation band.
    pub fn approx_dims(&self) -> (usize, usize) {
        (self.coeffs.height() >> self.levels, self.coeffs.width() >> self.levels)
    }
}

fn check_dims(h: usize, w: usize, levels: usize) -> Result<()> {
    let step = 1usize << levels;
    if levels == 0 || !h.is_multiple_of(step) || !w.is_multiple_of(step) {
        return Err(Error::dim(format!(
            "{h}x{w} image is not divisible by 2^{levels} (levels must be >= 1)"
        )));
    }
    Ok(())
}

pub fn dwt(u: &ImageGrid, levels: usize) -> Result<WaveletCoeffs> {
    let (h, w) = (u.height(), u.width());
    check_dims(h, w, levels)?;
    let mut out = u.clone();
    let mut tmp = vec![0.0; h * w];
    for c in 0..u.channels() {
        let plane = out.plane_mut(c);
        let (mut ch, mut cw) = (h, w);
        for _ in 0..levels {
            analyze(plane, &mut tmp, w, ch, cw);
            ch /= 2;
            cw /= 2;
        }
    }
    Ok(WaveletCoeffs { levels, coeffs: out })
}

pub fn idwt(coeffs: &WaveletCoeffs) -> Result<ImageGrid> {
    let u = &coeffs.coeffs;
    let (h, w) = (u.height(), u.width());
    check_dims(h, w, coeffs.levels)?;
    let mut out = u.clone();
    let mut tmp = vec![0.0; h * w];
    for c in 0..u.channels() {
        let plane = out.plane_mut(c);
        for l in (0..coeffs.levels).rev() {
            synthesize(plane, &mut tmp, w, h >> l, w >> l);
        }
    }
    Ok(out)
}

// One analysis level on the top-left `ch × cw` block of a plane with row
// stride `stride`.
fn analyze(plane: &mut [f64], tmp: &mut [f64], stride: usize, ch: usize, cw: usize) {
    let (hh, hw) = (ch / 2, cw / 2);
    for i in 0..hh {
        for j in 0..hw {
            let a = plane[(2 * i) * stride + 2 * j];
            let b = plane[(2 * i) * stride + 2 * j + 1];
            let c = plane[(2 * i + 1) * stride + 2 * j];
            let d = plane[(2 * i + 1) * stride + 2 * j + 1];
            tmp[i * cw + j] = 0.5 * (a + b + c + d);
            tmp[i * cw + j + hw] = 0.5 * (a - b + c - d);
            tmp[(i + hh) * cw + j] = 0.5 * (a + b - c - d);
            tmp[(i + hh) * cw + j + hw] = 0.5 * (a - b - c + d);
        }
    }
    for i in 0..ch {
        plane[i * stride..i * stride + cw].copy_from_slice(&tmp[i * cw..(i + 1) * cw]);
    }
}

fn synthesize(plane: &mut [f64], tmp: &mut [f64], stride: usize, ch: usize, cw: usize) {
    let (hh, hw) = (ch / 2, cw / 2);
    for i in 0..hh {
        for j in 0..hw {
            let ll = plane[i * stride + j];
            let hl = plane[i * stride + j + hw];
            let lh = plane[(i + hh) * stride + j];
            let hh_ = plane[(i + hh) * stride + j + hw];
            tmp[(2 * i) * cw + 2 * j] = 0.5 * (ll + hl + lh + hh_);
            tmp[(2 * i) * cw + 2 * j + 1] = 0.5 * (ll - hl + lh - hh_);
            tmp[(2 * i + 1) * cw + 2 * j] = 0.5 * (ll + hl - lh - hh_);
            tmp[(2 * i + 1) * cw + 2 * j + 1] = 0.5 * (ll - hl - lh + hh_);
        }
    }
    for i in 0..ch {
        plane[i * stride..i * stride + cw].copy_from_slice(&tmp[i * cw..(i + 1) * cw]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(h, w, |_, _| rng.random::<f64>() - 0.5)
    }

    // Explicit one-level orthonormal Haar analysis matrix.
    fn haar_matrix(n: usize) -> DMatrix<f64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut m = DMatrix::zeros(n, n);
        for k in 0..n / 2 {
            m[(k, 2 * k)] = s;
            m[(k, 2 * k + 1)] = s;
            m[(n / 2 + k, 2 * k)] = s;
            m[(n / 2 + k, 2 * k + 1)] = -s;
        }
        m
    }

    #[test]
    fn constant_image_has_no_detail() {
        let u = ImageGrid::filled(8, 8, 1, 0.5);
        let c = dwt(&u, 3).unwrap();
        let p = c.coeffs.plane(0);
        assert!((p[0] - 0.5 * 8.0).abs() < 1e-12);
        assert!(p[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn isometry_and_round_trip() {
        let u = random_image(16, 8, 1);
        let v = random_image(16, 8, 2);
        let cu = dwt(&u, 2).unwrap();
        let cv = dwt(&v, 2).unwrap();
        assert!((cu.coeffs.norm() - u.norm()).abs() < 1e-10);
        assert!((cu.coeffs.dot(&cv.coeffs) - u.dot(&v)).abs() < 1e-9);
        assert!(idwt(&cu).unwrap().distance(&u) < 1e-10);
    }

    #[test]
    fn matches_dense_haar_matrices() {
        let u = random_image(8, 8, 3);
        let x = DMatrix::from_row_slice(8, 8, u.data());
        let one = &haar_matrix(8) * &x * haar_matrix(8).transpose();
        let c1 = dwt(&u, 1).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert!((one[(i, j)] - c1.coeffs.get(0, i, j)).abs() < 1e-12);
            }
        }
        // second level acts on the top-left 4x4 block only
        let mut two = one.clone();
        let block = one.view((0, 0), (4, 4)).into_owned();
        let b2 = &haar_matrix(4) * block * haar_matrix(4).transpose();
        two.view_mut((0, 0), (4, 4)).copy_from(&b2);
        let c2 = dwt(&u, 2).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert!((two[(i, j)] - c2.coeffs.get(0, i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn indivisible_dimensions_error() {
        let u = random_image(6, 8, 4);
        assert!(dwt(&u, 2).is_err());
        assert!(dwt(&u, 1).is_ok());
    }
}
