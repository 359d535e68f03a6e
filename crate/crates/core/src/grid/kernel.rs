use num_complex::Complex64;

use super::fft::spectrum_of;
use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

/// Point-spread function on the unit simplex: odd support, nonnegative
/// weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    kh: usize,
    kw: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    /// Validates without renormalizing.
    pub fn new(kh: usize, kw: usize, weights: Vec<f64>) -> Result<Self> {
        check_size(kh, kw, weights.len())?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::param("kernel weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::param(format!("kernel weights sum to {sum}, not 1")));
        }
        Ok(Self { kh, kw, weights })
    }

    /// Rescales nonnegative weights onto the simplex.
    pub fn normalized(kh: usize, kw: usize, weights: Vec<f64>) -> Result<Self> {
        check_size(kh, kw, weights.len())?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::param("kernel weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::param("kernel weights sum to zero"));
        }
        Ok(Self {
            kh,
            kw,
            weights: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    /// Clip negatives to zero and renormalize; all-nonpositive input falls
    /// back to the uniform kernel. The flag reports the fallback.
    pub fn clip_to_simplex(kh: usize, kw: usize, raw: &[f64]) -> Result<(Self, bool)> {
        check_size(kh, kw, raw.len())?;
        let clipped: Vec<f64> = raw
            .iter()
            .map(|&v| if v.is_finite() && v > 0.0 { v } else { 0.0 })
            .collect();
        if clipped.iter().sum::<f64>() <= 0.0 {
            return Ok((Self::uniform(kh, kw)?, true));
        }
        Ok((Self::normalized(kh, kw, clipped)?, false))
    }

    pub fn delta() -> Self {
        Self {
            kh: 1,
            kw: 1,
            weights: vec![1.0],
        }
    }

    /// `size × size` kernel with all mass on the centre tap.
    pub fn centered_delta(size: usize) -> Result<Self> {
        check_size(size, size, size * size)?;
        let mut weights = vec![0.0; size * size];
        weights[(size / 2) * size + size / 2] = 1.0;
        Ok(Self {
            kh: size,
            kw: size,
            weights,
        })
    }

    pub fn uniform(kh: usize, kw: usize) -> Result<Self> {
        check_size(kh, kw, kh * kw)?;
        let v = 1.0 / (kh * kw) as f64;
        Ok(Self {
            kh,
            kw,
            weights: vec![v; kh * kw],
        })
    }

    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        if sigma <= 0.0 {
            return Err(Error::param("gaussian sigma must be positive"));
        }
        let c = (size / 2) as f64;
        let mut w = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let (di, dj) = (i as f64 - c, j as f64 - c);
                w.push((-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp());
            }
        }
        Self::normalized(size, size, w)
    }

    /// Linear motion blur of the given length (in pixels) and angle (radians),
    /// rasterized with bilinear splatting onto a `size × size` support.
    pub fn motion(size: usize, length: f64, angle: f64) -> Result<Self> {
        check_size(size, size, size * size)?;
        let c = (size / 2) as f64;
        let mut w = vec![0.0; size * size];
        let steps = 64;
        for s in 0..=steps {
            let t = (s as f64 / steps as f64 - 0.5) * length.min(size as f64 - 1.0);
            let (x, y) = (c + t * angle.cos(), c - t * angle.sin());
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    let (yi, xi) = (y0 + dy, x0 + dx);
                    if yi >= 0.0 && xi >= 0.0 && (yi as usize) < size && (xi as usize) < size {
                        w[yi as usize * size + xi as usize] += wx * wy;
                    }
                }
            }
        }
        Self::normalized(size, size, w)
    }

    pub fn height(&self) -> usize {
        self.kh
    }

    pub fn width(&self) -> usize {
        self.kw
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.kw + col]
    }

    /// Euclidean distance to another kernel after zero-padding both to the
    /// larger common support (centres aligned).
    pub fn l2_distance(&self, other: &BlurKernel) -> f64 {
        let kh = self.kh.max(other.kh);
        let kw = self.kw.max(other.kw);
        let a = self.padded(kh, kw);
        let b = other.padded(kh, kw);
        a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    /// Weights zero-padded to a larger odd support, centres aligned.
    pub fn padded(&self, kh: usize, kw: usize) -> Vec<f64> {
        assert!(kh >= self.kh && kw >= self.kw);
        let (oi, oj) = ((kh - self.kh) / 2, (kw - self.kw) / 2);
        let mut out = vec![0.0; kh * kw];
        for i in 0..self.kh {
            for j in 0..self.kw {
                out[(i + oi) * kw + j + oj] = self.weight(i, j);
            }
        }
        out
    }

    /// Unnormalized DFT of the kernel embedded periodically in an `h × w`
    /// grid with its centre tap at the origin. `transfer(..)[0] == 1`.
    pub fn transfer(&self, h: usize, w: usize) -> Vec<Complex64> {
        let mut plane = vec![0.0; h * w];
        let (ch, cw) = (self.kh / 2, self.kw / 2);
        for a in 0..self.kh {
            for b in 0..self.kw {
                let i = (a + h - ch % h) % h;
                let j = (b + w - cw % w) % w;
                plane[i * w + j] += self.weight(a, b);
            }
        }
        spectrum_of(&plane, h, w)
    }
}

fn check_size(kh: usize, kw: usize, len: usize) -> Result<()> {
    if kh == 0 || kw == 0 || kh.is_multiple_of(2) || kw.is_multiple_of(2) {
        return Err(Error::param(format!("kernel size {kh}x{kw} must be odd and positive")));
    }
    if len != kh * kw {
        return Err(Error::dim(format!("{len} weights for a {kh}x{kw} kernel")));
    }
    Ok(())
}
