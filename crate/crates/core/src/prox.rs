//! Sparsity priors `λ Σ |c_i|^p` and their exact proximal maps.
//!
//! Three exponents are supported: `p = 1` (soft threshold), `p = 0` (hard
//! threshold) and the hyper-Laplacian quasi-norm `p = 0.8`, whose prox has
//! no closed form and is solved by Newton's method above an analytic
//! threshold. Priors act either pointwise or on orthonormal Haar
//! coefficients, where orthonormality makes the prox exact.

use crate::error::{Error, Result};
use crate::grid::{dwt, idwt, ImageGrid, WaveletCoeffs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exponent {
    Zero,
    PointEight,
    One,
}

impl Exponent {
    pub fn from_value(p: f64) -> Result<Self> {
        if p == 0.0 {
            Ok(Exponent::Zero)
        } else if p == 0.8 {
            Ok(Exponent::PointEight)
        } else if p == 1.0 {
            Ok(Exponent::One)
        } else {
            Err(Error::param(format!(
                "unsupported prior exponent {p} (use 0, 0.8 or 1)"
            )))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Exponent::Zero => 0.0,
            Exponent::PointEight => 0.8,
            Exponent::One => 1.0,
        }
    }

    /// `|x|^p`, with the convention `|x|^0 = [|x| > ZERO_TOL]`.
    pub fn penalty(self, x: f64) -> f64 {
        match self {
            Exponent::Zero => (x.abs() > ZERO_TOL) as u8 as f64,
            Exponent::PointEight => x.abs().powf(0.8),
            Exponent::One => x.abs(),
        }
    }
}

/// Coefficients at or below this magnitude count as zero in the `ℓ0`
/// penalty; frame round trips leave rounding noise in zeroed coefficients.
pub const ZERO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// Orthonormal Haar coefficients with the given number of levels.
    Wavelet {
        levels: usize,
    },
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub exponent: Exponent,
    pub lambda: f64,
    pub frame: Frame,
}

impl PriorSpec {
    pub fn new(exponent: Exponent, lambda: f64, frame: Frame) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::param(format!("prior weight must be >= 0, got {lambda}")));
        }
        if let Frame::Wavelet { levels: 0 } = frame {
            return Err(Error::param("wavelet frame needs at least one level"));
        }
        Ok(Self {
            exponent,
            lambda,
            frame,
        })
    }

    /// `φ(u) = λ Σ |(frame u)_i|^p`
    pub fn value(&self, u: &ImageGrid) -> Result<f64> {
        if self.lambda == 0.0 {
            return Ok(0.0);
        }
        let coeffs = self.analyze(u)?;
        let s: f64 = coeffs.data().iter().map(|&c| self.exponent.penalty(c)).sum();
        Ok(self.lambda * s)
    }

    fn analyze(&self, u: &ImageGrid) -> Result<ImageGrid> {
        match self.frame {
            Frame::Identity => Ok(u.clone()),
            Frame::Wavelet { levels } => Ok(dwt(u, levels)?.coeffs),
        }
    }
}

/// `argmin_v λ|v|^p + ½(v − x)²`.
///
/// Ties between zero and a nonzero minimizer resolve to zero for `p = 0.8`
/// and to keeping `x` for `p = 0` (`x² = 2λ` keeps).
pub fn prox_scalar(x: f64, lambda: f64, p: Exponent) -> f64 {
    debug_assert!(lambda >= 0.0);
    if lambda == 0.0 || x == 0.0 {
        return x;
    }
    match p {
        Exponent::One => x.signum() * (x.abs() - lambda).max(0.0),
        Exponent::Zero => {
            if x * x >= 2.0 * lambda {
                x
            } else {
                0.0
            }
        }
        Exponent::PointEight => x.signum() * prox_hyper_laplacian(x.abs(), lambda, 0.8),
    }
}

/// Threshold below which zero is the minimizer of `λ|v|^p + ½(v − x)²`,
/// `0 < p < 1`.
pub fn hyper_laplacian_threshold(lambda: f64, p: f64) -> f64 {
    let v = (2.0 * lambda * (1.0 - p)).powf(1.0 / (2.0 - p));
    v + lambda * p * v.powf(p - 1.0)
}

// Nonnegative branch for |x| = a > 0.
fn prox_hyper_laplacian(a: f64, lambda: f64, p: f64) -> f64 {
    if a <= hyper_laplacian_threshold(lambda, p) {
        return 0.0;
    }
    // h(v) = v + λ p v^{p-1} − a is convex on v > 0; Newton from v = a
    // descends monotonically onto the larger root.
    let mut v = a;
    for _ in 0..100 {
        let h = v + lambda * p * v.powf(p - 1.0) - a;
        let dh = 1.0 + lambda * p * (p - 1.0) * v.powf(p - 2.0);
        let next = v - h / dh;
        if !(next > 0.0) {
            break;
        }
        let done = (next - v).abs() <= 1e-15 * v.max(1e-300);
        v = next;
        if done {
            break;
        }
    }
    let g = |t: f64| lambda * t.powf(p) + 0.5 * (t - a) * (t - a);
    if g(v) < 0.5 * a * a {
        v
    } else {
        0.0
    }
}

/// `argmin_v φ(v) + (γ/2)‖v − u‖²` for the given prior.
///
/// In the wavelet frame this is `B · prox(Bᵀu; λ/γ)`; channels are
/// processed independently.
pub fn prox_prior(u: &ImageGrid, spec: &PriorSpec, gamma: f64) -> Result<ImageGrid> {
    if !(gamma > 0.0) {
        return Err(Error::param(format!("prox step gamma must be > 0, got {gamma}")));
    }
    if spec.lambda == 0.0 {
        return Ok(u.clone());
    }
    let t = spec.lambda / gamma;
    let shrink = |c: f64| prox_scalar(c, t, spec.exponent);
    match spec.frame {
        Frame::Identity => Ok(u.map(shrink)),
        Frame::Wavelet { levels } => {
            let c = dwt(u, levels)?;
            let shrunk = WaveletCoeffs {
                levels,
                coeffs: c.coeffs.map(shrink),
            };
            idwt(&shrunk)
        }
    }
}
