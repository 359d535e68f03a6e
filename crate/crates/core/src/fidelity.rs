//! Data-fidelity terms `f(u)` with gradients, curvature bounds and the
//! exact penalized solve `argmin f(u) + (γ/2)‖u − u_d‖²`.
//!
//! Fidelities carry no ½ factor: `f(u) = ‖A u − y‖²`, so `∇f = 2Aᵀ(Au − y)`
//! and the gradient-Lipschitz constant is `L = 2‖A‖²`. The identity
//! fidelity therefore has `L = 2`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ifft_plane_real, spectrum_of, BlurKernel, ImageGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FidelityKind {
    /// `‖u − y‖²`
    Identity,
    /// `‖u ⊗ k − y‖²`
    Deconv,
    /// `‖u ⊙ M − y‖²` with binary `M`
    Interp,
    /// `Σ_c ‖u_c ⊗ k − y_c‖²` over stacked gradient channels
    GradientDomain,
}

#[derive(Debug, Clone)]
pub struct Fidelity {
    kind: FidelityKind,
    y: ImageGrid,
    kernel: Option<BlurKernel>,
    mask: Option<ImageGrid>,
    // transfer function of the kernel and per-channel spectra of y
    kspec: Vec<Complex64>,
    yspec: Vec<Vec<Complex64>>,
}

impl Fidelity {
    pub fn identity(y: ImageGrid) -> Self {
        Self {
            kind: FidelityKind::Identity,
            y,
            kernel: None,
            mask: None,
            kspec: Vec::new(),
            yspec: Vec::new(),
        }
    }

    pub fn deconv(y: ImageGrid, kernel: BlurKernel) -> Result<Self> {
        Self::convolutional(FidelityKind::Deconv, y, kernel)
    }

    /// `y_grad` holds the observed horizontal and vertical gradients as
    /// two channels.
    pub fn gradient_domain(y_grad: ImageGrid, kernel: BlurKernel) -> Result<Self> {
        if y_grad.channels() != 2 {
            return Err(Error::dim(format!(
                "gradient-domain observation needs 2 channels, got {}",
                y_grad.channels()
            )));
        }
        Self::convolutional(FidelityKind::GradientDomain, y_grad, kernel)
    }

    fn convolutional(kind: FidelityKind, y: ImageGrid, kernel: BlurKernel) -> Result<Self> {
        let (h, w) = (y.height(), y.width());
        if kernel.height() > h || kernel.width() > w {
            return Err(Error::dim("kernel larger than observation"));
        }
        let kspec = kernel.transfer(h, w);
        let yspec = (0..y.channels()).map(|c| spectrum_of(y.plane(c), h, w)).collect();
        Ok(Self {
            kind,
            y,
            kernel: Some(kernel),
            mask: None,
            kspec,
            yspec,
        })
    }

    /// The observation is masked on construction, so values under
    /// `M = 0` are ignored.
    pub fn interp(y: ImageGrid, mask: ImageGrid) -> Result<Self> {
        y.ensure_same_shape(&mask, "interpolation mask")?;
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::param("interpolation mask must be binary {0, 1}"));
        }
        let y = y.zip_map(&mask, |v, m| v * m);
        Ok(Self {
            kind: FidelityKind::Interp,
            y,
            kernel: None,
            mask: Some(mask),
            kspec: Vec::new(),
            yspec: Vec::new(),
        })
    }

    pub fn kind(&self) -> FidelityKind {
        self.kind
    }

    pub fn observation(&self) -> &ImageGrid {
        &self.y
    }

    pub fn kernel(&self) -> Option<&BlurKernel> {
        self.kernel.as_ref()
    }

    pub fn mask(&self) -> Option<&ImageGrid> {
        self.mask.as_ref()
    }

    fn check(&self, u: &ImageGrid) -> Result<()> {
        u.ensure_same_shape(&self.y, "fidelity input")
    }

    // Per channel: spectrum of the residual K̂Û − Ŷ.
    fn residual_spectra(&self, u: &ImageGrid) -> Vec<Vec<Complex64>> {
        let (h, w) = (u.height(), u.width());
        (0..u.channels())
            .map(|c| {
                let mut s = spectrum_of(u.plane(c), h, w);
                for ((z, k), y) in s.iter_mut().zip(&self.kspec).zip(&self.yspec[c]) {
                    *z = *z * k - y;
                }
                s
            })
            .collect()
    }

    pub fn eval(&self, u: &ImageGrid) -> Result<f64> {
        self.check(u)?;
        Ok(match self.kind {
            FidelityKind::Identity => u.distance(&self.y).powi(2),
            FidelityKind::Interp => {
                let m = self.mask.as_ref().expect("interp mask");
                u.data()
                    .iter()
                    .zip(m.data())
                    .zip(self.y.data())
                    .map(|((&v, &mk), &y)| (v * mk - y).powi(2))
                    .sum()
            }
            FidelityKind::Deconv | FidelityKind::GradientDomain => {
                let n = u.plane_len() as f64;
                self.residual_spectra(u)
                    .iter()
                    .flat_map(|s| s.iter())
                    .map(|z| z.norm_sqr())
                    .sum::<f64>()
                    / n
            }
        })
    }

    pub fn grad(&self, u: &ImageGrid) -> Result<ImageGrid> {
        self.check(u)?;
        Ok(match self.kind {
            FidelityKind::Identity => u.zip_map(&self.y, |a, b| 2.0 * (a - b)),
            FidelityKind::Interp => {
                let m = self.mask.as_ref().expect("interp mask");
                let r = u.zip_map(m, |v, mk| v * mk).sub(&self.y);
                r.zip_map(m, |r, mk| 2.0 * r * mk)
            }
            FidelityKind::Deconv | FidelityKind::GradientDomain => {
                let (h, w) = (u.height(), u.width());
                let mut out = Vec::with_capacity(u.len());
                for mut s in self.residual_spectra(u) {
                    for (z, k) in s.iter_mut().zip(&self.kspec) {
                        *z = 2.0 * k.conj() * *z;
                    }
                    out.extend(ifft_plane_real(s, h, w));
                }
                u.with_data(out)
            }
        })
    }

    /// Gradient-Lipschitz constant `L`.
    pub fn lipschitz(&self) -> f64 {
        match self.kind {
            FidelityKind::Identity | FidelityKind::Interp => 2.0,
            FidelityKind::Deconv | FidelityKind::GradientDomain => {
                2.0 * self.kspec.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max)
            }
        }
    }

    /// Strong-convexity modulus `ρ`; zero when the operator is singular.
    pub fn strong_convexity(&self) -> f64 {
        match self.kind {
            FidelityKind::Identity => 2.0,
            FidelityKind::Interp => {
                let m = self.mask.as_ref().expect("interp mask");
                if m.data().iter().all(|&v| v == 1.0) {
                    2.0
                } else {
                    0.0
                }
            }
            FidelityKind::Deconv | FidelityKind::GradientDomain => {
                2.0 * self.kspec.iter().map(|z| z.norm_sqr()).fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Exact minimizer of `f(u) + (γ/2)‖u − u_d‖²`.
    pub fn penalized_solve(&self, u_d: &ImageGrid, gamma: f64) -> Result<ImageGrid> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::param(format!("penalty gamma must be > 0, got {gamma}")));
        }
        self.check(u_d)?;
        Ok(match self.kind {
            FidelityKind::Identity => u_d.zip_map(&self.y, |d, y| (2.0 * y + gamma * d) / (2.0 + gamma)),
            FidelityKind::Interp => {
                let m = self.mask.as_ref().expect("interp mask");
                let num = self.y.scale(2.0).axpy(gamma, u_d);
                num.zip_map(m, |n, mk| n / (2.0 * mk + gamma))
            }
            FidelityKind::Deconv | FidelityKind::GradientDomain => {
                let (h, w) = (u_d.height(), u_d.width());
                let mut out = Vec::with_capacity(u_d.len());
                for c in 0..u_d.channels() {
                    let mut s = spectrum_of(u_d.plane(c), h, w);
                    for ((z, k), y) in s.iter_mut().zip(&self.kspec).zip(&self.yspec[c]) {
                        *z = (2.0 * k.conj() * y + gamma * *z) / (2.0 * k.norm_sqr() + gamma);
                    }
                    out.extend(ifft_plane_real(s, h, w));
                }
                u_d.with_data(out)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::conv2d_circular;
    use nalgebra::{DMatrix, DVector, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(h: usize, w: usize, c: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
        let data = (0..h * w * c).map(|_| rng.random::<f64>()).collect();
        ImageGrid::from_vec(h, w, c, data).unwrap()
    }

    fn rand_kernel(size: usize, rng: &mut ChaCha8Rng) -> BlurKernel {
        let raw = (0..size * size).map(|_| rng.random::<f64>()).collect();
        BlurKernel::normalized(size, size, raw).unwrap()
    }

    // Dense circulant matrix of u ↦ u ⊗ k built column by column from the
    // spatial definition.
    fn circulant(k: &BlurKernel, h: usize, w: usize) -> DMatrix<f64> {
        let n = h * w;
        let mut a = DMatrix::zeros(n, n);
        let (ch, cw) = (k.height() as i64 / 2, k.width() as i64 / 2);
        for i in 0..h as i64 {
            for j in 0..w as i64 {
                for p in 0..k.height() as i64 {
                    for q in 0..k.width() as i64 {
                        let si = (i - (p - ch)).rem_euclid(h as i64);
                        let sj = (j - (q - cw)).rem_euclid(w as i64);
                        a[((i * w as i64 + j) as usize, (si * w as i64 + sj) as usize)] +=
                            k.weight(p as usize, q as usize);
                    }
                }
            }
        }
        a
    }

    #[test]
    fn identity_at_data_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = rand_img(5, 6, 1, &mut rng);
        let f = Fidelity::identity(y.clone());
        assert_eq!(f.eval(&y).unwrap(), 0.0);
        assert!(f.grad(&y).unwrap().norm() == 0.0);
        assert!(f.penalized_solve(&y, 0.7).unwrap().distance(&y) < 1e-14);
    }

    #[test]
    fn delta_deconv_reduces_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = rand_img(6, 6, 1, &mut rng);
        let u = rand_img(6, 6, 1, &mut rng);
        let a = Fidelity::identity(y.clone());
        let b = Fidelity::deconv(y, BlurKernel::delta()).unwrap();
        assert!((a.eval(&u).unwrap() - b.eval(&u).unwrap()).abs() < 1e-10);
        assert!(a.grad(&u).unwrap().distance(&b.grad(&u).unwrap()) < 1e-10);
        assert!((b.lipschitz() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn deconv_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = rand_img(8, 8, 1, &mut rng);
        let u = rand_img(8, 8, 1, &mut rng);
        let f = Fidelity::deconv(y, rand_kernel(3, &mut rng)).unwrap();
        let g = f.grad(&u).unwrap();
        let h = 1e-5;
        for idx in 0..64 {
            let mut up = u.clone();
            let mut dn = u.clone();
            up.data_mut()[idx] += h;
            dn.data_mut()[idx] -= h;
            let fd = (f.eval(&up).unwrap() - f.eval(&dn).unwrap()) / (2.0 * h);
            let an = g.data()[idx];
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-2), "{idx}: {fd} vs {an}");
        }
    }

    #[test]
    fn deconv_eval_matches_spatial_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = rand_img(7, 9, 2, &mut rng);
        let u = rand_img(7, 9, 2, &mut rng);
        let k = rand_kernel(3, &mut rng);
        let f = Fidelity::deconv(y.clone(), k.clone()).unwrap();
        let r = conv2d_circular(&u, &k).unwrap().sub(&y);
        assert!((f.eval(&u).unwrap() - r.norm_sq()).abs() < 1e-10);
    }

    #[test]
    fn penalized_solve_matches_dense_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = rand_img(8, 8, 1, &mut rng);
        let ud = rand_img(8, 8, 1, &mut rng);
        let k = rand_kernel(3, &mut rng);
        let gamma = 0.3;
        let a = circulant(&k, 8, 8);
        let lhs = 2.0 * a.transpose() * &a + gamma * DMatrix::identity(64, 64);
        let rhs = 2.0 * a.transpose() * DVector::from_row_slice(y.data()) + gamma * DVector::from_row_slice(ud.data());
        let x = lhs.lu().solve(&rhs).unwrap();
        let f = Fidelity::deconv(y, k).unwrap();
        let got = f.penalized_solve(&ud, gamma).unwrap();
        let err: f64 = (0..64).map(|i| (got.data()[i] - x[i]).powi(2)).sum::<f64>().sqrt();
        assert!(err / x.norm() < 1e-8);
    }

    #[test]
    fn strong_convexity_matches_dense_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = rand_img(8, 8, 1, &mut rng);
        let k = BlurKernel::normalized(3, 3, vec![0.02, 0.05, 0.02, 0.05, 0.72, 0.05, 0.02, 0.05, 0.02]).unwrap();
        let a = circulant(&k, 8, 8);
        let hess = 2.0 * a.transpose() * &a;
        let eig = SymmetricEigen::new(hess).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        let f = Fidelity::deconv(y, k).unwrap();
        assert!((f.strong_convexity() - lo).abs() < 1e-10);
        assert!((f.lipschitz() - hi).abs() < 1e-10);
    }

    #[test]
    fn penalized_solve_is_stationary_and_penalty_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y = rand_img(8, 8, 1, &mut rng);
        let ud = rand_img(8, 8, 1, &mut rng);
        let mask = ImageGrid::from_fn(8, 8, |i, j| ((i + j) % 3 != 0) as u8 as f64);
        let k = rand_kernel(3, &mut rng);
        let fids = [
            Fidelity::identity(y.clone()),
            Fidelity::deconv(y.clone(), k).unwrap(),
            Fidelity::interp(y.clone(), mask).unwrap(),
        ];
        for f in &fids {
            let gamma = 0.9;
            let u = f.penalized_solve(&ud, gamma).unwrap();
            let g = f.grad(&u).unwrap().axpy(gamma, &u.sub(&ud));
            assert!(g.norm() <= 1e-8 * (1.0 + ud.norm()), "{:?}", f.kind());
            let far = f.penalized_solve(&ud, 1e12).unwrap();
            assert!(far.distance(&ud) < 1e-6);
        }
    }

    #[test]
    fn lipschitz_and_convexity_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = rand_img(8, 8, 1, &mut rng);
        let mask = ImageGrid::from_fn(8, 8, |i, _| (i % 2) as f64);
        let fids = [
            Fidelity::identity(y.clone()),
            Fidelity::deconv(y.clone(), rand_kernel(3, &mut rng)).unwrap(),
            Fidelity::interp(y.clone(), mask).unwrap(),
        ];
        for f in &fids {
            for _ in 0..20 {
                let a = rand_img(8, 8, 1, &mut rng);
                let b = rand_img(8, 8, 1, &mut rng);
                let dg = f.grad(&a).unwrap().distance(&f.grad(&b).unwrap());
                assert!(dg <= f.lipschitz() * a.distance(&b) * (1.0 + 1e-6));
                let mid = a.add(&b).scale(0.5);
                let lhs = f.eval(&mid).unwrap();
                let rhs = 0.5 * f.eval(&a).unwrap() + 0.5 * f.eval(&b).unwrap();
                assert!(lhs <= rhs + 1e-12);
                assert!(f.eval(&a).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn interp_rejects_soft_masks_and_full_mask_reduces_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = rand_img(4, 4, 1, &mut rng);
        assert!(Fidelity::interp(y.clone(), ImageGrid::filled(4, 4, 1, 0.5)).is_err());
        let full = Fidelity::interp(y.clone(), ImageGrid::filled(4, 4, 1, 1.0)).unwrap();
        let id = Fidelity::identity(y);
        let u = rand_img(4, 4, 1, &mut rng);
        assert!((full.eval(&u).unwrap() - id.eval(&u).unwrap()).abs() < 1e-12);
        assert_eq!(full.strong_convexity(), 2.0);
        assert!(full.penalized_solve(&u, 0.0).is_err());
    }

    #[test]
    fn gradient_domain_needs_two_channels() {
        assert!(Fidelity::gradient_domain(ImageGrid::zeros(8, 8, 1), BlurKernel::delta()).is_err());
        assert!(Fidelity::gradient_domain(ImageGrid::zeros(8, 8, 2), BlurKernel::delta()).is_ok());
    }
}
