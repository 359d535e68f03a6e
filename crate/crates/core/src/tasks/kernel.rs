//! Kernel estimation: `argmin_{k ∈ Δ} ½‖u ⊗ k − y‖² + μ‖k‖²`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ifft_plane_real, spectrum_of, BlurKernel, ImageGrid};

const QP_MAX_ITERS: usize = 20_000;
const QP_TOL: f64 = 1e-13;

/// Kernel estimate and whether the uniform fallback was taken.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub kernel: BlurKernel,
    pub fallback: bool,
}

/// Euclidean projection onto `{x : x ≥ 0, Σx = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in s.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Normal equations of the kernel problem restricted to a `size × size`
/// support: `A = Σ_c UᵀU + 2μI`, `b = Σ_c Uᵀy`, `e = ½Σ_c‖y‖²`, so that
/// the objective is `½kᵀAk − bᵀk + e`.
#[derive(Debug, Clone)]
pub struct KernelQp {
    pub size: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub e: f64,
}

impl KernelQp {
    pub fn new(u: &ImageGrid, y: &ImageGrid, mu: f64, size: usize) -> Result<Self> {
        u.ensure_same_shape(y, "kernel data")?;
        let (h, w) = (u.height(), u.width());
        if size > h || size > w {
            return Err(Error::dim(format!("{size}x{size} kernel does not fit a {h}x{w} image")));
        }
        let c = size / 2;
        let n = size * size;
        let span = 2 * size - 1;
        // R(s) = Σ u(z)u(z+s), C(s) = Σ u(z)y(z+s) over offsets |s| < size
        let mut auto = vec![0.0; span * span];
        let mut b = vec![0.0; n];
        for ch in 0..u.channels() {
            let (up, yp) = (u.plane(ch), y.plane(ch));
            for (oi, di) in (-(size as isize - 1)..size as isize).enumerate() {
                for (oj, dj) in (-(size as isize - 1)..size as isize).enumerate() {
                    let mut r = 0.0;
                    let mut cy = 0.0;
                    for i in 0..h {
                        let i2 = (i as isize + di).rem_euclid(h as isize) as usize;
                        for j in 0..w {
                            let j2 = (j as isize + dj).rem_euclid(w as isize) as usize;
                            let uv = up[i * w + j];
                            r += uv * up[i2 * w + j2];
                            cy += uv * yp[i2 * w + j2];
                        }
                    }
                    auto[oi * span + oj] += r;
                    let (ka, kb) = (di + c as isize, dj + c as isize);
                    if (0..size as isize).contains(&ka) && (0..size as isize).contains(&kb) {
                        b[ka as usize * size + kb as usize] += cy;
                    }
                }
            }
        }
        let mut a = vec![0.0; n * n];
        for p in 0..n {
            for q in 0..n {
                let di = (p / size) as isize - (q / size) as isize;
                let dj = (p % size) as isize - (q % size) as isize;
                let oi = (di + size as isize - 1) as usize;
                let oj = (dj + size as isize - 1) as usize;
                a[p * n + q] = auto[oi * span + oj];
            }
            a[p * n + p] += 2.0 * mu;
        }
        let e = 0.5 * y.norm_sq();
        Ok(Self { size, a, b, e })
    }

    pub fn objective(&self, k: &[f64]) -> f64 {
        let n = k.len();
        let mut quad = 0.0;
        for p in 0..n {
            let row: f64 = self.a[p * n..(p + 1) * n].iter().zip(k).map(|(x, y)| x * y).sum();
            quad += k[p] * row;
        }
        0.5 * quad - self.b.iter().zip(k).map(|(x, y)| x * y).sum::<f64>() + self.e
    }

    fn gradient(&self, k: &[f64], out: &mut [f64]) {
        let n = k.len();
        for ((o, row), b) in out.iter_mut().zip(self.a.chunks_exact(n)).zip(&self.b) {
            *o = row.iter().zip(k).map(|(x, y)| x * y).sum::<f64>() - b;
        }
    }

    /// Accelerated projected gradient with adaptive restart from `k0`.
    pub fn solve_on_simplex(&self, k0: &[f64]) -> Vec<f64> {
        let n = k0.len();
        // Gershgorin bound on the largest eigenvalue
        let lip = (0..n)
            .map(|p| self.a[p * n..(p + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        if lip == 0.0 {
            return project_simplex(k0);
        }
        let mut x = project_simplex(k0);
        let mut z = x.clone();
        let mut t = 1.0f64;
        let mut g = vec![0.0; n];
        for _ in 0..QP_MAX_ITERS {
            self.gradient(&z, &mut g);
            let step: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - gi / lip).collect();
            let xn = project_simplex(&step);
            let moved: f64 = xn.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            // restart momentum when it points uphill
            let uphill: f64 = g.iter().zip(xn.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            let tn = if uphill > 0.0 {
                1.0
            } else {
                0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
            };
            let beta = if uphill > 0.0 { 0.0 } else { (t - 1.0) / tn };
            z = xn.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
            x = xn;
            t = tn;
            if moved <= QP_TOL {
                break;
            }
        }
        x
    }
}

/// Estimates a `size × size` kernel from latent and observed gradient
/// fields (any matching channel count).
///
/// A Fourier-domain ridge solve over the full grid is cropped to the
/// support and clipped onto the simplex; that point then seeds an exact
/// projected-gradient solve of the constrained problem. Degenerate data
/// (all-zero latent gradients) yields the uniform kernel with `fallback`
/// set.
pub fn solve_kernel(u_grad: &ImageGrid, y_grad: &ImageGrid, mu: f64, size: usize) -> Result<KernelEstimate> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::param(format!("kernel ridge weight must be > 0, got {mu}")));
    }
    if size.is_multiple_of(2) || size == 0 {
        return Err(Error::param(format!("kernel size must be odd, got {size}")));
    }
    u_grad.ensure_same_shape(y_grad, "kernel data")?;
    if !u_grad.is_finite() || !y_grad.is_finite() {
        return Err(Error::param("kernel data must be finite"));
    }
    let (h, w) = (u_grad.height(), u_grad.width());
    let qp = KernelQp::new(u_grad, y_grad, mu, size)?;
    if u_grad.norm_sq() == 0.0 {
        return Ok(KernelEstimate {
            kernel: BlurKernel::uniform(size, size)?,
            fallback: true,
        });
    }
    let mut num = vec![Complex64::new(0.0, 0.0); h * w];
    let mut den = vec![2.0 * mu; h * w];
    for ch in 0..u_grad.channels() {
        let us = spectrum_of(u_grad.plane(ch), h, w);
        let ys = spectrum_of(y_grad.plane(ch), h, w);
        for i in 0..h * w {
            num[i] += us[i].conj() * ys[i];
            den[i] += us[i].norm_sqr();
        }
    }
    let full = ifft_plane_real(num.iter().zip(&den).map(|(n, d)| n / d).collect(), h, w);
    let c = size / 2;
    let mut raw = vec![0.0; size * size];
    for a in 0..size {
        for b in 0..size {
            let i = (a + h - c) % h;
            let j = (b + w - c) % w;
            raw[a * size + b] = full[i * w + j];
        }
    }
    let (init, fallback) = BlurKernel::clip_to_simplex(size, size, &raw)?;
    let k = qp.solve_on_simplex(init.weights());
    let kernel = BlurKernel::normalized(size, size, k)?;
    Ok(KernelEstimate { kernel, fallback })
}

/// Shifts the kernel by whole taps so its centroid lands on the centre tap.
/// Mass shifted off the support is dropped and the rest renormalized.
pub fn recenter(k: &BlurKernel) -> Result<BlurKernel> {
    let (kh, kw) = (k.height(), k.width());
    let (mut cr, mut cc) = (0.0, 0.0);
    for a in 0..kh {
        for b in 0..kw {
            cr += a as f64 * k.weight(a, b);
            cc += b as f64 * k.weight(a, b);
        }
    }
    let dr = (kh / 2) as isize - cr.round() as isize;
    let dc = (kw / 2) as isize - cc.round() as isize;
    if dr == 0 && dc == 0 {
        return Ok(k.clone());
    }
    let mut out = vec![0.0; kh * kw];
    for a in 0..kh as isize {
        for b in 0..kw as isize {
            let (na, nb) = (a + dr, b + dc);
            if (0..kh as isize).contains(&na) && (0..kw as isize).contains(&nb) {
                out[na as usize * kw + nb as usize] = k.weight(a as usize, b as usize);
            }
        }
    }
    Ok(BlurKernel::clip_to_simplex(kh, kw, &out)?.0)
}
