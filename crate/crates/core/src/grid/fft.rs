use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{BlurKernel, ImageGrid};
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Per-channel 2-D DFT coefficients of an [`ImageGrid`], unitary scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<Complex64>,
}

impl SpectralImage {
    pub fn plane(&self, c: usize) -> &[Complex64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Unnormalized in-place 2-D transform of one `h × w` plane.
pub(crate) fn fft_plane(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(data.len(), h * w);
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let (row, col) = if inverse {
            (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
        } else {
            (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
        };
        row.process(data);
        let mut t = vec![Complex64::new(0.0, 0.0); h * w];
        transpose(data, &mut t, h, w);
        col.process(&mut t);
        transpose(&t, data, w, h);
    });
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

/// Unnormalized forward spectrum of one real plane.
pub(crate) fn spectrum_of(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_plane(&mut buf, h, w, false);
    buf
}

/// Inverse of [`spectrum_of`]: unnormalized inverse, scaled by `1/(h w)`,
/// real part kept.
pub(crate) fn ifft_plane_real(mut spec: Vec<Complex64>, h: usize, w: usize) -> Vec<f64> {
    fft_plane(&mut spec, h, w, true);
    let s = 1.0 / (h * w) as f64;
    spec.into_iter().map(|z| z.re * s).collect()
}

pub fn fft2(u: &ImageGrid) -> SpectralImage {
    let (h, w) = (u.height(), u.width());
    let s = 1.0 / ((h * w) as f64).sqrt();
    let mut data = Vec::with_capacity(u.len());
    for c in 0..u.channels() {
        data.extend(spectrum_of(u.plane(c), h, w).into_iter().map(|z| z * s));
    }
    SpectralImage {
        height: h,
        width: w,
        channels: u.channels(),
        data,
    }
}

/// Inverse unitary transform; the imaginary residue is discarded.
pub fn ifft2(s: &SpectralImage) -> ImageGrid {
    let (h, w) = (s.height, s.width);
    let n = h * w;
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = Vec::with_capacity(s.data.len());
    for c in 0..s.channels {
        let mut buf = s.plane(c).to_vec();
        fft_plane(&mut buf, h, w, true);
        out.extend(buf.into_iter().map(|z| z.re * scale));
    }
    ImageGrid::from_vec(h, w, s.channels, out).expect("inverse transform of finite spectrum")
}

/// Periodic convolution `u ⊗ k`, kernel centred on its middle tap.
pub fn conv2d_circular(u: &ImageGrid, k: &BlurKernel) -> Result<ImageGrid> {
    let (h, w) = (u.height(), u.width());
    if k.height() > h || k.width() > w {
        return Err(Error::dim(format!(
            "{}x{} kernel does not fit a {h}x{w} image",
            k.height(),
            k.width()
        )));
    }
    let kspec = k.transfer(h, w);
    let mut out = Vec::with_capacity(u.len());
    for c in 0..u.channels() {
        let mut spec = spectrum_of(u.plane(c), h, w);
        for (z, kz) in spec.iter_mut().zip(&kspec) {
            *z *= kz;
        }
        out.extend(ifft_plane_real(spec, h, w));
    }
    Ok(u.with_data(out))
}
