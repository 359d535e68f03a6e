//! Image containers and the linear transforms every solver is built on.
//!
//! Boundaries are periodic throughout: convolution and finite differences
//! wrap around, so every quadratic sub-problem diagonalizes under the DFT.

mod fft;
mod kernel;
mod resample;
mod wavelet;

pub use fft::{conv2d_circular, fft2, ifft2, SpectralImage};
pub(crate) use fft::{ifft_plane_real, spectrum_of};
pub use kernel::BlurKernel;
pub use resample::resize_bicubic;
pub use wavelet::{dwt, idwt, WaveletCoeffs};

use crate::error::{Error, Result};

/// A `height × width × channels` field of reals.
///
/// Storage is planar: channel `c` occupies
/// `data[c*h*w .. (c+1)*h*w]`, each plane in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty image");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::dim("image dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::dim(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("image contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a single-channel image from a closure over `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            channels: 1,
            data,
        }
    }

    /// Stacks single- or multi-channel images along the channel axis.
    pub fn stack(parts: &[ImageGrid]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::dim("nothing to stack"))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.height != h || p.width != w {
                return Err(Error::dim("stacked images differ in size"));
            }
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        Ok(Self {
            height: h,
            width: w,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn channel(&self, c: usize) -> ImageGrid {
        ImageGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[c * self.plane_len() + row * self.width + col]
    }

    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f64) {
        let n = self.plane_len();
        self.data[c * n + row * self.width + col] = v;
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &ImageGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination; panics on shape mismatch (callers validate).
    pub fn zip_map(&self, other: &ImageGrid, f: impl Fn(f64, f64) -> f64) -> ImageGrid {
        assert!(self.same_shape(other), "zip_map shape mismatch");
        self.with_data(self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn sub(&self, other: &ImageGrid) -> ImageGrid {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &ImageGrid) -> ImageGrid {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> ImageGrid {
        self.map(|v| v * s)
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &ImageGrid) -> ImageGrid {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn dot(&self, other: &ImageGrid) -> f64 {
        assert!(self.same_shape(other), "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(&self, other: &ImageGrid) -> f64 {
        assert!(self.same_shape(other), "distance shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp01(&self) -> ImageGrid {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Applies `f` to each channel plane as a single-channel image and
    /// restacks the results.
    pub fn per_channel(&self, mut f: impl FnMut(&ImageGrid) -> Result<ImageGrid>) -> Result<ImageGrid> {
        if self.channels == 1 {
            return f(self);
        }
        let parts = (0..self.channels)
            .map(|c| f(&self.channel(c)))
            .collect::<Result<Vec<_>>>()?;
        ImageGrid::stack(&parts)
    }

    /// Same shape, new contents.
    pub fn with_data(&self, data: Vec<f64>) -> ImageGrid {
        assert_eq!(data.len(), self.data.len(), "with_data length mismatch");
        ImageGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }
}

/// Horizontal and vertical forward differences with periodic wrap.
pub fn grad_xy(u: &ImageGrid) -> (ImageGrid, ImageGrid) {
    let (h, w) = (u.height(), u.width());
    let mut gx = ImageGrid::zeros(h, w, u.channels());
    let mut gy = ImageGrid::zeros(h, w, u.channels());
    for c in 0..u.channels() {
        let src = u.plane(c);
        let px = gx.plane_mut(c);
        for i in 0..h {
            for j in 0..w {
                let jn = if j + 1 == w { 0 } else { j + 1 };
                px[i * w + j] = src[i * w + jn] - src[i * w + j];
            }
        }
        let py = gy.plane_mut(c);
        for i in 0..h {
            let inext = if i + 1 == h { 0 } else { i + 1 };
            for j in 0..w {
                py[i * w + j] = src[inext * w + j] - src[i * w + j];
            }
        }
    }
    (gx, gy)
}
