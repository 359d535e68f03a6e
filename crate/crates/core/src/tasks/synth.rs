//! Seeded synthetic images and degradations.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::rng::StreamRng;

/// Piecewise-constant rectangles and discs over a smooth ramp, in `[0, 1]`.
pub fn shapes(h: usize, w: usize, rng: &mut StreamRng) -> ImageGrid {
    let base = 0.2 + 0.3 * rng.random::<f64>();
    let (gr, gc) = (0.2 * (rng.random::<f64>() - 0.5), 0.2 * (rng.random::<f64>() - 0.5));
    let mut u = ImageGrid::from_fn(h, w, |r, c| base + gr * r as f64 / h as f64 + gc * c as f64 / w as f64);
    let count = 6 + rng.random_range(0..5);
    for _ in 0..count {
        let v = rng.random::<f64>();
        let (cr, cc) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
        let size = (h.min(w) as f64) * (0.08 + 0.2 * rng.random::<f64>());
        let disc = rng.random::<bool>();
        let aspect = 0.5 + rng.random::<f64>();
        for r in 0..h {
            for c in 0..w {
                let (dr, dc) = (r as f64 - cr, c as f64 - cc);
                let inside = if disc {
                    dr * dr + dc * dc <= size * size
                } else {
                    dr.abs() <= size && dc.abs() <= size * aspect
                };
                if inside {
                    u.set(0, r, c, v);
                }
            }
        }
    }
    u.clamp01()
}

/// Adds `N(0, (sigma_pct/100)²)` per pixel.
pub fn add_noise(u: &ImageGrid, sigma_pct: f64, rng: &mut StreamRng) -> Result<ImageGrid> {
    if !(sigma_pct >= 0.0) || !sigma_pct.is_finite() {
        return Err(Error::param(format!(
            "noise level must be >= 0 percent, got {sigma_pct}"
        )));
    }
    if sigma_pct == 0.0 {
        return Ok(u.clone());
    }
    let normal = Normal::new(0.0, sigma_pct / 100.0).expect("positive std");
    let noise: Vec<f64> = (0..u.len()).map(|_| normal.sample(rng)).collect();
    Ok(u.with_data(u.data().iter().zip(&noise).map(|(a, b)| a + b).collect()))
}

/// Binary mask with each pixel missing (0) independently at `missing_rate`.
pub fn random_mask(h: usize, w: usize, missing_rate: f64, rng: &mut StreamRng) -> Result<ImageGrid> {
    if !(0.0..1.0).contains(&missing_rate) {
        return Err(Error::param(format!(
            "missing rate must lie in [0, 1), got {missing_rate}"
        )));
    }
    Ok(ImageGrid::from_fn(h, w, |_, _| {
        if rng.random::<f64>() < missing_rate {
            0.0
        } else {
            1.0
        }
    }))
}

/// Mask with lines of random 3×5 block glyphs (scaled 2×) removed.
pub fn text_mask(h: usize, w: usize, rng: &mut StreamRng) -> ImageGrid {
    let mut m = ImageGrid::filled(h, w, 1, 1.0);
    let (gh, gw, pitch) = (10, 6, 14);
    let mut top = 2;
    while top + gh < h {
        let mut left = 2;
        while left + gw < w {
            if rng.random::<f64>() < 0.85 {
                for gr in 0..5 {
                    for gc in 0..3 {
                        if rng.random::<bool>() {
                            for dr in 0..2 {
                                for dc in 0..2 {
                                    m.set(0, top + 2 * gr + dr, left + 2 * gc + dc, 0.0);
                                }
                            }
                        }
                    }
                }
            }
            left += gw + 2;
        }
        top += pitch;
    }
    m
}

/// Additive streak layer: short slanted bright lines.
pub fn rain_streaks(h: usize, w: usize, density: f64, rng: &mut StreamRng) -> Result<ImageGrid> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::param(format!("rain density must lie in [0, 1], got {density}")));
    }
    let mut s = ImageGrid::zeros(h, w, 1);
    let count = (density * (h * w) as f64 / 10.0).round() as usize;
    let angle = (rng.random::<f64>() - 0.5) * 0.6;
    for _ in 0..count {
        let (r0, c0) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
        let len = 4 + rng.random_range(0..8);
        let amp = 0.15 + 0.2 * rng.random::<f64>();
        for k in 0..len {
            let r = (r0 + k as f64 * angle.cos()).round() as isize;
            let c = (c0 + k as f64 * angle.sin()).round() as isize;
            let (r, c) = (r.rem_euclid(h as isize) as usize, c.rem_euclid(w as isize) as usize);
            s.set(0, r, c, amp.max(s.get(0, r, c)));
        }
    }
    Ok(s)
}

/// `clamp01(u + streaks)`.
pub fn add_rain(u: &ImageGrid, density: f64, rng: &mut StreamRng) -> Result<ImageGrid> {
    let s = rain_streaks(u.height(), u.width(), density, rng)?;
    Ok(u.add(&s).clamp01())
}
