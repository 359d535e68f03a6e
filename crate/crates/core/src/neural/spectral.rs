//! Spectral-norm estimation, architecture normalization and empirical
//! Lipschitz measurements.

use rand::Rng;

use super::{AnState, ConvNetModule, Role};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::rng::{SeedStreams, STREAM_PROBE};

const MAX_ITERS: usize = 200;
const REL_TOL: f64 = 1e-6;
const PROBE_SIZE: usize = 16;

/// Largest singular value of the row-major `rows × cols` matrix `a`.
///
/// Iterates `z ← (aaᵀ)z / ‖(aaᵀ)z‖` and evaluates
/// `ϱ = zᵀ(aaᵀ)²z / (‖aᵀz‖ ‖aaᵀz‖)` until the unit iterate `z` moves by
/// less than 1e-6 or 200 iterations pass. `z` is the warm start and is updated in
/// place; a wrong-length `z` is reinitialized.
pub fn spectral_norm(a: &[f64], rows: usize, cols: usize, z: &mut Vec<f64>) -> f64 {
    assert_eq!(a.len(), rows * cols);
    if z.len() != rows || z.iter().all(|&v| v == 0.0) {
        *z = (0..rows).map(|i| 1.0 + 0.1 * ((i + 1) as f64).sin()).collect();
    }
    let mut at_z = vec![0.0; cols];
    let mut m_z = vec![0.0; rows];
    let mut rho = 0.0;
    for _ in 0..MAX_ITERS {
        // aᵀz
        at_z.fill(0.0);
        for (r, &zr) in z.iter().enumerate() {
            let row = &a[r * cols..(r + 1) * cols];
            at_z.iter_mut().zip(row).for_each(|(o, v)| *o += zr * v);
        }
        // a aᵀ z
        for (r, o) in m_z.iter_mut().enumerate() {
            *o = a[r * cols..(r + 1) * cols].iter().zip(&at_z).map(|(x, y)| x * y).sum();
        }
        let n_atz = norm(&at_z);
        let n_mz = norm(&m_z);
        if n_atz == 0.0 || n_mz == 0.0 {
            return 0.0;
        }
        // zᵀ(aaᵀ)²z = ‖aaᵀz‖²
        rho = n_mz * n_mz / (n_atz * n_mz);
        let z_norm = norm(z);
        let mut change = 0.0;
        for (zi, &v) in z.iter_mut().zip(&m_z) {
            let next = v / n_mz;
            change += (next - *zi / z_norm).powi(2);
            *zi = next;
        }
        if change.sqrt() <= REL_TOL {
            break;
        }
    }
    rho
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales every layer to `ω / ϱ(ω) · δ^{1/K}`, where `ϱ` is the spectral
/// norm of the kernel matricized as `out × (in·kh·kw)`.
pub fn an_normalize(m: &ConvNetModule, delta: f64) -> Result<ConvNetModule> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::param(format!("AN target delta must lie in (0, 1], got {delta}")));
    }
    let mut out = m.clone();
    let k = out.layers.len();
    let per_layer = delta.powf(1.0 / k as f64);
    let mut zs =
        m.an.as_ref()
            .map(|s| s.z.clone())
            .unwrap_or_else(|| vec![Vec::new(); k]);
    for (layer, z) in out.layers.iter_mut().zip(&mut zs) {
        let cols = layer.in_ch * layer.kh * layer.kw;
        let rho = spectral_norm(&layer.weights, layer.out_ch, cols, z);
        if rho > 0.0 {
            let s = per_layer / rho;
            layer.weights.iter_mut().for_each(|w| *w *= s);
        }
    }
    out.an = Some(AnState { delta, z: zs });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
}

impl LipschitzEstimate {
    /// Counts of ratios in `bins` equal-width bins over `[0, max_ratio]`.
    pub fn histogram(&self, bins: usize) -> Vec<usize> {
        let mut counts = vec![0; bins.max(1)];
        let top = self.max_ratio;
        for &r in &self.ratios {
            let b = if top > 0.0 {
                ((r / top) * bins as f64) as usize
            } else {
                0
            };
            counts[b.min(bins.max(1) - 1)] += 1;
        }
        counts
    }
}

/// Ratios `‖N(a) − N(b)‖ / ‖a − b‖` over `samples` pairs of independent
/// uniform 16×16 images. `N` is the residual map `G` for a generative
/// module and the score gradient for a discriminative one.
pub fn estimate_lipschitz(m: &ConvNetModule, samples: usize, seed: u64) -> Result<LipschitzEstimate> {
    if samples == 0 {
        return Err(Error::param("estimate_lipschitz needs at least one sample"));
    }
    let mut rng = SeedStreams::new(seed).stream(STREAM_PROBE);
    let mut draw = || ImageGrid::from_fn(PROBE_SIZE, PROBE_SIZE, |_, _| rng.random::<f64>());
    let pairs: Vec<(ImageGrid, ImageGrid)> = (0..samples).map(|_| (draw(), draw())).collect();
    estimate_lipschitz_on(m, &pairs)
}

/// As [`estimate_lipschitz`] over caller-supplied pairs.
pub fn estimate_lipschitz_on(m: &ConvNetModule, pairs: &[(ImageGrid, ImageGrid)]) -> Result<LipschitzEstimate> {
    let map = |u: &ImageGrid| match m.role() {
        Role::Gm => m.residual(u),
        Role::Dm => m.input_grad(u),
    };
    let mut ratios = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let den = a.distance(b);
        if den == 0.0 {
            continue;
        }
        ratios.push(map(a)?.distance(&map(b)?) / den);
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(LipschitzEstimate { ratios, max_ratio })
}
