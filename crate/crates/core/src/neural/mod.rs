//! Small residual convolutional networks with hand-written backpropagation.
//!
//! A module maps one image plane to one plane. Multi-channel images are
//! processed channel by channel with shared weights. All convolutions are
//! circular, matching the periodic boundaries of the solvers.
//!
//! Two roles exist. A generative module returns `u + G(u)`. A
//! discriminative module reduces its final map to a scalar score by global
//! averaging and is used through the input gradient of that score.

mod checkpoint;
mod spectral;
mod train;

pub use checkpoint::CHECKPOINT_VERSION;
pub use spectral::{an_normalize, estimate_lipschitz, estimate_lipschitz_on, spectral_norm, LipschitzEstimate};
pub use train::{train_dm, train_gm, Loss, TrainConfig, TrainReport};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::rng::StreamRng;

/// Default feature width of hidden layers.
pub const DEFAULT_WIDTH: usize = 16;
/// Default number of convolution layers in a generative module.
pub const GM_DEPTH: usize = 7;
/// Default DM step `α_d`.
pub const DEFAULT_ALPHA_D: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Gm,
    Dm,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Gm => "GM",
            Role::Dm => "DM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

/// One convolution with weights laid out `[out][in][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl ConvLayer {
    pub fn zeros(out_ch: usize, in_ch: usize, kh: usize, kw: usize, activation: Activation) -> Self {
        Self {
            out_ch,
            in_ch,
            kh,
            kw,
            weights: vec![0.0; out_ch * in_ch * kh * kw],
            bias: vec![0.0; out_ch],
            activation,
        }
    }

    /// He-normal weights scaled by `gain`, zero bias.
    pub fn random(
        out_ch: usize,
        in_ch: usize,
        k: usize,
        activation: Activation,
        gain: f64,
        rng: &mut StreamRng,
    ) -> Self {
        let mut layer = Self::zeros(out_ch, in_ch, k, k, activation);
        let std = gain * (2.0 / (in_ch * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for w in &mut layer.weights {
            *w = normal.sample(rng);
        }
        layer
    }

    fn taps(&self) -> usize {
        self.kh * self.kw
    }

    fn validate(&self) -> Result<()> {
        if self.kh.is_multiple_of(2) || self.kw.is_multiple_of(2) || self.out_ch == 0 || self.in_ch == 0 {
            return Err(Error::param("conv layer needs odd kernel size and nonzero channels"));
        }
        if self.weights.len() != self.out_ch * self.in_ch * self.taps() || self.bias.len() != self.out_ch {
            return Err(Error::dim("conv layer parameter length"));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let hw = h * w;
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        for o in 0..self.out_ch {
            let dst = &mut out[o * hw..(o + 1) * hw];
            dst.fill(self.bias[o]);
            for c in 0..self.in_ch {
                let src = &x[c * hw..(c + 1) * hw];
                for p in 0..self.kh {
                    for q in 0..self.kw {
                        let wv = self.weights[((o * self.in_ch + c) * self.kh + p) * self.kw + q];
                        if wv == 0.0 {
                            continue;
                        }
                        let (di, dj) = (p as isize - ph, q as isize - pw);
                        for i in 0..h {
                            let si = wrap(i as isize + di, h);
                            shift_axpy(&mut dst[i * w..(i + 1) * w], &src[si * w..(si + 1) * w], dj, wv);
                        }
                    }
                }
            }
        }
    }

    // Accumulates parameter gradients into `gw`/`gb` and, when requested,
    // writes the input gradient into `gx`.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        x: &[f64],
        gout: &[f64],
        h: usize,
        w: usize,
        gw: &mut [f64],
        gb: &mut [f64],
        gx: Option<&mut [f64]>,
    ) {
        let hw = h * w;
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        for o in 0..self.out_ch {
            let g = &gout[o * hw..(o + 1) * hw];
            gb[o] += g.iter().sum::<f64>();
            for c in 0..self.in_ch {
                let src = &x[c * hw..(c + 1) * hw];
                for p in 0..self.kh {
                    for q in 0..self.kw {
                        let (di, dj) = (p as isize - ph, q as isize - pw);
                        let mut acc = 0.0;
                        for i in 0..h {
                            let si = wrap(i as isize + di, h);
                            acc += shift_dot(&g[i * w..(i + 1) * w], &src[si * w..(si + 1) * w], dj);
                        }
                        gw[((o * self.in_ch + c) * self.kh + p) * self.kw + q] += acc;
                    }
                }
            }
        }
        if let Some(gx) = gx {
            gx.fill(0.0);
            for o in 0..self.out_ch {
                let g = &gout[o * hw..(o + 1) * hw];
                for c in 0..self.in_ch {
                    let dst = &mut gx[c * hw..(c + 1) * hw];
                    for p in 0..self.kh {
                        for q in 0..self.kw {
                            let wv = self.weights[((o * self.in_ch + c) * self.kh + p) * self.kw + q];
                            if wv == 0.0 {
                                continue;
                            }
                            let (di, dj) = (p as isize - ph, q as isize - pw);
                            for i in 0..h {
                                let si = wrap(i as isize - di, h);
                                shift_axpy(&mut dst[i * w..(i + 1) * w], &g[si * w..(si + 1) * w], -dj, wv);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

// dst[j] += a * src[(j + shift) mod n]
fn shift_axpy(dst: &mut [f64], src: &[f64], shift: isize, a: f64) {
    let n = src.len();
    let s = wrap(shift, n);
    let (head, tail) = dst.split_at_mut(n - s);
    for (d, v) in head.iter_mut().zip(&src[s..]) {
        *d += a * v;
    }
    for (d, v) in tail.iter_mut().zip(&src[..s]) {
        *d += a * v;
    }
}

// Σ_j g[j] * src[(j + shift) mod n]
fn shift_dot(g: &[f64], src: &[f64], shift: isize) -> f64 {
    let n = src.len();
    let s = wrap(shift, n);
    let a: f64 = g[..n - s].iter().zip(&src[s..]).map(|(x, y)| x * y).sum();
    let b: f64 = g[n - s..].iter().zip(&src[..s]).map(|(x, y)| x * y).sum();
    a + b
}

/// Architecture-normalization state: target bound and the per-layer
/// power-iteration vectors kept as warm starts.
#[derive(Debug, Clone, PartialEq)]
pub struct AnState {
    pub delta: f64,
    pub z: Vec<Vec<f64>>,
}

/// Activations of one forward pass over a single plane.
#[derive(Debug, Clone)]
pub struct Forward {
    h: usize,
    w: usize,
    // acts[0] is the input, acts[k + 1] the output of layer k
    acts: Vec<Vec<f64>>,
}

impl Forward {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("nonempty")
    }
}

/// Parameter gradients in layer order, `(weights, bias)` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<(Vec<f64>, Vec<f64>)>);

impl ParamGrads {
    fn zeros_like(m: &ConvNetModule) -> Self {
        ParamGrads(
            m.layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        )
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|(w, b)| w.iter().chain(b).copied()).collect()
    }

    fn add_assign(&mut self, other: &ParamGrads) {
        for ((w, b), (ow, ob)) in self.0.iter_mut().zip(&other.0) {
            w.iter_mut().zip(ow).for_each(|(x, y)| *x += y);
            b.iter_mut().zip(ob).for_each(|(x, y)| *x += y);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetModule {
    role: Role,
    layers: Vec<ConvLayer>,
    an: Option<AnState>,
}

impl ConvNetModule {
    /// Layers must chain `1 → … → 1` channels.
    pub fn new(role: Role, layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("module needs at least one layer"));
        }
        for l in &layers {
            l.validate()?;
        }
        if layers[0].in_ch != 1 || layers.last().unwrap().out_ch != 1 {
            return Err(Error::dim("module must map one channel to one channel"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_ch != pair[1].in_ch {
                return Err(Error::dim("consecutive layer channel counts differ"));
            }
        }
        Ok(Self { role, layers, an: None })
    }

    /// `depth` 3×3 layers with ReLU between them; the last layer is
    /// initialized small so `G` starts close to zero.
    pub fn generative(depth: usize, width: usize, rng: &mut StreamRng) -> Result<Self> {
        Self::new(Role::Gm, random_stack(depth, width, 0.1, rng)?)
    }

    pub fn discriminative(depth: usize, width: usize, rng: &mut StreamRng) -> Result<Self> {
        Self::new(Role::Dm, random_stack(depth, width, 1.0, rng)?)
    }

    /// Same architecture, all parameters zero.
    pub fn zeroed(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| ConvLayer::zeros(l.out_ch, l.in_ch, l.kh, l.kw, l.activation))
            .collect();
        Self {
            role: self.role,
            layers,
            an: None,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.layers
    }

    pub fn an_state(&self) -> Option<&AnState> {
        self.an.as_ref()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Mutable access to parameter `idx` in the flat order used by
    /// [`ParamGrads::flat`].
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                return &mut l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return &mut l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    fn require(&self, role: Role) -> Result<()> {
        if self.role != role {
            return Err(Error::RoleMismatch {
                expected: role.name(),
                found: self.role.name(),
            });
        }
        Ok(())
    }

    pub fn forward_plane(&self, x: &[f64], h: usize, w: usize) -> Forward {
        let hw = h * w;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for l in &self.layers {
            let mut out = vec![0.0; l.out_ch * hw];
            l.forward(acts.last().unwrap(), h, w, &mut out);
            if l.activation == Activation::Relu {
                // keeps NaN visible, unlike f64::max
                out.iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v = 0.0
                    }
                });
            }
            acts.push(out);
        }
        Forward { h, w, acts }
    }

    /// Backpropagates `gout` (gradient w.r.t. the final map) and returns the
    /// parameter gradients and the input gradient.
    pub fn backward_plane(&self, fwd: &Forward, gout: &[f64]) -> (ParamGrads, Vec<f64>) {
        let (h, w) = (fwd.h, fwd.w);
        let mut grads = ParamGrads::zeros_like(self);
        let mut g = gout.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            if l.activation == Activation::Relu {
                for (gv, &a) in g.iter_mut().zip(&fwd.acts[k + 1]) {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let mut gx = vec![0.0; l.in_ch * h * w];
            let (gw, gb) = &mut grads.0[k];
            l.backward(&fwd.acts[k], &g, h, w, gw, gb, Some(&mut gx));
            g = gx;
        }
        (grads, g)
    }

    /// The residual map `G(u)` applied channel by channel.
    pub fn residual(&self, u: &ImageGrid) -> Result<ImageGrid> {
        self.require(Role::Gm)?;
        let (h, w) = (u.height(), u.width());
        let mut out = Vec::with_capacity(u.len());
        for c in 0..u.channels() {
            out.extend_from_slice(self.forward_plane(u.plane(c), h, w).output());
        }
        Ok(u.with_data(out))
    }

    /// Scalar score: the global mean of the final map, averaged over channels.
    pub fn score(&self, u: &ImageGrid) -> Result<f64> {
        self.require(Role::Dm)?;
        let (h, w) = (u.height(), u.width());
        let total: f64 = (0..u.channels())
            .map(|c| mean(self.forward_plane(u.plane(c), h, w).output()))
            .sum();
        Ok(total / u.channels() as f64)
    }

    /// `∂ score / ∂u`.
    pub fn input_grad(&self, u: &ImageGrid) -> Result<ImageGrid> {
        self.require(Role::Dm)?;
        let (h, w) = (u.height(), u.width());
        let seed = 1.0 / (u.channels() * h * w) as f64;
        let mut out = Vec::with_capacity(u.len());
        for c in 0..u.channels() {
            let fwd = self.forward_plane(u.plane(c), h, w);
            let (_, gx) = self.backward_plane(&fwd, &vec![seed; h * w]);
            out.extend(gx);
        }
        Ok(u.with_data(out))
    }
}

fn random_stack(depth: usize, width: usize, last_gain: f64, rng: &mut StreamRng) -> Result<Vec<ConvLayer>> {
    if depth == 0 || width == 0 {
        return Err(Error::param("depth and width must be positive"));
    }
    Ok((0..depth)
        .map(|k| {
            let in_ch = if k == 0 { 1 } else { width };
            let last = k + 1 == depth;
            let out_ch = if last { 1 } else { width };
            let act = if last { Activation::Identity } else { Activation::Relu };
            let mut layer = ConvLayer::random(out_ch, in_ch, 3, act, if last { last_gain } else { 1.0 }, rng);
            if !last {
                // small positive bias keeps units alive at init
                layer.bias.iter_mut().for_each(|b| *b = 0.01 * rng.random::<f64>());
            }
            layer
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `u + G(u)`.
pub fn gm_apply(m: &ConvNetModule, u: &ImageGrid) -> Result<ImageGrid> {
    Ok(u.add(&m.residual(u)?))
}

/// `u − α_d ∂score/∂u`.
pub fn dm_apply(m: &ConvNetModule, u: &ImageGrid, alpha_d: f64) -> Result<ImageGrid> {
    if !(alpha_d > 0.0) || !alpha_d.is_finite() {
        return Err(Error::param(format!("alpha_d must be positive, got {alpha_d}")));
    }
    Ok(u.axpy(-alpha_d, &m.input_grad(u)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStreams;

    fn rand_img(h: usize, w: usize, rng: &mut StreamRng) -> ImageGrid {
        ImageGrid::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    fn small_gm(seed: u64) -> ConvNetModule {
        let mut rng = SeedStreams::new(seed).stream("init");
        let mut m = ConvNetModule::generative(3, 4, &mut rng).unwrap();
        // non-trivial last layer so gradients are not tiny
        for w in &mut m.layers_mut()[2].weights {
            *w *= 10.0;
        }
        m
    }

    fn small_dm(seed: u64) -> ConvNetModule {
        let mut rng = SeedStreams::new(seed).stream("init");
        ConvNetModule::discriminative(3, 4, &mut rng).unwrap()
    }

    #[test]
    fn zero_modules_are_identity() {
        let mut rng = SeedStreams::new(1).stream("probe");
        let u = rand_img(8, 8, &mut rng);
        let gm = small_gm(1).zeroed();
        let dm = small_dm(1).zeroed();
        assert_eq!(gm_apply(&gm, &u).unwrap(), u);
        assert_eq!(dm_apply(&dm, &u, 0.1).unwrap(), u);
    }

    #[test]
    fn roles_are_enforced() {
        let u = ImageGrid::zeros(4, 4, 1);
        assert!(matches!(
            gm_apply(&small_dm(1), &u),
            Err(Error::RoleMismatch { expected: "GM", .. })
        ));
        assert!(dm_apply(&small_gm(1), &u, 0.1).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = SeedStreams::new(2).stream("probe");
        let u = rand_img(8, 8, &mut rng);
        let a = gm_apply(&small_gm(3), &u).unwrap();
        let b = gm_apply(&small_gm(3), &u).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn matches_hand_unrolled_two_layer_reference() {
        let mut rng = SeedStreams::new(4).stream("init");
        let l1 = ConvLayer::random(2, 1, 3, Activation::Relu, 1.0, &mut rng);
        let l2 = ConvLayer::random(1, 2, 3, Activation::Identity, 1.0, &mut rng);
        let m = ConvNetModule::new(Role::Gm, vec![l1.clone(), l2.clone()]).unwrap();
        let (h, w) = (5usize, 6usize);
        let u = rand_img(h, w, &mut rng);
        let px = |i: isize, j: isize| u.get(0, i.rem_euclid(h as isize) as usize, j.rem_euclid(w as isize) as usize);
        let mut hidden = vec![0.0; 2 * h * w];
        for o in 0..2 {
            for i in 0..h as isize {
                for j in 0..w as isize {
                    let mut s = l1.bias[o];
                    for p in 0..3 {
                        for q in 0..3 {
                            s += l1.weights[o * 9 + p * 3 + q] * px(i + p as isize - 1, j + q as isize - 1);
                        }
                    }
                    hidden[o * h * w + i as usize * w + j as usize] = s.max(0.0);
                }
            }
        }
        let hx = |c: usize, i: isize, j: isize| {
            hidden[c * h * w + i.rem_euclid(h as isize) as usize * w + j.rem_euclid(w as isize) as usize]
        };
        let got = m.residual(&u).unwrap();
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut s = l2.bias[0];
                for c in 0..2 {
                    for p in 0..3 {
                        for q in 0..3 {
                            s += l2.weights[c * 9 + p * 3 + q] * hx(c, i + p as isize - 1, j + q as isize - 1);
                        }
                    }
                }
                assert!((got.get(0, i as usize, j as usize) - s).abs() < 1e-10);
            }
        }
    }

    fn check_param_grads(m: &ConvNetModule, loss: impl Fn(&ConvNetModule) -> f64, grads: &[f64], seed: u64) {
        let mut rng = SeedStreams::new(seed).stream("probe");
        let h = 1e-5;
        let mut checked = 0;
        while checked < 20 {
            let idx = rng.random_range(0..m.param_count());
            let mut up = m.clone();
            *up.param_mut(idx) += h;
            let mut dn = m.clone();
            *dn.param_mut(idx) -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            let an = grads[idx];
            if an.abs() < 1e-7 && fd.abs() < 1e-7 {
                continue;
            }
            assert!(
                (fd - an).abs() <= 1e-3 * an.abs().max(fd.abs()),
                "param {idx}: fd {fd} vs {an}"
            );
            checked += 1;
        }
    }

    #[test]
    fn gm_parameter_gradients_match_finite_differences() {
        let m = small_gm(5);
        let mut rng = SeedStreams::new(5).stream("probe");
        let x = rand_img(6, 6, &mut rng);
        let t = rand_img(6, 6, &mut rng);
        let loss = |m: &ConvNetModule| m.residual(&x).unwrap().sub(&t).norm_sq() * 0.5;
        let fwd = m.forward_plane(x.data(), 6, 6);
        let gout: Vec<f64> = fwd.output().iter().zip(t.data()).map(|(a, b)| a - b).collect();
        let (g, _) = m.backward_plane(&fwd, &gout);
        check_param_grads(&m, loss, &g.flat(), 6);
    }

    #[test]
    fn dm_parameter_and_input_gradients_match_finite_differences() {
        let m = small_dm(7);
        let mut rng = SeedStreams::new(7).stream("probe");
        let x = rand_img(6, 6, &mut rng);
        let fwd = m.forward_plane(x.data(), 6, 6);
        let (g, _) = m.backward_plane(&fwd, &[1.0 / 36.0; 36]);
        check_param_grads(&m, |m| m.score(&x).unwrap(), &g.flat(), 8);

        let gi = m.input_grad(&x).unwrap();
        let h = 1e-5;
        for _ in 0..20 {
            let idx = rng.random_range(0..36);
            let mut up = x.clone();
            up.data_mut()[idx] += h;
            let mut dn = x.clone();
            dn.data_mut()[idx] -= h;
            let fd = (m.score(&up).unwrap() - m.score(&dn).unwrap()) / (2.0 * h);
            let an = gi.data()[idx];
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-6), "{fd} vs {an}");
        }
    }

    #[test]
    fn doubling_alpha_doubles_the_step() {
        let m = small_dm(9);
        let mut rng = SeedStreams::new(9).stream("probe");
        let u = rand_img(8, 8, &mut rng);
        let a = dm_apply(&m, &u, 0.1).unwrap().distance(&u);
        let b = dm_apply(&m, &u, 0.2).unwrap().distance(&u);
        assert!((b - 2.0 * a).abs() <= 1e-15 * b.max(1.0));
        assert!(dm_apply(&m, &u, 0.0).is_err());
    }

    #[test]
    fn channels_share_weights() {
        let m = small_gm(10);
        let mut rng = SeedStreams::new(10).stream("probe");
        let a = rand_img(6, 6, &mut rng);
        let b = rand_img(6, 6, &mut rng);
        let both = ImageGrid::stack(&[a.clone(), b.clone()]).unwrap();
        let out = m.residual(&both).unwrap();
        assert_eq!(out.channel(0), m.residual(&a).unwrap());
        assert_eq!(out.channel(1), m.residual(&b).unwrap());
    }

    #[test]
    fn malformed_architectures_are_rejected() {
        let l = ConvLayer::zeros(2, 1, 3, 3, Activation::Relu);
        assert!(ConvNetModule::new(Role::Gm, vec![l.clone()]).is_err());
        assert!(ConvNetModule::new(Role::Gm, vec![]).is_err());
        let even = ConvLayer::zeros(1, 1, 2, 2, Activation::Identity);
        assert!(ConvNetModule::new(Role::Gm, vec![even]).is_err());
    }
}
