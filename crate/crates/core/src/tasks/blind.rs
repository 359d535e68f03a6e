//! Coarse-to-fine blind deblurring: alternate gradient-domain propagation
//! with kernel estimation on an image pyramid, then deconvolve.

use super::kernel::{recenter, solve_kernel};
use super::{certify_trace, TaskError, TaskMetrics, TaskOutcome, TaskSpec};
use crate::error::{Error, Result};
use crate::fidelity::Fidelity;
use crate::grid::{conv2d_circular, grad_xy, resize_bicubic, BlurKernel, ImageGrid};
use crate::propagate::{initial_point, run, GammaSchedule, Objective, PropagationTrace, StopRule};
use crate::prox::{Exponent, Frame, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlindParams {
    pub kernel_size: usize,
    /// Ridge weight of the kernel step.
    pub mu: f64,
    pub levels: usize,
    /// Downsampling factor between consecutive pyramid levels.
    pub scale: f64,
    /// Propagation/kernel alternations per level.
    pub inner_rounds: usize,
    /// Propagation steps per alternation.
    pub inner_iters: usize,
    /// Prior weight of the gradient-domain propagation.
    pub kernel_lambda: f64,
    /// `γ` growth rate of the gradient-domain propagation.
    pub inner_eta: f64,
}

impl Default for BlindParams {
    fn default() -> Self {
        Self {
            kernel_size: 7,
            mu: 1e-3,
            levels: 4,
            scale: 0.75,
            inner_rounds: 10,
            inner_iters: 20,
            kernel_lambda: 0.03,
            inner_eta: 1.05,
        }
    }
}

impl BlindParams {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) || self.kernel_size == 0 {
            return Err(Error::param(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !(self.mu > 0.0) {
            return Err(Error::param("kernel ridge weight mu must be > 0"));
        }
        if self.levels == 0 || !(self.scale > 0.0 && self.scale < 1.0) {
            return Err(Error::param("pyramid needs levels >= 1 and scale in (0, 1)"));
        }
        if self.inner_rounds == 0 || self.inner_iters == 0 || !(self.kernel_lambda >= 0.0) {
            return Err(Error::param("inner rounds and iterations must be positive"));
        }
        if !(self.inner_eta > 1.0) {
            return Err(Error::param("inner gamma growth must exceed 1"));
        }
        Ok(())
    }

    fn factor(&self, level: usize) -> f64 {
        self.scale.powi((self.levels - 1 - level) as i32)
    }

    fn kernel_size_at(&self, level: usize) -> usize {
        let s = (self.kernel_size as f64 * self.factor(level)).round() as usize;
        (s | 1).max(3).min(self.kernel_size)
    }
}

#[derive(Debug, Clone)]
pub struct BlindOutcome {
    pub outcome: TaskOutcome,
    /// Propagation traces per pyramid level, coarsest first.
    pub level_traces: Vec<Vec<PropagationTrace>>,
    pub level_kernels: Vec<BlurKernel>,
}

fn stacked_grad(u: &ImageGrid) -> ImageGrid {
    let (gx, gy) = grad_xy(u);
    ImageGrid::stack(&[gx, gy]).expect("gradients share a shape")
}

// Sparse latents are shrunk towards zero; rescale by the least-squares
// factor against the current blur before fitting the kernel.
fn debias(ug: &ImageGrid, yg: &ImageGrid, k: &BlurKernel) -> Result<ImageGrid> {
    let bu = conv2d_circular(ug, k)?;
    let s = bu.dot(yg) / bu.norm_sq().max(f64::MIN_POSITIVE);
    Ok(if s > 0.0 && s.is_finite() {
        ug.scale(s)
    } else {
        ug.clone()
    })
}

fn resize_kernel(k: &BlurKernel, size: usize) -> Result<BlurKernel> {
    if k.height() == size {
        return Ok(k.clone());
    }
    let plane = ImageGrid::from_vec(k.height(), k.width(), 1, k.weights().to_vec())?;
    let r = resize_bicubic(&plane, size, size);
    Ok(BlurKernel::clip_to_simplex(size, size, r.data())?.0)
}

pub fn run_blind_deblur(spec: &TaskSpec) -> std::result::Result<BlindOutcome, TaskError> {
    let p = spec.blind;
    p.validate()?;
    let y = &spec.y;
    if y.channels() != 1 {
        return Err(Error::dim("blind deblurring expects a single-channel observation").into());
    }
    let (h, w) = (y.height(), y.width());
    let dims = |level: usize| {
        let f = p.factor(level);
        (
            ((h as f64 * f).round() as usize).max(1),
            ((w as f64 * f).round() as usize).max(1),
        )
    };
    let (h0, w0) = dims(0);
    if p.kernel_size > h0.min(w0) {
        return Err(Error::param(format!(
            "{0}x{0} kernel exceeds the coarsest {h0}x{w0} pyramid level",
            p.kernel_size
        ))
        .into());
    }
    let cascade = spec.cascade();
    let grad_prior = PriorSpec::new(Exponent::PointEight, p.kernel_lambda, Frame::Identity)?;
    let inner_schedule = GammaSchedule::new(spec.schedule.gamma0, p.inner_eta)?;
    let mut k = BlurKernel::centered_delta(p.kernel_size_at(0))?;
    let mut traces = Vec::new();
    let mut certs = Vec::new();
    let mut level_traces = Vec::new();
    let mut level_kernels = Vec::new();
    for level in 0..p.levels {
        let (hl, wl) = dims(level);
        let yl = if (hl, wl) == (h, w) {
            y.clone()
        } else {
            resize_bicubic(y, hl, wl)
        };
        k = resize_kernel(&k, p.kernel_size_at(level))?;
        let yg = stacked_grad(&yl);
        let mut ug = yg.clone();
        let mut this_level = Vec::new();
        for _ in 0..p.inner_rounds {
            let fid = Fidelity::gradient_domain(yg.clone(), k.clone())?;
            let obj = Objective::fdm(fid, grad_prior, inner_schedule);
            let (u_next, trace) = run(&obj, &ug, &cascade, &StopRule::iters(p.inner_iters)).map_err(Box::new)?;
            certs.push(certify_trace(&obj, &trace)?);
            this_level.push(trace);
            ug = u_next;
            k = recenter(&solve_kernel(&debias(&ug, &yg, &k)?, &yg, p.mu, k.height())?.kernel)?;
        }
        traces.extend(this_level.iter().cloned());
        level_traces.push(this_level);
        level_kernels.push(k.clone());
    }

    let frame = spec.frame.unwrap_or_else(|| super::default_frame(h, w));
    let prior = PriorSpec::new(Exponent::PointEight, spec.lambda, frame)?;
    let mut obj = Objective::fdm(Fidelity::deconv(y.clone(), k.clone())?, prior, spec.schedule);
    obj.l_scale = spec.l_scale;
    let u0 = initial_point(&obj, spec.init)?;
    let (u, trace) = run(&obj, &u0, &cascade, &spec.stop).map_err(Box::new)?;
    certs.push(certify_trace(&obj, &trace)?);
    traces.push(trace);
    let metrics = spec
        .ground_truth
        .as_ref()
        .map(|gt| TaskMetrics::measure(&u, y, gt))
        .transpose()?;
    Ok(BlindOutcome {
        outcome: TaskOutcome {
            u_final: u,
            kernel: Some(k),
            traces,
            certificates: certs,
            metrics,
        },
        level_traces,
        level_kernels,
    })
}
