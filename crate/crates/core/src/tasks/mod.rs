//! Application drivers for the five restoration tasks.

mod blind;
pub mod dataset;
pub mod kernel;
pub mod synth;

pub use blind::{run_blind_deblur, BlindOutcome, BlindParams};
pub use dataset::{load_dataset, write_item, DatasetItem};
pub use kernel::{project_simplex, recenter, solve_kernel, KernelEstimate, KernelQp};

use crate::certify::{certify_descent, certify_fixed_point, Certificate};
use crate::error::{Error, Result};
use crate::fidelity::Fidelity;
use crate::grid::{BlurKernel, ImageGrid};
use crate::metrics::{psnr, ssim};
use crate::neural::{ConvNetModule, DEFAULT_ALPHA_D};
use crate::propagate::{
    initial_point, run, Aborted, Cascade, GammaSchedule, InitChoice, Objective, PropagationTrace, StopRule, TraceKind,
};
use crate::prox::{Exponent, Frame, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Deconvolution,
    BlindDeblur,
    Interpolation,
    Smoothing,
    RainPdm,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Deconvolution,
        TaskKind::BlindDeblur,
        TaskKind::Interpolation,
        TaskKind::Smoothing,
        TaskKind::RainPdm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Deconvolution => "deconvolution",
            TaskKind::BlindDeblur => "blind_deblur",
            TaskKind::Interpolation => "interpolation",
            TaskKind::Smoothing => "smoothing",
            TaskKind::RainPdm => "rain_pdm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param(format!("unknown task '{s}'")))
    }

    /// Prior exponent; `None` for the partially defined task.
    pub fn exponent(self) -> Option<Exponent> {
        match self {
            TaskKind::Deconvolution => Some(Exponent::One),
            TaskKind::BlindDeblur | TaskKind::Interpolation => Some(Exponent::PointEight),
            TaskKind::Smoothing => Some(Exponent::Zero),
            TaskKind::RainPdm => None,
        }
    }

    pub fn default_lambda(self) -> f64 {
        match self {
            TaskKind::Deconvolution => 1e-2,
            TaskKind::Interpolation => 1e-3,
            TaskKind::BlindDeblur => 2e-3,
            TaskKind::Smoothing => 1e-2,
            TaskKind::RainPdm => 0.0,
        }
    }
}

/// Haar frame with as many levels (up to 3) as both dimensions allow;
/// the identity frame for odd sizes.
pub fn default_frame(h: usize, w: usize) -> Frame {
    let levels = ((h | w).trailing_zeros() as usize).min(3);
    if levels == 0 {
        Frame::Identity
    } else {
        Frame::Wavelet { levels }
    }
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub y: ImageGrid,
    pub kernel: Option<BlurKernel>,
    pub mask: Option<ImageGrid>,
    pub ground_truth: Option<ImageGrid>,
    pub lambda: f64,
    /// `None` picks [`default_frame`].
    pub frame: Option<Frame>,
    pub schedule: GammaSchedule,
    pub stop: StopRule,
    pub init: InitChoice,
    pub alpha_d: f64,
    pub l_scale: f64,
    pub gm: Option<ConvNetModule>,
    pub dm: Option<ConvNetModule>,
    pub blind: BlindParams,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, y: ImageGrid) -> Self {
        Self {
            kind,
            y,
            kernel: None,
            mask: None,
            ground_truth: None,
            lambda: kind.default_lambda(),
            frame: None,
            schedule: GammaSchedule::default(),
            stop: StopRule::iters(50),
            init: InitChoice::Observation,
            alpha_d: DEFAULT_ALPHA_D,
            l_scale: 1.0,
            gm: None,
            dm: None,
            blind: BlindParams::default(),
        }
    }

    pub fn cascade(&self) -> Cascade<'_> {
        Cascade {
            gm: self.gm.as_ref(),
            dm: self.dm.as_ref(),
            alpha_d: self.alpha_d,
        }
    }

    fn prior(&self) -> Result<Option<PriorSpec>> {
        self.kind
            .exponent()
            .map(|p| {
                let frame = self
                    .frame
                    .unwrap_or_else(|| default_frame(self.y.height(), self.y.width()));
                PriorSpec::new(p, self.lambda, frame)
            })
            .transpose()
    }

    /// Objective for the non-blind tasks.
    pub fn objective(&self) -> Result<Objective> {
        let fidelity = match self.kind {
            TaskKind::Deconvolution => {
                let k = self
                    .kernel
                    .clone()
                    .ok_or_else(|| Error::param("deconvolution needs a blur kernel"))?;
                Fidelity::deconv(self.y.clone(), k)?
            }
            TaskKind::Interpolation => {
                let m = self
                    .mask
                    .clone()
                    .ok_or_else(|| Error::param("interpolation needs a mask"))?;
                Fidelity::interp(self.y.clone(), m)?
            }
            TaskKind::Smoothing | TaskKind::RainPdm => Fidelity::identity(self.y.clone()),
            TaskKind::BlindDeblur => {
                return Err(Error::param("blind deblurring has no single objective"));
            }
        };
        let mut obj = match self.prior()? {
            Some(p) => Objective::fdm(fidelity, p, self.schedule),
            None => Objective::pdm(fidelity, self.schedule),
        };
        obj.l_scale = self.l_scale;
        Ok(obj)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.y.is_finite() || self.y.is_empty() {
            return Err(Error::param("observation must be non-empty and finite"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.alpha_d > 0.0) || !(self.l_scale > 0.0) {
            return Err(Error::param("alpha_d and l_scale must be > 0"));
        }
        if let Some(gt) = &self.ground_truth {
            self.y.ensure_same_shape(gt, "ground truth")?;
        }
        match self.kind {
            TaskKind::BlindDeblur => self.blind.validate(),
            _ => self.objective().map(|_| ()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_input: f64,
    pub ssim_input: f64,
}

impl TaskMetrics {
    pub fn measure(u: &ImageGrid, y: &ImageGrid, gt: &ImageGrid) -> Result<Self> {
        Ok(Self {
            psnr: psnr(u, gt)?,
            ssim: ssim(u, gt)?,
            psnr_input: psnr(y, gt)?,
            ssim_input: ssim(y, gt)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub u_final: ImageGrid,
    /// Estimated kernel (blind deblurring only).
    pub kernel: Option<BlurKernel>,
    pub traces: Vec<PropagationTrace>,
    pub certificates: Vec<Certificate>,
    pub metrics: Option<TaskMetrics>,
}

impl TaskOutcome {
    pub fn iterations(&self) -> usize {
        self.traces.iter().map(|t| t.len()).sum()
    }

    pub fn accept_rate(&self) -> f64 {
        let n = self.iterations();
        if n == 0 {
            return 0.0;
        }
        self.traces
            .iter()
            .map(|t| t.accept_rate() * t.len() as f64)
            .sum::<f64>()
            / n as f64
    }

    pub fn certified(&self) -> bool {
        self.certificates.iter().all(|c| c.passed())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error(transparent)]
    Input(#[from] Error),
    #[error(transparent)]
    Propagation(#[from] Box<Aborted>),
}

/// Certificate matching the trace kind.
pub fn certify_trace(obj: &Objective, trace: &PropagationTrace) -> Result<Certificate> {
    match trace.kind {
        TraceKind::Fdm => certify_descent(trace, obj.lipschitz()),
        TraceKind::Pdm => certify_fixed_point(trace, obj.l_scale * obj.lipschitz(), None),
    }
}

/// Builds the objective, propagates, certifies the trace and measures
/// against ground truth when present.
pub fn run_task(spec: &TaskSpec) -> std::result::Result<TaskOutcome, TaskError> {
    spec.validate()?;
    if spec.kind == TaskKind::BlindDeblur {
        return run_blind_deblur(spec).map(|b| b.outcome);
    }
    let obj = spec.objective()?;
    let u0 = initial_point(&obj, spec.init)?;
    let (u, trace) = run(&obj, &u0, &spec.cascade(), &spec.stop).map_err(Box::new)?;
    let cert = certify_trace(&obj, &trace)?;
    let metrics = spec
        .ground_truth
        .as_ref()
        .map(|gt| TaskMetrics::measure(&u, &spec.y, gt))
        .transpose()?;
    Ok(TaskOutcome {
        u_final: u,
        kernel: None,
        traces: vec![trace],
        certificates: vec![cert],
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::conv2d_circular;
    use crate::rng::SeedStreams;

    fn scene(seed: u64) -> ImageGrid {
        synth::shapes(32, 32, &mut SeedStreams::new(seed).stream("init"))
    }

    #[test]
    fn smoothing_without_weight_returns_input() {
        let y = scene(1);
        let mut rng = SeedStreams::new(1).stream("init");
        let gm = ConvNetModule::generative(3, 4, &mut rng).unwrap();
        let mut spec = TaskSpec::new(TaskKind::Smoothing, y.clone());
        spec.lambda = 0.0;
        spec.gm = Some(gm);
        let out = run_task(&spec).unwrap();
        assert_eq!(out.u_final, y);
        assert!(out.certified());
    }

    #[test]
    fn full_mask_interpolation_matches_identity_fidelity() {
        let y = scene(2);
        let mut spec = TaskSpec::new(TaskKind::Interpolation, y.clone());
        spec.mask = Some(ImageGrid::filled(32, 32, 1, 1.0));
        spec.stop = StopRule::iters(10);
        let a = run_task(&spec).unwrap().u_final;
        let prior = spec.prior().unwrap().unwrap();
        let obj = Objective::fdm(Fidelity::identity(y.clone()), prior, spec.schedule);
        let (b, _) = run(&obj, &y, &Cascade::empty(), &StopRule::iters(10)).unwrap();
        assert!(a.distance(&b) <= 1e-8);
    }

    #[test]
    fn missing_inputs_are_rejected() {
        let y = scene(3);
        let spec = TaskSpec::new(TaskKind::Deconvolution, y.clone());
        assert!(matches!(run_task(&spec), Err(TaskError::Input(_))));
        let spec = TaskSpec::new(TaskKind::Interpolation, y);
        assert!(matches!(run_task(&spec), Err(TaskError::Input(_))));
        assert!(TaskKind::parse("optical_flow").is_err());
        assert_eq!(TaskKind::parse("rain_pdm").unwrap(), TaskKind::RainPdm);
    }

    #[test]
    fn priors_follow_the_task_table() {
        assert_eq!(TaskKind::Deconvolution.exponent(), Some(Exponent::One));
        assert_eq!(TaskKind::BlindDeblur.exponent(), Some(Exponent::PointEight));
        assert_eq!(TaskKind::Interpolation.exponent(), Some(Exponent::PointEight));
        assert_eq!(TaskKind::Smoothing.exponent(), Some(Exponent::Zero));
        assert_eq!(TaskKind::RainPdm.exponent(), None);
        assert_eq!(default_frame(64, 96), Frame::Wavelet { levels: 3 });
        assert_eq!(default_frame(6, 8), Frame::Wavelet { levels: 1 });
        assert_eq!(default_frame(7, 8), Frame::Identity);
    }

    #[test]
    fn deconvolution_and_rain_runs_certify() {
        let gt = scene(4);
        let k = BlurKernel::gaussian(5, 1.0).unwrap();
        let y = conv2d_circular(&gt, &k).unwrap();
        let mut spec = TaskSpec::new(TaskKind::Deconvolution, y);
        spec.kernel = Some(k);
        spec.ground_truth = Some(gt.clone());
        let out = run_task(&spec).unwrap();
        assert!(out.certified());
        let m = out.metrics.unwrap();
        assert!(m.psnr > m.psnr_input);

        let rainy = synth::add_rain(&gt, 0.2, &mut SeedStreams::new(4).stream("noise")).unwrap();
        let mut spec = TaskSpec::new(TaskKind::RainPdm, rainy);
        spec.stop = StopRule::iters(20);
        let out = run_task(&spec).unwrap();
        assert_eq!(out.traces[0].kind, TraceKind::Pdm);
        assert!(out.certified());
    }
}
